//! Cross-module pipeline: solved equilibria survive the file formats and
//! remain usable for identification and comparative statics downstream.

use matchkit::comparative::{assemble_hessians, differential_response, Shock};
use matchkit::equilibrium::{solve_equilibrium, SolveOptions};
use matchkit::heterogeneity::{HeterogeneitySpec, Side};
use matchkit::identification::recover_surplus;
use matchkit::io::{
    read_json, read_matching_csv, write_json, write_matching_csv, EquilibriumFile, MarketFile,
};
use matchkit::market::SurplusMatrix;
use nalgebra::DMatrix;

#[test]
fn solve_serialize_identify_differentiate() {
    let dir = tempfile::tempdir().unwrap();
    let market_file = MarketFile {
        x_types: vec!["low".into(), "high".into()],
        y_types: vec!["low".into(), "high".into()],
        n: vec![1.0, 0.7],
        m: vec![0.9, 1.2],
        phi: vec![vec![0.8, -0.2], vec![-0.1, 1.1]],
    };
    let market_path = dir.path().join("market.json");
    write_json(&market_path, &market_file).unwrap();
    let (market, phi) = matchkit::io::read_market(&market_path).unwrap();

    let hm = HeterogeneitySpec::logit(Side::Men, 1.0).unwrap();
    let hw = HeterogeneitySpec::logit(Side::Women, 1.0).unwrap();
    let eq = solve_equilibrium(
        &market,
        &hm,
        &hw,
        &phi,
        &SolveOptions::with_tolerance(1e-12),
    )
    .unwrap();

    // Equilibrium JSON round trip.
    let eq_path = dir.path().join("eq.json");
    write_json(&eq_path, &EquilibriumFile::from_result(&eq)).unwrap();
    let eq_back: EquilibriumFile = read_json(&eq_path).unwrap();
    let eq_back = eq_back.into_result().unwrap();
    assert_eq!(eq_back.utilities.u, eq.utilities.u);
    assert_eq!(eq_back.matching.mu, eq.matching.mu);

    // Matching CSV round trip feeds identification.
    let mu_path = dir.path().join("mu.csv");
    write_matching_csv(&mu_path, &eq.matching, market.types()).unwrap();
    let matching = read_matching_csv(&mu_path, &market).unwrap();
    let recovered = recover_surplus(&matching, &market, &hm, &hw).unwrap();
    assert!((recovered.phi() - phi.phi()).amax() < 1e-9);

    // The deserialized equilibrium supports the comparative-statics path.
    let bundle = assemble_hessians(&market, &hm, &hw, &eq_back).unwrap();
    let direct_bundle = assemble_hessians(&market, &hm, &hw, &eq).unwrap();
    let shock = Shock {
        dn: nalgebra::dvector![0.01, 0.0],
        dm: nalgebra::dvector![0.0, -0.02],
        dphi: DMatrix::zeros(2, 2),
    };
    let via_file = differential_response(&bundle, &market, &eq_back, &shock).unwrap();
    let direct = differential_response(&direct_bundle, &market, &eq, &shock).unwrap();
    assert_eq!(via_file.du_split, direct.du_split);
    assert_eq!(via_file.dmu, direct.dmu);

    // Scale invariance of the written surplus wiring: doubling phi and the
    // logit scales reproduces the same matching through the whole pipeline.
    let hm2 = HeterogeneitySpec::logit(Side::Men, 2.0).unwrap();
    let hw2 = HeterogeneitySpec::logit(Side::Women, 2.0).unwrap();
    let phi2 = SurplusMatrix::new(phi.phi() * 2.0, &market).unwrap();
    let eq2 = solve_equilibrium(
        &market,
        &hm2,
        &hw2,
        &phi2,
        &SolveOptions::with_tolerance(1e-12),
    )
    .unwrap();
    assert!((&eq2.matching.mu - &eq.matching.mu).amax() < 1e-9);
}
