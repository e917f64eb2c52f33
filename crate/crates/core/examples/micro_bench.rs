use matchkit::equilibrium::{solve_equilibrium, SolveOptions};
use matchkit::heterogeneity::{HeterogeneitySpec, Side};
use matchkit::market::{validate_market, RawMarket, SurplusMatrix};
use matchkit::micro::{aggregate, sample_population, solve_assignment};
use nalgebra::dmatrix;
use std::time::Instant;

fn main() {
    let hm = HeterogeneitySpec::logit(Side::Men, 1.0).unwrap();
    let hw = HeterogeneitySpec::logit(Side::Women, 1.0).unwrap();

    let m1 = validate_market(RawMarket {
        x_types: vec!["a".into()],
        y_types: vec!["b".into()],
        n: vec![1.0],
        m: vec![1.0],
    })
    .unwrap();
    let phi1 = SurplusMatrix::new(dmatrix![0.0], &m1).unwrap();
    let t0 = Instant::now();
    let pop = sample_population(&m1, &hm, &hw, 100_000.0, 42).unwrap();
    println!("sample 1x1: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let res = solve_assignment(&pop, &phi1).unwrap();
    println!(
        "assign 1x1: {:?}, pairs {}",
        t0.elapsed(),
        res.matched_pairs.len()
    );
    let matching = aggregate(&pop, &res);
    println!(
        "mu_hat {} vs 0.5, diff {:.4}",
        matching.mu[(0, 0)],
        (matching.mu[(0, 0)] - 0.5).abs()
    );

    let m2 = validate_market(RawMarket {
        x_types: vec!["a".into(), "b".into()],
        y_types: vec!["c".into(), "d".into()],
        n: vec![1.0, 1.0],
        m: vec![1.0, 1.0],
    })
    .unwrap();
    let phi2 = SurplusMatrix::new(dmatrix![1.0, 0.0; 0.0, 1.0], &m2).unwrap();
    let eq = solve_equilibrium(&m2, &hm, &hw, &phi2, &SolveOptions::default()).unwrap();
    let t0 = Instant::now();
    let pop2 = sample_population(&m2, &hm, &hw, 100_000.0, 42).unwrap();
    println!("sample 2x2: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let res2 = solve_assignment(&pop2, &phi2).unwrap();
    println!(
        "assign 2x2: {:?}, pairs {}",
        t0.elapsed(),
        res2.matched_pairs.len()
    );
    let matching2 = aggregate(&pop2, &res2);
    let gap = (&matching2.mu - &eq.matching.mu).amax();
    println!("2x2 sup gap vs continuum: {:.5}", gap);
    println!("continuum mu: {:?}", eq.matching.mu.as_slice());
    println!("empirical mu: {:?}", matching2.mu.as_slice());
}
