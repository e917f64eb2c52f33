//! The built-in desk-scale acceptance suite.
//!
//! Each criterion is an independent check with pinned tolerances, runnable
//! through the `selftest` CLI subcommand or the `acceptance` integration
//! test. Every numeric threshold is fixed here, in code.

use nalgebra::{DMatrix, DVector};

use crate::comparative::one_type::{
    one_type_differentials, solve_one_type, OneTypeModel, OneTypeShock,
};
use crate::comparative::{assemble_hessians, differential_response, welfare_derivatives, Shock};
use crate::equilibrium::{ipfp_logit, solve_equilibrium, EquilibriumResult, SolveOptions};
use crate::fdcheck;
use crate::heterogeneity::{emax, HeterogeneitySpec, Side, EULER_GAMMA};
use crate::identification::{estimate_lambda, recover_surplus, BasisFamily, EstimateOptions};
use crate::market::{validate_market, RawMarket, SurplusMatrix, ValidatedMarket};
use crate::micro::{
    aggregate, enumerate_optimal, sample_population, solve_assignment, stability_residual,
};
use crate::rng;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2} {:<28} {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

pub fn all_pass(results: &[CriterionResult]) -> bool {
    results.iter().all(|r| r.pass)
}

/// Run the full acceptance suite in order.
pub fn run_all() -> Vec<CriterionResult> {
    vec![
        c1_symmetric_logit_pin(),
        c2_one_type_logistic_pin(),
        c3_cross_solver_agreement(),
        c4_identification_round_trip(),
        c5_comoment_estimation(),
        c6_stieltjes_sign_suite(),
        c7_analytic_vs_finite_difference(),
        c8_emax_derivative_checks(),
        c9_micro_oracle_convergence(),
        c10_engine_vs_one_type(),
        c11_entry_direction(),
    ]
}

fn criterion(
    id: usize,
    name: &'static str,
    body: impl FnOnce() -> Result<String, String>,
) -> CriterionResult {
    match body() {
        Ok(detail) => CriterionResult {
            id,
            name,
            pass: true,
            detail,
        },
        Err(detail) => CriterionResult {
            id,
            name,
            pass: false,
            detail,
        },
    }
}

fn market(n: Vec<f64>, m: Vec<f64>) -> ValidatedMarket {
    validate_market(RawMarket {
        x_types: (0..n.len()).map(|i| format!("x{i}")).collect(),
        y_types: (0..m.len()).map(|j| format!("y{j}")).collect(),
        n,
        m,
    })
    .expect("positive masses")
}

fn logit_pair() -> (HeterogeneitySpec, HeterogeneitySpec) {
    (
        HeterogeneitySpec::logit(Side::Men, 1.0).expect("unit scale"),
        HeterogeneitySpec::logit(Side::Women, 1.0).expect("unit scale"),
    )
}

/// Random instance with masses in [0.5, 2] and surplus entries in [-2, 2].
fn random_instance(nx: usize, ny: usize, key: u64) -> (ValidatedMarket, SurplusMatrix) {
    let n = (0..nx)
        .map(|i| 0.5 + 1.5 * rng::uniform_open01(&[key, 1, i as u64]))
        .collect();
    let m = (0..ny)
        .map(|j| 0.5 + 1.5 * rng::uniform_open01(&[key, 2, j as u64]))
        .collect();
    let market = market(n, m);
    let phi = DMatrix::from_fn(nx, ny, |x, y| {
        4.0 * rng::uniform_open01(&[key, 3, x as u64, y as u64]) - 2.0
    });
    let phi = SurplusMatrix::new(phi, &market).expect("finite");
    (market, phi)
}

fn solve(
    market: &ValidatedMarket,
    phi: &SurplusMatrix,
    tolerance: f64,
) -> Result<EquilibriumResult, String> {
    let (hm, hw) = logit_pair();
    solve_equilibrium(
        market,
        &hm,
        &hw,
        phi,
        &SolveOptions::with_tolerance(tolerance),
    )
    .map_err(|e| format!("equilibrium solve failed: {e}"))
}

fn check(ok: bool, message: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message)
    }
}

fn c1_symmetric_logit_pin() -> CriterionResult {
    criterion(1, "symmetric logit pin", || {
        let market = market(vec![1.0], vec![1.0]);
        let phi = SurplusMatrix::new(DMatrix::zeros(1, 1), &market).expect("finite");
        let eq = solve(&market, &phi, 1e-12)?;
        let log2_gamma = 2.0f64.ln() + EULER_GAMMA;
        let errs = [
            (eq.matching.mu[(0, 0)] - 0.5).abs(),
            eq.utilities.u[(0, 0)].abs(),
            (eq.welfare.u[0] - log2_gamma).abs(),
            (eq.welfare.v[0] - log2_gamma).abs(),
        ];
        let worst = errs.iter().fold(0.0f64, |a, &b| a.max(b));
        check(worst <= 1e-9, format!("worst error {worst:.3e} > 1e-9"))?;
        Ok(format!("mu=0.5, U=0, u=v=log2+gamma within {worst:.3e}"))
    })
}

fn c2_one_type_logistic_pin() -> CriterionResult {
    criterion(2, "one-type logistic pin", || {
        let model = OneTypeModel::logistic(0.5, 1.0, 0.0).map_err(|e| e.to_string())?;
        let sol = solve_one_type(&model).map_err(|e| e.to_string())?;
        check(
            (sol.mu - 1.0 / 3.0).abs() <= 1e-9,
            format!("mu {} != 1/3", sol.mu),
        )?;
        check(
            (sol.u_split - 2.0f64.ln()).abs() <= 1e-9,
            format!("U {} != log 2", sol.u_split),
        )?;
        let d = one_type_differentials(&model, &sol, &OneTypeShock::default());
        check(
            (d.e_n - 2.0 / 3.0).abs() <= 1e-9 && (d.e_m - 1.0 / 3.0).abs() <= 1e-9,
            format!("elasticities ({}, {})", d.e_n, d.e_m),
        )?;
        check(
            (d.e_n + d.e_m - 1.0).abs() <= 1e-12,
            format!("e_n + e_m = {}", d.e_n + d.e_m),
        )?;
        check(
            d.e_n > d.e_m,
            "matches not more elastic to scarce side".into(),
        )?;
        Ok("mu=1/3, U=log2, e_n=2/3 > e_m=1/3, e_n+e_m=1".into())
    })
}

fn c3_cross_solver_agreement() -> CriterionResult {
    criterion(3, "cross-solver agreement", || {
        let mut worst = 0.0f64;
        for key in 0..20u64 {
            let (market, phi) = random_instance(5, 5, 300 + key);
            let newton = solve(&market, &phi, 1e-12)?;
            let ipfp = ipfp_logit(
                &market,
                1.0,
                1.0,
                &phi,
                &SolveOptions::with_tolerance(1e-12),
            )
            .map_err(|e| format!("IPFP failed: {e}"))?;
            let gap = (&newton.utilities.u - &ipfp.utilities.u).amax();
            worst = worst.max(gap);
        }
        check(worst <= 1e-8, format!("worst U gap {worst:.3e} > 1e-8"))?;
        Ok(format!("20 random 5x5 instances, worst U gap {worst:.3e}"))
    })
}

fn c4_identification_round_trip() -> CriterionResult {
    criterion(4, "identification round trip", || {
        let (market, phi) = random_instance(10, 10, 4242);
        let (hm, hw) = logit_pair();
        let eq = solve(&market, &phi, 1e-11)?;
        let recovered =
            recover_surplus(&eq.matching, &market, &hm, &hw).map_err(|e| e.to_string())?;
        let gap = (recovered.phi() - phi.phi()).amax();
        check(gap <= 1e-6, format!("surplus gap {gap:.3e} > 1e-6"))?;
        Ok(format!("10x10 logit, recovered surplus within {gap:.3e}"))
    })
}

fn c5_comoment_estimation() -> CriterionResult {
    criterion(5, "comoment estimation", || {
        let (hm, hw) = logit_pair();
        let market = market(vec![1.0, 1.3, 0.8, 1.1], vec![0.9, 1.2, 1.0, 0.7]);
        let basis = BasisFamily::new(
            (0..3)
                .map(|k| {
                    DMatrix::from_fn(4, 4, |x, y| {
                        2.0 * rng::uniform_open01(&[510, k as u64, x as u64, y as u64]) - 1.0
                    })
                })
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let truth = DVector::from_vec(vec![1.5, -0.5, 0.25]);
        let phi = SurplusMatrix::new(basis.combine(&truth), &market).map_err(|e| e.to_string())?;
        let observed = solve(&market, &phi, 1e-12)?.matching;
        let report = estimate_lambda(
            &observed,
            &market,
            &hm,
            &hw,
            &basis,
            &EstimateOptions::default(),
        )
        .map_err(|e| format!("estimation failed: {e}"))?;
        let gap = (&report.lambda - &truth).amax();
        check(gap <= 1e-6, format!("lambda gap {gap:.3e} > 1e-6"))?;
        Ok(format!(
            "lambda recovered within {gap:.3e} in {} iterations",
            report.iterations
        ))
    })
}

fn c6_stieltjes_sign_suite() -> CriterionResult {
    criterion(6, "Stieltjes and sign suite", || {
        let (hm, hw) = logit_pair();
        let mut min_t = f64::INFINITY;
        let mut max_du_dn = f64::NEG_INFINITY;
        let mut min_du_dm = f64::INFINITY;
        for key in 0..100u64 {
            let nx = 1 + (key as usize % 6);
            let ny = 1 + ((key as usize / 6) % 6);
            let (market, phi) = random_instance(nx, ny, 600 + key);
            let eq = solve(&market, &phi, 1e-12)?;
            let bundle = assemble_hessians(&market, &hm, &hw, &eq).map_err(|e| e.to_string())?;
            min_t = min_t.min(bundle.t.min());
            let blocks = welfare_derivatives(&bundle, &market, &eq).map_err(|e| e.to_string())?;
            max_du_dn = max_du_dn.max(blocks.du_dn.max());
            min_du_dm = min_du_dm.min(blocks.du_dm.min());
        }
        check(min_t >= -1e-12, format!("min T entry {min_t:.3e} < -1e-12"))?;
        check(
            max_du_dn <= 1e-12,
            format!("max du/dn entry {max_du_dn:.3e} > 1e-12"),
        )?;
        check(
            min_du_dm >= -1e-12,
            format!("min du/dm entry {min_du_dm:.3e} < -1e-12"),
        )?;
        Ok(format!(
            "100 instances up to 6x6: min T {min_t:.2e}, max du/dn {max_du_dn:.2e}, min du/dm {min_du_dm:.2e}"
        ))
    })
}

/// Entrywise relative error with a floor absorbing finite-difference noise
/// on near-zero derivatives.
const FD_REL_TOL: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-3;
const FD_STEP: f64 = 1e-5;

fn c7_analytic_vs_finite_difference() -> CriterionResult {
    criterion(7, "analytic vs finite difference", || {
        let (hm, hw) = logit_pair();
        let mut worst = 0.0f64;
        for key in 0..20u64 {
            let nx = 2 + (key as usize % 5);
            let ny = 2 + ((key as usize / 5) % 5);
            let (market, phi) = random_instance(nx, ny, 700 + key);
            let eq = solve(&market, &phi, 1e-13)?;
            let bundle = assemble_hessians(&market, &hm, &hw, &eq).map_err(|e| e.to_string())?;
            let blocks = welfare_derivatives(&bundle, &market, &eq).map_err(|e| e.to_string())?;

            // A shocked re-solve for every primitive coordinate.
            let resolve = |dn: Option<(usize, f64)>,
                           dm: Option<(usize, f64)>,
                           dphi: Option<(usize, usize, f64)>|
             -> Result<EquilibriumResult, String> {
                let mut n: Vec<f64> = market.n().iter().copied().collect();
                let mut m: Vec<f64> = market.m().iter().copied().collect();
                let mut p = phi.phi().clone();
                if let Some((x, h)) = dn {
                    n[x] += h;
                }
                if let Some((y, h)) = dm {
                    m[y] += h;
                }
                if let Some((x, y, h)) = dphi {
                    p[(x, y)] += h;
                }
                let shocked = market_like(&market, n, m);
                let p = SurplusMatrix::new(p, &shocked).map_err(|e| e.to_string())?;
                solve(&shocked, &p, 1e-13)
            };

            let check_response = |analytic: &Shock,
                                  plus: &EquilibriumResult,
                                  minus: &EquilibriumResult|
             -> Result<f64, String> {
                let r = differential_response(&bundle, &market, &eq, analytic)
                    .map_err(|e| e.to_string())?;
                let scale = 1.0 / (2.0 * FD_STEP);
                let mut local = 0.0f64;
                for x in 0..nx {
                    let fd = (plus.welfare.u[x] - minus.welfare.u[x]) * scale;
                    local = local.max(fdcheck::rel_err(r.du[x], fd, FD_FLOOR));
                }
                for y in 0..ny {
                    let fd = (plus.welfare.v[y] - minus.welfare.v[y]) * scale;
                    local = local.max(fdcheck::rel_err(r.dv[y], fd, FD_FLOOR));
                }
                for x in 0..nx {
                    for y in 0..ny {
                        let fd_u = (plus.utilities.u[(x, y)] - minus.utilities.u[(x, y)]) * scale;
                        local = local.max(fdcheck::rel_err(r.du_split[(x, y)], fd_u, FD_FLOOR));
                        let fd_mu = (plus.matching.mu[(x, y)] - minus.matching.mu[(x, y)]) * scale;
                        local = local.max(fdcheck::rel_err(r.dmu[(x, y)], fd_mu, FD_FLOOR));
                    }
                }
                Ok(local)
            };

            for xp in 0..nx {
                let plus = resolve(Some((xp, FD_STEP)), None, None)?;
                let minus = resolve(Some((xp, -FD_STEP)), None, None)?;
                // Welfare blocks against the same re-solves.
                for x in 0..nx {
                    let fd = (plus.welfare.u[x] - minus.welfare.u[x]) / (2.0 * FD_STEP);
                    worst = worst.max(fdcheck::rel_err(blocks.du_dn[(x, xp)], fd, FD_FLOOR));
                }
                for y in 0..ny {
                    let fd = (plus.welfare.v[y] - minus.welfare.v[y]) / (2.0 * FD_STEP);
                    worst = worst.max(fdcheck::rel_err(blocks.dv_dn[(y, xp)], fd, FD_FLOOR));
                }
                worst = worst.max(check_response(&Shock::unit_dn(nx, ny, xp), &plus, &minus)?);
            }
            for yp in 0..ny {
                let plus = resolve(None, Some((yp, FD_STEP)), None)?;
                let minus = resolve(None, Some((yp, -FD_STEP)), None)?;
                for x in 0..nx {
                    let fd = (plus.welfare.u[x] - minus.welfare.u[x]) / (2.0 * FD_STEP);
                    worst = worst.max(fdcheck::rel_err(blocks.du_dm[(x, yp)], fd, FD_FLOOR));
                }
                for y in 0..ny {
                    let fd = (plus.welfare.v[y] - minus.welfare.v[y]) / (2.0 * FD_STEP);
                    worst = worst.max(fdcheck::rel_err(blocks.dv_dm[(y, yp)], fd, FD_FLOOR));
                }
                worst = worst.max(check_response(&Shock::unit_dm(nx, ny, yp), &plus, &minus)?);
            }
            for xp in 0..nx {
                for yp in 0..ny {
                    let plus = resolve(None, None, Some((xp, yp, FD_STEP)))?;
                    let minus = resolve(None, None, Some((xp, yp, -FD_STEP)))?;
                    let z = xp * ny + yp;
                    for x in 0..nx {
                        let fd = (plus.welfare.u[x] - minus.welfare.u[x]) / (2.0 * FD_STEP);
                        worst = worst.max(fdcheck::rel_err(blocks.du_dphi[(x, z)], fd, FD_FLOOR));
                    }
                    for y in 0..ny {
                        let fd = (plus.welfare.v[y] - minus.welfare.v[y]) / (2.0 * FD_STEP);
                        worst = worst.max(fdcheck::rel_err(blocks.dv_dphi[(y, z)], fd, FD_FLOOR));
                    }
                    worst = worst.max(check_response(
                        &Shock::unit_dphi(nx, ny, xp, yp),
                        &plus,
                        &minus,
                    )?);
                }
            }
        }
        check(
            worst <= FD_REL_TOL,
            format!("worst relative error {worst:.3e} > {FD_REL_TOL:.0e}"),
        )?;
        Ok(format!(
            "20 instances, all blocks and responses within {worst:.3e} of central differences"
        ))
    })
}

fn market_like(market: &ValidatedMarket, n: Vec<f64>, m: Vec<f64>) -> ValidatedMarket {
    validate_market(RawMarket {
        x_types: market.types().x_labels().to_vec(),
        y_types: market.types().y_labels().to_vec(),
        n,
        m,
    })
    .expect("shocked masses stay positive")
}

fn c8_emax_derivative_checks() -> CriterionResult {
    criterion(8, "emax derivative checks", || {
        let random_u = |key: u64, len: usize| {
            DVector::from_fn(len, |i, _| {
                6.0 * rng::uniform_open01(&[key, i as u64]) - 3.0
            })
        };
        // Gradient against central differences of the value at step 1e-5;
        // Hessian against central differences of the analytic gradient at
        // the same step (a second difference of the value would drown in
        // cancellation at this step size).
        let run = |spec: &HeterogeneitySpec, len: usize, key: u64| -> Result<(f64, f64), String> {
            let u = random_u(key, len);
            let eval = emax(spec, 0, &u).map_err(|e| e.to_string())?;
            let value_at = |p: &[f64]| {
                emax(spec, 0, &DVector::from_column_slice(p))
                    .expect("finite utilities")
                    .value
            };
            let fd_grad = fdcheck::central_gradient(value_at, u.as_slice(), FD_STEP);
            let grad_err = fdcheck::max_rel_err(eval.gradient.as_slice(), &fd_grad, 1e-8);
            let mut hess_err = 0.0f64;
            for c in 0..len {
                let mut up = u.clone();
                up[c] += FD_STEP;
                let mut down = u.clone();
                down[c] -= FD_STEP;
                let gp = emax(spec, 0, &up).map_err(|e| e.to_string())?.gradient;
                let gm = emax(spec, 0, &down).map_err(|e| e.to_string())?.gradient;
                for r in 0..len {
                    let fd = (gp[r] - gm[r]) / (2.0 * FD_STEP);
                    hess_err = hess_err.max(fdcheck::rel_err(eval.hessian[(r, c)], fd, 1e-6));
                }
            }
            Ok((grad_err, hess_err))
        };

        let logit = HeterogeneitySpec::logit(Side::Men, 1.0).map_err(|e| e.to_string())?;
        let mut logit_grad = 0.0f64;
        let mut logit_hess = 0.0f64;
        for key in 0..10u64 {
            let (g, h) = run(&logit, 4, 800 + key)?;
            logit_grad = logit_grad.max(g);
            logit_hess = logit_hess.max(h);
        }
        check(
            logit_grad <= 1e-6,
            format!("logit gradient error {logit_grad:.3e} > 1e-6"),
        )?;
        check(
            logit_hess <= 1e-4,
            format!("logit hessian error {logit_hess:.3e} > 1e-4"),
        )?;

        let sim = HeterogeneitySpec::simulated_gumbel(Side::Men, 1, 4, 10_000, 808, 0.05)
            .map_err(|e| e.to_string())?;
        let (sim_grad, sim_hess) = run(&sim, 4, 900)?;
        check(
            sim_grad <= 1e-4,
            format!("simulated gradient error {sim_grad:.3e} > 1e-4"),
        )?;
        check(
            sim_hess <= 1e-3,
            format!("simulated hessian error {sim_hess:.3e} > 1e-3"),
        )?;
        Ok(format!(
            "logit grad {logit_grad:.1e}/hess {logit_hess:.1e}; simulated grad {sim_grad:.1e}/hess {sim_hess:.1e}"
        ))
    })
}

fn c9_micro_oracle_convergence() -> CriterionResult {
    criterion(9, "micro-oracle convergence", || {
        let (hm, hw) = logit_pair();

        let m1 = market(vec![1.0], vec![1.0]);
        let phi1 = SurplusMatrix::new(DMatrix::zeros(1, 1), &m1).map_err(|e| e.to_string())?;
        let pop1 = sample_population(&m1, &hm, &hw, 100_000.0, 42).map_err(|e| e.to_string())?;
        let res1 = solve_assignment(&pop1, &phi1).map_err(|e| e.to_string())?;
        let mu1 = aggregate(&pop1, &res1).mu[(0, 0)];
        check(
            (mu1 - 0.5).abs() <= 0.02,
            format!("1x1 empirical mu {mu1} off 0.5 by more than 0.02"),
        )?;

        let m2 = market(vec![1.0, 1.0], vec![1.0, 1.0]);
        let phi2 = SurplusMatrix::new(
            DMatrix::from_fn(2, 2, |x, y| if x == y { 1.0 } else { 0.0 }),
            &m2,
        )
        .map_err(|e| e.to_string())?;
        let star = solve(&m2, &phi2, 1e-10)?.matching.mu;
        let pop2 = sample_population(&m2, &hm, &hw, 100_000.0, 42).map_err(|e| e.to_string())?;
        let res2 = solve_assignment(&pop2, &phi2).map_err(|e| e.to_string())?;
        let gap2 = (&aggregate(&pop2, &res2).mu - &star).amax();
        check(gap2 <= 0.02, format!("2x2 empirical gap {gap2} > 0.02"))?;

        // Exhaustive-enumeration equality on 8+8-agent instances (4 agents
        // per type on each side), plus the no-blocking-pair certificate.
        let m8 = market(vec![1.0, 1.0], vec![1.0, 1.0]);
        let phi8 = SurplusMatrix::new(
            DMatrix::from_fn(2, 2, |x, y| if x == y { 0.8 } else { -0.2 }),
            &m8,
        )
        .map_err(|e| e.to_string())?;
        for seed in [1u64, 2, 3] {
            let pop = sample_population(&m8, &hm, &hw, 4.0, seed).map_err(|e| e.to_string())?;
            let res = solve_assignment(&pop, &phi8).map_err(|e| e.to_string())?;
            let best = enumerate_optimal(&pop, &phi8);
            check(
                (res.total_surplus - best).abs() <= 1e-9,
                format!(
                    "seed {seed}: solver total {} vs enumeration {best}",
                    res.total_surplus
                ),
            )?;
            let residual = stability_residual(&pop, &phi8, &res);
            check(
                residual <= 1e-9,
                format!("seed {seed}: stability residual {residual:.3e} > 1e-9"),
            )?;
        }
        Ok(format!(
            "scale 1e5: |mu-0.5|={:.4}, 2x2 gap={gap2:.4}; 8+8 enumeration exact",
            (mu1 - 0.5).abs()
        ))
    })
}

fn c10_engine_vs_one_type() -> CriterionResult {
    criterion(10, "engine vs one-type equality", || {
        let (hm, hw) = logit_pair();
        let (n0, m0, phi0) = (0.8, 1.2, 0.6);
        let mkt = market(vec![n0], vec![m0]);
        let phi = SurplusMatrix::new(DMatrix::from_element(1, 1, phi0), &mkt)
            .map_err(|e| e.to_string())?;
        let eq = solve(&mkt, &phi, 1e-13)?;
        let bundle = assemble_hessians(&mkt, &hm, &hw, &eq).map_err(|e| e.to_string())?;
        let model = OneTypeModel::logistic(n0, m0, phi0).map_err(|e| e.to_string())?;
        let sol = solve_one_type(&model).map_err(|e| e.to_string())?;

        let mut worst = 0.0f64;
        let unit_shocks = [
            (
                Shock::unit_dn(1, 1, 0),
                OneTypeShock {
                    dlog_n: 1.0 / n0,
                    dlog_m: 0.0,
                    dphi: 0.0,
                },
            ),
            (
                Shock::unit_dm(1, 1, 0),
                OneTypeShock {
                    dlog_n: 0.0,
                    dlog_m: 1.0 / m0,
                    dphi: 0.0,
                },
            ),
            (
                Shock::unit_dphi(1, 1, 0, 0),
                OneTypeShock {
                    dlog_n: 0.0,
                    dlog_m: 0.0,
                    dphi: 1.0,
                },
            ),
        ];
        for (engine_shock, scalar_shock) in unit_shocks {
            let engine = differential_response(&bundle, &mkt, &eq, &engine_shock)
                .map_err(|e| e.to_string())?;
            let scalar = one_type_differentials(&model, &sol, &scalar_shock);
            worst = worst.max((engine.du_split[(0, 0)] - scalar.du_split).abs());
            worst = worst.max((engine.du[0] - scalar.du).abs());
            worst = worst.max((engine.dv[0] - scalar.dv).abs());
            worst = worst.max((engine.dmu[(0, 0)] - scalar.dmu).abs());
        }
        check(worst <= 1e-10, format!("worst gap {worst:.3e} > 1e-10"))?;
        Ok(format!(
            "unit dn, dm, dphi responses agree within {worst:.3e}"
        ))
    })
}

fn c11_entry_direction() -> CriterionResult {
    criterion(11, "entry direction", || {
        let mut worst_u = f64::NEG_INFINITY;
        let mut worst_v = f64::INFINITY;
        for key in 0..20u64 {
            let nx = 2 + (key as usize % 4);
            let ny = 2 + ((key as usize / 4) % 4);
            let (mkt, phi) = random_instance(nx, ny, 1100 + key);
            let base = solve(&mkt, &phi, 1e-12)?;
            for xp in 0..nx {
                let mut n: Vec<f64> = mkt.n().iter().copied().collect();
                n[xp] += 0.01;
                let shocked = market_like(&mkt, n, mkt.m().iter().copied().collect());
                let after = solve(&shocked, &phi, 1e-12)?;
                for x in 0..nx {
                    worst_u = worst_u.max(after.welfare.u[x] - base.welfare.u[x]);
                }
                for y in 0..ny {
                    worst_v = worst_v.min(after.welfare.v[y] - base.welfare.v[y]);
                }
            }
        }
        check(
            worst_u <= 1e-9,
            format!("some u rose by {worst_u:.3e} after same-side entry"),
        )?;
        check(
            worst_v >= -1e-9,
            format!("some v fell by {worst_v:.3e} after opposite-side entry"),
        )?;
        Ok(format!(
            "20 instances: max u drift {worst_u:.2e}, min v drift {worst_v:.2e}"
        ))
    })
}
