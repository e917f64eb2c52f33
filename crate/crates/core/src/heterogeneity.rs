//! Per-type expected-maximum (emax) functions: value, gradient, Hessian, and
//! convex conjugate.
//!
//! For a man of type x facing systematic utilities `U` over the opposite-side
//! types, the emax function is `G_x(U) = E[max_y {U_y + eps_y, eps_0}]` with
//! the singles shock `eps_0` as the outside option. Its gradient is the vector
//! of choice probabilities and its Hessian is symmetric positive definite with
//! non-positive off-diagonals (gross substitutes). Two shock families are
//! supported: closed-form extreme-value (Gumbel) shocks, and arbitrary
//! simulated draws smoothed by a log-sum-exp with temperature `smoothing` so
//! that second derivatives exist.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng;

/// Euler–Mascheroni constant, so logit emax values equal the literal
/// expectation of the maximum rather than just the log-sum term.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Shares at or below this are treated as boundary: full support guarantees
/// strictly interior shares in any model-consistent matching.
const BOUNDARY_FLOOR: f64 = 1e-300;

/// Newton settings for inverting the simulated-kind gradient.
const CONJUGATE_MAX_ITER: usize = 200;
const CONJUGATE_TOL: f64 = 1e-10;

/// Which side of the market a heterogeneity specification describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Men,
    Women,
}

impl Side {
    pub(crate) fn tag(self) -> u64 {
        match self {
            Side::Men => 0,
            Side::Women => 1,
        }
    }
}

/// Distribution of the unobserved utility shocks for one side of the market.
#[derive(Debug, Clone)]
pub struct HeterogeneitySpec {
    pub side: Side,
    pub kind: ShockKind,
}

#[derive(Debug, Clone)]
pub enum ShockKind {
    /// I.i.d. type-I extreme value (Gumbel) shocks with the given scale;
    /// unit scale on both sides is the Choo–Siow special case.
    ExtremeValueLogit { scale: f64 },
    /// One matrix of realized shock draws per own-side type, S rows by
    /// (choices + 1) columns with column 0 holding the singles shock. The
    /// sampled max is smoothed entropically so Hessians exist; the smoothing
    /// bias is O(smoothing * log(choices + 1)).
    SimulatedSmoothed {
        draws: Vec<DMatrix<f64>>,
        smoothing: f64,
    },
}

impl HeterogeneitySpec {
    pub fn logit(side: Side, scale: f64) -> Result<Self> {
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "logit scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self {
            side,
            kind: ShockKind::ExtremeValueLogit { scale },
        })
    }

    pub fn simulated(side: Side, draws: Vec<DMatrix<f64>>, smoothing: f64) -> Result<Self> {
        if smoothing <= 0.0 || !smoothing.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing must be positive and finite, got {smoothing}"
            )));
        }
        for (t, d) in draws.iter().enumerate() {
            if d.nrows() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "type {t}: at least 2 draws required, got {}",
                    d.nrows()
                )));
            }
            if d.ncols() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "type {t}: draws need a singles column plus at least one choice"
                )));
            }
            if let Some(idx) = d.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteUtility { index: idx });
            }
        }
        Ok(Self {
            side,
            kind: ShockKind::SimulatedSmoothed { draws, smoothing },
        })
    }

    /// Gumbel draws for `num_types` types with `num_choices` non-single
    /// choices each, generated from a counter-based stream so results do not
    /// depend on evaluation order or thread count.
    pub fn simulated_gumbel(
        side: Side,
        num_types: usize,
        num_choices: usize,
        num_draws: usize,
        seed: u64,
        smoothing: f64,
    ) -> Result<Self> {
        let draws = (0..num_types)
            .map(|t| {
                DMatrix::from_fn(num_draws, num_choices + 1, |s, c| {
                    rng::gumbel(&[seed, side.tag(), t as u64, s as u64, c as u64])
                })
            })
            .collect();
        Self::simulated(side, draws, smoothing)
    }

    /// Number of opposite-side choices the spec is wired for, if fixed by
    /// the draws; logit specs work for any dimension.
    pub fn num_choices(&self, type_idx: usize) -> Option<usize> {
        match &self.kind {
            ShockKind::ExtremeValueLogit { .. } => None,
            ShockKind::SimulatedSmoothed { draws, .. } => {
                draws.get(type_idx).map(|d| d.ncols() - 1)
            }
        }
    }
}

/// Value, choice probabilities, and curvature of one emax evaluation.
#[derive(Debug, Clone)]
pub struct EmaxEvaluation {
    /// Expected maximum utility.
    pub value: f64,
    /// Choice probabilities over the opposite-side types (singles excluded).
    pub gradient: DVector<f64>,
    /// Probability of the singles option.
    pub singles_share: f64,
    /// Second derivatives with respect to the non-single utilities.
    pub hessian: DMatrix<f64>,
}

fn check_utilities(utilities: &DVector<f64>) -> Result<()> {
    if let Some(idx) = utilities.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteUtility { index: idx });
    }
    Ok(())
}

/// Log-sum-exp over the utilities plus the implicit zero of the singles
/// option, together with the implied choice probabilities.
fn logit_shares(z: &[f64]) -> (f64, Vec<f64>, f64) {
    let mut m = 0.0f64;
    for &v in z {
        m = m.max(v);
    }
    let mut sum = (-m).exp();
    for &v in z {
        sum += (v - m).exp();
    }
    let lse = m + sum.ln();
    let probs: Vec<f64> = z.iter().map(|&v| (v - lse).exp()).collect();
    let single = (-lse).exp();
    (lse, probs, single)
}

/// Rank-one logit curvature (diag(p) - p p^T) / scale on the non-single block.
fn logit_hessian(probs: &[f64], scale: f64) -> DMatrix<f64> {
    let k = probs.len();
    DMatrix::from_fn(k, k, |i, j| {
        let v = if i == j {
            probs[i] * (1.0 - probs[i])
        } else {
            -probs[i] * probs[j]
        };
        v / scale
    })
}

/// Evaluate the emax function for one type.
///
/// `utilities` has one entry per opposite-side type; the singles option is
/// implicit at utility zero. Summation over simulated draws runs in a fixed
/// sequential order so results are bitwise reproducible.
pub fn emax(
    spec: &HeterogeneitySpec,
    type_idx: usize,
    utilities: &DVector<f64>,
) -> Result<EmaxEvaluation> {
    check_utilities(utilities)?;
    match &spec.kind {
        ShockKind::ExtremeValueLogit { scale } => {
            let z: Vec<f64> = utilities.iter().map(|&u| u / scale).collect();
            let (lse, probs, single) = logit_shares(&z);
            Ok(EmaxEvaluation {
                value: scale * lse + scale * EULER_GAMMA,
                hessian: logit_hessian(&probs, *scale),
                gradient: DVector::from_vec(probs),
                singles_share: single,
            })
        }
        ShockKind::SimulatedSmoothed { draws, smoothing } => {
            let d = draws.get(type_idx).ok_or(Error::DimensionMismatch {
                context: "simulated draws for type index",
                expected: draws.len(),
                got: type_idx,
            })?;
            let k = utilities.len();
            if d.ncols() != k + 1 {
                return Err(Error::DimensionMismatch {
                    context: "utilities vs draw columns (choices + 1)",
                    expected: d.ncols() - 1,
                    got: k,
                });
            }
            let sigma = *smoothing;
            let s_count = d.nrows();
            let mut value = 0.0;
            let mut gradient = DVector::zeros(k);
            let mut singles = 0.0;
            let mut hessian = DMatrix::zeros(k, k);
            let mut z = vec![0.0; k];
            for s in 0..s_count {
                for c in 0..k {
                    z[c] = (utilities[c] + d[(s, c + 1)]) / sigma;
                }
                // The singles option enters at (0 + eps_0); shift so the
                // shared log-sum-exp helper can keep its implicit zero.
                let z0 = d[(s, 0)] / sigma;
                for v in z.iter_mut() {
                    *v -= z0;
                }
                let (lse, probs, single) = logit_shares(&z);
                value += sigma * (lse + z0);
                for c in 0..k {
                    gradient[c] += probs[c];
                }
                singles += single;
                for i in 0..k {
                    for j in 0..k {
                        let v = if i == j {
                            probs[i] * (1.0 - probs[i])
                        } else {
                            -probs[i] * probs[j]
                        };
                        hessian[(i, j)] += v / sigma;
                    }
                }
            }
            let inv_s = 1.0 / s_count as f64;
            Ok(EmaxEvaluation {
                value: value * inv_s,
                gradient: gradient * inv_s,
                singles_share: singles * inv_s,
                hessian: hessian * inv_s,
            })
        }
    }
}

fn check_shares(pair_shares: &DVector<f64>, single_share: f64) -> Result<()> {
    for (i, &s) in pair_shares.iter().enumerate() {
        if s <= BOUNDARY_FLOOR || !s.is_finite() {
            return Err(Error::BoundaryShares { index: i, value: s });
        }
    }
    if single_share <= BOUNDARY_FLOOR || !single_share.is_finite() {
        return Err(Error::BoundaryShares {
            index: pair_shares.len(),
            value: single_share,
        });
    }
    Ok(())
}

/// Invert the emax gradient: find `U` whose choice probabilities equal the
/// given shares. This is the gradient of the convex conjugate evaluated at
/// the shares. Closed form for the logit kind; damped Newton started at the
/// unit-logit closed form for the simulated kind.
pub fn conjugate_gradient(
    spec: &HeterogeneitySpec,
    type_idx: usize,
    pair_shares: &DVector<f64>,
    single_share: f64,
) -> Result<DVector<f64>> {
    check_shares(pair_shares, single_share)?;
    let logit_closed_form =
        |scale: f64| -> DVector<f64> { pair_shares.map(|s| scale * (s.ln() - single_share.ln())) };
    match &spec.kind {
        ShockKind::ExtremeValueLogit { scale } => Ok(logit_closed_form(*scale)),
        ShockKind::SimulatedSmoothed { .. } => {
            // Root-find grad(U) = shares by minimizing the strictly convex
            // merit G(U) - U . shares, whose gradient is the share residual.
            let mut u = logit_closed_form(1.0);
            let state = |u: &DVector<f64>| -> Result<(f64, DVector<f64>, DMatrix<f64>, f64)> {
                let eval = emax(spec, type_idx, u)?;
                let r = &eval.gradient - pair_shares;
                let sup = r.amax();
                Ok((eval.value - u.dot(pair_shares), r, eval.hessian, sup))
            };
            let (mut merit, mut r, mut hess, mut sup) = state(&u)?;
            for _ in 0..CONJUGATE_MAX_ITER {
                if sup <= CONJUGATE_TOL {
                    return Ok(u);
                }
                let mut step = hess
                    .clone()
                    .cholesky()
                    .map(|c| c.solve(&r))
                    .unwrap_or_else(|| {
                        // Near-singular curvature: take a scaled residual step.
                        r.clone() * (1.0 / hess.diagonal().amax().max(1e-12))
                    });
                // The share map flattens exponentially in the tails, where an
                // unclamped Newton step can catapult past any useful region.
                let sup_step = step.amax();
                if sup_step > 2.0 {
                    step *= 2.0 / sup_step;
                }
                let slope = -r.dot(&step);
                let mut t = 1.0;
                let mut accepted = false;
                for _ in 0..40 {
                    let candidate = &u - &step * t;
                    let (mc, rc, hc, sc) = state(&candidate)?;
                    if mc <= merit + 1e-4 * t * slope || sc <= 0.9 * sup {
                        u = candidate;
                        merit = mc;
                        r = rc;
                        hess = hc;
                        sup = sc;
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            if sup <= CONJUGATE_TOL {
                Ok(u)
            } else {
                Err(Error::NoConvergence {
                    solver: "conjugate gradient Newton inversion",
                    iterations: CONJUGATE_MAX_ITER,
                    residual: sup,
                })
            }
        }
    }
}

/// Legendre–Fenchel conjugate value at the given shares:
/// `G*(shares) = U . shares - G(U)` at `U = conjugate_gradient(shares)`.
pub fn conjugate_value(
    spec: &HeterogeneitySpec,
    type_idx: usize,
    pair_shares: &DVector<f64>,
    single_share: f64,
) -> Result<f64> {
    let u = conjugate_gradient(spec, type_idx, pair_shares, single_share)?;
    let eval = emax(spec, type_idx, &u)?;
    Ok(u.dot(pair_shares) - eval.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcheck;
    use nalgebra::dvector;

    fn men_logit(scale: f64) -> HeterogeneitySpec {
        HeterogeneitySpec::logit(Side::Men, scale).unwrap()
    }

    #[test]
    fn logit_symmetric_single_choice() {
        // One choice at U = 0: E max(eps_1, eps_0) = gamma + log 2, each
        // option taken half the time. Cross-checked by the Monte Carlo
        // oracle in tests/emax_oracle.rs.
        let eval = emax(&men_logit(1.0), 0, &dvector![0.0]).unwrap();
        assert!((eval.value - (2.0f64.ln() + EULER_GAMMA)).abs() < 1e-12);
        assert!((eval.gradient[0] - 0.5).abs() < 1e-12);
        assert!((eval.singles_share - 0.5).abs() < 1e-12);
        assert!((eval.hessian[(0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn logit_deep_negative_utility() {
        let eval = emax(&men_logit(1.0), 0, &dvector![-30.0]).unwrap();
        assert!((eval.gradient[0] - 9.36e-14).abs() < 1e-15);
        assert!(eval.singles_share > 1.0 - 1e-12);
    }

    #[test]
    fn non_finite_utilities_rejected() {
        assert!(matches!(
            emax(&men_logit(1.0), 0, &dvector![f64::NAN]),
            Err(Error::NonFiniteUtility { .. })
        ));
    }

    #[test]
    fn zero_draws_match_scaled_logit() {
        // All-zero draws make the smoothed emax an exact logit with scale
        // sigma: value log 2, shares one half.
        let spec =
            HeterogeneitySpec::simulated(Side::Men, vec![DMatrix::zeros(4, 2)], 1.0).unwrap();
        let eval = emax(&spec, 0, &dvector![0.0]).unwrap();
        assert!((eval.value - 2.0f64.ln()).abs() < 1e-12);
        assert!((eval.gradient[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn conjugate_closed_forms() {
        let spec = men_logit(1.0);
        let u = conjugate_gradient(&spec, 0, &dvector![0.5], 0.5).unwrap();
        assert!(u[0].abs() < 1e-12);

        let u = conjugate_gradient(&spec, 0, &dvector![0.2, 0.3], 0.5).unwrap();
        assert!((u[0] - 0.4f64.ln()).abs() < 1e-12);
        assert!((u[1] - 0.6f64.ln()).abs() < 1e-12);
        // Round trip: emax gradient at U recovers the shares.
        let eval = emax(&spec, 0, &u).unwrap();
        assert!((eval.gradient[0] - 0.2).abs() < 1e-12);
        assert!((eval.gradient[1] - 0.3).abs() < 1e-12);

        let spec2 = men_logit(2.0);
        let u = conjugate_gradient(&spec2, 0, &dvector![0.25], 0.75).unwrap();
        assert!((u[0] - 2.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);
        let eval = emax(&spec2, 0, &u).unwrap();
        assert!((eval.gradient[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn boundary_shares_rejected() {
        let spec = men_logit(1.0);
        assert!(matches!(
            conjugate_gradient(&spec, 0, &dvector![0.0, 0.5], 0.5),
            Err(Error::BoundaryShares { .. })
        ));
        assert!(matches!(
            conjugate_gradient(&spec, 0, &dvector![0.5], 0.0),
            Err(Error::BoundaryShares { .. })
        ));
    }

    #[test]
    fn conjugate_value_entropy_form() {
        let spec = men_logit(1.0);
        // Symmetric case: 0 * 0.5 - (log 2 + gamma).
        let v = conjugate_value(&spec, 0, &dvector![0.5], 0.5).unwrap();
        assert!((v - (-(2.0f64.ln() + EULER_GAMMA))).abs() < 1e-12);
        // Entropy form p log p + (1-p) log(1-p) - gamma at p = 0.3.
        let v = conjugate_value(&spec, 0, &dvector![0.3], 0.7).unwrap();
        let entropy = 0.3f64 * 0.3f64.ln() + 0.7 * 0.7f64.ln();
        assert!((v - (entropy - EULER_GAMMA)).abs() < 1e-12);
    }

    #[test]
    fn fenchel_equality() {
        // conjugate_value + emax value = U . shares, for both kinds.
        let specs = [
            men_logit(0.7),
            HeterogeneitySpec::simulated_gumbel(Side::Men, 1, 3, 200, 11, 0.05).unwrap(),
        ];
        let pair = dvector![0.2, 0.35, 0.15];
        let single = 0.3;
        for spec in &specs {
            let u = conjugate_gradient(spec, 0, &pair, single).unwrap();
            let cv = conjugate_value(spec, 0, &pair, single).unwrap();
            let ev = emax(spec, 0, &u).unwrap();
            assert!((cv + ev.value - u.dot(&pair)).abs() < 1e-10);
        }
    }

    fn random_utilities(len: usize, key: u64) -> DVector<f64> {
        DVector::from_fn(len, |i, _| {
            6.0 * crate::rng::uniform_open01(&[key, i as u64]) - 3.0
        })
    }

    fn value_of(spec: &HeterogeneitySpec, pt: &[f64]) -> f64 {
        emax(spec, 0, &DVector::from_column_slice(pt))
            .unwrap()
            .value
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn logit_derivatives_match_finite_differences() {
        let spec = men_logit(1.3);
        for key in 0..5u64 {
            let u = random_utilities(4, 100 + key);
            let eval = emax(&spec, 0, &u).unwrap();
            let fd_grad = fdcheck::central_gradient(|p| value_of(&spec, p), u.as_slice(), 1e-5);
            let err = fdcheck::max_rel_err(eval.gradient.as_slice(), &fd_grad, 1e-8);
            assert!(err <= 1e-6, "gradient error {err}");
            let fd_hess = fdcheck::central_hessian(|p| value_of(&spec, p), u.as_slice(), 1e-4);
            for i in 0..4 {
                for j in 0..4 {
                    let err = fdcheck::rel_err(eval.hessian[(i, j)], fd_hess[i][j], 1e-6);
                    assert!(err <= 1e-4, "hessian ({i},{j}) error {err}");
                }
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn simulated_derivatives_match_finite_differences() {
        let spec = HeterogeneitySpec::simulated_gumbel(Side::Men, 1, 3, 500, 23, 0.05).unwrap();
        let u = random_utilities(3, 55);
        let eval = emax(&spec, 0, &u).unwrap();
        let fd_grad = fdcheck::central_gradient(|p| value_of(&spec, p), u.as_slice(), 1e-5);
        let err = fdcheck::max_rel_err(eval.gradient.as_slice(), &fd_grad, 1e-8);
        assert!(err <= 1e-4, "gradient error {err}");
        let fd_hess = fdcheck::central_hessian(|p| value_of(&spec, p), u.as_slice(), 1e-4);
        for i in 0..3 {
            for j in 0..3 {
                let err = fdcheck::rel_err(eval.hessian[(i, j)], fd_hess[i][j], 1e-5);
                assert!(err <= 1e-3, "hessian ({i},{j}) error {err}");
            }
        }
    }

    #[test]
    fn hessian_is_stieltjes() {
        // Non-positive off-diagonals and positive definiteness on random
        // instances: the gross-substitutes property.
        let logit = men_logit(0.9);
        let sim = HeterogeneitySpec::simulated_gumbel(Side::Men, 1, 4, 300, 77, 0.05).unwrap();
        for key in 0..100u64 {
            for spec in [&logit, &sim] {
                let u = random_utilities(4, 1000 + key);
                let eval = emax(spec, 0, &u).unwrap();
                for i in 0..4 {
                    for j in 0..4 {
                        if i != j {
                            assert!(eval.hessian[(i, j)] <= 0.0);
                        }
                    }
                }
                let eig = eval.hessian.clone().symmetric_eigenvalues();
                assert!(eig.min() > 0.0, "smallest eigenvalue {}", eig.min());
            }
        }
    }

    #[test]
    fn conjugacy_round_trip() {
        let logit = men_logit(1.0);
        let sim = HeterogeneitySpec::simulated_gumbel(Side::Men, 1, 3, 400, 91, 0.05).unwrap();
        for key in 0..10u64 {
            let u = random_utilities(3, 5000 + key);
            for (spec, tol) in [(&logit, 1e-8), (&sim, 1e-6)] {
                let eval = emax(spec, 0, &u).unwrap();
                let back = conjugate_gradient(spec, 0, &eval.gradient, eval.singles_share).unwrap();
                assert!(
                    (&back - &u).amax() <= tol,
                    "round trip error {}",
                    (&back - &u).amax()
                );
            }
        }
    }

    #[test]
    fn value_is_convex_along_segments() {
        let spec = men_logit(1.0);
        for key in 0..20u64 {
            let a = random_utilities(3, 9000 + key);
            let b = random_utilities(3, 9500 + key);
            let t = crate::rng::uniform_open01(&[42, key]);
            let mid = &a * t + &b * (1.0 - t);
            let lhs = emax(&spec, 0, &mid).unwrap().value;
            let rhs = t * emax(&spec, 0, &a).unwrap().value
                + (1.0 - t) * emax(&spec, 0, &b).unwrap().value;
            assert!(lhs <= rhs + 1e-12);
        }
    }
}
