//! The one-type-per-side market in closed form.
//!
//! With a single type on each side the equilibrium reduces to one scalar
//! equation `mu = n F_P(U) = m F_Q(Phi - U)`, where `F_P` is the cdf of the
//! singles-shock advantage `eps_0 - eps` for men (`F_Q` for women). The
//! curvature kernels `k(t) = f(F^{-1}(t))` turn the general linearized
//! system into scalar formulae for `dU`, `du`, and `dmu`, including the
//! elasticities of the number of matches with respect to each population.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Scalar distribution of the singles-shock advantage, together with the
/// expected-maximum function it induces.
pub trait ScalarShockDist {
    fn cdf(&self, t: f64) -> f64;
    fn pdf(&self, t: f64) -> f64;
    fn quantile(&self, p: f64) -> f64;
    /// `E max(U + eps, eps_0)` for the underlying shock pair.
    fn emax(&self, u: f64) -> f64;
    /// Curvature kernel `k(t) = pdf(quantile(t))`.
    fn kernel(&self, t: f64) -> f64 {
        self.pdf(self.quantile(t))
    }
}

/// Standard logistic difference: the Choo–Siow case, since the difference of
/// two independent unit Gumbel shocks is standard logistic.
#[derive(Debug, Clone, Copy, Default)]
pub struct Logistic;

impl ScalarShockDist for Logistic {
    fn cdf(&self, t: f64) -> f64 {
        1.0 / (1.0 + (-t).exp())
    }

    fn pdf(&self, t: f64) -> f64 {
        let s = self.cdf(t);
        s * (1.0 - s)
    }

    fn quantile(&self, p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn emax(&self, u: f64) -> f64 {
        // log(1 + e^u) + gamma, stable in both tails.
        u.max(0.0) + (-u.abs()).exp().ln_1p() + crate::heterogeneity::EULER_GAMMA
    }

    fn kernel(&self, t: f64) -> f64 {
        t * (1.0 - t)
    }
}

/// Standard normal difference: the shock pair is i.i.d. N(0, 1/2).
#[derive(Debug, Clone)]
pub struct StdNormal {
    dist: Normal,
}

impl Default for StdNormal {
    fn default() -> Self {
        Self {
            dist: Normal::standard(),
        }
    }
}

impl StdNormal {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ScalarShockDist for StdNormal {
    fn cdf(&self, t: f64) -> f64 {
        self.dist.cdf(t)
    }

    fn pdf(&self, t: f64) -> f64 {
        (-(t * t) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn quantile(&self, p: f64) -> f64 {
        self.dist.inverse_cdf(p)
    }

    fn emax(&self, u: f64) -> f64 {
        u * self.cdf(u) + self.pdf(u)
    }
}

/// A one-type market: scalar masses, scalar surplus, and a shock-advantage
/// distribution per side.
pub struct OneTypeModel {
    pub n: f64,
    pub m: f64,
    pub phi: f64,
    pub dist_p: Box<dyn ScalarShockDist + Send + Sync>,
    pub dist_q: Box<dyn ScalarShockDist + Send + Sync>,
}

impl OneTypeModel {
    pub fn new(
        n: f64,
        m: f64,
        phi: f64,
        dist_p: Box<dyn ScalarShockDist + Send + Sync>,
        dist_q: Box<dyn ScalarShockDist + Send + Sync>,
    ) -> Result<Self> {
        if n <= 0.0 || m <= 0.0 || !n.is_finite() || !m.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "masses must be positive and finite, got n={n}, m={m}"
            )));
        }
        if !phi.is_finite() {
            return Err(Error::NonFiniteUtility { index: 0 });
        }
        Ok(Self {
            n,
            m,
            phi,
            dist_p,
            dist_q,
        })
    }

    pub fn logistic(n: f64, m: f64, phi: f64) -> Result<Self> {
        Self::new(n, m, phi, Box::new(Logistic), Box::new(Logistic))
    }
}

/// Solved one-type equilibrium.
#[derive(Debug, Clone, Copy)]
pub struct OneTypeSolution {
    /// Men's systematic utility share of the surplus.
    pub u_split: f64,
    /// Mass of matches.
    pub mu: f64,
    /// Average expected utility of men.
    pub u: f64,
    /// Average expected utility of women.
    pub v: f64,
}

const ONE_TYPE_TOL: f64 = 1e-14;
const ONE_TYPE_MAX_ITER: usize = 300;

/// Solve `n F_P(U) = m F_Q(Phi - U)` by bracketed bisection followed by a
/// Newton polish, then fill in welfare from the scalar emax functions.
pub fn solve_one_type(model: &OneTypeModel) -> Result<OneTypeSolution> {
    let gap = |u: f64| model.n * model.dist_p.cdf(u) - model.m * model.dist_q.cdf(model.phi - u);
    let (mut lo, mut hi) = (-1.0, 1.0);
    for _ in 0..200 {
        if gap(lo) < 0.0 {
            break;
        }
        lo *= 2.0;
    }
    for _ in 0..200 {
        if gap(hi) > 0.0 {
            break;
        }
        hi *= 2.0;
    }
    if !(gap(lo) < 0.0 && gap(hi) > 0.0) {
        return Err(Error::NoConvergence {
            solver: "one-type bracket",
            iterations: 200,
            residual: gap(lo).abs().min(gap(hi).abs()),
        });
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u = 0.5 * (lo + hi);
    let mut residual = gap(u).abs();
    for _ in 0..ONE_TYPE_MAX_ITER {
        if residual <= ONE_TYPE_TOL * (model.n + model.m) {
            break;
        }
        let slope = model.n * model.dist_p.pdf(u) + model.m * model.dist_q.pdf(model.phi - u);
        if slope <= 0.0 {
            break;
        }
        let candidate = (u - gap(u) / slope).clamp(lo, hi);
        let cand_residual = gap(candidate).abs();
        if cand_residual >= residual {
            break;
        }
        u = candidate;
        residual = cand_residual;
    }
    if residual > 1e-10 * (model.n + model.m) {
        return Err(Error::NoConvergence {
            solver: "one-type Newton",
            iterations: ONE_TYPE_MAX_ITER,
            residual,
        });
    }
    let mu = model.n * model.dist_p.cdf(u);
    Ok(OneTypeSolution {
        u_split: u,
        mu,
        u: model.dist_p.emax(u),
        v: model.dist_q.emax(model.phi - u),
    })
}

/// Closed-form identification of the scalar surplus from the number of
/// matches: `Phi = F_P^{-1}(mu/n) + F_Q^{-1}(mu/m)`.
pub fn one_type_identify(
    mu: f64,
    n: f64,
    m: f64,
    dist_p: &dyn ScalarShockDist,
    dist_q: &dyn ScalarShockDist,
) -> Result<f64> {
    let bound = n.min(m);
    if mu <= 0.0 || mu >= bound || !mu.is_finite() {
        return Err(Error::OutOfRangeMatching { mu, bound });
    }
    Ok(dist_p.quantile(mu / n) + dist_q.quantile(mu / m))
}

/// Log-change shock to the one-type primitives.
#[derive(Debug, Clone, Copy, Default)]
pub struct OneTypeShock {
    pub dlog_n: f64,
    pub dlog_m: f64,
    pub dphi: f64,
}

/// Local curvature of the one-type model at its solution.
#[derive(Debug, Clone, Copy)]
pub struct OneTypeLocal {
    pub k_p: f64,
    pub k_q: f64,
    /// S = n k_P(mu/n) + m k_Q(mu/m).
    pub slope: f64,
    /// T = 1/S.
    pub t_scalar: f64,
}

/// First-order one-type responses.
#[derive(Debug, Clone, Copy)]
pub struct OneTypeDifferentials {
    pub du_split: f64,
    pub du: f64,
    pub dv: f64,
    pub dmu: f64,
    /// Elasticity of the number of matches to n; e_n + e_m = 1.
    pub e_n: f64,
    pub e_m: f64,
    /// A pure surplus shock moves mu by this fraction of dPhi/2.
    pub s_fraction: f64,
    pub local: OneTypeLocal,
}

pub fn one_type_local(model: &OneTypeModel, solution: &OneTypeSolution) -> OneTypeLocal {
    let k_p = model.dist_p.kernel(solution.mu / model.n);
    let k_q = model.dist_q.kernel(solution.mu / model.m);
    let slope = model.n * k_p + model.m * k_q;
    OneTypeLocal {
        k_p,
        k_q,
        slope,
        t_scalar: 1.0 / slope,
    }
}

/// Scalar comparative statics:
/// `dU = T (mu dlog(m/n) + m k_Q dPhi)`, `du = (mu/n) dU`, and
/// `dmu = T (mu (m k_Q dlog n + n k_P dlog m) + n m k_P k_Q dPhi)`.
pub fn one_type_differentials(
    model: &OneTypeModel,
    solution: &OneTypeSolution,
    shock: &OneTypeShock,
) -> OneTypeDifferentials {
    let local = one_type_local(model, solution);
    let (n, m, mu) = (model.n, model.m, solution.mu);
    let t = local.t_scalar;
    let du_split = t * (mu * (shock.dlog_m - shock.dlog_n) + m * local.k_q * shock.dphi);
    let du = (mu / n) * du_split;
    let dv = (mu / m) * (shock.dphi - du_split);
    let dmu = t
        * (mu * (m * local.k_q * shock.dlog_n + n * local.k_p * shock.dlog_m)
            + n * m * local.k_p * local.k_q * shock.dphi);
    OneTypeDifferentials {
        du_split,
        du,
        dv,
        dmu,
        e_n: t * m * local.k_q,
        e_m: t * n * local.k_p,
        s_fraction: 2.0 * t * n * m * local.k_p * local.k_q,
        local,
    }
}
