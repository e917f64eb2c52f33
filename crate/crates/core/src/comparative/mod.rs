//! Exact local comparative statics.
//!
//! Differentiating the equilibrium condition gives the linear system
//!
//! ```text
//! (D2G(U) + D2H(Phi - U)) dU = d2H/dVdm dm - d2G/dUdn dn + D2H dPhi
//! ```
//!
//! whose system matrix is Stieltjes (symmetric positive definite,
//! non-positive off-diagonals), so its inverse `T` is entrywise nonnegative.
//! That single sign fact drives every comparative-statics result here: more
//! rivals hurt, more partners help, and the sizes of the effects come from
//! the `T` blocks. The `one_type` submodule carries the scalar closed forms
//! for the one-type-per-side market.

pub mod one_type;

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::EquilibriumResult;
use crate::error::{Error, Result};
use crate::heterogeneity::{emax, HeterogeneitySpec};
use crate::market::{conditional_shares, ConditionalShares, ValidatedMarket};

/// Equilibria closer than this to the share boundary are rejected before
/// differentiation: the curvature kernels vanish there and `T` blows up.
const DEGENERACY_FLOOR: f64 = 1e-12;

/// Residual gate on the equilibrium condition before differentiating.
const STATIONARITY_GATE: f64 = 1e-6;

const CONDITION_LIMIT: f64 = 1e12;

/// Mass-scaled Hessians of the social gain and the inverse of their sum,
/// flattened with cell index `z = x * ny + y`.
#[derive(Debug, Clone)]
pub struct HessianBundle {
    /// Block diagonal by x: `n_x` times the emax Hessian of type x.
    pub d2g: DMatrix<f64>,
    /// Block diagonal by y after permutation: `m_y` times the emax Hessian
    /// of type y, scattered over the flattened cell index.
    pub d2h: DMatrix<f64>,
    /// Inverse of `d2g + d2h`; entrywise nonnegative.
    pub t: DMatrix<f64>,
    nx: usize,
    ny: usize,
}

impl HessianBundle {
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }
}

/// Shock to the model primitives (dn, dm, dPhi).
#[derive(Debug, Clone)]
pub struct Shock {
    pub dn: DVector<f64>,
    pub dm: DVector<f64>,
    pub dphi: DMatrix<f64>,
}

impl Shock {
    pub fn zero(nx: usize, ny: usize) -> Self {
        Self {
            dn: DVector::zeros(nx),
            dm: DVector::zeros(ny),
            dphi: DMatrix::zeros(nx, ny),
        }
    }

    pub fn unit_dn(nx: usize, ny: usize, x: usize) -> Self {
        let mut s = Self::zero(nx, ny);
        s.dn[x] = 1.0;
        s
    }

    pub fn unit_dm(nx: usize, ny: usize, y: usize) -> Self {
        let mut s = Self::zero(nx, ny);
        s.dm[y] = 1.0;
        s
    }

    pub fn unit_dphi(nx: usize, ny: usize, x: usize, y: usize) -> Self {
        let mut s = Self::zero(nx, ny);
        s.dphi[(x, y)] = 1.0;
        s
    }
}

/// First-order responses of utilities, welfare, and the matching to a shock.
#[derive(Debug, Clone)]
pub struct ComparativeStaticsReport {
    pub du_split: DMatrix<f64>,
    pub du: DVector<f64>,
    pub dv: DVector<f64>,
    pub dmu: DMatrix<f64>,
    pub dmu_x0: DVector<f64>,
    pub dmu_0y: DVector<f64>,
}

/// The welfare-derivative blocks of both sides with respect to every
/// primitive. Surplus blocks are indexed by the flattened cell `x * ny + y`.
#[derive(Debug, Clone)]
pub struct WelfareDerivativeBlocks {
    pub du_dn: DMatrix<f64>,
    pub du_dm: DMatrix<f64>,
    pub du_dphi: DMatrix<f64>,
    pub dv_dn: DMatrix<f64>,
    pub dv_dm: DMatrix<f64>,
    pub dv_dphi: DMatrix<f64>,
}

fn equilibrium_shares(
    market: &ValidatedMarket,
    equilibrium: &EquilibriumResult,
) -> Result<ConditionalShares> {
    let shares = conditional_shares(&equilibrium.matching, market)?;
    let interior = shares
        .mu_m_given_x
        .iter()
        .chain(shares.mu_w_given_y.iter())
        .all(|&s| s >= DEGENERACY_FLOOR);
    if !interior {
        return Err(Error::BoundaryShares {
            index: 0,
            value: shares
                .mu_m_given_x
                .iter()
                .chain(shares.mu_w_given_y.iter())
                .fold(f64::INFINITY, |a, &b| a.min(b)),
        });
    }
    Ok(shares)
}

/// Assemble the mass-scaled Hessian blocks at an equilibrium and invert
/// their sum.
pub fn assemble_hessians(
    market: &ValidatedMarket,
    het_men: &HeterogeneitySpec,
    het_women: &HeterogeneitySpec,
    equilibrium: &EquilibriumResult,
) -> Result<HessianBundle> {
    let (nx, ny) = (market.num_x(), market.num_y());
    let dim = nx * ny;
    let u = &equilibrium.utilities.u;
    let v = &equilibrium.utilities.v;

    // The linearization is only valid at a stationary point.
    let mut stationarity = 0.0f64;
    let mut d2g = DMatrix::zeros(dim, dim);
    let mut d2h = DMatrix::zeros(dim, dim);
    let mut men_demand = DMatrix::zeros(nx, ny);
    for x in 0..nx {
        let row = DVector::from_fn(ny, |y, _| u[(x, y)]);
        let eval = emax(het_men, x, &row)?;
        for y1 in 0..ny {
            men_demand[(x, y1)] = market.n()[x] * eval.gradient[y1];
            for y2 in 0..ny {
                d2g[(x * ny + y1, x * ny + y2)] = market.n()[x] * eval.hessian[(y1, y2)];
            }
        }
    }
    for y in 0..ny {
        let col = DVector::from_fn(nx, |x, _| v[(x, y)]);
        let eval = emax(het_women, y, &col)?;
        for x1 in 0..nx {
            stationarity =
                stationarity.max((men_demand[(x1, y)] - market.m()[y] * eval.gradient[x1]).abs());
            for x2 in 0..nx {
                d2h[(x1 * ny + y, x2 * ny + y)] = market.m()[y] * eval.hessian[(x1, x2)];
            }
        }
    }
    if stationarity > STATIONARITY_GATE {
        return Err(Error::InvalidParameter(format!(
            "equilibrium condition residual {stationarity:.3e} exceeds {STATIONARITY_GATE:.0e}; re-solve before differentiating"
        )));
    }
    equilibrium_shares(market, equilibrium)?;

    let sum = &d2g + &d2h;
    let chol = sum.clone().cholesky().ok_or(Error::SingularSystem {
        condition: f64::INFINITY,
    })?;
    let t = chol.inverse();
    let condition = inf_norm(&sum) * inf_norm(&t);
    if condition > CONDITION_LIMIT {
        return Err(Error::SingularSystem { condition });
    }
    Ok(HessianBundle {
        d2g,
        d2h,
        t,
        nx,
        ny,
    })
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_shock(shock: &Shock, nx: usize, ny: usize) -> Result<()> {
    if shock.dn.len() != nx || shock.dm.len() != ny {
        return Err(Error::DimensionMismatch {
            context: "shock population vectors",
            expected: nx + ny,
            got: shock.dn.len() + shock.dm.len(),
        });
    }
    if shock.dphi.nrows() != nx || shock.dphi.ncols() != ny {
        return Err(Error::DimensionMismatch {
            context: "shock surplus matrix",
            expected: nx * ny,
            got: shock.dphi.nrows() * shock.dphi.ncols(),
        });
    }
    if shock
        .dn
        .iter()
        .chain(shock.dm.iter())
        .chain(shock.dphi.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidParameter(
            "shock entries must be finite".into(),
        ));
    }
    Ok(())
}

/// Exact first-order response to a shock in (n, m, Phi).
///
/// The right-hand side is assembled per cell as
/// `-muM_{y|x} dn_x + muW_{x|y} dm_y + [D2H dPhi]_{xy}`, then `dU = T rhs`,
/// welfare responses are share-weighted sums of `dU`, and the matching
/// response follows from the chain rule
/// `dmu_{xy} = [D2G dU]_{xy} + muM_{y|x} dn_x`.
pub fn differential_response(
    bundle: &HessianBundle,
    market: &ValidatedMarket,
    equilibrium: &EquilibriumResult,
    shock: &Shock,
) -> Result<ComparativeStaticsReport> {
    let (nx, ny) = bundle.dims();
    if market.num_x() != nx || market.num_y() != ny {
        return Err(Error::DimensionMismatch {
            context: "bundle vs market",
            expected: nx * ny,
            got: market.num_x() * market.num_y(),
        });
    }
    check_shock(shock, nx, ny)?;
    let shares = equilibrium_shares(market, equilibrium)?;

    let dphi_vec = DVector::from_fn(nx * ny, |z, _| shock.dphi[(z / ny, z % ny)]);
    let d2h_dphi = &bundle.d2h * &dphi_vec;
    let rhs = DVector::from_fn(nx * ny, |z, _| {
        let (x, y) = (z / ny, z % ny);
        -shares.men_pair(x, y) * shock.dn[x] + shares.women_pair(x, y) * shock.dm[y] + d2h_dphi[z]
    });
    let du_vec = &bundle.t * rhs;
    let du_split = DMatrix::from_fn(nx, ny, |x, y| du_vec[x * ny + y]);

    let du = DVector::from_fn(nx, |x, _| {
        (0..ny)
            .map(|y| shares.men_pair(x, y) * du_split[(x, y)])
            .sum()
    });
    let dv = DVector::from_fn(ny, |y, _| {
        (0..nx)
            .map(|x| shares.women_pair(x, y) * (shock.dphi[(x, y)] - du_split[(x, y)]))
            .sum()
    });

    let d2g_du = &bundle.d2g * &du_vec;
    let dmu = DMatrix::from_fn(nx, ny, |x, y| {
        d2g_du[x * ny + y] + shares.men_pair(x, y) * shock.dn[x]
    });
    let dmu_x0 = DVector::from_fn(nx, |x, _| shock.dn[x] - dmu.row(x).sum());
    let dmu_0y = DVector::from_fn(ny, |y, _| shock.dm[y] - dmu.column(y).sum());

    Ok(ComparativeStaticsReport {
        du_split,
        du,
        dv,
        dmu,
        dmu_x0,
        dmu_0y,
    })
}

/// Welfare derivatives of every type with respect to every primitive.
///
/// Population blocks are share-weighted quadratic forms in `T`:
/// `du_x/dn_x' = -(muM_x)' T_{x.,x'.} muM_x' <= 0` and
/// `du_x/dm_y' = +(muM_x)' T_{x.,.y'} muW_y' >= 0`, with women-side
/// analogues by exchanging roles. Surplus blocks weight `T D2H` columns and,
/// on the women side, pick up the direct `dPhi` term.
pub fn welfare_derivatives(
    bundle: &HessianBundle,
    market: &ValidatedMarket,
    equilibrium: &EquilibriumResult,
) -> Result<WelfareDerivativeBlocks> {
    let (nx, ny) = bundle.dims();
    let shares = equilibrium_shares(market, equilibrium)?;
    let t = &bundle.t;
    let dim = nx * ny;

    let mut du_dn = DMatrix::zeros(nx, nx);
    let mut du_dm = DMatrix::zeros(nx, ny);
    let mut dv_dn = DMatrix::zeros(ny, nx);
    let mut dv_dm = DMatrix::zeros(ny, ny);
    for x in 0..nx {
        for xp in 0..nx {
            let mut acc = 0.0;
            for y in 0..ny {
                for yp in 0..ny {
                    acc += shares.men_pair(x, y)
                        * t[(x * ny + y, xp * ny + yp)]
                        * shares.men_pair(xp, yp);
                }
            }
            du_dn[(x, xp)] = -acc;
        }
        for yp in 0..ny {
            let mut acc = 0.0;
            for y in 0..ny {
                for xp in 0..nx {
                    acc += shares.men_pair(x, y)
                        * t[(x * ny + y, xp * ny + yp)]
                        * shares.women_pair(xp, yp);
                }
            }
            du_dm[(x, yp)] = acc;
        }
    }
    for y in 0..ny {
        for xp in 0..nx {
            let mut acc = 0.0;
            for x in 0..nx {
                for yp in 0..ny {
                    acc += shares.women_pair(x, y)
                        * t[(x * ny + y, xp * ny + yp)]
                        * shares.men_pair(xp, yp);
                }
            }
            dv_dn[(y, xp)] = acc;
        }
        for yp in 0..ny {
            let mut acc = 0.0;
            for x in 0..nx {
                for xp in 0..nx {
                    acc += shares.women_pair(x, y)
                        * t[(x * ny + y, xp * ny + yp)]
                        * shares.women_pair(xp, yp);
                }
            }
            dv_dm[(y, yp)] = -acc;
        }
    }

    // Surplus blocks through W = T * D2H; columns of W answer unit dPhi cells.
    let w = t * &bundle.d2h;
    let mut du_dphi = DMatrix::zeros(nx, dim);
    let mut dv_dphi = DMatrix::zeros(ny, dim);
    for z in 0..dim {
        let (xp, yp) = (z / ny, z % ny);
        for x in 0..nx {
            let mut acc = 0.0;
            for y in 0..ny {
                acc += shares.men_pair(x, y) * w[(x * ny + y, z)];
            }
            du_dphi[(x, z)] = acc;
        }
        for y in 0..ny {
            let mut acc = if y == yp {
                shares.women_pair(xp, y)
            } else {
                0.0
            };
            for x in 0..nx {
                acc -= shares.women_pair(x, y) * w[(x * ny + y, z)];
            }
            dv_dphi[(y, z)] = acc;
        }
    }

    Ok(WelfareDerivativeBlocks {
        du_dn,
        du_dm,
        du_dphi,
        dv_dn,
        dv_dm,
        dv_dphi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_equilibrium, SolveOptions};
    use crate::heterogeneity::Side;
    use crate::market::{validate_market, RawMarket, SurplusMatrix};
    use nalgebra::dmatrix;

    fn logit_pair() -> (HeterogeneitySpec, HeterogeneitySpec) {
        (
            HeterogeneitySpec::logit(Side::Men, 1.0).unwrap(),
            HeterogeneitySpec::logit(Side::Women, 1.0).unwrap(),
        )
    }

    fn market(n: Vec<f64>, m: Vec<f64>) -> ValidatedMarket {
        validate_market(RawMarket {
            x_types: (0..n.len()).map(|i| format!("x{i}")).collect(),
            y_types: (0..m.len()).map(|j| format!("y{j}")).collect(),
            n,
            m,
        })
        .unwrap()
    }

    fn random_instance(nx: usize, ny: usize, key: u64) -> (ValidatedMarket, SurplusMatrix) {
        let n = (0..nx)
            .map(|i| 0.5 + 1.5 * crate::rng::uniform_open01(&[key, 1, i as u64]))
            .collect();
        let m = (0..ny)
            .map(|j| 0.5 + 1.5 * crate::rng::uniform_open01(&[key, 2, j as u64]))
            .collect();
        let market = market(n, m);
        let phi = DMatrix::from_fn(nx, ny, |x, y| {
            4.0 * crate::rng::uniform_open01(&[key, 3, x as u64, y as u64]) - 2.0
        });
        let phi = SurplusMatrix::new(phi, &market).unwrap();
        (market, phi)
    }

    fn solved_bundle(
        market: &ValidatedMarket,
        phi: &SurplusMatrix,
    ) -> (EquilibriumResult, HessianBundle) {
        let (hm, hw) = logit_pair();
        let eq =
            solve_equilibrium(market, &hm, &hw, phi, &SolveOptions::with_tolerance(1e-12)).unwrap();
        let bundle = assemble_hessians(market, &hm, &hw, &eq).unwrap();
        (eq, bundle)
    }

    #[test]
    fn symmetric_1x1_bundle_values() {
        let market = market(vec![1.0], vec![1.0]);
        let phi = SurplusMatrix::new(dmatrix![0.0], &market).unwrap();
        let (_, bundle) = solved_bundle(&market, &phi);
        assert!((bundle.d2g[(0, 0)] - 0.25).abs() < 1e-10);
        assert!((bundle.d2h[(0, 0)] - 0.25).abs() < 1e-10);
        assert!((bundle.t[(0, 0)] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn t_is_inverse_and_nonnegative() {
        for key in 0..10u64 {
            let (market, phi) = random_instance(2, 2, 100 + key);
            let (_, bundle) = solved_bundle(&market, &phi);
            let product = (&bundle.d2g + &bundle.d2h) * &bundle.t;
            let eye = DMatrix::identity(4, 4);
            assert!((product - eye).amax() < 1e-10);
            assert!(bundle.t.min() >= -1e-12);
        }
    }

    #[test]
    fn zero_shock_zero_response() {
        let (market, phi) = random_instance(3, 2, 17);
        let (eq, bundle) = solved_bundle(&market, &phi);
        let report = differential_response(&bundle, &market, &eq, &Shock::zero(3, 2)).unwrap();
        assert_eq!(report.du_split.amax(), 0.0);
        assert_eq!(report.du.amax(), 0.0);
        assert_eq!(report.dmu.amax(), 0.0);
    }

    #[test]
    fn symmetric_1x1_unit_shocks() {
        let market = market(vec![1.0], vec![1.0]);
        let phi = SurplusMatrix::new(dmatrix![0.0], &market).unwrap();
        let (eq, bundle) = solved_bundle(&market, &phi);

        // dn = +1: du = -T (mu/n)^2 = -0.5.
        let report =
            differential_response(&bundle, &market, &eq, &Shock::unit_dn(1, 1, 0)).unwrap();
        assert!((report.du[0] - (-0.5)).abs() < 1e-9);

        // dPhi = +1: dmu = T n m kP kQ = 2 * 0.25 * 0.25 = 0.125.
        let report =
            differential_response(&bundle, &market, &eq, &Shock::unit_dphi(1, 1, 0, 0)).unwrap();
        assert!((report.dmu[(0, 0)] - 0.125).abs() < 1e-9);

        let blocks = welfare_derivatives(&bundle, &market, &eq).unwrap();
        assert!((blocks.du_dn[(0, 0)] - (-0.5)).abs() < 1e-9);
        assert!((blocks.du_dm[(0, 0)] - 0.5).abs() < 1e-9);
        // Own-cell surplus gain benefits men: T mu d2H = 2 * 0.5 * 0.25.
        assert!((blocks.du_dphi[(0, 0)] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn margin_consistency_of_dmu() {
        let (market, phi) = random_instance(3, 3, 71);
        let (eq, bundle) = solved_bundle(&market, &phi);
        let mut shock = Shock::zero(3, 3);
        shock.dn[1] = 0.3;
        shock.dm[2] = -0.2;
        shock.dphi[(0, 1)] = 0.5;
        let report = differential_response(&bundle, &market, &eq, &shock).unwrap();
        for x in 0..3 {
            let lhs: f64 = report.dmu.row(x).sum() + report.dmu_x0[x];
            assert!((lhs - shock.dn[x]).abs() < 1e-12);
        }
        for y in 0..3 {
            let lhs: f64 = report.dmu.column(y).sum() + report.dmu_0y[y];
            assert!((lhs - shock.dm[y]).abs() < 1e-12);
        }
        // du_x = sum_y muM_{y|x} dU_{xy} holds by construction; re-check.
        let shares = conditional_shares(&eq.matching, &market).unwrap();
        for x in 0..3 {
            let acc: f64 = (0..3)
                .map(|y| shares.men_pair(x, y) * report.du_split[(x, y)])
                .sum();
            assert!((acc - report.du[x]).abs() < 1e-14);
        }
    }

    #[test]
    fn blocks_match_unit_shock_responses() {
        let (market, phi) = random_instance(3, 2, 29);
        let (eq, bundle) = solved_bundle(&market, &phi);
        let blocks = welfare_derivatives(&bundle, &market, &eq).unwrap();
        for xp in 0..3 {
            let r =
                differential_response(&bundle, &market, &eq, &Shock::unit_dn(3, 2, xp)).unwrap();
            for x in 0..3 {
                assert!((blocks.du_dn[(x, xp)] - r.du[x]).abs() < 1e-12);
            }
            for y in 0..2 {
                assert!((blocks.dv_dn[(y, xp)] - r.dv[y]).abs() < 1e-12);
            }
        }
        for yp in 0..2 {
            let r =
                differential_response(&bundle, &market, &eq, &Shock::unit_dm(3, 2, yp)).unwrap();
            for x in 0..3 {
                assert!((blocks.du_dm[(x, yp)] - r.du[x]).abs() < 1e-12);
            }
            for y in 0..2 {
                assert!((blocks.dv_dm[(y, yp)] - r.dv[y]).abs() < 1e-12);
            }
        }
        for xp in 0..3 {
            for yp in 0..2 {
                let shock = Shock::unit_dphi(3, 2, xp, yp);
                let r = differential_response(&bundle, &market, &eq, &shock).unwrap();
                let z = xp * 2 + yp;
                for x in 0..3 {
                    assert!((blocks.du_dphi[(x, z)] - r.du[x]).abs() < 1e-12);
                }
                for y in 0..2 {
                    assert!((blocks.dv_dphi[(y, z)] - r.dv[y]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sign_laws_on_random_instances() {
        for key in 0..25u64 {
            let nx = 1 + (key as usize % 4);
            let ny = 1 + ((key as usize / 4) % 4);
            let (market, phi) = random_instance(nx, ny, 9000 + key);
            let (eq, bundle) = solved_bundle(&market, &phi);
            assert!(bundle.t.min() >= -1e-12);
            let blocks = welfare_derivatives(&bundle, &market, &eq).unwrap();
            assert!(blocks.du_dn.max() <= 1e-12);
            assert!(blocks.du_dm.min() >= -1e-12);
            assert!(blocks.dv_dm.max() <= 1e-12);
            assert!(blocks.dv_dn.min() >= -1e-12);
        }
    }

    #[test]
    fn rejects_unsolved_equilibrium() {
        let (market, phi) = random_instance(2, 2, 3);
        let (hm, hw) = logit_pair();
        let mut eq = solve_equilibrium(&market, &hm, &hw, &phi, &SolveOptions::default()).unwrap();
        eq.utilities.u[(0, 0)] += 0.5;
        eq.utilities.v[(0, 0)] -= 0.5;
        assert!(matches!(
            assemble_hessians(&market, &hm, &hw, &eq),
            Err(Error::InvalidParameter(_))
        ));
    }
}
