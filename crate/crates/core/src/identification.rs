//! Identification and estimation from observed matching patterns.
//!
//! Convex duality makes identification nonparametric: feeding the observed
//! conditional shares through the conjugate gradient of each side's emax
//! recovers `U` and `V` cell by cell, and their sum recovers the joint
//! surplus. When the surplus is restricted to a linear basis expansion,
//! the parameter vector is estimated by matching model comoments to the
//! observed ones.

use nalgebra::{DMatrix, DVector};

use crate::comparative::{assemble_hessians, differential_response, Shock};
use crate::equilibrium::{solve_equilibrium, EquilibriumResult, SolveOptions};
use crate::error::{Error, Result};
use crate::heterogeneity::{conjugate_gradient, HeterogeneitySpec};
use crate::market::{conditional_shares, Matching, SurplusMatrix, ValidatedMarket};

const BASIS_RANK_TOLERANCE: f64 = 1e-10;

/// A family of K linearly independent basis matrices for the surplus,
/// `Phi(lambda) = sum_k lambda_k basis_k`.
#[derive(Debug, Clone)]
pub struct BasisFamily {
    matrices: Vec<DMatrix<f64>>,
}

impl BasisFamily {
    /// Validate non-emptiness, common dimensions, and numerical linear
    /// independence of the stacked K x (|X||Y|) matrix.
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "basis family must contain at least one matrix",
                expected: 1,
                got: 0,
            });
        }
        let (nx, ny) = (matrices[0].nrows(), matrices[0].ncols());
        for b in &matrices {
            if b.nrows() != nx || b.ncols() != ny {
                return Err(Error::DimensionMismatch {
                    context: "basis matrices must share dimensions",
                    expected: nx * ny,
                    got: b.nrows() * b.ncols(),
                });
            }
        }
        let k = matrices.len();
        let stacked = DMatrix::from_fn(k, nx * ny, |row, z| matrices[row][(z / ny, z % ny)]);
        let rank = stacked.rank(BASIS_RANK_TOLERANCE);
        if rank < k {
            return Err(Error::RankDeficientBasis { rank, expected: k });
        }
        Ok(Self { matrices })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// Linear combination `sum_k lambda_k basis_k`.
    pub fn combine(&self, lambda: &DVector<f64>) -> DMatrix<f64> {
        let (nx, ny) = (self.matrices[0].nrows(), self.matrices[0].ncols());
        let mut phi = DMatrix::zeros(nx, ny);
        for (l, b) in lambda.iter().zip(&self.matrices) {
            phi += b * *l;
        }
        phi
    }
}

/// Recover the men-side systematic utilities from an interior matching:
/// the U such that `n_x grad G_x(U) = mu_{x.}` for every x.
pub fn recover_u(
    matching: &Matching,
    market: &ValidatedMarket,
    het_men: &HeterogeneitySpec,
) -> Result<DMatrix<f64>> {
    let shares = conditional_shares(matching, market)?;
    let (nx, ny) = (market.num_x(), market.num_y());
    let mut u = DMatrix::zeros(nx, ny);
    for x in 0..nx {
        let pair = DVector::from_fn(ny, |y, _| shares.men_pair(x, y));
        let row = conjugate_gradient(het_men, x, &pair, shares.men_single(x))?;
        for y in 0..ny {
            u[(x, y)] = row[y];
        }
    }
    Ok(u)
}

fn recover_v(
    matching: &Matching,
    market: &ValidatedMarket,
    het_women: &HeterogeneitySpec,
) -> Result<DMatrix<f64>> {
    let shares = conditional_shares(matching, market)?;
    let (nx, ny) = (market.num_x(), market.num_y());
    let mut v = DMatrix::zeros(nx, ny);
    for y in 0..ny {
        let pair = DVector::from_fn(nx, |x, _| shares.women_pair(x, y));
        let col = conjugate_gradient(het_women, y, &pair, shares.women_single(y))?;
        for x in 0..nx {
            v[(x, y)] = col[x];
        }
    }
    Ok(v)
}

/// Nonparametric identification of the joint surplus:
/// `Phi = grad G*(mu) + grad H*(mu)`, given both shock distributions.
pub fn recover_surplus(
    matching: &Matching,
    market: &ValidatedMarket,
    het_men: &HeterogeneitySpec,
    het_women: &HeterogeneitySpec,
) -> Result<SurplusMatrix> {
    let u = recover_u(matching, market, het_men)?;
    let v = recover_v(matching, market, het_women)?;
    SurplusMatrix::new(u + v, market)
}

/// Comoments of the matching against a basis family: `C_k = sum_xy mu_xy
/// basis_k[xy]`. Pair cells only; the surplus is normalized to zero for
/// singles, so they carry no moment information.
pub fn comoments(matching: &Matching, basis: &BasisFamily) -> Result<DVector<f64>> {
    let (nx, ny) = (matching.mu.nrows(), matching.mu.ncols());
    let b0 = &basis.matrices()[0];
    if b0.nrows() != nx || b0.ncols() != ny {
        return Err(Error::DimensionMismatch {
            context: "basis vs matching",
            expected: b0.nrows() * b0.ncols(),
            got: nx * ny,
        });
    }
    Ok(DVector::from_fn(basis.len(), |k, _| {
        matching.mu.dot(&basis.matrices()[k])
    }))
}

/// Options for the comoment estimator.
#[derive(Debug, Clone)]
pub struct EstimateOptions {
    /// Sup-norm tolerance on the moment gap.
    pub moment_tolerance: f64,
    pub max_outer_iterations: usize,
    /// Tolerance for the inner equilibrium solves; tight so the outer
    /// Jacobians stay stable.
    pub inner_tolerance: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            moment_tolerance: 1e-8,
            max_outer_iterations: 100,
            inner_tolerance: 1e-11,
        }
    }
}

/// Result of the comoment estimation.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub lambda: DVector<f64>,
    pub iterations: usize,
    pub moment_gap: f64,
    pub fitted: EquilibriumResult,
}

/// Estimate the basis coefficients by matching comoments: find lambda such
/// that the equilibrium matching at `Phi(lambda)` reproduces the observed
/// comoments. Quasi-Newton root-finding; the Jacobian `dC/dlambda` is
/// assembled from the comparative-statics response to `dPhi = basis_k`.
pub fn estimate_lambda(
    observed: &Matching,
    market: &ValidatedMarket,
    het_men: &HeterogeneitySpec,
    het_women: &HeterogeneitySpec,
    basis: &BasisFamily,
    options: &EstimateOptions,
) -> Result<EstimateReport> {
    let k = basis.len();
    let (nx, ny) = (market.num_x(), market.num_y());
    // Fail early on infeasible observations.
    conditional_shares(observed, market)?;
    let observed_moments = comoments(observed, basis)?;

    let solve_opts = SolveOptions {
        tolerance: options.inner_tolerance,
        ..SolveOptions::default()
    };
    let mut lambda = DVector::zeros(k);
    let solve_at = |lambda: &DVector<f64>| -> Result<(EquilibriumResult, DVector<f64>)> {
        let phi = SurplusMatrix::new(basis.combine(lambda), market)?;
        let eq = solve_equilibrium(market, het_men, het_women, &phi, &solve_opts)?;
        let c = comoments(&eq.matching, basis)?;
        Ok((eq, c - &observed_moments))
    };

    let (mut eq, mut gap) = solve_at(&lambda)?;
    let mut gap_norm = gap.amax();
    for iter in 0..options.max_outer_iterations {
        if gap_norm <= options.moment_tolerance {
            return Ok(EstimateReport {
                lambda,
                iterations: iter,
                moment_gap: gap_norm,
                fitted: eq,
            });
        }
        let bundle = assemble_hessians(market, het_men, het_women, &eq)?;
        let mut jacobian = DMatrix::zeros(k, k);
        for l in 0..k {
            let shock = Shock {
                dn: DVector::zeros(nx),
                dm: DVector::zeros(ny),
                dphi: basis.matrices()[l].clone(),
            };
            let response = differential_response(&bundle, market, &eq, &shock)?;
            for kk in 0..k {
                jacobian[(kk, l)] = response.dmu.dot(&basis.matrices()[kk]);
            }
        }
        let step = jacobian.lu().solve(&gap).ok_or(Error::SingularSystem {
            condition: f64::INFINITY,
        })?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &lambda - &step * t;
            match solve_at(&candidate) {
                Ok((eq_c, gap_c)) => {
                    let norm_c = gap_c.amax();
                    if norm_c < gap_norm {
                        lambda = candidate;
                        eq = eq_c;
                        gap = gap_c;
                        gap_norm = norm_c;
                        accepted = true;
                        break;
                    }
                }
                // A wild candidate can push the inner solver past its
                // iteration cap; shrink and retry.
                Err(Error::NoConvergence { .. }) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                solver: "comoment estimator",
                iterations: iter,
                residual: gap_norm,
            });
        }
    }
    if gap_norm <= options.moment_tolerance {
        return Ok(EstimateReport {
            lambda,
            iterations: options.max_outer_iterations,
            moment_gap: gap_norm,
            fitted: eq,
        });
    }
    Err(Error::NoConvergence {
        solver: "comoment estimator",
        iterations: options.max_outer_iterations,
        residual: gap_norm,
    })
}
