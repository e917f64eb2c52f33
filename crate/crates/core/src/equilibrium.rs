//! Equilibrium computation.
//!
//! The systematic utilities `U` split the joint surplus, `U + V = Phi`, and
//! the unique equilibrium is characterized by the first-order condition
//! `grad G(U) = grad H(Phi - U)`: the mass of men demanding each cell equals
//! the mass of women demanding it. `U` is found by minimizing the strictly
//! convex social-gain function `G(U) + H(Phi - U)` with damped Newton steps;
//! an iterative proportional fitting procedure (IPFP) is available for the
//! unit-scale logit case.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::heterogeneity::{emax, EmaxEvaluation, HeterogeneitySpec};
use crate::market::{Matching, SurplusMatrix, ValidatedMarket};

/// Equilibrium split of the joint surplus: `U + V = Phi` entrywise.
#[derive(Debug, Clone)]
pub struct SplitUtilities {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// Average expected utility by type at equilibrium.
#[derive(Debug, Clone)]
pub struct WelfareVector {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Newton,
    Ipfp,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Newton => "newton",
            SolverKind::Ipfp => "ipfp",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Diagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub solver: SolverKind,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub utilities: SplitUtilities,
    pub matching: Matching,
    pub welfare: WelfareVector,
    pub diagnostics: Diagnostics,
}

/// Solver options. `max_iterations: None` uses the solver default
/// (500 for Newton, 10_000 for IPFP).
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iterations: Option<usize>,
    pub start: Option<DMatrix<f64>>,
    /// Worker threads for the per-type emax evaluations. Results are
    /// bitwise identical for any thread count.
    pub threads: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: None,
            start: None,
            threads: 1,
        }
    }
}

impl SolveOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

const NEWTON_DEFAULT_MAX_ITER: usize = 500;
const IPFP_DEFAULT_MAX_ITER: usize = 10_000;
const MAX_BACKTRACKS: usize = 40;
const ARMIJO_SLOPE: f64 = 1e-4;

fn check_dimensions(
    market: &ValidatedMarket,
    het_men: &HeterogeneitySpec,
    het_women: &HeterogeneitySpec,
    phi: &SurplusMatrix,
) -> Result<()> {
    let (nx, ny) = (market.num_x(), market.num_y());
    if phi.phi().nrows() != nx || phi.phi().ncols() != ny {
        return Err(Error::DimensionMismatch {
            context: "surplus matrix",
            expected: nx * ny,
            got: phi.phi().nrows() * phi.phi().ncols(),
        });
    }
    for x in 0..nx {
        if let Some(k) = het_men.num_choices(x) {
            if k != ny {
                return Err(Error::DimensionMismatch {
                    context: "men heterogeneity draws vs y types",
                    expected: ny,
                    got: k,
                });
            }
        }
    }
    for y in 0..ny {
        if let Some(k) = het_women.num_choices(y) {
            if k != nx {
                return Err(Error::DimensionMismatch {
                    context: "women heterogeneity draws vs x types",
                    expected: nx,
                    got: k,
                });
            }
        }
    }
    Ok(())
}

/// Evaluate a closure over type indices, optionally fanning out over scoped
/// threads. Slots are written by index, so the result does not depend on the
/// thread count.
fn eval_types<F>(count: usize, threads: usize, f: F) -> Result<Vec<EmaxEvaluation>>
where
    F: Fn(usize) -> Result<EmaxEvaluation> + Sync,
{
    if threads <= 1 || count <= 1 {
        return (0..count).map(&f).collect();
    }
    let mut slots: Vec<Option<Result<EmaxEvaluation>>> = (0..count).map(|_| None).collect();
    let chunk = count.div_ceil(threads);
    std::thread::scope(|scope| {
        for piece in slots.chunks_mut(chunk).enumerate() {
            let (c, slot_chunk) = piece;
            let f = &f;
            scope.spawn(move || {
                for (offset, slot) in slot_chunk.iter_mut().enumerate() {
                    *slot = Some(f(c * chunk + offset));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

struct SideEvaluations {
    men: Vec<EmaxEvaluation>,
    women: Vec<EmaxEvaluation>,
}

fn evaluate_sides(
    market: &ValidatedMarket,
    het_men: &HeterogeneitySpec,
    het_women: &HeterogeneitySpec,
    phi: &DMatrix<f64>,
    u: &DMatrix<f64>,
    threads: usize,
) -> Result<SideEvaluations> {
    let (nx, ny) = (market.num_x(), market.num_y());
    let men = eval_types(nx, threads, |x| {
        let row = DVector::from_fn(ny, |y, _| u[(x, y)]);
        emax(het_men, x, &row)
    })?;
    let women = eval_types(ny, threads, |y| {
        let col = DVector::from_fn(nx, |x, _| phi[(x, y)] - u[(x, y)]);
        emax(het_women, y, &col)
    })?;
    Ok(SideEvaluations { men, women })
}

fn gain_value(market: &ValidatedMarket, evals: &SideEvaluations) -> f64 {
    let mut value = 0.0;
    for (x, e) in evals.men.iter().enumerate() {
        value += market.n()[x] * e.value;
    }
    for (y, e) in evals.women.iter().enumerate() {
        value += market.m()[y] * e.value;
    }
    value
}

fn gain_gradient(market: &ValidatedMarket, evals: &SideEvaluations) -> DMatrix<f64> {
    let (nx, ny) = (market.num_x(), market.num_y());
    DMatrix::from_fn(nx, ny, |x, y| {
        market.n()[x] * evals.men[x].gradient[y] - market.m()[y] * evals.women[y].gradient[x]
    })
}

/// Social-gain objective `sum_x n_x G_x(U) + sum_y m_y H_y(Phi - U)` and its
/// gradient. A zero gradient is exactly the equilibrium condition.
pub fn social_gain(
    market: &ValidatedMarket,
    het_men: &HeterogeneitySpec,
    het_women: &HeterogeneitySpec,
    phi: &SurplusMatrix,
    u: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    check_dimensions(market, het_men, het_women, phi)?;
    let evals = evaluate_sides(market, het_men, het_women, phi.phi(), u, 1)?;
    Ok((gain_value(market, &evals), gain_gradient(market, &evals)))
}

/// Sum of the two mass-scaled Hessian blocks, flattened with z = x*ny + y.
/// This matrix is Stieltjes: symmetric positive definite with non-positive
/// off-diagonal entries.
fn system_hessian(market: &ValidatedMarket, evals: &SideEvaluations) -> DMatrix<f64> {
    let (nx, ny) = (market.num_x(), market.num_y());
    let dim = nx * ny;
    let mut h = DMatrix::zeros(dim, dim);
    for x in 0..nx {
        let block = &evals.men[x].hessian;
        let n_x = market.n()[x];
        for y1 in 0..ny {
            for y2 in 0..ny {
                h[(x * ny + y1, x * ny + y2)] += n_x * block[(y1, y2)];
            }
        }
    }
    for y in 0..ny {
        let block = &evals.women[y].hessian;
        let m_y = market.m()[y];
        for x1 in 0..nx {
            for x2 in 0..nx {
                h[(x1 * ny + y, x2 * ny + y)] += m_y * block[(x1, x2)];
            }
        }
    }
    h
}

fn finalize(
    market: &ValidatedMarket,
    u: DMatrix<f64>,
    phi: &DMatrix<f64>,
    evals: &SideEvaluations,
    iterations: usize,
    residual: f64,
    solver: SolverKind,
) -> EquilibriumResult {
    let (nx, ny) = (market.num_x(), market.num_y());
    let mu = DMatrix::from_fn(nx, ny, |x, y| market.n()[x] * evals.men[x].gradient[y]);
    let mu_x0 = DVector::from_fn(nx, |x, _| market.n()[x] * evals.men[x].singles_share);
    let mut mu_0y = DVector::zeros(ny);
    for y in 0..ny {
        mu_0y[y] = market.m()[y] - mu.column(y).sum();
    }
    let welfare = WelfareVector {
        u: DVector::from_fn(nx, |x, _| evals.men[x].value),
        v: DVector::from_fn(ny, |y, _| evals.women[y].value),
    };
    let v = phi - &u;
    EquilibriumResult {
        utilities: SplitUtilities { u, v },
        matching: Matching::new(mu, mu_x0, mu_0y),
        welfare,
        diagnostics: Diagnostics {
            iterations,
            residual,
            solver,
        },
    }
}

/// Compute the equilibrium by damped Newton on the social-gain gradient,
/// with backtracking line search and a gradient-descent fallback.
pub fn solve_equilibrium(
    market: &ValidatedMarket,
    het_men: &HeterogeneitySpec,
    het_women: &HeterogeneitySpec,
    phi: &SurplusMatrix,
    options: &SolveOptions,
) -> Result<EquilibriumResult> {
    check_dimensions(market, het_men, het_women, phi)?;
    let (nx, ny) = (market.num_x(), market.num_y());
    let phi = phi.phi();
    let max_iter = options.max_iterations.unwrap_or(NEWTON_DEFAULT_MAX_ITER);

    let mut u = match &options.start {
        Some(start) => {
            if start.nrows() != nx || start.ncols() != ny {
                return Err(Error::DimensionMismatch {
                    context: "starting point",
                    expected: nx * ny,
                    got: start.nrows() * start.ncols(),
                });
            }
            start.clone()
        }
        // Exact for symmetric instances, good globally under full support.
        None => phi * 0.5,
    };

    let mut evals = evaluate_sides(market, het_men, het_women, phi, &u, options.threads)?;
    let mut value = gain_value(market, &evals);
    let mut grad = gain_gradient(market, &evals);
    let mut residual = grad.amax();

    for iter in 0..max_iter {
        if residual <= options.tolerance {
            return Ok(finalize(
                market,
                u,
                phi,
                &evals,
                iter,
                residual,
                SolverKind::Newton,
            ));
        }
        let grad_vec = DVector::from_fn(nx * ny, |z, _| grad[(z / ny, z % ny)]);
        let hessian = system_hessian(market, &evals);
        let newton_dir = hessian.cholesky().map(|c| -(c.solve(&grad_vec)));
        let mut stepped = false;
        let directions: Vec<DVector<f64>> = match newton_dir {
            Some(d) => vec![d, -&grad_vec],
            None => vec![-&grad_vec],
        };
        for dir in directions {
            let slope = grad_vec.dot(&dir);
            if slope >= 0.0 {
                continue;
            }
            let dir_mat = DMatrix::from_fn(nx, ny, |x, y| dir[x * ny + y]);
            let mut t = 1.0;
            for _ in 0..MAX_BACKTRACKS {
                let candidate = &u + &dir_mat * t;
                let cand_evals =
                    evaluate_sides(market, het_men, het_women, phi, &candidate, options.threads)?;
                let cand_value = gain_value(market, &cand_evals);
                let cand_grad = gain_gradient(market, &cand_evals);
                let cand_residual = cand_grad.amax();
                // Near the optimum the value change drops below f64
                // resolution, so a shrinking gradient residual also counts
                // as progress (Newton contracts it quadratically there).
                if cand_value <= value + ARMIJO_SLOPE * t * slope || cand_residual <= 0.9 * residual
                {
                    u = candidate;
                    evals = cand_evals;
                    value = cand_value;
                    grad = cand_grad;
                    residual = cand_residual;
                    stepped = true;
                    break;
                }
                t *= 0.5;
            }
            if stepped {
                break;
            }
        }
        if !stepped {
            return Err(Error::NoConvergence {
                solver: "equilibrium Newton",
                iterations: iter,
                residual,
            });
        }
    }
    if residual <= options.tolerance {
        return Ok(finalize(
            market,
            u,
            phi,
            &evals,
            max_iter,
            residual,
            SolverKind::Newton,
        ));
    }
    Err(Error::NoConvergence {
        solver: "equilibrium Newton",
        iterations: max_iter,
        residual,
    })
}

/// Equilibrium by iterative proportional fitting for extreme-value shocks.
///
/// With unit scales the equilibrium matching satisfies
/// `mu_xy = sqrt(mu_x0 * mu_0y) * exp(phi_xy / 2)`, and alternately enforcing
/// the two margin systems is a globally convergent fixed point. Non-unit
/// scales route to the Newton solver, which shares the same contract.
pub fn ipfp_logit(
    market: &ValidatedMarket,
    scale_men: f64,
    scale_women: f64,
    phi: &SurplusMatrix,
    options: &SolveOptions,
) -> Result<EquilibriumResult> {
    let het_men = HeterogeneitySpec::logit(crate::heterogeneity::Side::Men, scale_men)?;
    let het_women = HeterogeneitySpec::logit(crate::heterogeneity::Side::Women, scale_women)?;
    if scale_men != 1.0 || scale_women != 1.0 {
        return solve_equilibrium(market, &het_men, &het_women, phi, options);
    }
    check_dimensions(market, &het_men, &het_women, phi)?;
    let (nx, ny) = (market.num_x(), market.num_y());
    let phi = phi.phi();
    let max_iter = options.max_iterations.unwrap_or(IPFP_DEFAULT_MAX_ITER);

    let kernel = phi.map(|p| (p / 2.0).exp());
    // a_x = sqrt(mu_x0), b_y = sqrt(mu_0y); start from everyone single.
    let mut a = DVector::from_fn(nx, |x, _| market.n()[x].sqrt());
    let mut b = DVector::from_fn(ny, |y, _| market.m()[y].sqrt());

    let mut iterations = max_iter;
    for iter in 0..max_iter {
        // Enforce men margins exactly: a_x^2 + a_x (K b)_x = n_x.
        for x in 0..nx {
            let s: f64 = (0..ny).map(|y| kernel[(x, y)] * b[y]).sum();
            a[x] = 0.5 * (-s + (s * s + 4.0 * market.n()[x]).sqrt());
        }
        // Enforce women margins exactly: b_y^2 + b_y (K^T a)_y = m_y.
        for y in 0..ny {
            let t: f64 = (0..nx).map(|x| kernel[(x, y)] * a[x]).sum();
            b[y] = 0.5 * (-t + (t * t + 4.0 * market.m()[y]).sqrt());
        }
        // Men margins drifted when b moved; their residual bounds the
        // equilibrium-condition residual in the same mass units.
        let mut men_residual = 0.0f64;
        for x in 0..nx {
            let row: f64 = (0..ny).map(|y| a[x] * b[y] * kernel[(x, y)]).sum();
            men_residual = men_residual.max((a[x] * a[x] + row - market.n()[x]).abs());
        }
        if men_residual <= options.tolerance {
            iterations = iter + 1;
            break;
        }
        if iter + 1 == max_iter {
            return Err(Error::NoConvergence {
                solver: "IPFP",
                iterations: max_iter,
                residual: men_residual,
            });
        }
    }

    // U_xy = log(mu_xy / mu_x0) = phi/2 + log(b_y / a_x).
    let u = DMatrix::from_fn(nx, ny, |x, y| phi[(x, y)] / 2.0 + (b[y] / a[x]).ln());
    let evals = evaluate_sides(market, &het_men, &het_women, phi, &u, options.threads)?;
    let residual = gain_gradient(market, &evals).amax();
    Ok(finalize(
        market,
        u,
        phi,
        &evals,
        iterations,
        residual,
        SolverKind::Ipfp,
    ))
}
