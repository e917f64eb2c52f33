//! Observable market primitives: type spaces, population masses, surplus
//! matrices, matchings, and the conditional matching ratios derived from them.
//!
//! The singles option is implicit everywhere: it never appears as a type
//! label, surplus is normalized to zero for it, and single masses are stored
//! as separate vectors rather than as an extra matrix row or column.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default absolute tolerance for the margin identities, matching the
/// equilibrium solver's convergence tolerance downstream.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

/// Ordered labels for both sides of the market.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeSpace {
    x_labels: Vec<String>,
    y_labels: Vec<String>,
}

impl TypeSpace {
    pub fn new<S: Into<String>>(x_labels: Vec<S>, y_labels: Vec<S>) -> Result<Self> {
        let x_labels: Vec<String> = x_labels.into_iter().map(Into::into).collect();
        let y_labels: Vec<String> = y_labels.into_iter().map(Into::into).collect();
        if x_labels.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "x type list must be non-empty",
                expected: 1,
                got: 0,
            });
        }
        if y_labels.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "y type list must be non-empty",
                expected: 1,
                got: 0,
            });
        }
        check_unique("x", &x_labels)?;
        check_unique("y", &y_labels)?;
        Ok(Self { x_labels, y_labels })
    }

    pub fn num_x(&self) -> usize {
        self.x_labels.len()
    }

    pub fn num_y(&self) -> usize {
        self.y_labels.len()
    }

    pub fn x_labels(&self) -> &[String] {
        &self.x_labels
    }

    pub fn y_labels(&self) -> &[String] {
        &self.y_labels
    }
}

fn check_unique(side: &'static str, labels: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for label in labels {
        if !seen.insert(label.as_str()) {
            return Err(Error::DuplicateTypeLabel {
                side,
                label: label.clone(),
            });
        }
    }
    Ok(())
}

/// A validated market: type spaces plus strictly positive population masses.
///
/// Masses are arbitrary positive reals (continuum populations), not integers.
#[derive(Debug, Clone)]
pub struct ValidatedMarket {
    types: TypeSpace,
    n: DVector<f64>,
    m: DVector<f64>,
}

impl ValidatedMarket {
    pub fn types(&self) -> &TypeSpace {
        &self.types
    }

    /// Mass of men per x type.
    pub fn n(&self) -> &DVector<f64> {
        &self.n
    }

    /// Mass of women per y type.
    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn num_x(&self) -> usize {
        self.types.num_x()
    }

    pub fn num_y(&self) -> usize {
        self.types.num_y()
    }
}

/// Raw, unvalidated market description.
#[derive(Debug, Clone)]
pub struct RawMarket {
    pub x_types: Vec<String>,
    pub y_types: Vec<String>,
    pub n: Vec<f64>,
    pub m: Vec<f64>,
}

/// Validate a raw market description.
pub fn validate_market(raw: RawMarket) -> Result<ValidatedMarket> {
    let types = TypeSpace::new(raw.x_types, raw.y_types)?;
    if raw.n.len() != types.num_x() {
        return Err(Error::DimensionMismatch {
            context: "mass vector n",
            expected: types.num_x(),
            got: raw.n.len(),
        });
    }
    if raw.m.len() != types.num_y() {
        return Err(Error::DimensionMismatch {
            context: "mass vector m",
            expected: types.num_y(),
            got: raw.m.len(),
        });
    }
    for (i, &v) in raw.n.iter().enumerate() {
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::NonPositiveMass {
                side: "x",
                label: types.x_labels()[i].clone(),
                value: v,
            });
        }
    }
    for (j, &v) in raw.m.iter().enumerate() {
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::NonPositiveMass {
                side: "y",
                label: types.y_labels()[j].clone(),
                value: v,
            });
        }
    }
    Ok(ValidatedMarket {
        types,
        n: DVector::from_vec(raw.n),
        m: DVector::from_vec(raw.m),
    })
}

/// Type-level joint surplus, |X| x |Y|, in utility units. Surplus of the
/// singles option is normalized to zero and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SurplusMatrix {
    phi: DMatrix<f64>,
}

impl SurplusMatrix {
    pub fn new(phi: DMatrix<f64>, market: &ValidatedMarket) -> Result<Self> {
        if phi.nrows() != market.num_x() || phi.ncols() != market.num_y() {
            return Err(Error::DimensionMismatch {
                context: "surplus matrix rows*cols",
                expected: market.num_x() * market.num_y(),
                got: phi.nrows() * phi.ncols(),
            });
        }
        if let Some(idx) = phi.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUtility { index: idx });
        }
        Ok(Self { phi })
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }
}

/// A matching: mass of (x, y) pairs plus single masses on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub mu: DMatrix<f64>,
    pub mu_x0: DVector<f64>,
    pub mu_0y: DVector<f64>,
}

impl Matching {
    pub fn new(mu: DMatrix<f64>, mu_x0: DVector<f64>, mu_0y: DVector<f64>) -> Self {
        Self { mu, mu_x0, mu_0y }
    }

    /// Total matched mass.
    pub fn total_matched(&self) -> f64 {
        self.mu.iter().sum()
    }
}

/// Residuals of the two margin identities.
#[derive(Debug, Clone, Copy)]
pub struct FeasibilityReport {
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Check the margin identities
/// `sum_y mu_xy + mu_x0 = n_x` and `sum_x mu_xy + mu_0y = m_y`.
pub fn check_feasibility(
    matching: &Matching,
    market: &ValidatedMarket,
    tolerance: f64,
) -> Result<FeasibilityReport> {
    let (nx, ny) = (market.num_x(), market.num_y());
    if matching.mu.nrows() != nx || matching.mu.ncols() != ny {
        return Err(Error::DimensionMismatch {
            context: "matching matrix",
            expected: nx * ny,
            got: matching.mu.nrows() * matching.mu.ncols(),
        });
    }
    if matching.mu_x0.len() != nx {
        return Err(Error::DimensionMismatch {
            context: "single-men vector",
            expected: nx,
            got: matching.mu_x0.len(),
        });
    }
    if matching.mu_0y.len() != ny {
        return Err(Error::DimensionMismatch {
            context: "single-women vector",
            expected: ny,
            got: matching.mu_0y.len(),
        });
    }
    let mut max_residual = 0.0f64;
    for x in 0..nx {
        let row_sum: f64 = matching.mu.row(x).iter().sum::<f64>() + matching.mu_x0[x];
        max_residual = max_residual.max((row_sum - market.n()[x]).abs());
    }
    for y in 0..ny {
        let col_sum: f64 = matching.mu.column(y).iter().sum::<f64>() + matching.mu_0y[y];
        max_residual = max_residual.max((col_sum - market.m()[y]).abs());
    }
    Ok(FeasibilityReport {
        max_residual,
        tolerance,
        pass: max_residual <= tolerance,
    })
}

/// Matching ratios conditional on own type.
///
/// Both matrices carry the singles option as row 0, so each column sums to 1:
/// `mu_m_given_x[(0, x)]` is the single share of type-x men and
/// `mu_m_given_x[(1 + y, x)]` the share matched to type-y women.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalShares {
    pub mu_m_given_x: DMatrix<f64>,
    pub mu_w_given_y: DMatrix<f64>,
}

impl ConditionalShares {
    /// Share of type-x men matched to type-y women.
    pub fn men_pair(&self, x: usize, y: usize) -> f64 {
        self.mu_m_given_x[(1 + y, x)]
    }

    /// Single share of type-x men.
    pub fn men_single(&self, x: usize) -> f64 {
        self.mu_m_given_x[(0, x)]
    }

    pub fn women_pair(&self, x: usize, y: usize) -> f64 {
        self.mu_w_given_y[(1 + x, y)]
    }

    pub fn women_single(&self, y: usize) -> f64 {
        self.mu_w_given_y[(0, y)]
    }

    /// Rebuild the matching masses from the shares (inverse of
    /// [`conditional_shares`] on feasible matchings).
    pub fn to_matching(&self, market: &ValidatedMarket) -> Matching {
        let (nx, ny) = (market.num_x(), market.num_y());
        let mut mu = DMatrix::zeros(nx, ny);
        let mut mu_x0 = DVector::zeros(nx);
        for x in 0..nx {
            mu_x0[x] = self.men_single(x) * market.n()[x];
            for y in 0..ny {
                mu[(x, y)] = self.men_pair(x, y) * market.n()[x];
            }
        }
        let mut mu_0y = DVector::zeros(ny);
        for y in 0..ny {
            mu_0y[y] = self.women_single(y) * market.m()[y];
        }
        Matching::new(mu, mu_x0, mu_0y)
    }
}

/// Derive conditional matching ratios from a feasible matching.
pub fn conditional_shares(
    matching: &Matching,
    market: &ValidatedMarket,
) -> Result<ConditionalShares> {
    let report = check_feasibility(matching, market, FEASIBILITY_TOLERANCE)?;
    if !report.pass {
        return Err(Error::InfeasibleMatching {
            residual: report.max_residual,
            tolerance: report.tolerance,
        });
    }
    let (nx, ny) = (market.num_x(), market.num_y());
    let mut mu_m_given_x = DMatrix::zeros(ny + 1, nx);
    for x in 0..nx {
        mu_m_given_x[(0, x)] = matching.mu_x0[x] / market.n()[x];
        for y in 0..ny {
            mu_m_given_x[(1 + y, x)] = matching.mu[(x, y)] / market.n()[x];
        }
    }
    let mut mu_w_given_y = DMatrix::zeros(nx + 1, ny);
    for y in 0..ny {
        mu_w_given_y[(0, y)] = matching.mu_0y[y] / market.m()[y];
        for x in 0..nx {
            mu_w_given_y[(1 + x, y)] = matching.mu[(x, y)] / market.m()[y];
        }
    }
    Ok(ConditionalShares {
        mu_m_given_x,
        mu_w_given_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn market_1x1(n: f64, m: f64) -> ValidatedMarket {
        validate_market(RawMarket {
            x_types: vec!["a".into()],
            y_types: vec!["b".into()],
            n: vec![n],
            m: vec![m],
        })
        .unwrap()
    }

    #[test]
    fn minimal_market_validates() {
        let market = market_1x1(1.0, 1.0);
        assert_eq!(market.num_x(), 1);
        assert_eq!(market.num_y(), 1);
    }

    #[test]
    fn zero_mass_rejected() {
        let err = validate_market(RawMarket {
            x_types: vec!["a".into()],
            y_types: vec!["b".into()],
            n: vec![0.0],
            m: vec![1.0],
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonPositiveMass { .. }));
    }

    #[test]
    fn duplicate_label_rejected() {
        let err = validate_market(RawMarket {
            x_types: vec!["a".into(), "a".into()],
            y_types: vec!["b".into()],
            n: vec![1.0, 1.0],
            m: vec![1.0],
        })
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateTypeLabel { .. }));
    }

    #[test]
    fn mass_dimension_mismatch_rejected() {
        let err = validate_market(RawMarket {
            x_types: vec!["a".into(), "b".into()],
            y_types: vec!["c".into()],
            n: vec![1.0],
            m: vec![1.0],
        })
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn exact_margins_pass() {
        let market = market_1x1(1.0, 1.0);
        let matching = Matching::new(dmatrix![0.5], dvector![0.5], dvector![0.5]);
        let report = check_feasibility(&matching, &market, 1e-12).unwrap();
        assert_eq!(report.max_residual, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn margin_violation_reported() {
        let market = market_1x1(1.0, 1.0);
        let matching = Matching::new(dmatrix![0.5], dvector![0.4], dvector![0.5]);
        let report = check_feasibility(&matching, &market, 1e-12).unwrap();
        assert!((report.max_residual - 0.1).abs() < 1e-15);
        assert!(!report.pass);
    }

    #[test]
    fn shares_divide_by_own_mass() {
        let market = market_1x1(1.0, 1.0);
        let matching = Matching::new(dmatrix![0.5], dvector![0.5], dvector![0.5]);
        let shares = conditional_shares(&matching, &market).unwrap();
        assert_eq!(shares.men_pair(0, 0), 0.5);
        assert_eq!(shares.men_single(0), 0.5);
    }

    #[test]
    fn one_type_logistic_shares() {
        // Asymmetric market n = 0.5, m = 1 at mu = 1/3 (the zero-surplus
        // logistic equilibrium): men's match share 2/3, women's 1/3.
        let market = market_1x1(0.5, 1.0);
        let mu = 1.0 / 3.0;
        let matching = Matching::new(dmatrix![mu], dvector![0.5 - mu], dvector![1.0 - mu]);
        let shares = conditional_shares(&matching, &market).unwrap();
        assert!((shares.men_pair(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((shares.women_pair(0, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn infeasible_matching_rejected_for_shares() {
        let market = market_1x1(1.0, 1.0);
        let matching = Matching::new(dmatrix![0.5], dvector![0.3], dvector![0.5]);
        assert!(matches!(
            conditional_shares(&matching, &market),
            Err(Error::InfeasibleMatching { .. })
        ));
    }

    #[test]
    fn share_columns_sum_to_one_and_ratio_identity() {
        let market = validate_market(RawMarket {
            x_types: vec!["a".into(), "b".into()],
            y_types: vec!["c".into(), "d".into(), "e".into()],
            n: vec![1.0, 2.0],
            m: vec![0.5, 1.5, 1.0],
        })
        .unwrap();
        let mu = dmatrix![0.2, 0.3, 0.1; 0.25, 0.8, 0.4];
        let mu_x0 = dvector![1.0 - 0.6, 2.0 - 1.45];
        let mu_0y = dvector![0.5 - 0.45, 1.5 - 1.1, 1.0 - 0.5];
        let matching = Matching::new(mu, mu_x0, mu_0y);
        let shares = conditional_shares(&matching, &market).unwrap();
        for x in 0..2 {
            let col: f64 = shares.mu_m_given_x.column(x).iter().sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
        for y in 0..3 {
            let col: f64 = shares.mu_w_given_y.column(y).iter().sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
        // mu^M_{y|x} n_x = mu^W_{x|y} m_y entrywise.
        for x in 0..2 {
            for y in 0..3 {
                let lhs = shares.men_pair(x, y) * market.n()[x];
                let rhs = shares.women_pair(x, y) * market.m()[y];
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
        // Round trip back to masses.
        let rebuilt = shares.to_matching(&market);
        assert!((rebuilt.mu - &matching.mu).abs().max() < 1e-12);
        assert!((rebuilt.mu_x0 - &matching.mu_x0).abs().max() < 1e-12);
        assert!((rebuilt.mu_0y - &matching.mu_0y).abs().max() < 1e-12);
    }
}
