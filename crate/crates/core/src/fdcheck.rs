//! Central finite-difference derivatives, used to verify every analytic
//! gradient, Hessian, and comparative-statics formula in the crate.

/// Central-difference gradient of a scalar function.
pub fn central_gradient<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(point.len());
    let mut p = point.to_vec();
    for i in 0..point.len() {
        p[i] = point[i] + step;
        let up = f(&p);
        p[i] = point[i] - step;
        let down = f(&p);
        p[i] = point[i];
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

/// Central-difference Hessian of a scalar function (4-point stencil per entry).
pub fn central_hessian<F>(f: F, point: &[f64], step: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let n = point.len();
    let mut hess = vec![vec![0.0; n]; n];
    let mut p = point.to_vec();
    for i in 0..n {
        for j in 0..n {
            p[i] += step;
            p[j] += step;
            let pp = f(&p);
            p[j] -= 2.0 * step;
            let pm = f(&p);
            p[i] -= 2.0 * step;
            let mm = f(&p);
            p[j] += 2.0 * step;
            let mp = f(&p);
            p[i] = point[i];
            p[j] = point[j];
            hess[i][j] = (pp - pm - mp + mm) / (4.0 * step * step);
        }
    }
    hess
}

/// Relative error with an absolute floor: |a - b| / max(|a|, |b|, floor).
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest entrywise relative error between two slices.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_and_hessian() {
        // f(x, y) = x^2 + 3xy + 2y^2
        let f = |v: &[f64]| v[0] * v[0] + 3.0 * v[0] * v[1] + 2.0 * v[1] * v[1];
        let g = central_gradient(f, &[1.0, -2.0], 1e-5);
        assert!((g[0] - (2.0 - 6.0)).abs() < 1e-8);
        assert!((g[1] - (3.0 - 8.0)).abs() < 1e-8);
        let h = central_hessian(f, &[1.0, -2.0], 1e-4);
        assert!((h[0][0] - 2.0).abs() < 1e-5);
        assert!((h[0][1] - 3.0).abs() < 1e-5);
        assert!((h[1][1] - 4.0).abs() < 1e-5);
    }
}
