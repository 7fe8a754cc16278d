//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense least-squares
//! problems. Used by both the regulatory identification and NARX training.

use nalgebra::{DMatrix, DVector};

/// A residual vector `r(p)` whose sum of squares is minimized.
pub trait LeastSquares {
    fn n_params(&self) -> usize;

    fn residuals(&self, params: &DVector<f64>) -> DVector<f64>;

    /// Residuals together with the Jacobian `dr/dp` (rows = residuals).
    fn residuals_and_jacobian(&self, params: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);

    fn cost(&self, params: &DVector<f64>) -> f64 {
        sum_squares(&self.residuals(params))
    }
}

pub fn sum_squares(r: &DVector<f64>) -> f64 {
    let c = r.norm_squared();
    if c.is_finite() { c } else { f64::INFINITY }
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iter: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub ftol: f64,
    /// Stop when the largest gradient component falls below this.
    pub gtol: f64,
    /// Stop when the cost itself falls below this.
    pub cost_floor: f64,
    pub lambda_init: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iter: 200, ftol: 1e-12, gtol: 1e-14, cost_floor: 0.0, lambda_init: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

const LAMBDA_MAX: f64 = 1e16;

pub fn levenberg_marquardt<P: LeastSquares + ?Sized>(
    problem: &P,
    start: DVector<f64>,
    cfg: &LmConfig,
) -> LmOutcome {
    let n = problem.n_params();
    let mut params = start;
    let (mut r, mut jac) = problem.residuals_and_jacobian(&params);
    let mut cost = sum_squares(&r);
    if !cost.is_finite() {
        return LmOutcome { params, cost, iterations: 0, converged: false };
    }
    let mut lambda = cfg.lambda_init;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < cfg.max_iter {
        iterations += 1;
        if cost <= cfg.cost_floor {
            converged = true;
            break;
        }
        let jt = jac.transpose();
        let grad = &jt * &r;
        if grad.amax() <= cfg.gtol {
            converged = true;
            break;
        }
        let hess = &jt * &jac;
        let max_diag = (0..n).map(|i| hess[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        loop {
            let mut damped = hess.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * hess[(i, i)].max(1e-12 * max_diag);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 4.0;
                    if lambda > LAMBDA_MAX {
                        break 'outer;
                    }
                    continue;
                }
            };
            let trial = &params + &step;
            let trial_cost = problem.cost(&trial);
            if trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                params = trial;
                (r, jac) = problem.residuals_and_jacobian(&params);
                cost = sum_squares(&r);
                lambda = (lambda / 3.0).max(1e-15);
                if rel < cfg.ftol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > LAMBDA_MAX {
                // No descent direction left at machine precision.
                converged = true;
                break 'outer;
            }
        }
    }
    LmOutcome { params, cost, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock written as residuals (1 - x, 10 (y - x^2)).
    struct Rosenbrock;

    impl LeastSquares for Rosenbrock {
        fn n_params(&self) -> usize {
            2
        }
        fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![1.0 - p[0], 10.0 * (p[1] - p[0] * p[0])])
        }
        fn residuals_and_jacobian(&self, p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            let j = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -20.0 * p[0], 10.0]);
            (self.residuals(p), j)
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let out = levenberg_marquardt(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &LmConfig::default());
        assert!(out.converged);
        assert!((out.params[0] - 1.0).abs() < 1e-8 && (out.params[1] - 1.0).abs() < 1e-8);
    }

    struct Line {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
            DVector::from_iterator(self.x.len(), self.x.iter().zip(&self.y).map(|(x, y)| p[0] * x + p[1] - y))
        }
        fn residuals_and_jacobian(&self, p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            let j = DMatrix::from_fn(self.x.len(), 2, |i, c| if c == 0 { self.x[i] } else { 1.0 });
            (self.residuals(p), j)
        }
    }

    #[test]
    fn linear_fit_matches_normal_equations() {
        let line = Line { x: vec![0.0, 1.0, 2.0, 3.0], y: vec![1.0, 2.9, 5.1, 7.0] };
        let out = levenberg_marquardt(&line, DVector::zeros(2), &LmConfig::default());
        // Closed form: slope = Sxy / Sxx with centered sums.
        let slope = (-1.5 * -3.0 + -0.5 * -1.1 + 0.5 * 1.1 + 1.5 * 3.0) / 5.0;
        let icpt = 4.0 - slope * 1.5;
        assert!((out.params[0] - slope).abs() < 1e-9);
        assert!((out.params[1] - icpt).abs() < 1e-9);
    }
}
