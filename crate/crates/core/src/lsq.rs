//! Dense Levenberg-Marquardt for the small fits in this crate.
//!
//! Minimizes `0.5 * |r(x)|^2`. Problems choose their own coordinates; the
//! convergence test is on the absolute step in those coordinates, so callers
//! pick coordinates in which a unit step is a relative change (log or scaled
//! parameters).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub trait LeastSquaresProblem {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged when every component of the accepted step is below this.
    pub step_tolerance: f64,
    /// Converged when the cost falls below this (exact fits).
    pub cost_floor: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_tolerance: 1e-8,
            cost_floor: 1e-30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn cost_of(r: &DVector<f64>) -> f64 {
    let c = 0.5 * r.norm_squared();
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

pub fn levenberg_marquardt<P: LeastSquaresProblem>(
    problem: &P,
    x0: DVector<f64>,
    options: &LmOptions,
) -> LmReport {
    let n = x0.len();
    let mut x = x0;
    let mut r = problem.residuals(&x);
    let mut cost = cost_of(&r);
    let mut jac = problem.jacobian(&x);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        if cost <= options.cost_floor {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = solve_spd(a, -&grad) else {
                lambda *= 10.0;
                continue;
            };
            let x_new = &x + &step;
            let r_new = problem.residuals(&x_new);
            let cost_new = cost_of(&r_new);
            if cost_new <= cost {
                let small = step.iter().all(|s| s.abs() < options.step_tolerance);
                x = x_new;
                r = r_new;
                cost = cost_new;
                jac = problem.jacobian(&x);
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // No downhill step at any damping: stationary to working precision.
            let g = jac.transpose() * &r;
            converged = g.amax() <= 1e-10 * (1.0 + cost.sqrt()) * (1.0 + jac.amax());
            break;
        }
    }

    LmReport {
        x,
        residuals: r,
        jacobian: jac,
        cost,
        iterations,
        converged,
    }
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(&b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    a.lu().solve(&b).filter(|x| x.iter().all(|v| v.is_finite()))
}

/// Eigen-analysis of `J^T J` after normalizing columns, used to detect
/// parameter combinations the data cannot constrain.
#[derive(Debug, Clone)]
pub struct Identifiability {
    /// Smallest eigenvalue of the column-normalized normal matrix.
    pub min_eigenvalue: f64,
    /// Corresponding normalized direction, in the problem's coordinates.
    pub direction: DVector<f64>,
}

pub fn identifiability(jac: &DMatrix<f64>) -> Identifiability {
    let n = jac.ncols();
    let mut normalized = jac.clone();
    for k in 0..n {
        let norm = jac.column(k).norm();
        if norm > 0.0 {
            normalized.column_mut(k).scale_mut(1.0 / norm);
        }
    }
    let eig = SymmetricEigen::new(normalized.transpose() * normalized);
    let (imin, min_eigenvalue) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one parameter");
    Identifiability {
        min_eigenvalue,
        direction: eig.eigenvectors.column(imin).into_owned(),
    }
}

/// Like [`identifiability`] but without column normalization, reporting the
/// smallest eigenvalue relative to the largest. Suitable when the Jacobian
/// columns are already dimensionless (log coordinates).
pub fn relative_identifiability(jac: &DMatrix<f64>) -> Identifiability {
    let eig = SymmetricEigen::new(jac.transpose() * jac);
    let max = eig.eigenvalues.amax();
    let (imin, min) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one parameter");
    Identifiability {
        min_eigenvalue: if max > 0.0 { min / max } else { 0.0 },
        direction: eig.eigenvectors.column(imin).into_owned(),
    }
}

/// Unscaled covariance `(J^T J)^-1`; `None` when singular.
pub fn inverse_normal_matrix(jac: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let jtj = jac.transpose() * jac;
    jtj.clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| jtj.try_inverse())
}
