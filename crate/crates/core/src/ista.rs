//! Iterative shrinkage-thresholding for `½‖v − Ax‖² + λ‖x‖₁`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::{norm2, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IstaConfig {
    pub step_size: f64,
    /// Shrinkage threshold θ = α·λ, shared by every coordinate.
    pub threshold: f64,
    pub max_iters: usize,
    /// Stop once `‖x⁽ᵗ⁾ − x⁽ᵗ⁻¹⁾‖₂ < tol`.
    pub tol: f64,
}

impl IstaConfig {
    pub fn new(step_size: f64, threshold: f64, max_iters: usize) -> Self {
        Self {
            step_size,
            threshold,
            max_iters,
            tol: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::config("ISTA step size must be positive"));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::config("ISTA threshold must be non-negative"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("ISTA needs at least one iteration"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::config("ISTA tolerance must be non-negative"));
        }
        Ok(())
    }

    /// λ of the objective, `θ / α`.
    pub fn lambda(&self) -> f64 {
        self.threshold / self.step_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IstaOutput {
    pub x: Vec<f64>,
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl IstaOutput {
    pub fn iterations(&self) -> usize {
        self.objective_trace.len()
    }
}

/// `sign(u)·max(0, |u| − θ)` element-wise.
pub fn soft_threshold(u: &[f64], threshold: f64) -> Vec<f64> {
    u.iter().map(|&ui| shrink(ui, threshold)).collect()
}

fn shrink(u: f64, threshold: f64) -> f64 {
    let mag = (u.abs() - threshold).max(0.0);
    if u > 0.0 {
        mag
    } else if u < 0.0 {
        -mag
    } else {
        0.0
    }
}

/// `½‖v − Ax‖² + λ‖x‖₁`
pub fn objective(a: &Matrix, v: &[f64], x: &[f64], lambda: f64) -> Result<f64> {
    let ax = a.matvec(x)?;
    let fit: f64 = ax.iter().zip(v).map(|(p, q)| (q - p) * (q - p)).sum();
    let l1: f64 = x.iter().map(|xi| xi.abs()).sum();
    Ok(0.5 * fit + lambda * l1)
}

/// Runs ISTA from `x⁽⁰⁾ = 0`.
pub fn ista_solve(a: &Matrix, v: &[f64], cfg: &IstaConfig) -> Result<IstaOutput> {
    cfg.validate()?;
    ensure_len("ISTA measurement", a.rows(), v.len())?;
    let n = a.cols();
    let lambda = cfg.lambda();
    let mut x = vec![0.0; n];
    let mut trace = Vec::with_capacity(cfg.max_iters.min(4096));
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let mut residual = a.matvec(&x)?;
        residual.iter_mut().zip(v).for_each(|(r, vi)| *r -= vi);
        let grad = a.matvec_t(&residual)?;
        let next: Vec<f64> = x
            .iter()
            .zip(&grad)
            .map(|(xi, gi)| shrink(xi - cfg.step_size * gi, cfg.threshold))
            .collect();
        ensure_finite("ISTA iterate", &next)?;
        let moved: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        x = next;
        trace.push(objective(a, v, &x, lambda)?);
        if norm2(&moved) < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(IstaOutput {
        x,
        objective_trace: trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&[1.5, -0.3, -2.0, 0.0], 0.5), vec![1.0, 0.0, -1.5, 0.0]);
    }

    #[test]
    fn identity_operator_recovers_measurement_in_one_step() {
        let a = Matrix::identity(3);
        let v = [0.5, -1.0, 2.0];
        let out = ista_solve(&a, &v, &IstaConfig::new(1.0, 0.0, 1)).unwrap();
        assert_eq!(out.x, v.to_vec());
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let a = Matrix::identity(2);
        assert!(ista_solve(&a, &[1.0], &IstaConfig::new(1.0, 0.0, 1)).is_err());
        assert!(ista_solve(&a, &[1.0, 1.0], &IstaConfig::new(0.0, 0.0, 1)).is_err());
        assert!(ista_solve(&a, &[1.0, 1.0], &IstaConfig::new(1.0, -1.0, 1)).is_err());
        assert!(ista_solve(&a, &[1.0, 1.0], &IstaConfig::new(1.0, 0.0, 0)).is_err());
    }

    #[test]
    fn divergent_step_reports_non_finite() {
        let a = Matrix::from_vec(1, 1, vec![10.0]).unwrap();
        let cfg = IstaConfig::new(1.0, 0.0, 2000);
        assert_eq!(ista_solve(&a, &[1.0], &cfg), Err(Error::NonFinite("ISTA iterate")));
    }

    #[test]
    fn converged_solution_is_a_fixed_point() {
        let a = Matrix::from_fn(3, 4, |i, j| ((i + 2 * j) % 5) as f64 * 0.3 - 0.5);
        let v = [1.0, -0.5, 0.25];
        let alpha = 0.9 / crate::linalg::spectral_norm_estimate(&a, 100).powi(2);
        let cfg = IstaConfig {
            tol: 1e-10,
            ..IstaConfig::new(alpha, 0.01, 100_000)
        };
        let out = ista_solve(&a, &v, &cfg).unwrap();
        assert!(out.converged);
        let resid: Vec<f64> = a.matvec(&out.x).unwrap().iter().zip(&v).map(|(p, q)| p - q).collect();
        let g = a.matvec_t(&resid).unwrap();
        let again = soft_threshold(
            &out.x.iter().zip(&g).map(|(x, g)| x - alpha * g).collect::<Vec<_>>(),
            cfg.threshold,
        );
        let moved: Vec<f64> = again.iter().zip(&out.x).map(|(a, b)| a - b).collect();
        assert!(norm2(&moved) < cfg.tol);
    }

    proptest! {
        #[test]
        fn soft_threshold_is_non_expansive(
            u in proptest::collection::vec(-5.0f64..5.0, 8),
            w in proptest::collection::vec(-5.0f64..5.0, 8),
            theta in 0.0f64..2.0,
        ) {
            let su = soft_threshold(&u, theta);
            let sw = soft_threshold(&w, theta);
            let lhs = norm2(&su.iter().zip(&sw).map(|(a, b)| a - b).collect::<Vec<_>>());
            let rhs = norm2(&u.iter().zip(&w).map(|(a, b)| a - b).collect::<Vec<_>>());
            prop_assert!(lhs <= rhs + 1e-12);
        }
    }
}
