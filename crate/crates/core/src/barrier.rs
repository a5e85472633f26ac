//! Logarithmic barrier `F(x) = -sum_i log(b_i - A_i x)` and the quantities
//! derived from it: gradient, Hessian, local norm and the approximate
//! centering condition (ACC).
//!
//! With slacks `s_i = b_i - A_i x` and `w_i = 1 / s_i`:
//!
//! ```text
//! F'(x)  = sum_i A_i^T w_i
//! F''(x) = sum_i (A_i^T A_i) w_i^2
//! ```

use thiserror::Error;

use crate::linalg::{self, CholFactor, LinalgError, Matrix};
use crate::lp::{self, LpError, LpInstance};
use crate::tolerances::FEAS_MARGIN;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BarrierError {
    #[error("point is not strictly interior: row {row} has slack {slack:e}")]
    NotStrictlyInterior { row: usize, slack: f64 },
    #[error("barrier Hessian is not positive definite: {0}")]
    NotPositiveDefinite(LinalgError),
    #[error(transparent)]
    Linalg(LinalgError),
    #[error(transparent)]
    Lp(LpError),
}

impl From<LpError> for BarrierError {
    fn from(e: LpError) -> Self {
        match e {
            LpError::NotStrictlyInterior { row, slack } => BarrierError::NotStrictlyInterior { row, slack },
            LpError::Linalg(e) => e.into(),
            other => BarrierError::Lp(other),
        }
    }
}

impl From<LinalgError> for BarrierError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotPositiveDefinite { .. } => BarrierError::NotPositiveDefinite(e),
            other => BarrierError::Linalg(other),
        }
    }
}

/// Barrier value, derivatives and Hessian factor at one strictly interior
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEval {
    pub x: Matrix,
    pub slacks: Matrix,
    pub value: f64,
    pub grad: Matrix,
    pub hess: Matrix,
    pub hess_factor: CholFactor,
}

impl BarrierEval {
    pub fn min_slack(&self) -> f64 {
        self.slacks.data().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn eval_barrier(p: &LpInstance, x: &Matrix) -> Result<BarrierEval, BarrierError> {
    eval_barrier_with(p, x, FEAS_MARGIN)
}

pub fn eval_barrier_with(p: &LpInstance, x: &Matrix, margin: f64) -> Result<BarrierEval, BarrierError> {
    let witness = lp::check_strict_feasibility_with(p, x, margin)?;
    let (m, n) = (p.m(), p.n());
    let a = p.a().data();
    let s = witness.slacks.data();

    let inv: Vec<f64> = s.iter().map(|si| 1.0 / si).collect();
    let weight: Vec<f64> = inv.iter().map(|w| w * w).collect();
    let value = s.iter().map(|si| -si.ln()).sum();

    let mut grad = vec![0.0; n];
    for (j, g) in grad.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..m {
            acc += a[i * n + j] * inv[i];
        }
        *g = acc;
    }

    let mut hess = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            let mut acc = 0.0;
            for i in 0..m {
                acc += (a[i * n + j] * a[i * n + k]) * weight[i];
            }
            hess[j * n + k] = acc;
        }
    }
    let hess = Matrix::new(n, n, hess)?;
    let hess_factor = linalg::chol_factor(&hess)?;
    Ok(BarrierEval {
        x: x.clone(),
        slacks: witness.slacks,
        value,
        grad: Matrix::new(n, 1, grad)?,
        hess,
        hess_factor,
    })
}

/// `t * c^T x + F(x)`.
pub fn adjusted_cost(p: &LpInstance, x: &Matrix, t: f64) -> Result<f64, BarrierError> {
    let be = eval_barrier(p, x)?;
    Ok(t * p.objective(x)? + be.value)
}

/// `sqrt(y^T F''(x)^{-1} y)`.
pub fn local_norm(be: &BarrierEval, y: &Matrix) -> Result<f64, BarrierError> {
    let z = linalg::chol_solve(&be.hess_factor, y)?;
    Ok(linalg::dot(y, &z)?.max(0.0).sqrt())
}

/// `t c + F'(x)`, computed entrywise as `t * c_j + g_j`.
pub fn centering_residual(p: &LpInstance, be: &BarrierEval, t: f64) -> Matrix {
    let data = p
        .c()
        .data()
        .iter()
        .zip(be.grad.data())
        .map(|(cj, gj)| t * cj + gj)
        .collect();
    Matrix::new(p.n(), 1, data).expect("finite residual")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccCheck {
    pub holds: bool,
    /// `||t c + F'(x)||_x`.
    pub lhs: f64,
    pub bound: f64,
}

/// Approximate centering condition `||t c + F'(x)||_x <= bound`, with an
/// additive floating-point slack.
pub fn acc(p: &LpInstance, be: &BarrierEval, t: f64, bound: f64, slack: f64) -> Result<AccCheck, BarrierError> {
    let lhs = local_norm(be, &centering_residual(p, be, t))?;
    Ok(AccCheck {
        holds: lhs <= bound + slack,
        lhs,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::random_instance;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit1() -> LpInstance {
        LpInstance::boxed(&[1.0], 1.0, 0.01).unwrap()
    }

    fn col(v: &[f64]) -> Matrix {
        Matrix::column(v).unwrap()
    }

    #[test]
    fn unit_interval_at_origin() {
        let be = eval_barrier(&unit1(), &col(&[0.0])).unwrap();
        assert_eq!(be.value, 0.0);
        assert_eq!(be.grad.data(), &[0.0]);
        assert_eq!(be.hess.data(), &[2.0]);
    }

    #[test]
    fn unit_interval_off_center() {
        let be = eval_barrier(&unit1(), &col(&[0.5])).unwrap();
        let want = -(0.5f64.ln()) - 1.5f64.ln();
        assert_relative_eq!(be.value, want, max_relative = 1e-15);
        assert_relative_eq!(be.value, 0.287682, epsilon = 1e-6);
    }

    #[test]
    fn outside_domain_is_rejected() {
        assert!(matches!(
            eval_barrier(&unit1(), &col(&[1.0])),
            Err(BarrierError::NotStrictlyInterior { row: 0, .. })
        ));
    }

    #[test]
    fn adjusted_cost_cases() {
        let p = unit1();
        let x = col(&[0.3]);
        assert_eq!(adjusted_cost(&p, &x, 0.0).unwrap(), eval_barrier(&p, &x).unwrap().value);
        assert_eq!(adjusted_cost(&p, &col(&[0.0]), 3.0).unwrap(), 0.0);
        let a = adjusted_cost(&p, &x, 1.0).unwrap();
        let b = adjusted_cost(&p, &x, 2.0).unwrap();
        assert!(b > a);
    }

    #[test]
    fn local_norm_cases() {
        let p = unit1();
        let be = eval_barrier(&p, &col(&[0.0])).unwrap();
        assert_eq!(local_norm(&be, &col(&[0.0])).unwrap(), 0.0);
        assert_relative_eq!(
            local_norm(&be, p.c()).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            max_relative = 1e-15
        );
    }

    #[test]
    fn acc_cases() {
        let p = unit1();
        let be = eval_barrier(&p, &col(&[0.0])).unwrap();
        let at_center = acc(&p, &be, 0.0, 0.25, 1e-9).unwrap();
        assert!(at_center.holds);
        assert_eq!(at_center.lhs, 0.0);
        let r = acc(&p, &be, 0.1, 0.25, 1e-9).unwrap();
        assert_relative_eq!(r.lhs, 0.1 / 2f64.sqrt(), max_relative = 1e-14);
        // lhs 1/sqrt(2)*t with t chosen so lhs = beta + 1
        let t = 1.25 * 2f64.sqrt();
        let r = acc(&p, &be, t, 0.25, 1e-9).unwrap();
        assert_relative_eq!(r.lhs, 1.25, max_relative = 1e-14);
        assert!(!r.holds);
    }

    #[test]
    fn homogeneity_of_local_norm() {
        let (p, _) = random_instance(3, 11, 7).unwrap();
        let be = eval_barrier(&p, &col(&[0.1, -0.2, 0.05])).unwrap();
        let y = col(&[0.3, -1.0, 2.0]);
        let base = local_norm(&be, &y).unwrap();
        for alpha in [-3.5, -1.0, 0.0, 0.25, 7.0] {
            let scaled = linalg::mat_scale(&y, alpha).unwrap();
            assert_relative_eq!(
                local_norm(&be, &scaled).unwrap(),
                alpha.abs() * base,
                max_relative = 1e-12,
                epsilon = 1e-15
            );
        }
    }

    /// Central differences of the value, compared against the analytic
    /// derivatives.
    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (n, m) in [(2, 6), (3, 10), (4, 15)] {
            let (p, _) = random_instance(n, m, 100 + n as u64).unwrap();
            let mut checked = 0;
            while checked < 20 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.6..0.6)).collect();
                let Ok(be) = eval_barrier(&p, &col(&x)) else { continue };
                if be.min_slack() < 0.05 {
                    continue;
                }
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let h = 1e-6 * (1.0 + norm);
                let value = |pt: &[f64]| eval_barrier(&p, &col(pt)).unwrap().value;
                let grad_at = |pt: &[f64]| eval_barrier(&p, &col(pt)).unwrap().grad;
                for j in 0..n {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (value(&xp) - value(&xm)) / (2.0 * h);
                    let g = be.grad.get(j, 0);
                    assert!((fd - g).abs() <= 1e-5 * (1.0 + g.abs()), "grad {j}: {fd} vs {g}");
                    let (gp, gm) = (grad_at(&xp), grad_at(&xm));
                    for k in 0..n {
                        let fd = (gp.get(k, 0) - gm.get(k, 0)) / (2.0 * h);
                        let hv = be.hess.get(k, j);
                        assert!((fd - hv).abs() <= 1e-5 * (1.0 + hv.abs()), "hess {k},{j}");
                    }
                }
                checked += 1;
            }
        }
    }
}
