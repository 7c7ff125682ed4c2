//! Quadratic bi-level problem with a closed-form hypergradient.
//!
//! Inner loss of minibatch `i`: `½ (θ − Mα − c_i)ᵀ A (θ − Mα − c_i)`.
//! Outer loss of minibatch `j`: `½ ‖θ − d_j‖² + ½ ρ ‖α‖²`.
//! The inner optimum is `θ* = Mα + c̄`, and the exact hypergradient is
//! `Mᵀ (θ* − d̄) + ρ α`.

use nalgebra::{DMatrix, DVector};

use super::{BilevelProblem, Eval};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuadraticToy {
    pub m: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub train_shifts: Vec<DVector<f64>>,
    pub val_targets: Vec<DVector<f64>>,
    pub rho: f64,
}

impl QuadraticToy {
    /// `A = I`, one training and one validation minibatch, no shifts.
    pub fn new(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        Self {
            a: DMatrix::identity(n, n),
            train_shifts: vec![DVector::zeros(n)],
            val_targets: vec![DVector::zeros(n)],
            m,
            rho: 0.0,
        }
    }

    pub fn with_hessian(mut self, a: DMatrix<f64>) -> Self {
        self.a = a;
        self
    }

    pub fn with_batches(mut self, train: Vec<DVector<f64>>, val: Vec<DVector<f64>>) -> Self {
        self.train_shifts = train;
        self.val_targets = val;
        self
    }

    pub fn with_alpha_weight(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn theta_dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn alpha_dim(&self) -> usize {
        self.m.ncols()
    }

    fn mean(v: &[DVector<f64>], n: usize) -> DVector<f64> {
        let mut s = DVector::zeros(n);
        for x in v {
            s += x;
        }
        s / v.len().max(1) as f64
    }

    /// Minimizer of the full-batch inner loss.
    pub fn optimum(&self, alpha: &[f64]) -> Vec<f64> {
        let t = &self.m * DVector::from_column_slice(alpha)
            + Self::mean(&self.train_shifts, self.theta_dim());
        t.as_slice().to_vec()
    }

    /// Exact full-batch hypergradient.
    pub fn exact_hypergradient(&self, alpha: &[f64]) -> Vec<f64> {
        let th = DVector::from_vec(self.optimum(alpha));
        let r = th - Self::mean(&self.val_targets, self.theta_dim());
        let g = self.m.transpose() * r + DVector::from_column_slice(alpha) * self.rho;
        g.as_slice().to_vec()
    }

    /// Extreme eigenvalues `(μ, λ_max)` of the inner Hessian `A`.
    pub fn hessian_spectrum(&self) -> (f64, f64) {
        let e = self.a.clone().symmetric_eigen().eigenvalues;
        (e.min(), e.max())
    }

    fn check(&self, theta: &[f64], alpha: &[f64]) -> Result<()> {
        if theta.len() != self.theta_dim() || alpha.len() != self.alpha_dim() {
            return Err(Error::DimensionMismatch(format!(
                "toy expects θ of length {} and α of length {}, got {} and {}",
                self.theta_dim(),
                self.alpha_dim(),
                theta.len(),
                alpha.len()
            )));
        }
        Ok(())
    }
}

impl BilevelProblem for QuadraticToy {
    fn train_batches(&self) -> usize {
        self.train_shifts.len()
    }

    fn val_batches(&self) -> usize {
        self.val_targets.len()
    }

    fn train_eval(&self, theta: &[f64], alpha: &[f64], batch: usize) -> Result<Eval> {
        self.check(theta, alpha)?;
        let r = DVector::from_column_slice(theta)
            - &self.m * DVector::from_column_slice(alpha)
            - &self.train_shifts[batch];
        let ar = &self.a * &r;
        let gt = ar.clone();
        let ga = -(self.m.transpose() * ar);
        Ok(Eval {
            value: 0.5 * r.dot(&gt),
            grad_theta: gt.as_slice().to_vec(),
            grad_alpha: ga.as_slice().to_vec(),
        })
    }

    fn val_eval(&self, theta: &[f64], alpha: &[f64], batch: usize) -> Result<Eval> {
        self.check(theta, alpha)?;
        let r = DVector::from_column_slice(theta) - &self.val_targets[batch];
        let a = DVector::from_column_slice(alpha);
        Ok(Eval {
            value: 0.5 * r.norm_squared() + 0.5 * self.rho * a.norm_squared(),
            grad_theta: r.as_slice().to_vec(),
            grad_alpha: (a * self.rho).as_slice().to_vec(),
        })
    }
}
