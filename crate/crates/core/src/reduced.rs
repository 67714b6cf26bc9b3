//! Reduced upper-level cost
//!
//! ```text
//! F(σ) = 1/(2m) Σ_i ‖u_i(σ) − u†_i‖²_{L²} + β ∫σ + α ‖σ‖²_{L²}
//! ```
//!
//! over a batch of `m` samples, and its gradient through the adjoint
//! equations `(B + L(σ)) q_i = −M (u_i − u†_i)`:
//!
//! ```text
//! ∂F/∂σ_k = (1/m) Σ_i q_iᵀ A_k u_i + β w_k + 2α σ_k w_k.
//! ```
//!
//! The adjoint reuses the Cholesky factor of the lower-level solve since the
//! system matrix is symmetric.

use nalgebra::DMatrix;

use crate::error::check_len;
use crate::lower::{LowerOperator, LowerSystem};
use crate::nonlocal::WeightVector;
use crate::optimizer::Objective;
use crate::{Error, NodalVector, Result};

/// `R(σ) = β Σ_k σ_k w_k + α Σ_k σ_k² w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerParams {
    pub alpha: f64,
    pub beta: f64,
    pub piece_widths: Vec<f64>,
}

impl RegularizerParams {
    pub fn new(alpha: f64, beta: f64, piece_widths: Vec<f64>) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha and beta must be nonnegative, got {alpha}, {beta}"
            )));
        }
        if piece_widths.is_empty() || piece_widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument("piece widths must be positive".into()));
        }
        Ok(Self {
            alpha,
            beta,
            piece_widths,
        })
    }

    pub fn value(&self, sigma: &[f64]) -> f64 {
        sigma
            .iter()
            .zip(&self.piece_widths)
            .map(|(s, w)| self.beta * s * w + self.alpha * s * s * w)
            .sum()
    }

    pub fn gradient(&self, sigma: &[f64]) -> Vec<f64> {
        sigma
            .iter()
            .zip(&self.piece_widths)
            .map(|(s, w)| self.beta * w + 2.0 * self.alpha * s * w)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub value: f64,
    /// `∂F/∂σ_k`
    pub grad: Vec<f64>,
    /// `grad_k / w_k`, the `L²((0,d))` representative.
    pub riesz_grad: Vec<f64>,
    /// Lower-level solutions, one column per sample.
    pub u: DMatrix<f64>,
    /// Adjoint states, one column per sample.
    pub q: DMatrix<f64>,
}

/// Batch-mean reduced cost over a fixed set of samples.
#[derive(Debug, Clone)]
pub struct ReducedProblem<'a> {
    op: &'a LowerOperator,
    rhs: DMatrix<f64>,
    u_true: DMatrix<f64>,
    reg: RegularizerParams,
}

impl<'a> ReducedProblem<'a> {
    /// One column of `y_delta` and `u_true` per sample.
    pub fn new(
        op: &'a LowerOperator,
        y_delta: &DMatrix<f64>,
        u_true: &DMatrix<f64>,
        reg: RegularizerParams,
    ) -> Result<Self> {
        check_len(op.n(), u_true.nrows())?;
        check_len(y_delta.ncols(), u_true.ncols())?;
        check_len(op.tensor().n_pieces(), reg.piece_widths.len())?;
        if u_true.ncols() == 0 {
            return Err(Error::InvalidArgument("a batch needs at least one sample".into()));
        }
        Ok(Self {
            op,
            rhs: op.rhs(y_delta)?,
            u_true: u_true.clone(),
            reg,
        })
    }

    /// Single-sample cost from an assembled lower-level system.
    pub fn single(lsys: &LowerSystem<'a>, u_true: &NodalVector, reg: RegularizerParams) -> Result<Self> {
        let op = lsys.operator();
        check_len(op.n(), u_true.len())?;
        check_len(op.tensor().n_pieces(), reg.piece_widths.len())?;
        Ok(Self {
            op,
            rhs: DMatrix::from_column_slice(op.n(), 1, lsys.rhs_base().as_slice()),
            u_true: DMatrix::from_column_slice(op.n(), 1, u_true.as_slice()),
            reg,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.u_true.ncols()
    }

    pub fn regularizer(&self) -> &RegularizerParams {
        &self.reg
    }

    pub fn operator(&self) -> &'a LowerOperator {
        self.op
    }

    /// Same samples, different weight regularization.
    pub fn with_regularizer(&self, reg: RegularizerParams) -> Result<Self> {
        check_len(self.reg.piece_widths.len(), reg.piece_widths.len())?;
        Ok(Self { reg, ..self.clone() })
    }

    fn check_weight(&self, sigma: &WeightVector) -> Result<()> {
        if sigma.grid() != self.op.tensor().grid() {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Lower-level solutions `u_i(σ)`, one column per sample.
    pub fn solve_raw(&self, sigma: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.op.factor(sigma)?.solve(&self.rhs))
    }

    /// `‖u_i − u†_i‖²_{L²}` for every sample.
    pub fn sample_errors(&self, u: &DMatrix<f64>) -> Vec<f64> {
        let diff = u - &self.u_true;
        let mdiff = self.op.forward().mass() * &diff;
        (0..diff.ncols())
            .map(|i| diff.column(i).dot(&mdiff.column(i)))
            .collect()
    }

    /// Mean squared reconstruction error `(1/m) Σ_i ‖u_i(σ) − u†_i‖²`.
    pub fn mean_error_raw(&self, sigma: &[f64]) -> Result<f64> {
        let u = self.solve_raw(sigma)?;
        Ok(mean(&self.sample_errors(&u)))
    }

    pub fn value(&self, sigma: &WeightVector) -> Result<f64> {
        self.check_weight(sigma)?;
        self.value_raw(sigma.values())
    }

    /// `F(σ)` for raw nonnegative piece values.
    pub fn value_raw(&self, sigma: &[f64]) -> Result<f64> {
        check_len(self.reg.piece_widths.len(), sigma.len())?;
        Ok(0.5 * self.mean_error_raw(sigma)? + self.reg.value(sigma))
    }

    pub fn gradient(&self, sigma: &WeightVector) -> Result<GradientReport> {
        self.check_weight(sigma)?;
        self.gradient_raw(sigma.values())
    }

    pub fn gradient_raw(&self, sigma: &[f64]) -> Result<GradientReport> {
        check_len(self.reg.piece_widths.len(), sigma.len())?;
        let m = self.n_samples() as f64;
        let chol = self.op.factor(sigma)?;
        let u = chol.solve(&self.rhs);
        let diff = &u - &self.u_true;
        let mdiff = self.op.forward().mass() * &diff;
        let misfit: f64 = (0..diff.ncols()).map(|i| diff.column(i).dot(&mdiff.column(i))).sum();
        let q = -chol.solve(&mdiff);
        // Σ_i q_i u_iᵀ, so that ⟨A_k, W⟩ = Σ_i q_iᵀ A_k u_i.
        let w = &q * u.transpose();
        let pairings = self.op.tensor().frobenius_pairings(&w)?;
        let reg_grad = self.reg.gradient(sigma);
        let grad: Vec<f64> = pairings.iter().zip(&reg_grad).map(|(p, r)| p / m + r).collect();
        let riesz_grad = grad.iter().zip(&self.reg.piece_widths).map(|(g, w)| g / w).collect();
        Ok(GradientReport {
            value: 0.5 * misfit / m + self.reg.value(sigma),
            grad,
            riesz_grad,
            u,
            q,
        })
    }
}

impl Objective for ReducedProblem<'_> {
    fn dim(&self) -> usize {
        self.reg.piece_widths.len()
    }

    fn widths(&self) -> Vec<f64> {
        self.reg.piece_widths.clone()
    }

    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = self.gradient_raw(x)?;
        Ok((r.value, r.grad))
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
