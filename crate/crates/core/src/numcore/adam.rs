use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Bias-corrected Adam moments for one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with the canonical betas (0.9, 0.999) and eps 1e-8.
    pub fn new(rows: usize, cols: usize, lr: f64) -> Self {
        Self::with_betas(rows, cols, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(rows: usize, cols: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            step: 0,
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn for_params(params: &Matrix, lr: f64) -> Self {
        Self::new(params.rows(), params.cols(), lr)
    }

    /// Descent step: `params ← params − lr · m̂ / (√v̂ + eps)`.
    pub fn step(&mut self, params: &mut Matrix, grad: &Matrix) -> Result<()> {
        self.apply(params, grad, -1.0)
    }

    /// Ascent step on a maximization objective; same moments, opposite sign.
    pub fn ascend(&mut self, params: &mut Matrix, grad: &Matrix) -> Result<()> {
        self.apply(params, grad, 1.0)
    }

    fn apply(&mut self, params: &mut Matrix, grad: &Matrix, sign: f64) -> Result<()> {
        params.check_same_shape(grad, "adam grad")?;
        params.check_same_shape(&self.first_moment, "adam state")?;
        if !grad.is_finite() {
            return Err(Error::NumericFailure {
                context: format!("adam step {}", self.step + 1),
                message: "non-finite gradient".into(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        let m = self.first_moment.data_mut();
        let v = self.second_moment.data_mut();
        for (((p, &g), m), v) in params.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p += sign * self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
