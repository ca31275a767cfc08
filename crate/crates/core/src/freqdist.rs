//! Frequency sampling laws and importance re-weighting.
//!
//! Both the base law ω₀ and the critic ω are zero-mean diagonal normals over
//! frequency space. Frequencies are drawn once from ω₀; afterwards the critic
//! can only move mass among them through the density ratio ω(t)/ω₀(t).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Zero-mean diagonal normal, parameterized by per-dimension `ln(std)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDistribution {
    log_std: Vec<f64>,
}

impl SamplingDistribution {
    pub fn from_log_std(log_std: Vec<f64>) -> Result<Self> {
        if log_std.is_empty() {
            return Err(Error::param("sampling distribution needs dim >= 1"));
        }
        if log_std.iter().any(|s| !s.is_finite()) {
            return Err(Error::param("sampling distribution log-std must be finite"));
        }
        Ok(Self { log_std })
    }

    pub fn from_std(std: &[f64]) -> Result<Self> {
        if std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::param("sampling distribution std entries must be finite and > 0"));
        }
        Self::from_log_std(std.iter().map(|s| s.ln()).collect())
    }

    pub fn isotropic(dim: usize, std: f64) -> Result<Self> {
        Self::from_std(&vec![std; dim])
    }

    pub fn dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|s| s.exp()).collect()
    }

    /// Replaces the parameter vector (critic updates go through here).
    pub fn set_log_std(&mut self, log_std: &[f64]) -> Result<()> {
        if log_std.len() != self.dim() {
            return Err(Error::param("log-std length mismatch"));
        }
        if log_std.iter().any(|s| !s.is_finite()) {
            return Err(Error::NumericFailure {
                context: "critic".into(),
                message: "non-finite log-std".into(),
            });
        }
        self.log_std.copy_from_slice(log_std);
        Ok(())
    }

    /// Clamps each std into `[low·σ₀ⱼ, high·σ₀ⱼ]` where σ₀ is `base`'s std.
    pub fn clamp_relative_to(&mut self, base: &SamplingDistribution, low: f64, high: f64) -> Result<()> {
        check_dims(self.dim(), base.dim())?;
        let (ll, lh) = (low.ln(), high.ln());
        for (s, b) in self.log_std.iter_mut().zip(&base.log_std) {
            *s = s.clamp(b + ll, b + lh);
        }
        Ok(())
    }
}

/// The `k × d` frequency draw shared by the target and generated embeddings.
///
/// Immutable once built; `hash` identifies the exact draw so embeddings from
/// different draws are never compared.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrix {
    freqs: Matrix,
    hash: String,
}

impl FrequencyMatrix {
    pub fn new(freqs: Matrix) -> Result<Self> {
        if freqs.rows() == 0 || freqs.cols() == 0 {
            return Err(Error::param("frequency matrix must have k >= 1 and dim >= 1"));
        }
        if !freqs.is_finite() {
            return Err(Error::param("frequency matrix has non-finite entries"));
        }
        let hash = hash_matrix(&freqs);
        Ok(Self { freqs, hash })
    }

    pub fn k(&self) -> usize {
        self.freqs.rows()
    }

    pub fn dim(&self) -> usize {
        self.freqs.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.freqs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.freqs.row(i)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }
}

fn hash_matrix(m: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((m.rows() as u64).to_le_bytes());
    h.update((m.cols() as u64).to_le_bytes());
    for x in m.data() {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::param(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

pub fn sample_frequencies(base: &SamplingDistribution, k: usize, rng: &mut Rng) -> Result<FrequencyMatrix> {
    if k == 0 {
        return Err(Error::param("need k >= 1 frequencies"));
    }
    let std = base.std();
    let d = base.dim();
    let mut data = Vec::with_capacity(k * d);
    for _ in 0..k {
        for s in &std {
            data.push(s * rng.standard_normal());
        }
    }
    FrequencyMatrix::new(Matrix::new(k, d, data)?)
}

pub fn log_density(dist: &SamplingDistribution, t: &[f64]) -> Result<f64> {
    check_dims(dist.dim(), t.len())?;
    Ok(dist
        .log_std
        .iter()
        .zip(t)
        .map(|(&s, &x)| {
            let z = x * (-s).exp();
            -HALF_LN_2PI - s - 0.5 * z * z
        })
        .sum())
}

fn log_ratios(critic: &SamplingDistribution, base: &SamplingDistribution, freqs: &FrequencyMatrix) -> Result<Vec<f64>> {
    check_dims(critic.dim(), base.dim())?;
    check_dims(critic.dim(), freqs.dim())?;
    let coef: Vec<(f64, f64)> = critic
        .log_std
        .iter()
        .zip(&base.log_std)
        .map(|(&s, &s0)| (s0 - s, 0.5 * ((-2.0 * s0).exp() - (-2.0 * s).exp())))
        .collect();
    Ok(freqs
        .matrix()
        .row_iter()
        .map(|t| t.iter().zip(&coef).map(|(x, (a, b))| a + b * x * x).sum())
        .collect())
}

/// ω(tᵢ)/ω₀(tᵢ) for every frequency; with `normalize` the weights are
/// rescaled so that they sum to `k`.
pub fn importance_weights(
    critic: &SamplingDistribution,
    base: &SamplingDistribution,
    freqs: &FrequencyMatrix,
    normalize: bool,
) -> Result<Vec<f64>> {
    let lr = log_ratios(critic, base, freqs)?;
    if !normalize {
        return Ok(lr.into_iter().map(f64::exp).collect());
    }
    let max = lr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = lr.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    let k = freqs.k() as f64;
    Ok(shifted.into_iter().map(|w| k * w / total).collect())
}

/// `k × d` Jacobian ∂wᵢ/∂log_stdⱼ of [`importance_weights`] with respect to the critic.
pub fn weights_grad_logstd(
    critic: &SamplingDistribution,
    base: &SamplingDistribution,
    freqs: &FrequencyMatrix,
    normalize: bool,
) -> Result<Matrix> {
    let w = importance_weights(critic, base, freqs, normalize)?;
    let (k, d) = (freqs.k(), freqs.dim());
    let inv_var: Vec<f64> = critic.log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    // ∂ ln rᵢ / ∂sⱼ = tᵢⱼ²/stdⱼ² − 1
    let mut g = Matrix::zeros(k, d);
    for i in 0..k {
        let t = freqs.row(i);
        let row = g.row_mut(i);
        for j in 0..d {
            row[j] = t[j] * t[j] * inv_var[j] - 1.0;
        }
    }
    if normalize {
        // wᵢ = k rᵢ/Σr, so ∂wᵢ = wᵢ (∂ln rᵢ − Σₗ (wₗ/k) ∂ln rₗ)
        let kf = k as f64;
        let mut mean = vec![0.0; d];
        for i in 0..k {
            for (m, x) in mean.iter_mut().zip(g.row(i)) {
                *m += w[i] / kf * x;
            }
        }
        for i in 0..k {
            for (x, m) in g.row_mut(i).iter_mut().zip(&mean) {
                *x = w[i] * (*x - m);
            }
        }
    } else {
        for i in 0..k {
            g.row_mut(i).iter_mut().for_each(|x| *x *= w[i]);
        }
    }
    Ok(g)
}

/// Importance-sampling estimate `(1/k) Σ wᵢ f(tᵢ)`.
pub fn weighted_expectation(f_values: &[f64], weights: &[f64]) -> Result<f64> {
    if f_values.len() != weights.len() {
        return Err(Error::param(format!(
            "weighted_expectation: {} values vs {} weights",
            f_values.len(),
            weights.len()
        )));
    }
    if f_values.is_empty() {
        return Err(Error::param("weighted_expectation: empty input"));
    }
    let s: f64 = f_values.iter().zip(weights).map(|(f, w)| f * w).sum();
    Ok(s / f_values.len() as f64)
}
