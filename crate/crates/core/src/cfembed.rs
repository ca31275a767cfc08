//! Characteristic-function embeddings and the empirical CF distance.
//!
//! An embedding holds `Φ̂(tᵢ) = (1/n) Σⱼ exp(i tᵢ·xⱼ)` for each frequency of a
//! [`FrequencyMatrix`], split into real and imaginary parts. Replacing one
//! record moves the stacked `(re, im)` vector by at most `2√k/n` in L2, which
//! calibrates the Gaussian noise added by [`sanitize`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freqdist::{weights_grad_logstd, FrequencyMatrix, SamplingDistribution};
use crate::numcore::{Matrix, Rng};

/// Empirical characteristic function evaluated at a fixed frequency draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfEmbedding {
    pub k: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub n_source: usize,
    pub sanitized: bool,
    pub noise_std: f64,
    pub freq_hash: String,
}

impl CfEmbedding {
    /// L2 norm over the complex frequency space.
    pub fn norm(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .sum::<f64>()
            .sqrt()
    }

    fn check_compatible(&self, other: &CfEmbedding) -> Result<()> {
        if self.k != other.k {
            return Err(Error::param(format!("embedding k mismatch: {} vs {}", self.k, other.k)));
        }
        if self.freq_hash != other.freq_hash {
            return Err(Error::param("embeddings were built from different frequency draws"));
        }
        Ok(())
    }

    fn check_freqs(&self, freqs: &FrequencyMatrix) -> Result<()> {
        if self.k != freqs.k() || self.freq_hash != freqs.hash() {
            return Err(Error::param("embedding does not belong to this frequency matrix"));
        }
        Ok(())
    }
}

/// Per-frequency squared CF gaps `eᵢ` and their (weighted) total.
#[derive(Debug, Clone, PartialEq)]
pub struct CfdValue {
    pub value: f64,
    pub per_frequency: Vec<f64>,
}

fn check_data(data: &Matrix, freqs: &FrequencyMatrix) -> Result<()> {
    if data.rows() == 0 {
        return Err(Error::param("cannot embed an empty dataset"));
    }
    if data.cols() != freqs.dim() {
        return Err(Error::param(format!(
            "data has {} columns, frequencies have dim {}",
            data.cols(),
            freqs.dim()
        )));
    }
    Ok(())
}

/// Sequential per-frequency sums (parallel across frequencies only), so the
/// result is bitwise reproducible.
pub fn embed(data: &Matrix, freqs: &FrequencyMatrix) -> Result<CfEmbedding> {
    check_data(data, freqs)?;
    let n = data.rows() as f64;
    let (re, im): (Vec<f64>, Vec<f64>) = (0..freqs.k())
        .into_par_iter()
        .map(|i| {
            let t = freqs.row(i);
            let (mut c, mut s) = (0.0, 0.0);
            for x in data.row_iter() {
                let phase: f64 = t.iter().zip(x).map(|(a, b)| a * b).sum();
                let (sn, cs) = phase.sin_cos();
                c += cs;
                s += sn;
            }
            (c / n, s / n)
        })
        .unzip();
    Ok(CfEmbedding {
        k: freqs.k(),
        re,
        im,
        n_source: data.rows(),
        sanitized: false,
        noise_std: 0.0,
        freq_hash: freqs.hash().to_string(),
    })
}

/// L2 sensitivity `2√k/n` of the stacked `(re, im)` embedding.
pub fn cf_sensitivity(k: usize, n: usize) -> Result<f64> {
    if k == 0 || n == 0 {
        return Err(Error::param(format!("cf_sensitivity needs k, n >= 1 (got k={k}, n={n})")));
    }
    Ok(2.0 * (k as f64).sqrt() / n as f64)
}

/// Gaussian mechanism on the stacked embedding: each of the `2k` coordinates
/// gets independent `N(0, (Δσ)²)` noise with `Δ = 2√k/n`. One-shot.
pub fn sanitize(emb: &CfEmbedding, noise_multiplier: f64, rng: &mut Rng) -> Result<CfEmbedding> {
    if emb.sanitized {
        return Err(Error::state("embedding is already sanitized"));
    }
    if !(noise_multiplier > 0.0) || !noise_multiplier.is_finite() {
        return Err(Error::param(format!("noise multiplier must be > 0, got {noise_multiplier}")));
    }
    let std = cf_sensitivity(emb.k, emb.n_source)? * noise_multiplier;
    let mut out = emb.clone();
    for x in out.re.iter_mut().chain(out.im.iter_mut()) {
        *x += std * rng.standard_normal();
    }
    out.sanitized = true;
    out.noise_std = std;
    Ok(out)
}

/// Marks an embedding as released without noise (non-private mode).
pub fn sanitize_nonprivate(emb: &CfEmbedding) -> Result<CfEmbedding> {
    if emb.sanitized {
        return Err(Error::state("embedding is already sanitized"));
    }
    let mut out = emb.clone();
    out.sanitized = true;
    out.noise_std = 0.0;
    Ok(out)
}

fn gaps(a: &CfEmbedding, b: &CfEmbedding) -> Vec<f64> {
    a.re
        .iter()
        .zip(&a.im)
        .zip(b.re.iter().zip(&b.im))
        .map(|((ar, ai), (br, bi))| (ar - br).powi(2) + (ai - bi).powi(2))
        .collect()
}

/// `(1/k) Σᵢ |Φ_a(tᵢ) − Φ_b(tᵢ)|²`.
pub fn cfd(a: &CfEmbedding, b: &CfEmbedding) -> Result<CfdValue> {
    a.check_compatible(b)?;
    let per_frequency = gaps(a, b);
    let value = per_frequency.iter().sum::<f64>() / a.k as f64;
    Ok(CfdValue { value, per_frequency })
}

/// `Σᵢ wᵢ |Φ_a(tᵢ) − Φ_b(tᵢ)|²` (no `1/k`; unit weights give `k · cfd`).
pub fn weighted_cfd(a: &CfEmbedding, b: &CfEmbedding, weights: &[f64]) -> Result<CfdValue> {
    a.check_compatible(b)?;
    if weights.len() != a.k {
        return Err(Error::param(format!("expected {} weights, got {}", a.k, weights.len())));
    }
    let per_frequency = gaps(a, b);
    let value = per_frequency.iter().zip(weights).map(|(e, w)| e * w).sum();
    Ok(CfdValue { value, per_frequency })
}

/// Loss, gradient and generated embedding from a single pass over the batch.
#[derive(Debug, Clone)]
pub struct PointLoss {
    pub loss: CfdValue,
    pub grad: Matrix,
    pub generated: CfEmbedding,
}

/// Weighted CFD between `target` and the embedding of `gen_points`, together
/// with its gradient with respect to every generated point.
pub fn loss_and_grad_points(
    target: &CfEmbedding,
    gen_points: &Matrix,
    freqs: &FrequencyMatrix,
    weights: &[f64],
) -> Result<PointLoss> {
    if !target.sanitized {
        return Err(Error::state("training target must be a sanitized embedding"));
    }
    target.check_freqs(freqs)?;
    check_data(gen_points, freqs)?;
    if weights.len() != freqs.k() {
        return Err(Error::param("weights length must equal k"));
    }
    if !gen_points.is_finite() {
        return Err(Error::NumericFailure {
            context: "loss_grad_points".into(),
            message: "non-finite generated points".into(),
        });
    }
    let (b, k) = (gen_points.rows(), freqs.k());
    let bf = b as f64;
    let phases = gen_points.matmul_t(freqs.matrix())?; // B × k
    let mut cos = Matrix::zeros(b, k);
    let mut sin = Matrix::zeros(b, k);
    for ((p, c), s) in phases.data().iter().zip(cos.data_mut()).zip(sin.data_mut()) {
        let (sn, cs) = p.sin_cos();
        *c = cs;
        *s = sn;
    }
    let re: Vec<f64> = cos.col_means();
    let im: Vec<f64> = sin.col_means();
    let generated = CfEmbedding {
        k,
        re,
        im,
        n_source: b,
        sanitized: false,
        noise_std: 0.0,
        freq_hash: freqs.hash().to_string(),
    };
    let loss = weighted_cfd(&generated, target, weights)?;

    // ∂L/∂gⱼ = Σᵢ (2wᵢ/B) [−(cᵢ−aᵢ) sin(tᵢ·gⱼ) + (dᵢ−bᵢ) cos(tᵢ·gⱼ)] tᵢ
    let dre: Vec<f64> = (0..k).map(|i| 2.0 * weights[i] * (generated.re[i] - target.re[i]) / bf).collect();
    let dim: Vec<f64> = (0..k).map(|i| 2.0 * weights[i] * (generated.im[i] - target.im[i]) / bf).collect();
    let mut coef = Matrix::zeros(b, k);
    for j in 0..b {
        let (cr, sr) = (cos.row(j), sin.row(j));
        for (i, c) in coef.row_mut(j).iter_mut().enumerate() {
            *c = -dre[i] * sr[i] + dim[i] * cr[i];
        }
    }
    let grad = coef.matmul(freqs.matrix())?;
    Ok(PointLoss { loss, grad, generated })
}

pub fn loss_grad_points(
    target: &CfEmbedding,
    gen_points: &Matrix,
    freqs: &FrequencyMatrix,
    weights: &[f64],
) -> Result<Matrix> {
    Ok(loss_and_grad_points(target, gen_points, freqs, weights)?.grad)
}

/// Gradient of `Σᵢ wᵢ(log_std) eᵢ` with respect to the critic's log-std,
/// holding both embeddings fixed.
pub fn loss_grad_logstd(
    target: &CfEmbedding,
    gen_emb: &CfEmbedding,
    freqs: &FrequencyMatrix,
    critic: &SamplingDistribution,
    base: &SamplingDistribution,
    normalize: bool,
) -> Result<Vec<f64>> {
    target.check_compatible(gen_emb)?;
    target.check_freqs(freqs)?;
    let e = gaps(target, gen_emb);
    let jac = weights_grad_logstd(critic, base, freqs, normalize)?;
    let mut g = vec![0.0; freqs.dim()];
    for (i, ei) in e.iter().enumerate() {
        for (gj, x) in g.iter_mut().zip(jac.row(i)) {
            *gj += ei * x;
        }
    }
    Ok(g)
}

pub const EMBEDDING_FILE_VERSION: u32 = 1;

/// On-disk form of a sanitized embedding, self-contained so that training
/// can run without the raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizedEmbeddingFile {
    pub version: u32,
    pub k: usize,
    pub d: usize,
    pub n_source: usize,
    pub freq_hash: String,
    pub freqs: Vec<Vec<f64>>,
    pub sigma0: Vec<f64>,
    pub noise_std: f64,
    #[serde(with = "crate::privacy::epsilon_serde")]
    pub epsilon_charged: f64,
    pub delta: f64,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl SanitizedEmbeddingFile {
    pub fn new(
        emb: &CfEmbedding,
        freqs: &FrequencyMatrix,
        sigma0: &[f64],
        epsilon_charged: f64,
        delta: f64,
    ) -> Result<Self> {
        if !emb.sanitized {
            return Err(Error::state("refusing to persist an unsanitized embedding"));
        }
        emb.check_freqs(freqs)?;
        Ok(Self {
            version: EMBEDDING_FILE_VERSION,
            k: emb.k,
            d: freqs.dim(),
            n_source: emb.n_source,
            freq_hash: emb.freq_hash.clone(),
            freqs: freqs.matrix().row_iter().map(|r| r.to_vec()).collect(),
            sigma0: sigma0.to_vec(),
            noise_std: emb.noise_std,
            epsilon_charged,
            delta,
            re: emb.re.clone(),
            im: emb.im.clone(),
        })
    }

    /// Rebuilds the frequency matrix and embedding, checking the recorded hash.
    pub fn restore(&self) -> Result<(FrequencyMatrix, CfEmbedding)> {
        if self.version != EMBEDDING_FILE_VERSION {
            return Err(Error::artifact(format!("unsupported embedding version {}", self.version)));
        }
        if self.freqs.len() != self.k || self.re.len() != self.k || self.im.len() != self.k {
            return Err(Error::artifact("embedding arrays do not match k"));
        }
        let m = Matrix::from_rows(&self.freqs).map_err(|e| Error::artifact(e.to_string()))?;
        if m.cols() != self.d {
            return Err(Error::artifact("frequency rows do not match d"));
        }
        let freqs = FrequencyMatrix::new(m).map_err(|e| Error::artifact(e.to_string()))?;
        if freqs.hash() != self.freq_hash {
            return Err(Error::artifact("frequency hash mismatch"));
        }
        let emb = CfEmbedding {
            k: self.k,
            re: self.re.clone(),
            im: self.im.clone(),
            n_source: self.n_source,
            sanitized: true,
            noise_std: self.noise_std,
            freq_hash: self.freq_hash.clone(),
        };
        Ok((freqs, emb))
    }
}
