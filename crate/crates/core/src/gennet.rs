//! Implicit generator: `fc → bn → relu → … → fc → tanh/softmax`.
//!
//! The head applies `(tanh(h)+1)/2` to continuous columns and a softmax to
//! each categorical block, so outputs live in the same `[0,1]` encoding as
//! the data. When the schema has a label column, the one-hot label is both
//! concatenated to the latent input and copied verbatim to the end of the
//! output row.

use serde::{Deserialize, Serialize};

use crate::dataio::{decode_row, Block, Record, Schema};
use crate::error::{Error, Result};
use crate::numcore::{gaussian_sample, Matrix, Rng};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear {
        /// `in × out`
        weight: Matrix,
        /// `1 × out`
        bias: Matrix,
    },
    BatchNorm {
        gamma: Matrix,
        beta: Matrix,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Relu,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Linear { input: Matrix },
    BatchNorm { xhat: Matrix, inv_std: Vec<f64> },
    Relu { input: Matrix },
}

#[derive(Debug, Clone)]
struct Cache {
    layers: Vec<LayerCache>,
    /// Head activations: `(tanh+1)/2` values and softmax probabilities.
    head: Matrix,
}

/// Latent draws and the label fed with each.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z: Matrix,
    pub labels: Vec<usize>,
}

impl LatentBatch {
    pub fn new(z: Matrix, labels: Vec<usize>) -> Result<Self> {
        if z.rows() == 0 {
            return Err(Error::param("latent batch must have B >= 1"));
        }
        if !labels.is_empty() && labels.len() != z.rows() {
            return Err(Error::param("one label per latent row required"));
        }
        Ok(Self { z, labels })
    }

    /// `z ~ N(0, I)`; labels from `label_probs`, or uniform over `label_count` classes.
    pub fn sample(
        rng: &mut Rng,
        batch: usize,
        latent_dim: usize,
        label_count: usize,
        label_probs: Option<&[f64]>,
    ) -> Result<Self> {
        let z = gaussian_sample(rng, batch, latent_dim, 0.0, 1.0)?;
        let labels = if label_count == 0 {
            Vec::new()
        } else {
            let uniform = vec![1.0; label_count];
            let p = label_probs.unwrap_or(&uniform);
            if p.len() != label_count {
                return Err(Error::param("label_probs length must equal the label count"));
            }
            (0..batch).map(|_| rng.categorical(p)).collect()
        };
        Self::new(z, labels)
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorNet {
    layers: Vec<Layer>,
    latent_dim: usize,
    label_count: usize,
    schema: Schema,
    head_blocks: Vec<Block>,
    mode: Mode,
    cache: Option<Cache>,
}

impl GeneratorNet {
    /// He-initialized weights, zero biases, BN scale 1 / shift 0, running stats (0, 1).
    pub fn init(schema: &Schema, latent_dim: usize, hidden_dims: &[usize], rng: &mut Rng) -> Result<Self> {
        if hidden_dims.is_empty() {
            return Err(Error::param("generator needs at least one hidden layer"));
        }
        if latent_dim == 0 || hidden_dims.contains(&0) {
            return Err(Error::param("latent and hidden widths must be positive"));
        }
        schema.validate()?;
        let label_count = schema.label_count();
        let head_width = schema.feature_width();
        if head_width == 0 {
            return Err(Error::param("schema has no feature columns besides the label"));
        }
        let mut layers = Vec::new();
        let mut fan_in = latent_dim + label_count;
        for &h in hidden_dims {
            layers.push(he_linear(fan_in, h, rng)?);
            layers.push(Layer::BatchNorm {
                gamma: Matrix::filled(1, h, 1.0),
                beta: Matrix::zeros(1, h),
                running_mean: vec![0.0; h],
                running_var: vec![1.0; h],
            });
            layers.push(Layer::Relu);
            fan_in = h;
        }
        layers.push(he_linear(fan_in, head_width, rng)?);
        Self::from_layers(schema, latent_dim, layers)
    }

    fn from_layers(schema: &Schema, latent_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let label_count = schema.label_count();
        let head_blocks: Vec<Block> = schema
            .layout()
            .into_iter()
            .filter(|b| Some(b.column) != schema.label_index())
            .collect();
        let net = Self {
            layers,
            latent_dim,
            label_count,
            schema: schema.clone(),
            head_blocks,
            mode: Mode::Train,
            cache: None,
        };
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        let mut width = self.latent_dim + self.label_count;
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Linear { weight, bias } => {
                    if weight.rows() != width || bias.shape() != (1, weight.cols()) {
                        return Err(Error::param(format!("layer {i}: linear shape mismatch")));
                    }
                    width = weight.cols();
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    if gamma.shape() != (1, width)
                        || beta.shape() != (1, width)
                        || running_mean.len() != width
                        || running_var.len() != width
                    {
                        return Err(Error::param(format!("layer {i}: batchnorm shape mismatch")));
                    }
                }
                Layer::Relu => {}
            }
        }
        if width != self.schema.feature_width() {
            return Err(Error::param(format!(
                "generator head width {width} does not match schema feature width {}",
                self.schema.feature_width()
            )));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.cache = None;
    }

    /// Output width including the copied label block.
    pub fn output_width(&self) -> usize {
        self.schema.d_aug()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.data().len()).sum()
    }

    /// Trainable blocks in a fixed order: per linear `(weight, bias)`, per BN `(gamma, beta)`.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Linear { weight, bias } => out.extend([weight, bias]),
                Layer::BatchNorm { gamma, beta, .. } => out.extend([gamma, beta]),
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Linear { weight, bias } => out.extend([weight, bias]),
                Layer::BatchNorm { gamma, beta, .. } => out.extend([gamma, beta]),
                Layer::Relu => {}
            }
        }
        out
    }

    fn input(&self, batch: &LatentBatch) -> Result<Matrix> {
        if batch.z.cols() != self.latent_dim {
            return Err(Error::param(format!(
                "latent width {} does not match generator latent_dim {}",
                batch.z.cols(),
                self.latent_dim
            )));
        }
        if self.label_count == 0 {
            return Ok(batch.z.clone());
        }
        Ok(batch.z.hstack(&self.label_block(batch)?)?)
    }

    fn label_block(&self, batch: &LatentBatch) -> Result<Matrix> {
        if batch.labels.len() != batch.len() {
            return Err(Error::param("conditional generator needs one label per row"));
        }
        let mut oh = Matrix::zeros(batch.len(), self.label_count);
        for (r, &l) in batch.labels.iter().enumerate() {
            if l >= self.label_count {
                return Err(Error::param(format!("label {l} out of range")));
            }
            oh.set(r, l, 1.0);
        }
        Ok(oh)
    }

    /// Runs the net in its current mode. Train mode uses batch statistics,
    /// updates BN running stats and caches activations for [`backward`](Self::backward).
    pub fn forward(&mut self, batch: &LatentBatch) -> Result<Matrix> {
        match self.mode {
            Mode::Eval => self.forward_eval(batch),
            Mode::Train => self.forward_train(batch),
        }
    }

    /// Eval-mode pass on an immutable net.
    pub fn forward_eval(&self, batch: &LatentBatch) -> Result<Matrix> {
        let mut x = self.input(batch)?;
        for (i, l) in self.layers.iter().enumerate() {
            x = match l {
                Layer::Linear { weight, bias } => linear(&x, weight, bias)?,
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let inv: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    let mut y = x;
                    for r in 0..y.rows() {
                        for (j, v) in y.row_mut(r).iter_mut().enumerate() {
                            *v = gamma.get(0, j) * (*v - running_mean[j]) * inv[j] + beta.get(0, j);
                        }
                    }
                    y
                }
                Layer::Relu => x.map(|v| v.max(0.0)),
            };
            check_finite(&x, i)?;
        }
        let head = self.apply_head(&x);
        check_finite(&head, self.layers.len())?;
        self.append_label(head, batch)
    }

    fn forward_train(&mut self, batch: &LatentBatch) -> Result<Matrix> {
        self.forward_train_with(batch, BN_MOMENTUM)
    }

    /// Replaces every BN layer's running statistics with the exact statistics
    /// of its inputs on `batch`, leaving the trainable parameters unchanged.
    pub fn recalibrate_bn(&mut self, batch: &LatentBatch) -> Result<()> {
        let mode = self.mode;
        self.forward_train_with(batch, 0.0)?;
        self.cache = None;
        self.mode = mode;
        Ok(())
    }

    fn forward_train_with(&mut self, batch: &LatentBatch, momentum: f64) -> Result<Matrix> {
        let mut x = self.input(batch)?;
        let b = x.rows() as f64;
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter_mut().enumerate() {
            let (y, c) = match l {
                Layer::Linear { weight, bias } => {
                    let y = linear(&x, weight, bias)?;
                    (y, LayerCache::Linear { input: x })
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let mean = x.col_means();
                    let mut var = vec![0.0; x.cols()];
                    for r in x.row_iter() {
                        for ((v, xv), m) in var.iter_mut().zip(r).zip(&mean) {
                            *v += (xv - m) * (xv - m);
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= b);
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    let mut xhat = x;
                    let mut y = Matrix::zeros(xhat.rows(), xhat.cols());
                    for r in 0..xhat.rows() {
                        let xr = xhat.row_mut(r);
                        for j in 0..xr.len() {
                            xr[j] = (xr[j] - mean[j]) * inv_std[j];
                        }
                        let yr = y.row_mut(r);
                        for j in 0..yr.len() {
                            yr[j] = gamma.get(0, j) * xhat.get(r, j) + beta.get(0, j);
                        }
                    }
                    let unbias = if b > 1.0 { b / (b - 1.0) } else { 1.0 };
                    for j in 0..mean.len() {
                        running_mean[j] = momentum * running_mean[j] + (1.0 - momentum) * mean[j];
                        running_var[j] = momentum * running_var[j] + (1.0 - momentum) * var[j] * unbias;
                    }
                    (y, LayerCache::BatchNorm { xhat, inv_std })
                }
                Layer::Relu => (x.map(|v| v.max(0.0)), LayerCache::Relu { input: x }),
            };
            check_finite(&y, i)?;
            caches.push(c);
            x = y;
        }
        let head = self.apply_head(&x);
        check_finite(&head, self.layers.len())?;
        self.cache = Some(Cache {
            layers: caches,
            head: head.clone(),
        });
        self.append_label(head, batch)
    }

    fn apply_head(&self, pre: &Matrix) -> Matrix {
        let mut out = pre.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for b in &self.head_blocks {
                let block = &mut row[b.offset..b.offset + b.width];
                if b.categorical {
                    let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for v in block.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    block.iter_mut().for_each(|v| *v /= total);
                } else {
                    block[0] = 0.5 * (block[0].tanh() + 1.0);
                }
            }
        }
        out
    }

    fn append_label(&self, head: Matrix, batch: &LatentBatch) -> Result<Matrix> {
        if self.label_count == 0 {
            return Ok(head);
        }
        head.hstack(&self.label_block(batch)?)
    }

    /// Parameter gradients of `Σ upstream ⊙ output` for the last train-mode
    /// forward pass, in [`params`](Self::params) order. Consumes the cache.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<Vec<Matrix>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::state("backward called without a preceding train-mode forward"))?;
        let head_width = self.schema.feature_width();
        if upstream.rows() != cache.head.rows() || upstream.cols() != self.output_width() {
            return Err(Error::param(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                upstream.shape(),
                (cache.head.rows(), self.output_width())
            )));
        }
        // The label block is an input copy: its gradient stops here.
        let mut g = upstream.columns(0, head_width);
        for r in 0..g.rows() {
            let y = cache.head.row(r);
            let gr = g.row_mut(r);
            for b in &self.head_blocks {
                let range = b.offset..b.offset + b.width;
                if b.categorical {
                    let p = &y[range.clone()];
                    let gb = &mut gr[range];
                    let dot: f64 = p.iter().zip(gb.iter()).map(|(a, c)| a * c).sum();
                    for (gv, pv) in gb.iter_mut().zip(p) {
                        *gv = pv * (*gv - dot);
                    }
                } else {
                    let t = 2.0 * y[b.offset] - 1.0;
                    gr[b.offset] *= 0.5 * (1.0 - t * t);
                }
            }
        }

        let bsz = g.rows() as f64;
        let mut grads_rev: Vec<Matrix> = Vec::new();
        for (l, c) in self.layers.iter().zip(cache.layers.iter()).rev() {
            g = match (l, c) {
                (Layer::Linear { weight, .. }, LayerCache::Linear { input }) => {
                    let dw = input.t_matmul(&g)?;
                    let db = Matrix::row_vector(g.col_sums());
                    let dx = g.matmul_t(weight)?;
                    grads_rev.push(db);
                    grads_rev.push(dw);
                    dx
                }
                (Layer::BatchNorm { gamma, .. }, LayerCache::BatchNorm { xhat, inv_std }) => {
                    let f = g.cols();
                    let mut dgamma = vec![0.0; f];
                    let mut dbeta = vec![0.0; f];
                    for r in 0..g.rows() {
                        for j in 0..f {
                            dgamma[j] += g.get(r, j) * xhat.get(r, j);
                            dbeta[j] += g.get(r, j);
                        }
                    }
                    let mut dx = Matrix::zeros(g.rows(), f);
                    for r in 0..g.rows() {
                        for j in 0..f {
                            let v = bsz * g.get(r, j) - dbeta[j] - xhat.get(r, j) * dgamma[j];
                            dx.set(r, j, gamma.get(0, j) * inv_std[j] / bsz * v);
                        }
                    }
                    grads_rev.push(Matrix::row_vector(dbeta));
                    grads_rev.push(Matrix::row_vector(dgamma));
                    dx
                }
                (Layer::Relu, LayerCache::Relu { input }) => {
                    let mut dx = g;
                    for (d, x) in dx.data_mut().iter_mut().zip(input.data()) {
                        if *x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    dx
                }
                _ => return Err(Error::state("activation cache does not match layers")),
            };
        }
        grads_rev.reverse();
        Ok(grads_rev)
    }

    /// Maps one output row back to a concrete record.
    pub fn decode(&self, row: &[f64]) -> Result<Record> {
        decode_row(row, &self.schema)
    }

    pub fn to_checkpoint(&self, train_config_echo: serde_json::Value) -> Checkpoint {
        let mut layers = Vec::new();
        let mut bn_running_stats = Vec::new();
        for l in &self.layers {
            layers.push(match l {
                Layer::Linear { weight, bias } => LayerRecord {
                    kind: LayerKind::Linear,
                    shapes: vec![[weight.rows(), weight.cols()], [1, bias.cols()]],
                    params: vec![weight.data().to_vec(), bias.data().to_vec()],
                },
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    bn_running_stats.push(BnStats {
                        mean: running_mean.clone(),
                        var: running_var.clone(),
                    });
                    LayerRecord {
                        kind: LayerKind::BatchNorm,
                        shapes: vec![[1, gamma.cols()], [1, beta.cols()]],
                        params: vec![gamma.data().to_vec(), beta.data().to_vec()],
                    }
                }
                Layer::Relu => LayerRecord {
                    kind: LayerKind::Relu,
                    shapes: vec![],
                    params: vec![],
                },
            });
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            schema_hash: self.schema.hash(),
            latent_dim: self.latent_dim,
            label_count: self.label_count,
            layers,
            bn_running_stats,
            train_config_echo,
            schema: self.schema.clone(),
            label_probs: None,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::artifact(format!("unsupported checkpoint version {}", ck.version)));
        }
        if ck.schema.hash() != ck.schema_hash {
            return Err(Error::artifact("checkpoint schema hash mismatch"));
        }
        if ck.schema.label_count() != ck.label_count {
            return Err(Error::artifact("checkpoint label count disagrees with schema"));
        }
        let mut bn = ck.bn_running_stats.iter();
        let mut layers = Vec::with_capacity(ck.layers.len());
        let mat = |rec: &LayerRecord, i: usize| -> Result<Matrix> {
            let [r, c] = *rec.shapes.get(i).ok_or_else(|| Error::artifact("missing layer shape"))?;
            let data = rec.params.get(i).ok_or_else(|| Error::artifact("missing layer params"))?;
            Matrix::new(r, c, data.clone()).map_err(|e| Error::artifact(e.to_string()))
        };
        for rec in &ck.layers {
            layers.push(match rec.kind {
                LayerKind::Linear => Layer::Linear {
                    weight: mat(rec, 0)?,
                    bias: mat(rec, 1)?,
                },
                LayerKind::BatchNorm => {
                    let stats = bn.next().ok_or_else(|| Error::artifact("missing BN running stats"))?;
                    Layer::BatchNorm {
                        gamma: mat(rec, 0)?,
                        beta: mat(rec, 1)?,
                        running_mean: stats.mean.clone(),
                        running_var: stats.var.clone(),
                    }
                }
                LayerKind::Relu => Layer::Relu,
            });
        }
        let mut net = Self::from_layers(&ck.schema, ck.latent_dim, layers).map_err(|e| Error::artifact(e.to_string()))?;
        if net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::artifact("checkpoint contains non-finite parameters"));
        }
        net.mode = Mode::Eval;
        Ok(net)
    }
}

fn he_linear(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Layer> {
    let std = (2.0 / fan_in as f64).sqrt();
    Ok(Layer::Linear {
        weight: gaussian_sample(rng, fan_in, fan_out, 0.0, std)?,
        bias: Matrix::zeros(1, fan_out),
    })
}

fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut y = x.matmul(w)?;
    y.add_row_broadcast(b.data())?;
    Ok(y)
}

fn check_finite(m: &Matrix, layer: usize) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::NumericFailure {
            context: format!("generator layer {layer}"),
            message: "non-finite activation".into(),
        });
    }
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Linear,
    BatchNorm,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub kind: LayerKind,
    pub shapes: Vec<[usize; 2]>,
    pub params: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Generator checkpoint JSON. Carries its schema (and the released label
/// distribution, if any) so generation needs no other artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub schema_hash: String,
    pub latent_dim: usize,
    pub label_count: usize,
    pub layers: Vec<LayerRecord>,
    pub bn_running_stats: Vec<BnStats>,
    pub train_config_echo: serde_json::Value,
    pub schema: Schema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_probs: Option<Vec<f64>>,
}
