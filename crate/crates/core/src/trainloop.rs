//! Training orchestration.
//!
//! [`plan_releases`] fixes every noise scale before data is touched.
//! [`prepare`] then consumes the encoded data once: it releases the auxiliary
//! statistics, draws the frequencies from ω₀ and sanitizes the embedding.
//! [`train`] sees only the sanitized [`Prepared`] artifacts, so nothing it
//! does can change the privacy ledger.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::auxinfo::{AuxRelease, AuxReleaser};
use crate::cfembed::{
    cfd, embed, loss_and_grad_points, loss_grad_logstd, sanitize, sanitize_nonprivate, weighted_cfd, CfEmbedding,
    SanitizedEmbeddingFile,
};
use crate::dataio::{EncodedDataset, Record, Schema};
use crate::error::{Error, Result};
use crate::freqdist::{importance_weights, sample_frequencies, FrequencyMatrix, SamplingDistribution};
use crate::gennet::{Checkpoint, GeneratorNet, LatentBatch, Mode};
use crate::numcore::{AdamState, Matrix, Rng};
use crate::privacy::{split_budget, BudgetPlan, DpBudget, LedgerExport, RdpLedger};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub iters: usize,
    pub n_gen: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_c: f64,
    pub normalize_weights: bool,
    /// Critic std bounds as multiples of σ₀.
    pub clamp_range: (f64, f64),
    pub seed: u64,
    pub budget: DpBudget,
    pub nonprivate: bool,
    pub critic_enabled: bool,
    pub label_hist_enabled: bool,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Multiplies the released σ₀ before frequencies are drawn. Only useful
    /// for studying a mis-scaled base distribution.
    pub sigma0_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 1000,
            iters: 8000,
            n_gen: 5,
            batch: 1100,
            lr_g: 0.01,
            lr_c: 0.01,
            normalize_weights: true,
            clamp_range: (0.1, 10.0),
            seed: 0,
            budget: DpBudget::default(),
            nonprivate: false,
            critic_enabled: true,
            label_hist_enabled: true,
            latent_dim: 16,
            hidden: vec![256, 256],
            sigma0_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_gen == 0 || self.batch == 0 || self.latent_dim == 0 {
            return Err(Error::param("k, n_gen, batch and latent_dim must be >= 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::param("hidden widths must be a nonempty list of positive sizes"));
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_c", self.lr_c), ("sigma0_scale", self.sigma0_scale)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        let (lo, hi) = self.clamp_range;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            return Err(Error::param(format!("clamp_range must satisfy 0 < low <= 1 <= high, got ({lo}, {hi})")));
        }
        if !self.nonprivate {
            self.budget.validate()?;
        }
        Ok(())
    }

    pub fn checkpoint_every(&self) -> usize {
        (self.iters / 20).max(1)
    }
}

/// Same configuration with every release made without noise.
pub fn nonprivate_mode(config: &TrainConfig) -> TrainConfig {
    TrainConfig {
        nonprivate: true,
        ..config.clone()
    }
}

/// Noise multipliers for each release; `None` in non-private mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleasePlan {
    pub budget: Option<BudgetPlan>,
    pub label_hist: bool,
}

impl ReleasePlan {
    fn sigma_cf(&self) -> Option<f64> {
        self.budget.map(|b| b.sigma_cf)
    }

    fn sigma_aux(&self) -> Option<f64> {
        self.budget.map(|b| b.sigma_aux)
    }
}

/// Validates the config and composes the planned releases against the budget.
/// Needs only to know whether a label column exists, so it can run before
/// any data is read.
pub fn plan_releases(config: &TrainConfig, has_label: bool) -> Result<ReleasePlan> {
    config.validate()?;
    let label_hist = config.label_hist_enabled && has_label;
    let budget = if config.nonprivate {
        None
    } else {
        Some(split_budget(&config.budget, 1 + label_hist as usize)?)
    };
    Ok(ReleasePlan { budget, label_hist })
}

/// Everything training needs, none of which is raw data.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub schema: Schema,
    pub freqs: FrequencyMatrix,
    pub target: CfEmbedding,
    pub base: SamplingDistribution,
    pub aux: AuxRelease,
}

impl Prepared {
    pub fn embedding_file(&self, ledger: &RdpLedger, delta: f64) -> Result<SanitizedEmbeddingFile> {
        let eps = ledger.to_eps_delta(delta)?.epsilon;
        SanitizedEmbeddingFile::new(&self.target, &self.freqs, &self.base.std(), eps, delta)
    }

    /// Rebuilds training inputs from persisted artifacts.
    pub fn from_artifacts(file: &SanitizedEmbeddingFile, aux: AuxRelease, schema: Schema) -> Result<Self> {
        let (freqs, target) = file.restore()?;
        if freqs.dim() != schema.d_aug() {
            return Err(Error::artifact(format!(
                "embedding dimension {} does not match schema width {}",
                freqs.dim(),
                schema.d_aug()
            )));
        }
        let base = SamplingDistribution::from_std(&file.sigma0).map_err(|e| Error::artifact(e.to_string()))?;
        if base.dim() != freqs.dim() {
            return Err(Error::artifact("sigma0 length does not match d"));
        }
        Ok(Self {
            schema,
            freqs,
            target,
            base,
            aux,
        })
    }

    pub fn label_probs(&self) -> Option<&[f64]> {
        self.aux.label_probs.as_deref()
    }
}

/// Steps (1)–(3): auxiliary releases, frequency draw and one-shot
/// sanitization. Takes the dataset by value and drops it before returning.
pub fn prepare(
    plan: &ReleasePlan,
    data: EncodedDataset,
    schema: &Schema,
    seed: u64,
    k: usize,
    sigma0_scale: f64,
    ledger: &mut RdpLedger,
) -> Result<Prepared> {
    if data.schema_hash != schema.hash() {
        return Err(Error::data("dataset was encoded with a different schema"));
    }
    if data.n < 2 {
        return Err(Error::data("need at least 2 records"));
    }
    if plan.label_hist && schema.label_index().is_none() {
        return Err(Error::param("release plan includes a label histogram but the schema has no label column"));
    }
    let root = Rng::new(seed);
    let mut releaser = AuxReleaser::new();
    releaser.release_mean_distance(&data.features, plan.sigma_aux(), &mut root.fork("aux-distance"), ledger)?;
    if plan.label_hist {
        let labels = data
            .labels
            .as_ref()
            .ok_or_else(|| Error::data("schema has a label column but the dataset carries no labels"))?;
        releaser.release_label_histogram(
            labels,
            schema.label_count(),
            plan.sigma_aux(),
            &mut root.fork("aux-labels"),
            ledger,
        )?;
    }
    let aux = releaser.finish()?;

    let base = SamplingDistribution::isotropic(schema.d_aug(), aux.sigma0 * sigma0_scale)?;
    let freqs = sample_frequencies(&base, k, &mut root.fork("frequencies"))?;

    let raw = embed(&data.features, &freqs)?;
    drop(data);
    let target = match plan.sigma_cf() {
        Some(sigma) => {
            let t = sanitize(&raw, sigma, &mut root.fork("sanitize"))?;
            ledger.charge_gaussian(crate::cfembed::cf_sensitivity(raw.k, raw.n_source)?, t.noise_std, "cf-embedding")?;
            t
        }
        None => {
            ledger.charge_nonprivate(crate::cfembed::cf_sensitivity(raw.k, raw.n_source)?, "cf-embedding");
            sanitize_nonprivate(&raw)?
        }
    };
    Ok(Prepared {
        schema: schema.clone(),
        freqs,
        target,
        base,
        aux,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iter: usize,
    /// Critic-weighted loss `Σ wᵢ eᵢ` before the iteration's first generator update.
    pub weighted_cfd: f64,
    pub unweighted_cfd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<IterLog>,
    pub final_critic_log_std: Vec<f64>,
    pub ledger: LedgerExport,
    pub wall_clock_secs: f64,
    pub iterations: usize,
}

impl TrainReport {
    pub fn final_unweighted_cfd(&self) -> Option<f64> {
        self.history.last().map(|h| h.unweighted_cfd)
    }
}

pub const TRAIN_STATE_VERSION: u32 = 1;

/// Resumable snapshot of the whole optimization state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub version: u32,
    /// Number of completed iterations.
    pub iteration: usize,
    pub freq_hash: String,
    pub checkpoint: Checkpoint,
    pub gen_adam: Vec<AdamState>,
    pub critic_log_std: Vec<f64>,
    pub critic_adam: AdamState,
    pub history: Vec<IterLog>,
}

/// The alternating optimizer: generator, its Adam moments and the critic.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: GeneratorNet,
    gen_adam: Vec<AdamState>,
    critic: SamplingDistribution,
    critic_adam: AdamState,
    iteration: usize,
    history: Vec<IterLog>,
    rng: Rng,
    config: TrainConfig,
}

impl Trainer {
    pub fn new(prepared: &Prepared, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = Rng::new(config.seed);
        let net = GeneratorNet::init(&prepared.schema, config.latent_dim, &config.hidden, &mut rng.fork("generator-init"))?;
        let gen_adam = net.params().iter().map(|p| AdamState::for_params(p, config.lr_g)).collect();
        let d = prepared.freqs.dim();
        Ok(Self {
            net,
            gen_adam,
            critic: prepared.base.clone(),
            critic_adam: AdamState::new(1, d, config.lr_c),
            iteration: 0,
            history: Vec::new(),
            rng,
            config: config.clone(),
        })
    }

    pub fn resume(prepared: &Prepared, config: &TrainConfig, state: TrainState) -> Result<Self> {
        if state.version != TRAIN_STATE_VERSION {
            return Err(Error::artifact(format!("unsupported train state version {}", state.version)));
        }
        if state.freq_hash != prepared.freqs.hash() {
            return Err(Error::artifact("train state belongs to a different frequency draw"));
        }
        let mut net = GeneratorNet::from_checkpoint(&state.checkpoint)?;
        net.set_mode(Mode::Train);
        if state.gen_adam.len() != net.params().len() {
            return Err(Error::artifact("optimizer state does not match generator"));
        }
        Ok(Self {
            net,
            gen_adam: state.gen_adam,
            critic: SamplingDistribution::from_log_std(state.critic_log_std).map_err(|e| Error::artifact(e.to_string()))?,
            critic_adam: state.critic_adam,
            iteration: state.iteration,
            history: state.history,
            rng: Rng::new(config.seed),
            config: config.clone(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn critic(&self) -> &SamplingDistribution {
        &self.critic
    }

    pub fn history(&self) -> &[IterLog] {
        &self.history
    }

    pub fn weights(&self, prepared: &Prepared) -> Result<Vec<f64>> {
        if self.config.critic_enabled {
            importance_weights(&self.critic, &prepared.base, &prepared.freqs, self.config.normalize_weights)
        } else {
            Ok(vec![1.0; prepared.freqs.k()])
        }
    }

    /// One outer iteration: `n_gen` generator descents, then one critic ascent.
    pub fn step(&mut self, prepared: &Prepared) -> Result<IterLog> {
        let it = self.iteration;
        let mut rng = self.rng.fork(&format!("latent-{it}"));
        let weights = self.weights(prepared)?;
        let mut log = None;
        let mut last_gen = None;
        for _ in 0..self.config.n_gen {
            let batch = LatentBatch::sample(
                &mut rng,
                self.config.batch,
                self.net.latent_dim(),
                self.net.label_count(),
                prepared.label_probs(),
            )?;
            let out = self.net.forward(&batch).map_err(|e| with_iter(e, it))?;
            let pl = loss_and_grad_points(&prepared.target, &out, &prepared.freqs, &weights)?;
            if log.is_none() {
                log = Some(IterLog {
                    iter: it,
                    weighted_cfd: pl.loss.value,
                    unweighted_cfd: cfd(&pl.generated, &prepared.target)?.value,
                });
            }
            let grads = self.net.backward(&pl.grad)?;
            for ((p, g), a) in self.net.params_mut().into_iter().zip(&grads).zip(&mut self.gen_adam) {
                a.step(p, g).map_err(|e| with_iter(e, it))?;
            }
            last_gen = Some(pl.generated);
        }
        if self.config.critic_enabled {
            let gen = last_gen.expect("n_gen >= 1");
            critic_step(
                &mut self.critic,
                &mut self.critic_adam,
                &prepared.target,
                &gen,
                prepared,
                &self.config,
            )
            .map_err(|e| with_iter(e, it))?;
        }
        let log = log.expect("n_gen >= 1");
        if !log.weighted_cfd.is_finite() {
            return Err(Error::NumericFailure {
                context: format!("iteration {it}"),
                message: "non-finite loss".into(),
            });
        }
        self.history.push(log);
        self.iteration += 1;
        Ok(log)
    }

    pub fn state(&self, prepared: &Prepared) -> TrainState {
        TrainState {
            version: TRAIN_STATE_VERSION,
            iteration: self.iteration,
            freq_hash: prepared.freqs.hash().to_string(),
            checkpoint: self.checkpoint(prepared),
            gen_adam: self.gen_adam.clone(),
            critic_log_std: self.critic.log_std().to_vec(),
            critic_adam: self.critic_adam.clone(),
            history: self.history.clone(),
        }
    }

    pub fn checkpoint(&self, prepared: &Prepared) -> Checkpoint {
        let echo = serde_json::to_value(&self.config).unwrap_or(serde_json::Value::Null);
        let mut ck = self.net.to_checkpoint(echo);
        ck.label_probs = prepared.aux.label_probs.clone();
        ck
    }
}

fn with_iter(e: Error, it: usize) -> Error {
    match e {
        Error::NumericFailure { context, message } => Error::NumericFailure {
            context: format!("iteration {it}: {context}"),
            message,
        },
        other => other,
    }
}

/// One Adam ascent step of the critic's log-std on the weighted CFD at a
/// frozen generated embedding, followed by clamping around σ₀.
pub fn critic_step(
    critic: &mut SamplingDistribution,
    adam: &mut AdamState,
    target: &CfEmbedding,
    generated: &CfEmbedding,
    prepared: &Prepared,
    config: &TrainConfig,
) -> Result<()> {
    let g = loss_grad_logstd(target, generated, &prepared.freqs, critic, &prepared.base, config.normalize_weights)?;
    let mut params = Matrix::row_vector(critic.log_std().to_vec());
    adam.ascend(&mut params, &Matrix::row_vector(g))?;
    critic.set_log_std(params.data())?;
    critic.clamp_relative_to(&prepared.base, config.clamp_range.0, config.clamp_range.1)
}

/// Step (4): runs the remaining iterations. `on_checkpoint` is called every
/// [`TrainConfig::checkpoint_every`] iterations and after the last one.
pub fn train(
    prepared: &Prepared,
    ledger: &RdpLedger,
    config: &TrainConfig,
    resume: Option<TrainState>,
    mut on_checkpoint: impl FnMut(&TrainState) -> Result<()>,
) -> Result<(GeneratorNet, TrainReport)> {
    let start = Instant::now();
    let mut trainer = match resume {
        Some(s) => Trainer::resume(prepared, config, s)?,
        None => Trainer::new(prepared, config)?,
    };
    let every = config.checkpoint_every();
    while trainer.iteration() < config.iters {
        trainer.step(prepared)?;
        let it = trainer.iteration();
        if it % every == 0 || it == config.iters {
            on_checkpoint(&trainer.state(prepared))?;
        }
    }
    let report = TrainReport {
        history: trainer.history.clone(),
        final_critic_log_std: trainer.critic.log_std().to_vec(),
        ledger: ledger.export(config.budget.delta)?,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        iterations: trainer.iteration(),
    };
    let mut net = trainer.net;
    net.set_mode(Mode::Eval);
    Ok((net, report))
}

/// Full pipeline on encoded data. Returns the trained net, its report, the
/// prepared artifacts and the ledger.
pub fn run(
    data: EncodedDataset,
    schema: &Schema,
    config: &TrainConfig,
) -> Result<(GeneratorNet, TrainReport, Prepared, RdpLedger)> {
    let plan = plan_releases(config, schema.label_index().is_some())?;
    let mut ledger = RdpLedger::new();
    let prepared = prepare(&plan, data, schema, config.seed, config.k, config.sigma0_scale, &mut ledger)?;
    let (net, report) = train(&prepared, &ledger, config, None, |_| Ok(()))?;
    Ok((net, report, prepared, ledger))
}

const GENERATE_CHUNK: usize = 4096;

/// `m` encoded rows from an eval-mode forward pass.
pub fn generate_encoded(net: &GeneratorNet, m: usize, rng: &mut Rng, label_probs: Option<&[f64]>) -> Result<Matrix> {
    let mut out = Matrix::zeros(0, net.output_width());
    let mut left = m;
    while left > 0 {
        let b = left.min(GENERATE_CHUNK);
        let batch = LatentBatch::sample(rng, b, net.latent_dim(), net.label_count(), label_probs)?;
        out = out.vstack(&net.forward_eval(&batch)?)?;
        left -= b;
    }
    Ok(out)
}

/// `m` i.i.d. decoded records.
pub fn generate(net: &GeneratorNet, m: usize, rng: &mut Rng, label_probs: Option<&[f64]>) -> Result<Vec<Record>> {
    let rows = generate_encoded(net, m, rng, label_probs)?;
    rows.row_iter().map(|r| net.decode(r)).collect()
}

/// Weighted CFD between the target and `m` fresh eval-mode samples.
pub fn evaluate_cfd(net: &GeneratorNet, prepared: &Prepared, weights: &[f64], m: usize, rng: &mut Rng) -> Result<f64> {
    let rows = generate_encoded(net, m, rng, prepared.label_probs())?;
    let emb = embed(&rows, &prepared.freqs)?;
    Ok(weighted_cfd(&emb, &prepared.target, weights)?.value)
}
