//! Command-line front end.
//!
//! `sanitize` is the only command that reads raw data. `train` consumes the
//! sanitized artifacts it leaves behind, so it can run anywhere.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::auxinfo::AuxRelease;
use crate::cfembed::SanitizedEmbeddingFile;
use crate::dataio::{encode, infer_schema, parse_records, read_records, write_synthetic, RawTable, Schema};
use crate::error::{Error, Result};
use crate::evalsuite::{evaluate, two_sample_demo, EvalConfig, TwoSampleConfig};
use crate::gennet::{Checkpoint, GeneratorNet};
use crate::numcore::Rng;
use crate::privacy::{epsilon_serde, LedgerExport, RdpLedger};
use crate::trainloop::{generate, plan_releases, prepare, train, Prepared, TrainConfig, TrainState};

pub const OUT_DIR_ENV: &str = "PEARL_OUT_DIR";
pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EMBEDDING_FILE: &str = "embedding.json";
pub const AUX_FILE: &str = "aux.json";
pub const LEDGER_FILE: &str = "ledger.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_STATE_FILE: &str = "train_state.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_csv: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Contents of a `--config` file: training settings plus file locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub paths: Paths,
    pub label_column: Option<String>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// `PEARL_OUT_DIR` if set, else the configured directory, else `out`.
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cfsynth", version, about = "Differentially private data synthesis from sanitized characteristic-function embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Release auxiliary statistics and the sanitized embedding (reads raw data).
    Sanitize(SanitizeArgs),
    /// Train a generator from sanitized artifacts only.
    Train(TrainArgs),
    /// Sample synthetic records from a checkpoint.
    Generate(GenerateArgs),
    /// Compare synthetic to real records (MMD, range queries, 2-way marginals).
    Eval(EvalArgs),
    /// Two-sample test power of unoptimized, normal and optimized frequencies.
    DemoTwoSample(DemoArgs),
    /// Convert a ledger to (ε, δ).
    Accountant(AccountantArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

/// Flags shared by every pipeline command; they override `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long = "n-gen")]
    pub n_gen: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long = "lr-g")]
    pub lr_g: Option<f64>,
    #[arg(long = "lr-c")]
    pub lr_c: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nonprivate: bool,
    #[arg(long, value_enum)]
    pub critic: Option<Switch>,
    #[arg(long)]
    pub force: bool,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let t = &mut c.train;
        if let Some(v) = self.epsilon {
            t.budget.epsilon = v;
        }
        if let Some(v) = self.delta {
            t.budget.delta = v;
        }
        if let Some(v) = self.split {
            t.budget.split = v;
        }
        if let Some(v) = self.k {
            t.k = v;
        }
        if let Some(v) = self.iters {
            t.iters = v;
        }
        if let Some(v) = self.n_gen {
            t.n_gen = v;
        }
        if let Some(v) = self.batch {
            t.batch = v;
        }
        if let Some(v) = self.lr_g {
            t.lr_g = v;
        }
        if let Some(v) = self.lr_c {
            t.lr_c = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if self.nonprivate {
            t.nonprivate = true;
        }
        if let Some(s) = self.critic {
            t.critic_enabled = s == Switch::On;
        }
        t.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SanitizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Raw CSV; overrides `paths.data_csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Schema JSON; inferred from the CSV when absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Label column, used when inferring the schema.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory holding the sanitize artifacts; defaults to the output directory.
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
    /// Continue from the last saved train state in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 11_000)]
    pub count: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synth: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 5, 10, 20])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long = "n-per-sample", default_value_t = 1000)]
    pub n_per_sample: usize,
    #[arg(long, default_value_t = 200)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub shift: f64,
}

#[derive(Debug, Clone, Args)]
pub struct AccountantArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
}

/// Provenance block embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
}

impl Provenance {
    fn new<T: Serialize>(config: &T) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        }
    }
}

/// Adds a `provenance` key to a serialized artifact and writes it.
fn write_json<T: Serialize>(path: &Path, value: &T, provenance: &Provenance) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("provenance".into(), serde_json::to_value(provenance)?);
    }
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_artifact<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::artifact(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::artifact(format!("{}: {e}", path.display())))
}

/// Result line printed to stdout by each command.
pub type Summary = serde_json::Value;

pub fn cmd_sanitize(args: &SanitizeArgs) -> Result<Summary> {
    let config = args.common.resolve()?;
    let out = config.out_dir();
    let targets = [EMBEDDING_FILE, AUX_FILE, LEDGER_FILE, SCHEMA_FILE].map(|f| out.join(f));
    if !args.common.force {
        if let Some(existing) = targets.iter().find(|p| p.exists()) {
            return Err(Error::state(format!(
                "{} already exists; sanitization is one-shot (pass --force to overwrite)",
                existing.display()
            )));
        }
    }
    let label = args.label.clone().or_else(|| config.label_column.clone());
    let schema_path = args.schema.clone().or_else(|| config.paths.schema.clone());
    let data_path = args
        .data
        .clone()
        .or_else(|| config.paths.data_csv.clone())
        .ok_or_else(|| Error::param("sanitize needs --data or paths.data_csv"))?;

    // Budget pre-flight happens before the CSV is opened.
    let has_label = match &schema_path {
        Some(p) => Schema::load(p)?.label_index().is_some(),
        None => label.is_some(),
    };
    let plan = plan_releases(&config.train, has_label)?;

    let table = RawTable::read(&data_path)?;
    let schema = match &schema_path {
        Some(p) => Schema::load(p)?,
        None => {
            log::warn!("schema inferred from the private data: column ranges and categories are not privatized");
            infer_schema(&table, label.as_deref())?
        }
    };
    let records = parse_records(&table, &schema)?;
    drop(table);
    let data = encode(&records, &schema)?;
    drop(records);

    let mut ledger = RdpLedger::new();
    let t = &config.train;
    let prepared = prepare(&plan, data, &schema, t.seed, t.k, t.sigma0_scale, &mut ledger)?;
    let delta = t.budget.delta;
    let eps = ledger.to_eps_delta(delta)?.epsilon;
    if !t.nonprivate && eps > t.budget.epsilon {
        return Err(Error::BudgetViolation(format!("ledger epsilon {eps} exceeds budget {}", t.budget.epsilon)));
    }

    std::fs::create_dir_all(&out)?;
    let prov = Provenance::new(&config);
    write_json(&targets[0], &prepared.embedding_file(&ledger, delta)?, &prov)?;
    write_json(&targets[1], &prepared.aux, &prov)?;
    write_json(&targets[2], &ledger.export(delta)?, &prov)?;
    write_json(&targets[3], &schema, &prov)?;
    Ok(serde_json::json!({
        "command": "sanitize",
        "out_dir": out,
        "epsilon": epsilon_value(eps),
        "delta": delta,
        "k": prepared.freqs.k(),
        "d": prepared.freqs.dim(),
        "sigma0": prepared.aux.sigma0,
    }))
}

fn epsilon_value(eps: f64) -> serde_json::Value {
    if eps.is_finite() {
        serde_json::json!(eps)
    } else {
        serde_json::json!("inf")
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<Summary> {
    let config = args.common.resolve()?;
    let out = config.out_dir();
    let dir = args.artifacts.clone().unwrap_or_else(|| out.clone());
    let emb: SanitizedEmbeddingFile = read_artifact(&dir.join(EMBEDDING_FILE))?;
    let aux: AuxRelease = read_artifact(&dir.join(AUX_FILE))?;
    let schema: Schema = read_artifact(&dir.join(SCHEMA_FILE))?;
    let ledger_export: LedgerExport = read_artifact(&dir.join(LEDGER_FILE))?;
    let ledger = ledger_export.into_ledger()?;
    let prepared = Prepared::from_artifacts(&emb, aux, schema)?;

    let mut t = config.train.clone();
    t.budget.delta = emb.delta;
    let state_path = out.join(TRAIN_STATE_FILE);
    let resume = if args.resume && state_path.exists() {
        Some(read_artifact::<TrainState>(&state_path)?)
    } else {
        None
    };
    std::fs::create_dir_all(&out)?;
    let prov = Provenance::new(&t);
    let ck_path = out.join(CHECKPOINT_FILE);
    let (net, report) = train(&prepared, &ledger, &t, resume, |state| {
        write_json(&ck_path, &state.checkpoint, &prov)?;
        write_json(&state_path, state, &prov)
    })?;
    let mut ck = net.to_checkpoint(serde_json::to_value(&t)?);
    ck.label_probs = prepared.aux.label_probs.clone();
    write_json(&ck_path, &ck, &prov)?;
    write_json(&out.join(REPORT_FILE), &report, &prov)?;
    Ok(serde_json::json!({
        "command": "train",
        "out_dir": out,
        "iterations": report.iterations,
        "final_unweighted_cfd": report.final_unweighted_cfd(),
        "epsilon": epsilon_value(report.ledger.converted.epsilon),
    }))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<Summary> {
    let config = args.common.resolve()?;
    let out = config.out_dir();
    let ck_path = args.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let ck: Checkpoint = read_artifact(&ck_path)?;
    let net = GeneratorNet::from_checkpoint(&ck)?;
    let mut rng = Rng::new(config.train.seed).fork("generate");
    let records = generate(&net, args.count, &mut rng, ck.label_probs.as_deref())?;
    let output = args.output.clone().unwrap_or_else(|| out.join("synthetic.csv"));
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_synthetic(&records, net.schema(), &output)?;
    Ok(serde_json::json!({
        "command": "generate",
        "output": output,
        "count": records.len(),
        "seed": config.train.seed,
    }))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Summary> {
    let config = args.common.resolve()?;
    let out = config.out_dir();
    let schema_path = args
        .schema
        .clone()
        .or_else(|| config.paths.schema.clone())
        .unwrap_or_else(|| out.join(SCHEMA_FILE));
    let schema = Schema::load(&schema_path)?;
    let real = read_records(&args.real, &schema)?;
    let synth = read_records(&args.synth, &schema)?;
    let eval_config = EvalConfig {
        num_queries: args.queries,
        seed: config.train.seed,
        ..EvalConfig::default()
    };
    let report = evaluate(&real, &synth, &schema, &eval_config)?;
    std::fs::create_dir_all(&out)?;
    write_json(&out.join("eval.json"), &report, &Provenance::new(&eval_config))?;
    Ok(serde_json::to_value(&report)?)
}

pub fn cmd_demo_two_sample(args: &DemoArgs) -> Result<Summary> {
    let config = args.common.resolve()?;
    let out = config.out_dir();
    let demo = TwoSampleConfig {
        dims: args.dims.clone(),
        n_per_sample: args.n_per_sample,
        trials: args.trials,
        alpha: args.alpha,
        permutations: args.permutations,
        shift: args.shift,
        seed: config.train.seed,
        ..TwoSampleConfig::default()
    };
    let result = two_sample_demo(&demo)?;
    std::fs::create_dir_all(&out)?;
    write_json(&out.join("two_sample.json"), &result, &Provenance::new(&demo))?;
    std::fs::write(out.join("two_sample.csv"), result.to_csv())?;
    Ok(serde_json::to_value(&result)?)
}

#[derive(Debug, Serialize)]
struct AccountantOutput {
    #[serde(with = "epsilon_serde")]
    epsilon: f64,
    delta: f64,
    order: Option<f64>,
    events: usize,
}

pub fn cmd_accountant(args: &AccountantArgs) -> Result<Summary> {
    let export: LedgerExport = read_artifact(&args.ledger)?;
    let ledger = export.into_ledger()?;
    let r = ledger.to_eps_delta(args.delta)?;
    Ok(serde_json::to_value(AccountantOutput {
        epsilon: r.epsilon,
        delta: args.delta,
        order: r.order,
        events: ledger.events().len(),
    })?)
}

pub fn execute(cli: &Cli) -> Result<Summary> {
    match &cli.command {
        Command::Sanitize(a) => cmd_sanitize(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::DemoTwoSample(a) => cmd_demo_two_sample(a),
        Command::Accountant(a) => cmd_accountant(a),
    }
}

/// Machine-readable error written to stderr.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    })
    .to_string()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            e.exit_code()
        }
    }
}
