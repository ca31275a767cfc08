//! Utility metrics for synthetic data and the CF two-sample power demo.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{encode, ColumnKind, Record, Schema, Value};
use crate::error::{Error, Result};
use crate::numcore::{gaussian_sample, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled sample.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MmdEstimator {
    /// U-statistic; diagonal kernel terms excluded.
    Unbiased,
    /// V-statistic; exactly zero for identical samples.
    Biased,
}

/// Pooled points used by the median heuristic.
const MEDIAN_MAX_POINTS: usize = 2000;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise distance over an evenly strided subset of at most 2000 pooled points.
pub fn median_heuristic(x: &Matrix, y: &Matrix) -> Result<f64> {
    let pooled = x.vstack(y)?;
    let n = pooled.rows();
    let idx: Vec<usize> = if n <= MEDIAN_MAX_POINTS {
        (0..n).collect()
    } else {
        (0..MEDIAN_MAX_POINTS).map(|i| i * n / MEDIAN_MAX_POINTS).collect()
    };
    let mut d: Vec<f64> = idx
        .par_iter()
        .enumerate()
        .flat_map_iter(|(a, &i)| {
            let pooled = &pooled;
            idx[a + 1..].iter().map(move |&j| sq_dist(pooled.row(i), pooled.row(j)).sqrt())
        })
        .collect();
    if d.is_empty() {
        return Ok(0.0);
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    Ok(if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) })
}

fn kernel_sum(a: &Matrix, b: &Matrix, gamma: f64, skip_diag: bool) -> f64 {
    let partial: Vec<f64> = (0..a.rows())
        .into_par_iter()
        .map(|i| {
            let ai = a.row(i);
            let mut s = 0.0;
            for j in 0..b.rows() {
                if skip_diag && i == j {
                    continue;
                }
                s += (-gamma * sq_dist(ai, b.row(j))).exp();
            }
            s
        })
        .collect();
    partial.iter().sum()
}

/// Squared MMD with kernel `exp(−‖x−y‖²/(2h²))`.
pub fn mmd(real: &Matrix, synth: &Matrix, bandwidth: Bandwidth, estimator: MmdEstimator) -> Result<f64> {
    let (n, m) = (real.rows(), synth.rows());
    if n < 2 || m < 2 {
        return Err(Error::param("mmd needs at least 2 rows per sample"));
    }
    if real.cols() != synth.cols() {
        return Err(Error::param("mmd samples differ in dimension"));
    }
    let mut h = match bandwidth {
        Bandwidth::Auto => median_heuristic(real, synth)?,
        Bandwidth::Fixed(h) => h,
    };
    if !(h > 0.0) || !h.is_finite() {
        log::warn!("degenerate MMD bandwidth {h}; falling back to 1");
        h = 1.0;
    }
    let gamma = 1.0 / (2.0 * h * h);
    let (nf, mf) = (n as f64, m as f64);
    let kxy = kernel_sum(real, synth, gamma, false) / (nf * mf);
    Ok(match estimator {
        MmdEstimator::Unbiased => {
            let kxx = kernel_sum(real, real, gamma, true) / (nf * (nf - 1.0));
            let kyy = kernel_sum(synth, synth, gamma, true) / (mf * (mf - 1.0));
            kxx + kyy - 2.0 * kxy
        }
        MmdEstimator::Biased => {
            let kxx = kernel_sum(real, real, gamma, false) / (nf * nf);
            let kyy = kernel_sum(synth, synth, gamma, false) / (mf * mf);
            (kxx + kyy - 2.0 * kxy).max(0.0)
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Predicate {
    Range(f64, f64),
    Set(Vec<bool>),
}

fn satisfies(v: &Value, p: &Predicate, categories: Option<&[String]>) -> bool {
    match (v, p) {
        (Value::Num(x), Predicate::Range(lo, hi)) => *x >= *lo && *x <= *hi,
        (Value::Cat(s), Predicate::Set(mask)) => categories
            .and_then(|c| c.iter().position(|x| x == s))
            .is_some_and(|i| mask[i]),
        _ => false,
    }
}

fn categories(schema: &Schema, col: usize) -> Option<&[String]> {
    match &schema.columns[col].kind {
        ColumnKind::Categorical { categories } => Some(categories),
        ColumnKind::Continuous { .. } => None,
    }
}

fn random_predicate(schema: &Schema, col: usize, rng: &mut Rng) -> Predicate {
    match &schema.columns[col].kind {
        ColumnKind::Continuous { range: [lo, hi] } => {
            let a = lo + rng.uniform() * (hi - lo);
            let b = lo + rng.uniform() * (hi - lo);
            Predicate::Range(a.min(b), a.max(b))
        }
        ColumnKind::Categorical { categories } => loop {
            let mask: Vec<bool> = categories.iter().map(|_| rng.uniform() < 0.5).collect();
            if mask.iter().any(|&b| b) {
                break Predicate::Set(mask);
            }
        },
    }
}

fn fraction(records: &[Record], schema: &Schema, query: &[(usize, Predicate)]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = records
        .iter()
        .filter(|r| query.iter().all(|(c, p)| satisfies(&r[*c], p, categories(schema, *c))))
        .count();
    hits as f64 / records.len() as f64
}

/// Mean absolute difference in the fraction of rows satisfying random
/// conjunctive range queries over `attrs_per_query` distinct columns.
pub fn range_query_error(
    real: &[Record],
    synth: &[Record],
    schema: &Schema,
    num_queries: usize,
    attrs_per_query: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let c = schema.columns.len();
    if c < attrs_per_query || attrs_per_query == 0 {
        return Err(Error::param(format!(
            "range queries over {attrs_per_query} attributes need at least that many columns (have {c})"
        )));
    }
    if num_queries == 0 {
        return Err(Error::param("num_queries must be >= 1"));
    }
    let queries: Vec<Vec<(usize, Predicate)>> = (0..num_queries)
        .map(|_| {
            let mut cols: Vec<usize> = (0..c).collect();
            rng.shuffle(&mut cols);
            cols[..attrs_per_query]
                .iter()
                .map(|&col| (col, random_predicate(schema, col, rng)))
                .collect()
        })
        .collect();
    let errs: Vec<f64> = queries
        .par_iter()
        .map(|q| (fraction(real, schema, q) - fraction(synth, schema, q)).abs())
        .collect();
    Ok(errs.iter().sum::<f64>() / num_queries as f64)
}

fn cell(v: &Value, schema: &Schema, col: usize, bins: usize) -> Option<usize> {
    match (&schema.columns[col].kind, v) {
        (ColumnKind::Continuous { range: [lo, hi] }, Value::Num(x)) => {
            let b = ((x - lo) / (hi - lo) * bins as f64).floor();
            Some((b.max(0.0) as usize).min(bins - 1))
        }
        (ColumnKind::Categorical { categories }, Value::Cat(s)) => categories.iter().position(|c| c == s),
        _ => None,
    }
}

fn cardinality(schema: &Schema, col: usize, bins: usize) -> usize {
    match &schema.columns[col].kind {
        ColumnKind::Continuous { .. } => bins,
        ColumnKind::Categorical { categories } => categories.len(),
    }
}

fn table(records: &[Record], schema: &Schema, a: usize, b: usize, bins: usize) -> Vec<f64> {
    let wb = cardinality(schema, b, bins);
    let mut t = vec![0.0; cardinality(schema, a, bins) * wb];
    let mut total = 0.0;
    for r in records {
        if let (Some(i), Some(j)) = (cell(&r[a], schema, a, bins), cell(&r[b], schema, b, bins)) {
            t[i * wb + j] += 1.0;
            total += 1.0;
        }
    }
    if total > 0.0 {
        t.iter_mut().for_each(|x| *x /= total);
    }
    t
}

/// Mean L1 distance between normalized 2-way contingency tables over all
/// column pairs; continuous columns use `bins` equal-width bins.
pub fn marginal_error(real: &[Record], synth: &[Record], schema: &Schema, bins: usize) -> Result<f64> {
    let c = schema.columns.len();
    if c < 2 || bins == 0 {
        return Err(Error::param("marginal error needs >= 2 columns and bins >= 1"));
    }
    let pairs: Vec<(usize, usize)> = (0..c).flat_map(|a| (a + 1..c).map(move |b| (a, b))).collect();
    let errs: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let tr = table(real, schema, a, b, bins);
            let ts = table(synth, schema, a, b, bins);
            tr.iter().zip(&ts).map(|(x, y)| (x - y).abs()).sum()
        })
        .collect();
    Ok(errs.iter().sum::<f64>() / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub num_queries: usize,
    pub attrs_per_query: usize,
    pub bins: usize,
    /// Rows per side fed to the MMD; larger inputs are subsampled.
    pub mmd_max_rows: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            num_queries: 1000,
            attrs_per_query: 3,
            bins: 10,
            mmd_max_rows: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mmd: f64,
    pub range_query_l1: f64,
    pub marginal_l1: f64,
    pub query_count: usize,
    pub seed: u64,
    pub config: EvalConfig,
}

fn subsample(m: &Matrix, max_rows: usize, rng: &mut Rng) -> Matrix {
    if m.rows() <= max_rows {
        return m.clone();
    }
    let mut idx: Vec<usize> = (0..m.rows()).collect();
    rng.shuffle(&mut idx);
    idx.truncate(max_rows);
    idx.sort_unstable();
    m.select_rows(&idx)
}

/// All three metrics; MMD is computed on the shared `[0,1]` encoding.
pub fn evaluate(real: &[Record], synth: &[Record], schema: &Schema, config: &EvalConfig) -> Result<EvalReport> {
    let root = Rng::new(config.seed);
    let r = encode(real, schema)?.features;
    let s = encode(synth, schema)?.features;
    let mut mrng = root.fork("mmd-subsample");
    let mmd_value = if r.rows() >= 2 && s.rows() >= 2 {
        mmd(
            &subsample(&r, config.mmd_max_rows, &mut mrng),
            &subsample(&s, config.mmd_max_rows, &mut mrng),
            Bandwidth::Auto,
            MmdEstimator::Unbiased,
        )?
    } else {
        return Err(Error::data("evaluation needs at least 2 real and 2 synthetic records"));
    };
    let range = range_query_error(
        real,
        synth,
        schema,
        config.num_queries,
        config.attrs_per_query,
        &mut root.fork("range-queries"),
    )?;
    let marg = marginal_error(real, synth, schema, config.bins)?;
    Ok(EvalReport {
        mmd: mmd_value,
        range_query_l1: range,
        marginal_l1: marg,
        query_count: config.num_queries,
        seed: config.seed,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleConfig {
    pub dims: Vec<usize>,
    pub n_per_sample: usize,
    pub trials: usize,
    pub alpha: f64,
    pub permutations: usize,
    pub num_freqs: usize,
    /// Mean shift of the first coordinate of Q.
    pub shift: f64,
    pub seed: u64,
}

impl Default for TwoSampleConfig {
    fn default() -> Self {
        Self {
            dims: vec![1, 2, 5, 10, 20],
            n_per_sample: 1000,
            trials: 100,
            alpha: 0.05,
            permutations: 200,
            num_freqs: 20,
            shift: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantRates {
    pub unoptimized: f64,
    pub normal: f64,
    pub optimized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleResult {
    pub dims: Vec<usize>,
    pub rates: Vec<VariantRates>,
    pub trials: usize,
    pub alpha: f64,
    pub config: TwoSampleConfig,
}

impl TwoSampleResult {
    pub fn rates_for(&self, d: usize) -> Option<VariantRates> {
        self.dims.iter().position(|&x| x == d).map(|i| self.rates[i])
    }

    /// `d,unoptimized,normal,optimized` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("d,unoptimized,normal,optimized\n");
        for (d, r) in self.dims.iter().zip(&self.rates) {
            s.push_str(&format!("{d},{},{},{}\n", r.unoptimized, r.normal, r.optimized));
        }
        s
    }
}

/// Weighted CFD statistic evaluated under label permutations.
///
/// `cos`/`sin` hold `cos(tᵢ·z)`/`sin(tᵢ·z)` for the pooled sample `z`, one row
/// per point; the first `n` rows are sample X.
struct PermutationTest<'a> {
    cos: &'a Matrix,
    sin: &'a Matrix,
    n: usize,
}

impl PermutationTest<'_> {
    fn statistic(&self, is_x: &[bool], weights: &[f64]) -> f64 {
        let k = weights.len();
        let (mut cx, mut sx, mut cy, mut sy) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        for (r, &x) in is_x.iter().enumerate() {
            let (c, s) = (self.cos.row(r), self.sin.row(r));
            let (ca, sa) = if x { (&mut cx, &mut sx) } else { (&mut cy, &mut sy) };
            for i in 0..k {
                if weights[i] != 0.0 {
                    ca[i] += c[i];
                    sa[i] += s[i];
                }
            }
        }
        let nx = self.n as f64;
        let ny = (is_x.len() - self.n) as f64;
        (0..k)
            .map(|i| weights[i] * ((cx[i] / nx - cy[i] / ny).powi(2) + (sx[i] / nx - sy[i] / ny).powi(2)))
            .sum()
    }

    /// Rejects when `(1 + #{perm ≥ observed})/(1 + P) ≤ α`.
    fn rejects(&self, weights: &[f64], permutations: usize, alpha: f64, rng: &mut Rng) -> bool {
        let total = self.cos.rows();
        let mut labels: Vec<bool> = (0..total).map(|r| r < self.n).collect();
        let observed = self.statistic(&labels, weights);
        let mut exceed = 0usize;
        for _ in 0..permutations {
            rng.shuffle(&mut labels);
            if self.statistic(&labels, weights) >= observed {
                exceed += 1;
            }
        }
        (1 + exceed) as f64 / (1 + permutations) as f64 <= alpha
    }
}

fn trig(z: &Matrix, freqs: &Matrix) -> Result<(Matrix, Matrix)> {
    let p = z.matmul_t(freqs)?;
    Ok((p.map(f64::cos), p.map(f64::sin)))
}

fn one_trial(d: usize, trial: usize, config: &TwoSampleConfig, root: &Rng) -> Result<[bool; 3]> {
    let mut rng = root.fork(&format!("trial-{d}-{trial}"));
    let n = config.n_per_sample;
    let k = config.num_freqs;
    let x = gaussian_sample(&mut rng, n, d, 0.0, 1.0)?;
    let mut y = gaussian_sample(&mut rng, n, d, 0.0, 1.0)?;
    for r in 0..n {
        y.row_mut(r)[0] += config.shift;
    }
    let z = x.vstack(&y)?;

    // Row 0 is t₀, the only frequency with a non-zero first coordinate.
    let mut unopt = gaussian_sample(&mut rng, k, d, 0.0, 1.0)?;
    for i in 1..k {
        unopt.set(i, 0, 0.0);
    }
    let normal = gaussian_sample(&mut rng, k, d, 0.0, 1.0)?;

    let uniform = vec![1.0; k];
    let mut one_hot = vec![0.0; k];
    one_hot[0] = 1.0;

    let (cu, su) = trig(&z, &unopt)?;
    let (cn, sn) = trig(&z, &normal)?;
    let tu = PermutationTest { cos: &cu, sin: &su, n };
    let tn = PermutationTest { cos: &cn, sin: &sn, n };
    let (p, a) = (config.permutations, config.alpha);
    Ok([
        tu.rejects(&uniform, p, a, &mut rng.fork("perm-unoptimized")),
        tn.rejects(&uniform, p, a, &mut rng.fork("perm-normal")),
        tu.rejects(&one_hot, p, a, &mut rng.fork("perm-optimized")),
    ])
}

/// Rejection rates of the CF permutation test between `N(0, I)` and
/// `N((shift, 0, …, 0), I)` for the unoptimized, normal and optimized
/// frequency sets.
pub fn two_sample_demo(config: &TwoSampleConfig) -> Result<TwoSampleResult> {
    if config.dims.is_empty() || config.dims.contains(&0) {
        return Err(Error::param("dims must be a nonempty list of positive dimensions"));
    }
    if config.trials == 0 || config.n_per_sample < 2 || config.num_freqs == 0 {
        return Err(Error::param("trials, n_per_sample and num_freqs must be positive"));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::param("alpha must lie in (0, 1)"));
    }
    let root = Rng::new(config.seed);
    let mut rates = Vec::with_capacity(config.dims.len());
    for &d in &config.dims {
        let outcomes: Vec<[bool; 3]> = (0..config.trials)
            .into_par_iter()
            .map(|t| one_trial(d, t, config, &root))
            .collect::<Result<_>>()?;
        let rate = |v: usize| outcomes.iter().filter(|o| o[v]).count() as f64 / config.trials as f64;
        rates.push(VariantRates {
            unoptimized: rate(0),
            normal: rate(1),
            optimized: rate(2),
        });
    }
    Ok(TwoSampleResult {
        dims: config.dims.clone(),
        rates,
        trials: config.trials,
        alpha: config.alpha,
        config: config.clone(),
    })
}
