//! Acceptance criteria. Prints one PASS/FAIL/SKIP line per criterion.
//! Failures make the process exit non-zero only when `ACCEPTANCE_STRICT` is set.
//!
//! `ACCEPTANCE_ONLY=1,5,10` restricts the run to the listed criteria.
//! Criterion 9 needs `CFSYNTH_ADULT_CSV` (and optionally `CFSYNTH_ADULT_LABEL`,
//! default `income`).

use std::time::{Duration, Instant};

use cfsynth::auxinfo::{mean_pairwise_distance, pairwise_sensitivity};
use cfsynth::cfembed::{
    cf_sensitivity, cfd, embed, loss_and_grad_points, loss_grad_logstd, sanitize_nonprivate, weighted_cfd, CfEmbedding,
};
use cfsynth::dataio::{decode_row, encode, read_records, Column, ColumnKind, Record, Schema, Value};
use cfsynth::evalsuite::{evaluate, mmd, two_sample_demo, Bandwidth, EvalConfig, MmdEstimator, TwoSampleConfig};
use cfsynth::freqdist::{
    importance_weights, sample_frequencies, weighted_expectation, weights_grad_logstd, FrequencyMatrix,
    SamplingDistribution,
};
use cfsynth::gennet::{GeneratorNet, LatentBatch};
use cfsynth::numcore::{gaussian_sample, Matrix, Rng};
use cfsynth::privacy::{calibrate_classic, RdpLedger};
use cfsynth::toydata::{gaussian_mixture_2d, mixture_schema};
use cfsynth::trainloop::{generate, generate_encoded, nonprivate_mode, plan_releases, prepare, run, train, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Option<Outcome> {
    Some(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    type Criterion = (usize, &'static str, Duration, fn() -> Option<Outcome>);
    let criteria: [Criterion; 10] = [
        (1, "sensitivity oracles", Duration::from_secs(10), c1_sensitivity),
        (2, "gradient suite", Duration::from_secs(30), c2_gradients),
        (3, "importance-weighted estimator consistency", Duration::from_secs(10), c3_importance),
        (4, "two-sample power ordering", Duration::from_secs(300), c4_two_sample),
        (5, "accountant", Duration::from_secs(1), c5_accountant),
        (6, "post-processing leaves ledger untouched", Duration::from_secs(300), c6_post_processing),
        (7, "end-to-end toy synthesis", Duration::from_secs(600), c7_toy_synthesis),
        (8, "critic ablation", Duration::from_secs(1200), c8_critic_ablation),
        (9, "adult-scale target", Duration::from_secs(3600), c9_adult),
        (10, "invariant fuzz suite", Duration::from_secs(60), c10_fuzz),
    ];
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = f();
        let took = start.elapsed();
        match result {
            None => println!("[acceptance] {id:>2} SKIP {name}"),
            Some(o) => {
                let in_time = took <= budget;
                let pass = o.pass && in_time;
                if !pass {
                    failed += 1;
                }
                println!(
                    "[acceptance] {id:>2} {} {name}: {} ({:.1}s of {}s{})",
                    if pass { "PASS" } else { "FAIL" },
                    o.detail,
                    took.as_secs_f64(),
                    budget.as_secs(),
                    if in_time { "" } else { ", over time" }
                );
            }
        }
    }
    if failed > 0 {
        println!("[acceptance] {failed} criteria failed");
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}

fn stacked_distance(a: &CfEmbedding, b: &CfEmbedding) -> f64 {
    a.re.iter()
        .zip(&b.re)
        .chain(a.im.iter().zip(&b.im))
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn c1_sensitivity() -> Option<Outcome> {
    let mut rng = Rng::new(1);
    let mut worst_cf: f64 = 0.0;
    let mut worst_pair: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..1000 {
        let n = 1 + rng.index(4);
        let d = 1 + rng.index(2);
        let k = 1 + rng.index(3);
        let freqs = FrequencyMatrix::new(gaussian_sample(&mut rng, k, d, 0.0, 3.0).unwrap()).unwrap();
        let x = gaussian_sample(&mut rng, n, d, 0.0, 2.0).unwrap();
        let mut y = x.clone();
        let r = rng.index(n);
        for v in y.row_mut(r) {
            *v = 2.0 * rng.standard_normal();
        }
        let delta = stacked_distance(&embed(&x, &freqs).unwrap(), &embed(&y, &freqs).unwrap());
        let bound = cf_sensitivity(k, n).unwrap();
        worst_cf = worst_cf.max(delta / bound);
        if delta > bound + 1e-12 {
            violations += 1;
        }

        let n = 2 + rng.index(3);
        let x = Matrix::new(n, d, (0..n * d).map(|_| rng.uniform()).collect()).unwrap();
        let mut y = x.clone();
        let r = rng.index(n);
        for v in y.row_mut(r) {
            *v = rng.uniform();
        }
        let change = (mean_pairwise_distance(&x).unwrap() - mean_pairwise_distance(&y).unwrap()).abs();
        let bound = pairwise_sensitivity(d, n).unwrap();
        worst_pair = worst_pair.max(change / bound);
        if change > bound + 1e-12 {
            violations += 1;
        }
    }
    // k = 1, t = 1: moving one record from phase 0 to phase π.
    let freqs = FrequencyMatrix::new(Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
    let mut attained_err: f64 = 0.0;
    for n in 1..=4usize {
        let mut rows: Vec<[f64; 1]> = (0..n - 1).map(|i| [0.3 * i as f64]).collect();
        let mut rows2 = rows.clone();
        rows.push([0.0]);
        rows2.push([std::f64::consts::PI]);
        let a = embed(&Matrix::from_rows(&rows).unwrap(), &freqs).unwrap();
        let b = embed(&Matrix::from_rows(&rows2).unwrap(), &freqs).unwrap();
        attained_err = attained_err.max((stacked_distance(&a, &b) - 2.0 / n as f64).abs());
    }
    outcome(
        violations == 0 && attained_err <= 1e-12,
        format!(
            "{violations} violations; max cf ratio {worst_cf:.4}, max pairwise ratio {worst_pair:.4}; pi-phase pair error {attained_err:.1e}"
        ),
    )
}

/// max |fd − analytic| / max(‖analytic‖∞, 1e-12)
fn rel_err(fd: &[f64], an: &[f64]) -> f64 {
    let scale = an.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    fd.iter().zip(an).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

fn sanitized_target(rng: &mut Rng, n: usize, freqs: &FrequencyMatrix) -> CfEmbedding {
    let data = gaussian_sample(rng, n, freqs.dim(), 0.0, 1.0).unwrap();
    sanitize_nonprivate(&embed(&data, freqs).unwrap()).unwrap()
}

fn c2_gradients() -> Option<Outcome> {
    let mut worst = [0.0f64; 4];
    for seed in 0..10u64 {
        let mut rng = Rng::new(1000 + seed);
        let (k, d, b) = (7, 3, 5);
        let freqs = FrequencyMatrix::new(gaussian_sample(&mut rng, k, d, 0.0, 1.5).unwrap()).unwrap();
        let target = sanitized_target(&mut rng, 20, &freqs);
        let weights: Vec<f64> = (0..k).map(|_| 0.2 + rng.uniform()).collect();
        let g = gaussian_sample(&mut rng, b, d, 0.0, 1.0).unwrap();

        // loss_grad_points
        let an = loss_and_grad_points(&target, &g, &freqs, &weights).unwrap().grad;
        let h = 1e-5;
        let loss = |m: &Matrix| loss_and_grad_points(&target, m, &freqs, &weights).unwrap().loss.value;
        let fd: Vec<f64> = (0..b * d)
            .map(|e| {
                let (mut up, mut dn) = (g.clone(), g.clone());
                up.data_mut()[e] += h;
                dn.data_mut()[e] -= h;
                (loss(&up) - loss(&dn)) / (2.0 * h)
            })
            .collect();
        worst[0] = worst[0].max(rel_err(&fd, an.data()));

        // loss_grad_logstd and weights_grad_logstd
        let base = SamplingDistribution::isotropic(d, 1.2).unwrap();
        let critic =
            SamplingDistribution::from_log_std((0..d).map(|_| 0.18 + 0.3 * rng.standard_normal()).collect()).unwrap();
        let gen = embed(&g, &freqs).unwrap();
        let normalize = seed % 2 == 0;
        let an = loss_grad_logstd(&target, &gen, &freqs, &critic, &base, normalize).unwrap();
        let e = cfd(&target, &gen).unwrap().per_frequency;
        let objective = |c: &SamplingDistribution| -> f64 {
            let w = importance_weights(c, &base, &freqs, normalize).unwrap();
            w.iter().zip(&e).map(|(a, b)| a * b).sum()
        };
        let shifted = |j: usize, s: f64| {
            let mut ls = critic.log_std().to_vec();
            ls[j] += s;
            SamplingDistribution::from_log_std(ls).unwrap()
        };
        let fd: Vec<f64> = (0..d)
            .map(|j| (objective(&shifted(j, h)) - objective(&shifted(j, -h))) / (2.0 * h))
            .collect();
        worst[1] = worst[1].max(rel_err(&fd, &an));

        let jac = weights_grad_logstd(&critic, &base, &freqs, normalize).unwrap();
        for j in 0..d {
            let up = importance_weights(&shifted(j, h), &base, &freqs, normalize).unwrap();
            let dn = importance_weights(&shifted(j, -h), &base, &freqs, normalize).unwrap();
            let fd: Vec<f64> = up.iter().zip(&dn).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let col: Vec<f64> = (0..k).map(|i| jac.get(i, j)).collect();
            worst[2] = worst[2].max(rel_err(&fd, &col));
        }

        // GeneratorNet::backward on Σ U ⊙ forward(θ)
        let schema = Schema::new(
            vec![
                Column::continuous("a", 0.0, 1.0),
                Column::categorical("c", &["x", "y", "z"]),
                Column::categorical("label", &["0", "1"]),
            ],
            Some("label".into()),
        )
        .unwrap();
        let mut net = GeneratorNet::init(&schema, 3, &[6, 5], &mut rng).unwrap();
        let batch = LatentBatch::sample(&mut rng, 8, 3, 2, None).unwrap();
        let u = gaussian_sample(&mut rng, 8, schema.d_aug(), 0.0, 1.0).unwrap();
        net.forward(&batch).unwrap();
        let grads = net.backward(&u).unwrap();
        let objective = |n: &GeneratorNet| -> f64 {
            let mut n = n.clone();
            let out = n.forward(&batch).unwrap();
            out.data().iter().zip(u.data()).map(|(a, b)| a * b).sum()
        };
        let hb = 1e-5;
        for (pi, g) in grads.iter().enumerate() {
            let fd: Vec<f64> = (0..g.data().len())
                .map(|e| {
                    let mut up = net.clone();
                    up.params_mut()[pi].data_mut()[e] += hb;
                    let mut dn = net.clone();
                    dn.params_mut()[pi].data_mut()[e] -= hb;
                    (objective(&up) - objective(&dn)) / (2.0 * hb)
                })
                .collect();
            // Pre-normalization biases have exactly zero gradient, so use an absolute floor.
            for (a, b) in fd.iter().zip(g.data()) {
                worst[3] = worst[3].max((a - b).abs() / a.abs().max(b.abs()).max(1e-4));
            }
        }
    }
    let pass = worst[0] < 1e-5 && worst[1] < 1e-5 && worst[2] < 1e-5 && worst[3] < 1e-4;
    outcome(
        pass,
        format!(
            "max rel err: points {:.1e}, logstd {:.1e}, weights {:.1e} (< 1e-5); backward {:.1e} (< 1e-4)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn c3_importance() -> Option<Outcome> {
    let base = SamplingDistribution::isotropic(1, 1.0).unwrap();
    let target = SamplingDistribution::from_std(&[0.5]).unwrap();
    let estimate = |k: usize, rng: &mut Rng| -> (f64, f64) {
        let freqs = sample_frequencies(&base, k, rng).unwrap();
        let w = importance_weights(&target, &base, &freqs, false).unwrap();
        let f: Vec<f64> = freqs.matrix().data().iter().map(|t| t * t).collect();
        let est = weighted_expectation(&f, &w).unwrap();
        let terms: Vec<f64> = w.iter().zip(&f).map(|(a, b)| a * b).collect();
        let var = terms.iter().map(|x| (x - est).powi(2)).sum::<f64>() / (k as f64 - 1.0);
        (est, (var / k as f64).sqrt())
    };
    let mut improved = 0;
    let mut within = 0;
    let mut first = (0.0, 0.0);
    for seed in 0..10u64 {
        let rng = Rng::new(seed);
        let (small, _) = estimate(1000, &mut rng.fork("k=1e3"));
        let (large, se) = estimate(100_000, &mut rng.fork("k=1e5"));
        if seed == 0 {
            first = (large, se);
        }
        if (large - 0.25).abs() <= 3.0 * se {
            within += 1;
        }
        if (large - 0.25).abs() < (small - 0.25).abs() {
            improved += 1;
        }
    }
    let (est, se) = first;
    outcome(
        (est - 0.25).abs() <= 3.0 * se && improved >= 8,
        format!(
            "k=1e5 estimate {est:.5} (se {se:.5}, {:.2} se from 0.25; {within}/10 seeds within 3 se); error shrank in {improved}/10 seeds",
            (est - 0.25).abs() / se
        ),
    )
}

fn c4_two_sample() -> Option<Outcome> {
    let cfg = TwoSampleConfig {
        dims: vec![5],
        n_per_sample: 1000,
        trials: 100,
        alpha: 0.05,
        permutations: 200,
        seed: 0,
        ..TwoSampleConfig::default()
    };
    let alt = two_sample_demo(&cfg).unwrap().rates_for(5).unwrap();
    let null = two_sample_demo(&TwoSampleConfig { shift: 0.0, ..cfg.clone() })
        .unwrap()
        .rates_for(5)
        .unwrap();
    let band = 3.0 * (0.05f64 * 0.95 / 100.0).sqrt();
    let calibrated = [null.unoptimized, null.normal, null.optimized]
        .iter()
        .all(|r| (r - 0.05).abs() <= band);
    let ordered = alt.optimized >= alt.unoptimized && alt.optimized >= alt.normal;
    outcome(
        ordered && calibrated,
        format!(
            "d=5 rejection rates unoptimized {:.2}, normal {:.2}, optimized {:.2}; null {:.2}/{:.2}/{:.2} (band 0.05 +- {band:.3})",
            alt.unoptimized, alt.normal, alt.optimized, null.unoptimized, null.normal, null.optimized
        ),
    )
}

fn c5_accountant() -> Option<Outcome> {
    let delta = 1e-5;
    let sigma = calibrate_classic(1.0, delta).unwrap();
    let mut single = RdpLedger::new();
    single.charge_gaussian(1.0, sigma, "single").unwrap();
    let eps_single = single.to_eps_delta(delta).unwrap().epsilon;

    let half_a = calibrate_classic(0.5, delta / 2.0).unwrap();
    let half_b = calibrate_classic(0.5, delta / 2.0).unwrap();
    let mut two = RdpLedger::new();
    two.charge_gaussian(1.0, half_a, "first").unwrap();
    two.charge_gaussian(1.0, half_b, "second").unwrap();
    let eps_two = two.to_eps_delta(delta).unwrap().epsilon;

    // Different releases in both orders.
    let (s1, s2) = (0.7, 3.3);
    let mut ab = RdpLedger::new();
    ab.charge_gaussian(0.2, s1, "a").unwrap();
    ab.charge_gaussian(1.7, s2, "b").unwrap();
    let mut ba = RdpLedger::new();
    ba.charge_gaussian(1.7, s2, "b").unwrap();
    ba.charge_gaussian(0.2, s1, "a").unwrap();
    let same_costs = ab.costs().iter().zip(ba.costs()).all(|(x, y)| x.to_bits() == y.to_bits());
    let same_eps =
        ab.to_eps_delta(delta).unwrap().epsilon.to_bits() == ba.to_eps_delta(delta).unwrap().epsilon.to_bits();
    outcome(
        eps_single <= 1.0 && eps_two <= 1.0 + 1e-9 && same_costs && same_eps,
        format!("single charge eps {eps_single:.4}; two half charges eps {eps_two:.4}; commutes bit-exactly: {}", same_costs && same_eps),
    )
}

fn c6_post_processing() -> Option<Outcome> {
    let schema = mixture_schema();
    let data = encode(&gaussian_mixture_2d(500, &mut Rng::new(3)), &schema).unwrap();
    let config = TrainConfig {
        k: 50,
        iters: 10_000,
        n_gen: 1,
        batch: 32,
        latent_dim: 4,
        hidden: vec![8],
        seed: 6,
        ..TrainConfig::default()
    };
    let plan = plan_releases(&config, false).unwrap();
    let mut ledger = RdpLedger::new();
    let prepared = prepare(&plan, data, &schema, config.seed, config.k, 1.0, &mut ledger).unwrap();
    let delta = config.budget.delta;
    let before = serde_json::to_string(&ledger.export(delta).unwrap()).unwrap();
    let snapshot = ledger.clone();
    let (_, report) = train(&prepared, &ledger, &config, None, |_| Ok(())).unwrap();
    let after = serde_json::to_string(&report.ledger).unwrap();
    let after_direct = serde_json::to_string(&ledger.export(delta).unwrap()).unwrap();
    outcome(
        before == after && before == after_direct && snapshot == ledger && report.iterations == 10_000,
        format!(
            "eps {} after sanitization, byte-identical after {} iterations: {}",
            report.ledger.converted.epsilon,
            report.iterations,
            before == after
        ),
    )
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        k: 500,
        iters: 2000,
        n_gen: 5,
        batch: 500,
        latent_dim: 8,
        hidden: vec![64, 64],
        seed: 0,
        ..TrainConfig::default()
    }
}

fn c7_toy_synthesis() -> Option<Outcome> {
    let schema = mixture_schema();
    let real = encode(&gaussian_mixture_2d(10_000, &mut Rng::new(7)), &schema).unwrap();
    let half_a = real.features.select_rows(&(0..5000).collect::<Vec<_>>());
    let half_b = real.features.select_rows(&(5000..10_000).collect::<Vec<_>>());
    let floor = mmd(&half_a, &half_b, Bandwidth::Auto, MmdEstimator::Biased).unwrap();

    let mut ratios = Vec::new();
    let mut cfd_drop = 0.0;
    for config in [nonprivate_mode(&toy_config()), toy_config()] {
        let (net, report, _, _) = run(real.clone(), &schema, &config).unwrap();
        if config.nonprivate {
            let first = report.history.first().unwrap().unweighted_cfd;
            cfd_drop = report.final_unweighted_cfd().unwrap() / first;
        }
        let synth = generate_encoded(&net, 5000, &mut Rng::new(99), None).unwrap();
        ratios.push(mmd(&synth, &half_a, Bandwidth::Auto, MmdEstimator::Biased).unwrap() / floor);
    }
    outcome(
        ratios[0] <= 3.0 && ratios[1] <= 10.0,
        format!(
            "noise floor {floor:.2e}; MMD^2 / floor: non-private {:.2} (<= 3), eps=1 {:.2} (<= 10); non-private cfd final/initial {cfd_drop:.3}",
            ratios[0], ratios[1]
        ),
    )
}

fn c8_critic_ablation() -> Option<Outcome> {
    let schema = mixture_schema();
    let real = encode(&gaussian_mixture_2d(10_000, &mut Rng::new(7)), &schema).unwrap();
    // Evaluation frequencies come from the correctly scaled base distribution.
    let sigma0 = 1.0 / mean_pairwise_distance(&real.features).unwrap();
    let eval_freqs =
        sample_frequencies(&SamplingDistribution::isotropic(2, sigma0).unwrap(), 1000, &mut Rng::new(1234)).unwrap();
    let real_emb = embed(&real.features, &eval_freqs).unwrap();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let mut cfds = [0.0; 2];
        for (i, critic_enabled) in [true, false].into_iter().enumerate() {
            let config = TrainConfig {
                iters: 1000,
                seed,
                sigma0_scale: 0.25,
                critic_enabled,
                ..toy_config()
            };
            let (net, _, _, _) = run(real.clone(), &schema, &config).unwrap();
            let g = generate_encoded(&net, 10_000, &mut Rng::new(500 + seed), None).unwrap();
            cfds[i] = cfd(&embed(&g, &eval_freqs).unwrap(), &real_emb).unwrap().value;
        }
        if cfds[0] <= cfds[1] {
            wins += 1;
        }
        pairs.push(format!("{:.2e}/{:.2e}", cfds[0], cfds[1]));
    }
    outcome(
        wins >= 4,
        format!("critic wins {wins}/5 (critic/no-critic final cfd: {})", pairs.join(", ")),
    )
}

fn c9_adult() -> Option<Outcome> {
    let path = std::env::var("CFSYNTH_ADULT_CSV").ok()?;
    let label = std::env::var("CFSYNTH_ADULT_LABEL").unwrap_or_else(|_| "income".into());
    let table = cfsynth::dataio::RawTable::read(std::path::Path::new(&path)).unwrap();
    let schema = cfsynth::dataio::infer_schema(&table, Some(&label)).unwrap();
    let real = read_records(std::path::Path::new(&path), &schema).unwrap();
    let config = TrainConfig::default();
    let (net, _, prepared, _) = run(encode(&real, &schema).unwrap(), &schema, &config).unwrap();
    let synth = generate(&net, 11_000, &mut Rng::new(11), prepared.label_probs()).unwrap();
    let report = evaluate(&real, &synth, &schema, &EvalConfig::default()).unwrap();
    outcome(
        report.marginal_l1 <= 1.0 && report.range_query_l1 <= 0.12,
        format!(
            "marginal L1 {:.3} (<= 1.0), range-query error {:.3} (<= 0.12), MMD^2 {:.2e}",
            report.marginal_l1, report.range_query_l1, report.mmd
        ),
    )
}

fn random_schema(rng: &mut Rng) -> Schema {
    let mut cols = Vec::new();
    let c = 1 + rng.index(4);
    for i in 0..c {
        if rng.uniform() < 0.5 {
            let lo = 10.0 * rng.standard_normal();
            cols.push(Column::continuous(&format!("n{i}"), lo, lo + 0.1 + 50.0 * rng.uniform()));
        } else {
            let cats: Vec<String> = (0..1 + rng.index(5)).map(|j| format!("v{j}")).collect();
            cols.push(Column::categorical(&format!("c{i}"), &cats));
        }
    }
    let label = rng.uniform() < 0.5;
    if label {
        cols.push(Column::categorical("label", &["no", "yes"]));
    }
    Schema::new(cols, label.then(|| "label".to_string())).unwrap()
}

fn random_record(schema: &Schema, rng: &mut Rng) -> Record {
    schema
        .columns
        .iter()
        .map(|c| match &c.kind {
            ColumnKind::Continuous { range: [lo, hi] } => Value::Num(lo + rng.uniform() * (hi - lo)),
            ColumnKind::Categorical { categories } => Value::Cat(categories[rng.index(categories.len())].clone()),
        })
        .collect()
}

fn c10_fuzz() -> Option<Outcome> {
    let mut rng = Rng::new(10);
    let mut failures: Vec<&str> = Vec::new();
    for _ in 0..1000 {
        let n = 1 + rng.index(30);
        let d = 1 + rng.index(4);
        let k = 1 + rng.index(20);
        let scale = 1.0 + 5.0 * rng.uniform();
        let freqs = FrequencyMatrix::new(gaussian_sample(&mut rng, k, d, 0.0, scale).unwrap()).unwrap();
        let x = gaussian_sample(&mut rng, n, d, 0.0, 3.0).unwrap();
        let m = 1 + rng.index(30);
        let y = gaussian_sample(&mut rng, m, d, 0.5, 1.0).unwrap();
        let (a, b) = (embed(&x, &freqs).unwrap(), embed(&y, &freqs).unwrap());
        if a.norm() > (k as f64).sqrt() + 1e-12 {
            failures.push("norm bound");
        }
        let (ab, ba, aa) = (cfd(&a, &b).unwrap(), cfd(&b, &a).unwrap(), cfd(&a, &a).unwrap());
        if ab.value.to_bits() != ba.value.to_bits() || ab.value < 0.0 || aa.value != 0.0 {
            failures.push("cfd axioms");
        }
        let unit = weighted_cfd(&a, &b, &vec![1.0; k]).unwrap();
        if unit.value / k as f64 != ab.value {
            failures.push("unit weights give k times cfd");
        }
        let base = SamplingDistribution::isotropic(d, 0.1 + 3.0 * rng.uniform()).unwrap();
        for normalize in [false, true] {
            let w = importance_weights(&base, &base, &freqs, normalize).unwrap();
            if w.iter().any(|&v| (v - 1.0).abs() > 1e-12) {
                failures.push("weights at omega = omega0");
            }
        }

        let schema = random_schema(&mut rng);
        let records: Vec<Record> = (0..1 + rng.index(10)).map(|_| random_record(&schema, &mut rng)).collect();
        let enc = encode(&records, &schema).unwrap();
        if enc.features.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            failures.push("encoding inside unit cube");
        }
        for (row, rec) in enc.features.row_iter().zip(&records) {
            for blk in schema.layout().iter().filter(|b| b.categorical) {
                if row[blk.offset..blk.offset + blk.width].iter().sum::<f64>() != 1.0 {
                    failures.push("one-hot validity");
                }
            }
            let back = decode_row(row, &schema).unwrap();
            for ((orig, dec), col) in rec.iter().zip(&back).zip(&schema.columns) {
                let ok = match (orig, dec, &col.kind) {
                    (Value::Num(u), Value::Num(v), ColumnKind::Continuous { range: [lo, hi] }) => {
                        (u - v).abs() <= 4.0 * f64::EPSILON * (hi - lo).abs().max(lo.abs()).max(hi.abs())
                    }
                    (Value::Cat(u), Value::Cat(v), _) => u == v,
                    _ => false,
                };
                if !ok {
                    failures.push("encode/decode round trip");
                }
            }
        }
    }
    failures.sort_unstable();
    failures.dedup();
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "1000 cases per invariant, 0 failures".to_string()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}
