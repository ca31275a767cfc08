//! Trains with and without the critic when the base frequency scale is
//! deliberately four times too small, then scores both generators on fresh
//! frequencies drawn at the correct scale.
//!
//! `cargo run --release --example critic_ablation -- [iters] [seeds]`

use cfsynth::auxinfo::mean_pairwise_distance;
use cfsynth::cfembed::{cfd, embed};
use cfsynth::dataio::encode;
use cfsynth::freqdist::{sample_frequencies, SamplingDistribution};
use cfsynth::numcore::Rng;
use cfsynth::toydata::{gaussian_mixture_2d, mixture_schema};
use cfsynth::trainloop::{generate_encoded, run, TrainConfig};

fn main() -> cfsynth::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let schema = mixture_schema();
    let real = encode(&gaussian_mixture_2d(10_000, &mut Rng::new(7)), &schema)?;
    let sigma0 = 1.0 / mean_pairwise_distance(&real.features)?;
    let eval_freqs = sample_frequencies(&SamplingDistribution::isotropic(2, sigma0)?, 1000, &mut Rng::new(1234))?;
    let real_emb = embed(&real.features, &eval_freqs)?;

    for seed in 0..seeds {
        let mut line = format!("seed {seed}:");
        for critic_enabled in [true, false] {
            let config = TrainConfig {
                k: 500,
                iters,
                batch: 500,
                latent_dim: 8,
                hidden: vec![64, 64],
                seed,
                sigma0_scale: 0.25,
                critic_enabled,
                ..TrainConfig::default()
            };
            let (net, report, _, _) = run(real.clone(), &schema, &config)?;
            let synth = generate_encoded(&net, 10_000, &mut Rng::new(500 + seed), None)?;
            let score = cfd(&embed(&synth, &eval_freqs)?, &real_emb)?.value;
            let std: Vec<String> = report.final_critic_log_std.iter().map(|l| format!("{:.2}", l.exp())).collect();
            line += &format!(
                " {} cfd {score:.3e} (critic std [{}])",
                if critic_enabled { "critic" } else { "no-critic" },
                std.join(", ")
            );
        }
        println!("{line}");
    }
    Ok(())
}
