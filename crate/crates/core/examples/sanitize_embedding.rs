//! One-shot release: auxiliary statistics, frequency sampling and the noisy
//! CF embedding, written as the JSON artifact that training consumes.
//!
//! `cargo run --example sanitize_embedding -- [out.json]`

use cfsynth::dataio::encode;
use cfsynth::numcore::Rng;
use cfsynth::privacy::RdpLedger;
use cfsynth::toydata::{gaussian_mixture_2d, mixture_schema};
use cfsynth::trainloop::{plan_releases, prepare, TrainConfig};

fn main() -> cfsynth::Result<()> {
    let out = std::env::args().nth(1);
    let schema = mixture_schema();
    let data = encode(&gaussian_mixture_2d(5000, &mut Rng::new(1)), &schema)?;
    let config = TrainConfig {
        k: 200,
        ..TrainConfig::default()
    };
    let plan = plan_releases(&config, false)?;
    let mut ledger = RdpLedger::new();
    let prepared = prepare(&plan, data, &schema, config.seed, config.k, 1.0, &mut ledger)?;

    let delta = config.budget.delta;
    println!("mean pairwise distance (released): {:.4}", prepared.aux.mean_pairwise_distance);
    println!("sigma0: {:.4}", prepared.aux.sigma0);
    println!("noise std per coordinate: {:.4e}", prepared.target.noise_std);
    for e in ledger.events() {
        println!("ledger: {e:?}");
    }
    println!("total eps at delta {delta}: {:.4}", ledger.to_eps_delta(delta)?.epsilon);

    let file = prepared.embedding_file(&ledger, delta)?;
    match out {
        Some(path) => std::fs::write(&path, serde_json::to_string_pretty(&file)?)?,
        None => println!("first coefficients: re {:?}, im {:?}", &file.re[..3], &file.im[..3]),
    }
    Ok(())
}
