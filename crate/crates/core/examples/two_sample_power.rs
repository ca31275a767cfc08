//! Rejection rates of a permutation two-sample test built on the weighted CFD,
//! using unoptimized, normally drawn and optimized frequencies.
//!
//! `cargo run --release --example two_sample_power -- [trials]`

use cfsynth::evalsuite::{two_sample_demo, TwoSampleConfig};

fn main() -> cfsynth::Result<()> {
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let config = TwoSampleConfig {
        dims: vec![1, 2, 5, 10],
        trials,
        ..TwoSampleConfig::default()
    };
    let result = two_sample_demo(&config)?;
    print!("{}", result.to_csv());
    Ok(())
}
