//! Plans a budget split, charges the releases and converts the ledger to (ε, δ).
//!
//! `cargo run --example privacy_accounting -- [epsilon] [delta]`

use cfsynth::privacy::{calibrate_classic, split_budget, DpBudget, RdpLedger};

fn main() -> cfsynth::Result<()> {
    let mut args = std::env::args().skip(1);
    let epsilon = args.next().and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let delta = args.next().and_then(|s| s.parse().ok()).unwrap_or(1e-5);

    let single = calibrate_classic(epsilon, delta)?;
    println!("classic noise multiplier at ({epsilon}, {delta}): {single:.4}");

    for aux in [1, 2] {
        let plan = split_budget(&DpBudget::new(epsilon, delta, 0.5)?, aux)?;
        let mut ledger = RdpLedger::new();
        ledger.charge_gaussian(1.0, plan.sigma_cf, "cf-embedding")?;
        for i in 0..aux {
            ledger.charge_gaussian(1.0, plan.sigma_aux, &format!("aux-{i}"))?;
        }
        let tight = ledger.to_eps_delta(delta)?;
        let classic = ledger.to_eps_delta_classic(delta)?;
        println!(
            "{aux} auxiliary release(s): sigma_cf {:.3}, sigma_aux {:.3}, eps {:.4} at order {:?} (classic conversion {:.4})",
            plan.sigma_cf, plan.sigma_aux, tight.epsilon, tight.order, classic.epsilon
        );
    }

    let export = RdpLedger::new().export(delta)?;
    println!("empty ledger export: {}", serde_json::to_string(&export)?);
    Ok(())
}
