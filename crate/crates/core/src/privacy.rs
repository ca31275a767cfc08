//! Gaussian-mechanism calibration and Rényi-DP accounting.
//!
//! Every release in the pipeline is a Gaussian mechanism whose noise std is
//! `sensitivity × σ`. Its RDP cost at order λ is `λΔ²/(2·std²) = λ/(2σ²)`,
//! costs add across releases, and the total converts to (ε, δ)-DP by
//! minimizing over a fixed order grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rényi orders tracked by every ledger.
pub const RDP_ORDERS: [f64; 16] = [
    1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0,
];

/// Noise multiplier `√(2 ln(1.25/δ))/ε` for an (ε, δ) Gaussian mechanism.
pub fn calibrate_classic(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::param(format!("epsilon must be finite and > 0, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub id: usize,
    pub label: String,
    pub sensitivity: f64,
    pub noise_std: f64,
}

/// Append-only record of Gaussian releases with per-order RDP totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpLedger {
    orders: Vec<f64>,
    costs: Vec<f64>,
    events: Vec<LedgerEvent>,
    #[serde(default)]
    nonprivate: bool,
}

impl Default for RdpLedger {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of converting a ledger to (ε, δ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonReport {
    pub epsilon: f64,
    /// Order attaining the minimum, when any charge exists.
    pub order: Option<f64>,
    /// Set when the ledger has no events (ε is then 0).
    pub empty: bool,
}

impl RdpLedger {
    pub fn new() -> Self {
        Self {
            orders: RDP_ORDERS.to_vec(),
            costs: vec![0.0; RDP_ORDERS.len()],
            events: Vec::new(),
            nonprivate: false,
        }
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn is_nonprivate(&self) -> bool {
        self.nonprivate
    }

    /// Adds `λΔ²/(2·noise_std²)` at every order and logs the event.
    pub fn charge_gaussian(&mut self, sensitivity: f64, noise_std: f64, label: &str) -> Result<usize> {
        if !(sensitivity > 0.0) || !sensitivity.is_finite() {
            return Err(Error::param(format!("sensitivity must be > 0, got {sensitivity}")));
        }
        if !(noise_std > 0.0) || !noise_std.is_finite() {
            return Err(Error::param(format!("noise std must be > 0, got {noise_std}")));
        }
        let unit = sensitivity * sensitivity / (2.0 * noise_std * noise_std);
        for (c, &l) in self.costs.iter_mut().zip(&self.orders) {
            *c += l * unit;
        }
        Ok(self.push_event(label, sensitivity, noise_std))
    }

    /// Logs a noiseless release; the ledger reports ε = ∞ from then on.
    pub fn charge_nonprivate(&mut self, sensitivity: f64, label: &str) -> usize {
        self.nonprivate = true;
        self.push_event(label, sensitivity, 0.0)
    }

    fn push_event(&mut self, label: &str, sensitivity: f64, noise_std: f64) -> usize {
        let id = self.events.len();
        self.events.push(LedgerEvent {
            id,
            label: label.to_string(),
            sensitivity,
            noise_std,
        });
        id
    }

    /// Smallest ε over the order grid at which the recorded releases are (ε, δ)-DP.
    ///
    /// Each order is converted with the tighter of
    /// `c + ln(1/δ)/(λ−1)` and `c + ln((λ−1)/λ) − (ln δ + ln λ)/(λ−1)`.
    pub fn to_eps_delta(&self, delta: f64) -> Result<EpsilonReport> {
        self.convert(delta, true)
    }

    /// Conversion using only `c + ln(1/δ)/(λ−1)`.
    pub fn to_eps_delta_classic(&self, delta: f64) -> Result<EpsilonReport> {
        self.convert(delta, false)
    }

    fn convert(&self, delta: f64, tight: bool) -> Result<EpsilonReport> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::param(format!("delta must lie in (0, 1), got {delta}")));
        }
        if self.events.is_empty() {
            log::warn!("converting an empty privacy ledger: epsilon = 0");
            return Ok(EpsilonReport {
                epsilon: 0.0,
                order: None,
                empty: true,
            });
        }
        if self.nonprivate {
            return Ok(EpsilonReport {
                epsilon: f64::INFINITY,
                order: None,
                empty: false,
            });
        }
        let ln_inv_delta = -delta.ln();
        let mut best = (f64::INFINITY, None);
        for (&l, &c) in self.orders.iter().zip(&self.costs) {
            if l <= 1.0 {
                continue;
            }
            let mut eps = c + ln_inv_delta / (l - 1.0);
            if tight {
                let alt = c + ((l - 1.0) / l).ln() - (delta.ln() + l.ln()) / (l - 1.0);
                eps = eps.min(alt);
            }
            if eps < best.0 {
                best = (eps, Some(l));
            }
        }
        Ok(EpsilonReport {
            epsilon: best.0.max(0.0),
            order: best.1,
            empty: false,
        })
    }

    pub fn export(&self, delta: f64) -> Result<LedgerExport> {
        Ok(LedgerExport {
            orders: self.orders.clone(),
            costs: self.costs.clone(),
            events: self.events.clone(),
            nonprivate: self.nonprivate,
            converted: Converted {
                delta,
                epsilon: self.to_eps_delta(delta)?.epsilon,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Converted {
    pub delta: f64,
    #[serde(with = "epsilon_serde")]
    pub epsilon: f64,
}

/// Ledger JSON written next to every sanitized artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerExport {
    pub orders: Vec<f64>,
    pub costs: Vec<f64>,
    pub events: Vec<LedgerEvent>,
    #[serde(default)]
    pub nonprivate: bool,
    pub converted: Converted,
}

impl LedgerExport {
    pub fn into_ledger(self) -> Result<RdpLedger> {
        if self.orders.len() != self.costs.len() {
            return Err(Error::artifact("ledger orders and costs differ in length"));
        }
        if self.costs.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::artifact("ledger costs must be nonnegative"));
        }
        Ok(RdpLedger {
            orders: self.orders,
            costs: self.costs,
            events: self.events,
            nonprivate: self.nonprivate,
        })
    }
}

/// Serializes ε as a JSON number, or the string `"inf"` when unbounded.
pub mod epsilon_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(eps: &f64, s: S) -> Result<S::Ok, S::Error> {
        if eps.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*eps)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(x),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) => Err(de::Error::custom(format!("invalid epsilon {s:?}"))),
        }
    }
}

/// Total (ε, δ) and the fraction of ε spent on the CF release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub split: f64,
}

impl Default for DpBudget {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            delta: 1e-5,
            split: 0.5,
        }
    }
}

impl DpBudget {
    pub fn new(epsilon: f64, delta: f64, split: f64) -> Result<Self> {
        let b = Self { epsilon, delta, split };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::param(format!("epsilon must be finite and > 0, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::param(format!("split must lie in (0, 1), got {}", self.split)));
        }
        Ok(())
    }
}

/// Noise multipliers for each release, fixed before any data is touched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub sigma_cf: f64,
    pub sigma_aux: f64,
    pub aux_releases: usize,
    /// ε of the simulated composed ledger at the budget's δ.
    pub projected_epsilon: f64,
}

/// Splits the budget between the CF release and `aux_releases` auxiliary
/// releases, then verifies the composition on a simulated ledger.
///
/// The CF half is calibrated at `(ε·split, δ/2)`. The auxiliary half
/// `(ε·(1−split), δ/2)` is divided evenly over the auxiliary releases.
pub fn split_budget(budget: &DpBudget, aux_releases: usize) -> Result<BudgetPlan> {
    budget.validate()?;
    let sigma_cf = calibrate_classic(budget.epsilon * budget.split, budget.delta / 2.0)?;
    let m = aux_releases.max(1) as f64;
    let sigma_aux = calibrate_classic(
        budget.epsilon * (1.0 - budget.split) / m,
        budget.delta / 2.0 / m,
    )?;
    let mut sim = RdpLedger::new();
    sim.charge_gaussian(1.0, sigma_cf, "preflight-cf")?;
    for i in 0..aux_releases {
        sim.charge_gaussian(1.0, sigma_aux, &format!("preflight-aux-{i}"))?;
    }
    let projected = sim.to_eps_delta(budget.delta)?.epsilon;
    if projected > budget.epsilon {
        return Err(Error::BudgetViolation(format!(
            "composed releases cost epsilon {projected:.6} > budget {}",
            budget.epsilon
        )));
    }
    Ok(BudgetPlan {
        sigma_cf,
        sigma_aux,
        aux_releases,
        projected_epsilon: projected,
    })
}
