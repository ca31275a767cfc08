//! Auxiliary statistics released (with DP) before training: the mean pairwise
//! distance, which fixes the base frequency scale σ₀, and an optional label
//! histogram used to sample labels at generation time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};
use crate::privacy::RdpLedger;

pub const MEAN_DISTANCE_LABEL: &str = "aux-pairwise-mean";
pub const LABEL_HIST_LABEL: &str = "aux-label-hist";

/// The released auxiliary information, as persisted next to the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxRelease {
    pub mean_pairwise_distance: f64,
    pub sigma0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_probs: Option<Vec<f64>>,
    pub ledger_event_ids: Vec<usize>,
}

fn check_unit_cube(data: &Matrix) -> Result<()> {
    for (r, row) in data.row_iter().enumerate() {
        if let Some(c) = row.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::data(format!(
                "entry ({r}, {c}) = {} lies outside [0, 1]",
                row[c]
            )));
        }
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact mean Euclidean distance over all `n(n−1)/2` unordered pairs.
pub fn mean_pairwise_distance(data: &Matrix) -> Result<f64> {
    let n = data.rows();
    if n < 2 {
        return Err(Error::param("mean pairwise distance needs n >= 2"));
    }
    check_unit_cube(data)?;
    let partial: Vec<f64> = (0..n - 1)
        .into_par_iter()
        .map(|i| {
            let xi = data.row(i);
            (i + 1..n).map(|j| dist(xi, data.row(j))).sum()
        })
        .collect();
    let total: f64 = partial.iter().sum();
    Ok(total / (n as f64 * (n as f64 - 1.0) / 2.0))
}

/// Monte-Carlo estimate from `pairs` random distinct pairs. Not covered by
/// the DP analysis of the exact statistic; useful only for diagnostics on
/// very large inputs.
pub fn mean_pairwise_distance_subsampled(data: &Matrix, pairs: usize, rng: &mut Rng) -> Result<f64> {
    let n = data.rows();
    if n < 2 || pairs == 0 {
        return Err(Error::param("subsampled mean distance needs n >= 2 and pairs >= 1"));
    }
    check_unit_cube(data)?;
    let mut total = 0.0;
    for _ in 0..pairs {
        let i = rng.index(n);
        let mut j = rng.index(n - 1);
        if j >= i {
            j += 1;
        }
        total += dist(data.row(i), data.row(j));
    }
    Ok(total / pairs as f64)
}

/// `2√d/n`.
pub fn pairwise_sensitivity(d: usize, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::param("pairwise sensitivity needs n >= 2"));
    }
    Ok(2.0 * (d as f64).sqrt() / n as f64)
}

/// L2 sensitivity of a normalized histogram under replacement of one record.
pub fn histogram_sensitivity(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("histogram sensitivity needs n >= 1"));
    }
    Ok(std::f64::consts::SQRT_2 / n as f64)
}

/// `σ₀ = 1 / D̄`, applied to every frequency dimension.
pub fn derive_sigma0(dp_mean_distance: f64) -> Result<f64> {
    if !(dp_mean_distance > 0.0) || !dp_mean_distance.is_finite() {
        return Err(Error::param(format!(
            "sigma0 needs a positive mean distance, got {dp_mean_distance}"
        )));
    }
    Ok(1.0 / dp_mean_distance)
}

/// Lower bound applied to the noisy distance before inversion.
pub fn distance_floor(d: usize) -> f64 {
    1e-3 * (d as f64).sqrt()
}

/// Performs each auxiliary release at most once, charging the ledger each time.
///
/// A `noise_multiplier` of `None` releases the exact statistic and marks the
/// ledger non-private.
#[derive(Debug, Default)]
pub struct AuxReleaser {
    mean_distance: Option<f64>,
    label_probs: Option<Vec<f64>>,
    events: Vec<usize>,
}

impl AuxReleaser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn release_mean_distance(
        &mut self,
        data: &Matrix,
        noise_multiplier: Option<f64>,
        rng: &mut Rng,
        ledger: &mut RdpLedger,
    ) -> Result<f64> {
        if self.mean_distance.is_some() {
            return Err(Error::state("mean pairwise distance already released"));
        }
        let exact = mean_pairwise_distance(data)?;
        let d = data.cols();
        let sens = pairwise_sensitivity(d, data.rows())?;
        let (noisy, id) = match noise_multiplier {
            Some(sigma) => {
                let std = sens * sigma;
                let id = ledger.charge_gaussian(sens, std, MEAN_DISTANCE_LABEL)?;
                (exact + std * rng.standard_normal(), id)
            }
            None => (exact, ledger.charge_nonprivate(sens, MEAN_DISTANCE_LABEL)),
        };
        let value = noisy.max(distance_floor(d));
        self.mean_distance = Some(value);
        self.events.push(id);
        Ok(value)
    }

    /// `labels[i] ∈ 0..classes`. Noise is added to the normalized counts,
    /// negative entries are clipped and the result renormalized.
    pub fn release_label_histogram(
        &mut self,
        labels: &[usize],
        classes: usize,
        noise_multiplier: Option<f64>,
        rng: &mut Rng,
        ledger: &mut RdpLedger,
    ) -> Result<Vec<f64>> {
        if self.label_probs.is_some() {
            return Err(Error::state("label histogram already released"));
        }
        if classes < 2 {
            return Err(Error::param("label histogram needs at least 2 classes"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::data(format!("label index {bad} out of range for {classes} classes")));
        }
        let n = labels.len();
        let sens = histogram_sensitivity(n)?;
        let mut hist = vec![0.0; classes];
        for &l in labels {
            hist[l] += 1.0;
        }
        hist.iter_mut().for_each(|h| *h /= n as f64);
        let id = match noise_multiplier {
            Some(sigma) => {
                let std = sens * sigma;
                let id = ledger.charge_gaussian(sens, std, LABEL_HIST_LABEL)?;
                for h in hist.iter_mut() {
                    *h += std * rng.standard_normal();
                }
                id
            }
            None => ledger.charge_nonprivate(sens, LABEL_HIST_LABEL),
        };
        let probs = project_to_simplex(&hist);
        self.label_probs = Some(probs.clone());
        self.events.push(id);
        Ok(probs)
    }

    pub fn finish(self) -> Result<AuxRelease> {
        let mean = self
            .mean_distance
            .ok_or_else(|| Error::state("mean pairwise distance was never released"))?;
        Ok(AuxRelease {
            mean_pairwise_distance: mean,
            sigma0: derive_sigma0(mean)?,
            label_probs: self.label_probs,
            ledger_event_ids: self.events,
        })
    }
}

/// Clip at zero and renormalize; all-zero input becomes uniform.
fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total > 0.0 {
        clipped.into_iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_distance_examples() {
        let m = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert_eq!(mean_pairwise_distance(&m).unwrap(), 1.0);
        let m = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]]).unwrap();
        let expect = 2.0 * 2f64.sqrt() / 3.0;
        assert!((mean_pairwise_distance(&m).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.94281).abs() < 1e-5);
        let m = Matrix::filled(5, 3, 0.4);
        assert_eq!(mean_pairwise_distance(&m).unwrap(), 0.0);
    }

    #[test]
    fn mean_distance_errors() {
        assert!(matches!(
            mean_pairwise_distance(&Matrix::zeros(1, 2)),
            Err(Error::InvalidParameter(_))
        ));
        let m = Matrix::from_rows(&[[0.0], [1.5]]).unwrap();
        assert!(matches!(mean_pairwise_distance(&m), Err(Error::InvalidData(_))));
    }

    #[test]
    fn sensitivity_formula() {
        assert_eq!(pairwise_sensitivity(1, 2).unwrap(), 1.0);
        assert!((pairwise_sensitivity(4, 100).unwrap() - 0.04).abs() < 1e-15);
        assert!(pairwise_sensitivity(1, 1).is_err());
    }

    #[test]
    fn sigma0_values() {
        assert_eq!(derive_sigma0(2.0).unwrap(), 0.5);
        assert_eq!(derive_sigma0(1.0).unwrap(), 1.0);
        assert!((derive_sigma0(distance_floor(4)).unwrap() - 500.0).abs() < 1e-9);
        assert!(derive_sigma0(0.0).is_err());
        assert!(derive_sigma0(-1.0).is_err());
    }

    #[test]
    fn floor_applies_to_huge_noise() {
        let m = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]).unwrap();
        let mut hit = false;
        for seed in 0..20 {
            let mut r = AuxReleaser::new();
            let mut ledger = RdpLedger::new();
            let v = r
                .release_mean_distance(&m, Some(100.0), &mut Rng::new(seed), &mut ledger)
                .unwrap();
            assert!(v >= distance_floor(2));
            hit |= v == distance_floor(2);
        }
        assert!(hit);
    }

    #[test]
    fn releases_are_one_shot_and_charged_once() {
        let m = Matrix::from_rows(&[[0.1], [0.9], [0.5]]).unwrap();
        let mut r = AuxReleaser::new();
        let mut ledger = RdpLedger::new();
        r.release_mean_distance(&m, Some(2.0), &mut Rng::new(1), &mut ledger).unwrap();
        assert_eq!(ledger.events().len(), 1);
        assert_eq!(ledger.events()[0].label, MEAN_DISTANCE_LABEL);
        assert!(matches!(
            r.release_mean_distance(&m, Some(2.0), &mut Rng::new(1), &mut ledger),
            Err(Error::InvalidState(_))
        ));
        r.release_label_histogram(&[0, 1, 1], 2, Some(2.0), &mut Rng::new(1), &mut ledger)
            .unwrap();
        assert!(matches!(
            r.release_label_histogram(&[0, 1, 1], 2, Some(2.0), &mut Rng::new(1), &mut ledger),
            Err(Error::InvalidState(_))
        ));
        assert_eq!(ledger.events().len(), 2);
        let aux = r.finish().unwrap();
        assert_eq!(aux.ledger_event_ids, vec![0, 1]);
    }

    #[test]
    fn deterministic_release() {
        let m = Matrix::from_rows(&[[0.1], [0.9], [0.5]]).unwrap();
        let run = || {
            let mut r = AuxReleaser::new();
            r.release_mean_distance(&m, Some(2.0), &mut Rng::new(4), &mut RdpLedger::new())
                .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn degenerate_single_class_histogram_is_simplex() {
        let mut r = AuxReleaser::new();
        let p = r
            .release_label_histogram(&[0; 10], 2, Some(5.0), &mut Rng::new(3), &mut RdpLedger::new())
            .unwrap();
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_needs_two_classes() {
        let mut r = AuxReleaser::new();
        assert!(r
            .release_label_histogram(&[0, 0], 1, Some(1.0), &mut Rng::new(0), &mut RdpLedger::new())
            .is_err());
    }

    #[test]
    fn nonprivate_release_is_exact() {
        let m = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let mut r = AuxReleaser::new();
        let mut ledger = RdpLedger::new();
        assert_eq!(r.release_mean_distance(&m, None, &mut Rng::new(0), &mut ledger).unwrap(), 1.0);
        assert!(ledger.is_nonprivate());
    }

    #[test]
    fn subsampled_estimate_is_close() {
        let mut rng = Rng::new(8);
        let m = Matrix::new(300, 2, (0..600).map(|_| rng.uniform()).collect()).unwrap();
        let exact = mean_pairwise_distance(&m).unwrap();
        let approx = mean_pairwise_distance_subsampled(&m, 50_000, &mut rng).unwrap();
        assert!((exact - approx).abs() < 0.01, "{exact} vs {approx}");
    }
}
