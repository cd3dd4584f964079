use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::attack::{run_attack, AttackConfig, AttackResult, AttackTarget};
use crate::classifier::ClassifierModel;
use crate::encoder::{EncoderParams, PresenceMode};
use crate::error::{Error, Result};

/// Default number of attacked samples.
pub const DEFAULT_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Dataset indices in selection order.
    pub indices: Vec<usize>,
    /// How many fewer than requested were available.
    pub shortfall: usize,
}

/// Up to `n` samples that the classifier labels correctly, taken in a seeded
/// shuffle order.
pub fn select_correct(
    dataset: &Dataset,
    encoder: &EncoderParams,
    classifier: &ClassifierModel,
    n: usize,
    seed: u64,
) -> Result<Selection> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut indices = Vec::with_capacity(n);
    for i in order {
        if indices.len() == n {
            break;
        }
        let presence = encoder.presence_for(&dataset.images[i], classifier.mode)?;
        if classifier.classify(&presence)? == dataset.labels[i] {
            indices.push(i);
        }
    }
    if indices.is_empty() {
        return Err(Error::NoCorrectSamples);
    }
    let shortfall = n - indices.len();
    Ok(Selection { indices, shortfall })
}

/// Attack seed for the `position`-th selected sample.
pub fn sample_seed(master: u64, position: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(position as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub attack: AttackConfig,
    pub mode: PresenceMode,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub index: usize,
    pub label: usize,
    pub seed: u64,
    pub success: bool,
    pub adversarial_label: Option<usize>,
    pub l2: f64,
    pub iterations: usize,
    pub best_iterate: Option<usize>,
    pub clip_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub attempted: usize,
    pub shortfall: usize,
    pub per_sample: Vec<SampleSummary>,
    pub success_rate: f64,
    /// `None` when no attack succeeded.
    pub mean_l2: Option<f64>,
    pub std_l2: Option<f64>,
    /// Which samples enter the L2 statistics.
    pub l2_basis: String,
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("report", e.to_string()))
    }

    /// Success rate, mean and std recomputed from `per_sample`.
    pub fn recompute(&self) -> (f64, Option<f64>, Option<f64>) {
        let l2s: Vec<f64> = self
            .per_sample
            .iter()
            .filter(|s| s.success)
            .map(|s| s.l2)
            .collect();
        let rate = if self.per_sample.is_empty() {
            0.0
        } else {
            l2s.len() as f64 / self.per_sample.len() as f64
        };
        let (mean, std) = l2_statistics(&l2s);
        (rate, mean, std)
    }
}

/// Mean and population standard deviation, `None` for an empty slice.
pub fn l2_statistics(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// A finished experiment: the report plus every full attack result, in
/// selection order.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: ExperimentReport,
    pub results: Vec<AttackResult>,
}

pub fn run_experiment(
    dataset: &Dataset,
    encoder: Arc<EncoderParams>,
    classifier: Arc<ClassifierModel>,
    config: &ExperimentConfig,
) -> Result<Experiment> {
    run_experiment_with(dataset, encoder, classifier, config, Execution::Parallel)
}

/// Selects correctly classified samples and attacks each one. Sample `i`
/// uses the attack seed [`sample_seed`]`(config.seed, i)`, so serial and
/// parallel runs agree.
pub fn run_experiment_with(
    dataset: &Dataset,
    encoder: Arc<EncoderParams>,
    classifier: Arc<ClassifierModel>,
    config: &ExperimentConfig,
    execution: Execution,
) -> Result<Experiment> {
    config.attack.validate()?;
    if classifier.mode != config.mode {
        return Err(Error::Config(format!(
            "classifier reads {} presences but the experiment asks for {}",
            classifier.mode, config.mode
        )));
    }
    let start = Instant::now();
    let selection = select_correct(dataset, &encoder, &classifier, config.n, config.seed)?;

    let attack_one =
        |(position, &index): (usize, &usize)| -> Result<(SampleSummary, AttackResult)> {
            let x = &dataset.images[index];
            let seed = sample_seed(config.seed, position);
            let attack = AttackConfig {
                seed,
                ..config.attack.clone()
            };
            let target = AttackTarget::new(encoder.clone(), classifier.clone(), x)?;
            let result = run_attack(&target, x, &attack)?;
            let summary = SampleSummary {
                index,
                label: dataset.labels[index],
                seed,
                success: result.success,
                adversarial_label: result.adversarial_label,
                l2: result.l2,
                iterations: result.iterations,
                best_iterate: result.best_iterate,
                clip_events: result.clip_events,
            };
            Ok((summary, result))
        };
    let outcomes: Vec<(SampleSummary, AttackResult)> = match execution {
        Execution::Serial => selection
            .indices
            .iter()
            .enumerate()
            .map(attack_one)
            .collect::<Result<_>>()?,
        Execution::Parallel => selection
            .indices
            .par_iter()
            .enumerate()
            .map(attack_one)
            .collect::<Result<_>>()?,
    };
    let (per_sample, results): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();

    let mut report = ExperimentReport {
        config: config.clone(),
        attempted: per_sample.len(),
        shortfall: selection.shortfall,
        per_sample,
        success_rate: 0.0,
        mean_l2: None,
        std_l2: None,
        l2_basis: "successes".into(),
        runtime_seconds: 0.0,
    };
    let (rate, mean, std) = report.recompute();
    report.success_rate = rate;
    report.mean_l2 = mean;
    report.std_l2 = std;
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(Experiment { report, results })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(success: bool, l2: f64) -> SampleSummary {
        SampleSummary {
            index: 0,
            label: 0,
            seed: 0,
            success,
            adversarial_label: success.then_some(1),
            l2,
            iterations: 1,
            best_iterate: success.then_some(1),
            clip_events: 0,
        }
    }

    fn report(per_sample: Vec<SampleSummary>) -> ExperimentReport {
        ExperimentReport {
            config: ExperimentConfig {
                attack: AttackConfig::defaults(crate::attack::Algorithm::Gdu),
                mode: PresenceMode::Prior,
                n: per_sample.len(),
                seed: 0,
            },
            attempted: per_sample.len(),
            shortfall: 0,
            per_sample,
            success_rate: 0.0,
            mean_l2: None,
            std_l2: None,
            l2_basis: "successes".into(),
            runtime_seconds: 0.0,
        }
    }

    #[test]
    fn three_of_four_is_three_quarters() {
        let r = report(vec![
            summary(true, 1.0),
            summary(true, 2.0),
            summary(false, 0.0),
            summary(true, 3.0),
        ]);
        let (rate, mean, std) = r.recompute();
        assert_eq!(rate, 0.75);
        assert_eq!(mean, Some(2.0));
        assert!((std.unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn all_failures_have_no_l2_statistics() {
        let r = report(vec![summary(false, 0.0), summary(false, 0.0)]);
        assert_eq!(r.recompute(), (0.0, None, None));
    }

    #[test]
    fn report_json_roundtrip() {
        let r = report(vec![summary(true, 1.5)]);
        let text = r.to_json();
        for key in [
            "config",
            "per_sample",
            "success_rate",
            "mean_l2",
            "std_l2",
            "runtime_seconds",
            "l2_basis",
        ] {
            assert!(text.contains(&format!("\"{key}\"")), "missing {key}");
        }
        assert_eq!(ExperimentReport::from_json(&text).unwrap(), r);
        assert!(ExperimentReport::from_json("{").is_err());
    }

    #[test]
    fn sample_seeds_differ_by_position() {
        assert_ne!(sample_seed(7, 0), sample_seed(7, 1));
        assert_eq!(sample_seed(7, 3), sample_seed(7, 3));
        assert_ne!(sample_seed(7, 0), sample_seed(8, 0));
    }
}
