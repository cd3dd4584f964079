//! Runs all three attacks against both classifiers on a handful of samples
//! and prints the summary table that `capsule-evasion report` produces.
//!
//! Usage: `cargo run --release --example experiment_report -- [SAMPLES]`

use std::sync::Arc;

use capsule_evasion::attack::{Algorithm, AttackConfig};
use capsule_evasion::cli::format_table;
use capsule_evasion::encoder::{PresenceMode, TrainConfig};
use capsule_evasion::harness::{
    fit_models, run_experiment, toy_digits, ExperimentConfig, ToyConfig,
};

fn main() -> capsule_evasion::Result<()> {
    let n = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("sample count"))
        .unwrap_or(10);
    let (train, test) = toy_digits(&ToyConfig::default())?;
    let test = test.normalized();
    let config = TrainConfig {
        epochs: 60,
        ..TrainConfig::default()
    };
    let models = fit_models(&config, &train.normalized(), &test)?;
    let encoder = Arc::new(models.encoder.clone());

    let mut reports = Vec::new();
    for mode in [PresenceMode::Prior, PresenceMode::Posterior] {
        let classifier = Arc::new(models.classifier(mode).clone());
        for algorithm in Algorithm::ALL {
            let config = ExperimentConfig {
                attack: AttackConfig::defaults(algorithm),
                mode,
                n,
                seed: 7,
            };
            let experiment = run_experiment(&test, encoder.clone(), classifier.clone(), &config)?;
            eprintln!(
                "{mode} {algorithm}: {:.1}s",
                experiment.report.runtime_seconds
            );
            reports.push(experiment.report);
        }
    }
    print!("{}", format_table(&reports));
    Ok(())
}
