//! Pixel-pair saliency attack: darkens the most useful pixel pair each step
//! and prints the first few steps of the trace.
//!
//! Usage: `cargo run --release --example psc_attack -- [MODEL_DIR]`

use std::path::Path;
use std::sync::Arc;

use capsule_evasion::attack::{psc_attack, Algorithm, AttackConfig, AttackTarget, AttackTrace};
use capsule_evasion::classifier::ClassifierModel;
use capsule_evasion::cli::{ENCODER_FILE, PRIOR_FILE};
use capsule_evasion::encoder::{EncoderParams, TrainConfig};
use capsule_evasion::harness::{fit_models, select_correct, toy_digits, ToyConfig};

fn main() -> capsule_evasion::Result<()> {
    let (train, test) = toy_digits(&ToyConfig::default())?;
    let test = test.normalized();
    let (encoder, classifier) = match std::env::args().nth(1) {
        Some(dir) => (
            EncoderParams::load(Path::new(&dir).join(ENCODER_FILE))?,
            ClassifierModel::load(Path::new(&dir).join(PRIOR_FILE))?,
        ),
        None => {
            let config = TrainConfig {
                epochs: 40,
                ..TrainConfig::default()
            };
            let models = fit_models(&config, &train.normalized(), &test)?;
            (models.encoder, models.prior)
        }
    };
    let (encoder, classifier) = (Arc::new(encoder), Arc::new(classifier));

    let index = select_correct(&test, &encoder, &classifier, 1, 1)?.indices[0];
    let x = &test.images[index];
    let target = AttackTarget::new(encoder, classifier, x)?;
    let result = psc_attack(&target, x, &AttackConfig::defaults(Algorithm::Psc))?;

    if let AttackTrace::Psc {
        initial_domain,
        steps,
    } = &result.trace
    {
        println!("{} lit pixels to search", initial_domain.len());
        for (i, step) in steps.iter().take(5).enumerate() {
            println!(
                "step {}: pair {:?} -> ({:.3}, {:.3}), removed {:?}, {} left",
                i + 1,
                step.pair,
                step.values_after.0,
                step.values_after.1,
                step.removed,
                step.domain_size
            );
        }
    }
    println!(
        "success {} after {} steps, label {} -> {:?}, L2 {:.4}",
        result.success,
        result.iterations,
        result.original_label,
        result.adversarial_label,
        result.l2
    );
    assert!(result.perturbation.iter().all(|&p| p <= 0.0));
    Ok(())
}
