//! Masked sign-gradient attack on one correctly classified digit.
//!
//! Usage: `cargo run --release --example gdu_attack -- [MODEL_DIR]`
//! where MODEL_DIR holds files from `train_surrogate` or `capsule-evasion train`.
//! Without it a small model is trained first.

use std::path::Path;
use std::sync::Arc;

use capsule_evasion::attack::{gdu_attack, Algorithm, AttackConfig, AttackTarget};
use capsule_evasion::classifier::ClassifierModel;
use capsule_evasion::cli::{ENCODER_FILE, PRIOR_FILE};
use capsule_evasion::encoder::{EncoderParams, PresenceMode, TrainConfig};
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
    assert_eq!(classifier.mode, PresenceMode::Prior);
    let (encoder, classifier) = (Arc::new(encoder), Arc::new(classifier));

    let index = select_correct(&test, &encoder, &classifier, 1, 0)?.indices[0];
    let x = &test.images[index];
    let target = AttackTarget::new(encoder, classifier, x)?;
    println!(
        "sample {index}: label {}, attacked capsules {:?}",
        target.original_label(),
        target.subset()
    );

    let config = AttackConfig::defaults(Algorithm::Gdu);
    let result = gdu_attack(&target, x, &config)?;
    match result.adversarial_label {
        Some(label) => println!(
            "flipped to {label} at iteration {:?}, L2 {:.4}, clipped {} times",
            result.best_iterate, result.l2, result.clip_events
        ),
        None => println!(
            "no misclassification within {} iterations",
            result.iterations
        ),
    }
    Ok(())
}
