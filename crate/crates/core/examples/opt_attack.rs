//! Optimisation attack in tanh space with a bisection over the objective
//! weight; prints the bracket after every outer round.
//!
//! Usage: `cargo run --release --example opt_attack -- [MODEL_DIR]`

use std::path::Path;
use std::sync::Arc;

use capsule_evasion::attack::{opt_attack, Algorithm, AttackConfig, AttackTarget, AttackTrace};
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

    let index = select_correct(&test, &encoder, &classifier, 1, 2)?.indices[0];
    let x = &test.images[index];
    let target = AttackTarget::new(encoder, classifier, x)?;
    let config = AttackConfig {
        seed: 9,
        ..AttackConfig::defaults(Algorithm::Opt)
    };
    let result = opt_attack(&target, x, &config)?;

    if let AttackTrace::Opt { rounds } = &result.trace {
        for (i, round) in rounds.iter().enumerate() {
            println!(
                "round {}: alpha {:>10.4} success {:<5} best {:>8} -> bracket [{:.4}, {}]",
                i + 1,
                round.before.alpha,
                round.succeeded,
                round
                    .best_distance
                    .map_or("-".into(), |d| format!("{d:.4}")),
                round.after.lower,
                round
                    .after
                    .upper
                    .map_or("inf".into(), |u| format!("{u:.4}"))
            );
        }
    }
    println!(
        "success {}, label {} -> {:?}, L2 {:.4}, in box {}",
        result.success,
        result.original_label,
        result.adversarial_label,
        result.l2,
        result.adversarial.in_unit_box()
    );
    Ok(())
}
