//! Computes the 3x3 neighbourhood mask of a digit, compares masked and
//! unmasked sign-gradient attacks and exports the images as PGM.
//!
//! Usage: `cargo run --release --example mask_and_pgm -- [OUT_DIR]`

use std::path::PathBuf;
use std::sync::Arc;

use capsule_evasion::attack::{compute_mask, gdu_attack, Algorithm, AttackConfig, AttackTarget};
use capsule_evasion::encoder::TrainConfig;
use capsule_evasion::harness::{export_image, fit_models, select_correct, toy_digits, ToyConfig};

fn main() -> capsule_evasion::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mask-demo"));
    std::fs::create_dir_all(&out).map_err(|e| capsule_evasion::Error::io(&out, e))?;

    let (train, test) = toy_digits(&ToyConfig::default())?;
    let test = test.normalized();
    let config = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    let models = fit_models(&config, &train.normalized(), &test)?;
    let (encoder, classifier) = (Arc::new(models.encoder), Arc::new(models.prior));

    let index = select_correct(&test, &encoder, &classifier, 1, 4)?.indices[0];
    let x = &test.images[index];
    let mask = compute_mask(x);
    let support = mask.weights().iter().filter(|&&m| m > 0.0).count();
    println!("mask covers {support} of {} pixels", mask.len());
    export_image(x, out.join("original.pgm"))?;
    export_image(
        &x.with_pixels(mask.weights().to_vec())?,
        out.join("mask.pgm"),
    )?;

    let target = AttackTarget::new(encoder, classifier, x)?;
    for masked in [true, false] {
        let config = AttackConfig {
            mask: masked,
            ..AttackConfig::defaults(Algorithm::Gdu)
        };
        let result = gdu_attack(&target, x, &config)?;
        let outside = result
            .perturbation
            .iter()
            .zip(mask.weights())
            .filter(|(&p, &m)| m == 0.0 && p != 0.0)
            .count();
        println!(
            "mask {:<5} success {:<5} L2 {:.4}, changed pixels outside the mask: {outside}",
            masked, result.success, result.l2
        );
        let name = if masked {
            "adversarial_masked.pgm"
        } else {
            "adversarial_unmasked.pgm"
        };
        export_image(&result.adversarial, out.join(name))?;
    }
    println!("images written to {}", out.display());
    Ok(())
}
