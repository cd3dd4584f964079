//! Trains the surrogate encoder on the synthetic digits, fits both k-means
//! classifiers and saves the three model files.
//!
//! Usage: `cargo run --release --example train_surrogate -- [EPOCHS] [OUT_DIR]`

use std::path::PathBuf;

use capsule_evasion::cli::{ENCODER_FILE, POSTERIOR_FILE, PRIOR_FILE};
use capsule_evasion::encoder::{EncoderParams, TrainConfig};
use capsule_evasion::harness::{fit_models, toy_digits, ToyConfig};

fn main() -> capsule_evasion::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args
        .next()
        .map(|s| s.parse().expect("epoch count"))
        .unwrap_or(100);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("toy-models"));

    let (train, test) = toy_digits(&ToyConfig::default())?;
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let models = fit_models(&config, &train.normalized(), &test.normalized())?;
    println!("prior accuracy {:.4}", models.prior_accuracy);
    println!("posterior accuracy {:.4}", models.posterior_accuracy);

    std::fs::create_dir_all(&out).map_err(|e| capsule_evasion::Error::io(&out, e))?;
    models.encoder.save(out.join(ENCODER_FILE))?;
    models.prior.save(out.join(PRIOR_FILE))?;
    models.posterior.save(out.join(POSTERIOR_FILE))?;
    let reloaded = EncoderParams::load(out.join(ENCODER_FILE))?;
    assert_eq!(reloaded, models.encoder);
    println!("models written to {}", out.display());
    Ok(())
}
