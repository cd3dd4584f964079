//! Renders the synthetic digit set, writes it as MNIST-named IDX files and
//! exports one sample per class as PGM.
//!
//! Usage: `cargo run --example toy_dataset -- [OUT_DIR]`

use std::path::PathBuf;

use capsule_evasion::harness::{export_image, toy_digits, Dataset, Split, ToyConfig, TOY_CLASSES};

fn main() -> capsule_evasion::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("toy-digits"));
    let (train, test) = toy_digits(&ToyConfig::default())?;
    train.save_dir(&out)?;
    test.save_dir(&out)?;

    let reloaded = Dataset::load_dir(&out, Split::Test)?;
    assert_eq!(reloaded.images, test.images);
    println!(
        "{} train / {} test images written to {}",
        train.len(),
        test.len(),
        out.display()
    );

    for class in 0..TOY_CLASSES {
        let i = test
            .labels
            .iter()
            .position(|&l| l == class)
            .expect("every class present");
        export_image(&test.images[i], out.join(format!("class_{class}.pgm")))?;
    }
    let ink: f64 = train
        .images
        .iter()
        .map(|x| x.pixels().iter().sum::<f64>())
        .sum::<f64>()
        / train.len() as f64;
    println!("mean ink per image: {ink:.1}");
    Ok(())
}
