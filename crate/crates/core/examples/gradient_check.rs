//! Reverse-mode gradients against central finite differences, first on a
//! small expression and then on the attack objective of a random encoder.

use std::sync::Arc;

use capsule_evasion::attack::AttackTarget;
use capsule_evasion::classifier::{ClassifierModel, KMeansModel, LabelPermutation};
use capsule_evasion::encoder::{EncoderParams, PresenceMode};
use capsule_evasion::tensor::{Bindings, Graph, Tensor};
use capsule_evasion::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> capsule_evasion::Result<()> {
    run_example()
}

pub fn run_example() -> capsule_evasion::Result<()> {
    // f(x) = sum(sigmoid(x) * tanh(x)) + ||x||_2
    let mut g = Graph::new();
    let x = g.input("x");
    let s = g.sigmoid(x);
    let t = g.tanh(x);
    let st = g.mul(s, t);
    let total = g.sum(st);
    let norm = g.l2_norm(x);
    g.add(total, norm);

    let value = Tensor::vector(vec![-1.5, -0.2, 0.4, 2.0]);
    let bindings = Bindings::new().with("x", &value);
    println!("f(x) = {:.6}", g.evaluate(&bindings)?.item());
    println!("grad = {:?}", g.gradient("x", &bindings)?.data());
    println!(
        "max relative error = {:.2e}",
        g.check_gradient("x", &bindings, 1e-5)?
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (side, k) = (8, 4);
    let encoder = Arc::new(EncoderParams::random(k, 3, side, side, &mut rng));
    let centroids = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 0.8 } else { 0.2 }).collect())
        .collect();
    let classifier = Arc::new(ClassifierModel::new(
        KMeansModel::from_centroids(centroids)?,
        LabelPermutation::identity(k),
        PresenceMode::Prior,
    )?);
    let image = Image::new(side, side, (0..side * side).map(|_| rng.gen()).collect())?;
    let target = AttackTarget::new(encoder, classifier, &image)?;

    let graph = target.target_graph();
    let input = image.to_tensor();
    let bindings = Bindings::new().with("x", &input);
    println!(
        "target f = {:.6}, max relative error = {:.2e}",
        target.target_f(&image)?,
        graph.check_gradient("x", &bindings, 1e-5)?
    );
    Ok(())
}
