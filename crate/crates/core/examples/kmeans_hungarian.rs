//! Clusters labelled points with k-means++ and maps cluster ids to labels by
//! minimum-cost assignment over the confusion counts.

use capsule_evasion::classifier::{
    confusion_counts, fit_permutation, hungarian, kmeans_fit_traced,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> capsule_evasion::Result<()> {
    run_example()
}

pub fn run_example() -> capsule_evasion::Result<()> {
    let cost = vec![
        vec![4.0, 1.0, 3.0],
        vec![2.0, 0.0, 5.0],
        vec![3.0, 2.0, 2.0],
    ];
    let a = hungarian(&cost)?;
    println!("assignment {:?} with cost {}", a.row_to_col, a.cost);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let centres = [[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9]];
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for i in 0..300 {
        let label = i % 3;
        points.push(
            centres[label]
                .iter()
                .map(|c| c + rng.gen_range(-0.1..0.1))
                .collect::<Vec<f64>>(),
        );
        labels.push(label);
    }

    let fit = kmeans_fit_traced(&points, 3, 7)?;
    println!("k-means converged after {} iterations", fit.iterations);
    println!("inertia {:?}", fit.inertia_history);
    let clusters: Vec<usize> = points
        .iter()
        .map(|p| fit.model.assign(p))
        .collect::<Result<_, _>>()?;
    let counts = confusion_counts(&clusters, &labels, 3)?;
    println!("confusion counts (cluster x label): {counts:?}");
    let permutation = fit_permutation(&clusters, &labels, 3)?;
    println!("cluster -> label: {:?}", permutation.mapping());
    let correct = clusters
        .iter()
        .zip(&labels)
        .filter(|(&c, &l)| permutation.label_of(c) == l)
        .count();
    println!("accuracy {:.4}", correct as f64 / labels.len() as f64);
    Ok(())
}
