//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    centroids: Vec<Vec<f64>>,
    /// Seed used for k-means++ initialisation; `None` for models read from disk.
    seed: Option<u64>,
}

/// A fitted model together with its convergence trace.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: KMeansModel,
    pub iterations: usize,
    /// Within-cluster sum of squares after every centroid update.
    pub inertia_history: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, point);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let mut target = rng.gen_range(0.0..1.0) * total;
        let mut chosen = None;
        for (i, &d) in dist.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            chosen = Some(i);
            if target < d {
                break;
            }
            target -= d;
        }
        let chosen = chosen.expect("a point outside the current centroids exists");
        let c = points[chosen].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

pub fn kmeans_fit(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansModel> {
    Ok(kmeans_fit_traced(points, k, seed)?.model)
}

pub fn kmeans_fit_traced(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let Some(dim) = points.first().map(Vec::len) else {
        return Err(Error::TooFewPoints { k, distinct: 0 });
    };
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config("k-means points must be finite".into()));
    }
    let distinct = distinct_count(points);
    if distinct < k {
        return Err(Error::TooFewPoints { k, distinct });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        let mut changed = false;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(&centroids, p);
            dists[i] = d;
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        iterations += 1;

        // Repair empty clusters by moving the worst-fitting point into them.
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let (worst, _) = dists
                .iter()
                .enumerate()
                .filter(|(i, _)| counts[assignment[*i]] > 1)
                .fold(
                    (usize::MAX, -1.0),
                    |best, (i, &d)| if d > best.1 { (i, d) } else { best },
                );
            if worst == usize::MAX {
                break;
            }
            counts[assignment[worst]] -= 1;
            assignment[worst] = empty;
            counts[empty] = 1;
            dists[worst] = 0.0;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &a) in points.iter().zip(&assignment) {
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, (sum, &n)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            if n > 0 {
                *c = sum.iter().map(|s| s / n as f64).collect();
            }
        }
        history.push(inertia_of(&centroids, points, &assignment));
    }

    Ok(KMeansFit {
        model: KMeansModel {
            centroids,
            seed: Some(seed),
        },
        iterations,
        inertia_history: history,
    })
}

fn inertia_of(centroids: &[Vec<f64>], points: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

impl KMeansModel {
    pub fn from_centroids(centroids: Vec<Vec<f64>>) -> Result<Self> {
        let Some(dim) = centroids.first().map(Vec::len) else {
            return Err(Error::Config("k must be at least 1".into()));
        };
        if let Some(c) = centroids.iter().find(|c| c.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: c.len(),
            });
        }
        if centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("centroids must be finite".into()));
        }
        Ok(Self {
            centroids,
            seed: None,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn assign(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: point.len(),
            });
        }
        Ok(nearest(&self.centroids, point).0)
    }

    /// Within-cluster sum of squares of `points` under nearest-centroid assignment.
    pub fn inertia(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|p| nearest(&self.centroids, p).1).sum()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn pts(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn symmetric_two_clusters() {
        let m = kmeans_fit(&pts(&[0.0, 0.1, 0.9, 1.0]), 2, 7).unwrap();
        let mut c: Vec<f64> = m.centroids().iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 0.05).abs() < 1e-12);
        assert!((c[1] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let points = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]];
        let m = kmeans_fit(&points, 1, 0).unwrap();
        assert_eq!(m.centroids(), &[vec![3.0, 2.0]]);
    }

    #[test]
    fn three_blobs_recovered() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (b, c) in centres.iter().enumerate() {
            for _ in 0..10 {
                points.push(vec![
                    c[0] + rng.gen_range(-1.0..1.0),
                    c[1] + rng.gen_range(-1.0..1.0),
                ]);
                truth.push(b);
            }
        }
        let m = kmeans_fit(&points, 3, 3).unwrap();
        let assigned: Vec<usize> = points.iter().map(|p| m.assign(p).unwrap()).collect();
        // Same partition: points share a cluster iff they share a blob.
        for i in 0..points.len() {
            for j in 0..points.len() {
                assert_eq!(assigned[i] == assigned[j], truth[i] == truth[j]);
            }
        }
        // Brute-force nearest-centroid agrees with assign.
        for (p, &a) in points.iter().zip(&assigned) {
            let brute = (0..3)
                .min_by(|&x, &y| {
                    squared_distance(p, &m.centroids()[x])
                        .total_cmp(&squared_distance(p, &m.centroids()[y]))
                })
                .unwrap();
            assert_eq!(brute, a);
        }
    }

    #[test]
    fn assign_rules() {
        let m = KMeansModel::from_centroids(vec![vec![0.05], vec![0.95], vec![2.0]]).unwrap();
        assert_eq!(m.assign(&[0.1]).unwrap(), 0);
        assert_eq!(m.assign(&[2.0]).unwrap(), 2);
        let tied = KMeansModel::from_centroids(vec![vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(tied.assign(&[0.5]).unwrap(), 0);
        assert!(matches!(
            m.assign(&[0.1, 0.2]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn too_few_distinct_points() {
        let err = kmeans_fit(&pts(&[1.0, 1.0, 1.0, 2.0]), 3, 0).unwrap_err();
        assert!(matches!(err, Error::TooFewPoints { k: 3, distinct: 2 }));
    }

    #[test]
    fn fit_is_deterministic() {
        let points: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64).cos()])
            .collect();
        assert_eq!(
            kmeans_fit(&points, 4, 9).unwrap(),
            kmeans_fit(&points, 4, 9).unwrap()
        );
    }

    proptest! {
        #[test]
        fn inertia_never_increases(
            raw in proptest::collection::vec(-5.0f64..5.0, 20..80),
            k in 1usize..6,
            seed in 0u64..1000,
        ) {
            let points: Vec<Vec<f64>> = raw.chunks_exact(2).map(|c| c.to_vec()).collect();
            prop_assume!(distinct_count(&points) >= k);
            let fit = kmeans_fit_traced(&points, k, seed).unwrap();
            prop_assert_eq!(fit.model.k(), k);
            for w in fit.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", fit.inertia_history);
            }
        }
    }
}
