//! Unsupervised k-means classifier over capsule presences.
//!
//! Presence vectors are clustered with k-means, and clusters are mapped to
//! ground-truth labels by the assignment that maximises agreement on the
//! fitting set.

mod hungarian;
mod kmeans;

pub use hungarian::{hungarian, Assignment};
pub use kmeans::{kmeans_fit, kmeans_fit_traced, KMeansFit, KMeansModel, MAX_ITERATIONS};

use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::encoder::PresenceMode;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CCLS";
const VERSION: u32 = 1;

/// Bijection from cluster index to class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPermutation {
    mapping: Vec<usize>,
}

impl LabelPermutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::Config(format!("{mapping:?} is not a permutation")));
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity(k: usize) -> Self {
        Self {
            mapping: (0..k).collect(),
        }
    }

    pub fn label_of(&self, cluster: usize) -> usize {
        self.mapping[cluster]
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

/// `N[cluster][label]` co-occurrence counts.
pub fn confusion_counts(
    cluster_ids: &[usize],
    labels: &[usize],
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    if cluster_ids.len() != labels.len() {
        return Err(Error::Dimension {
            expected: cluster_ids.len(),
            got: labels.len(),
        });
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&c, &l) in cluster_ids.iter().zip(labels) {
        if c >= k || l >= k {
            return Err(Error::LabelOutOfRange {
                label: c.max(l),
                classes: k,
            });
        }
        counts[c][l] += 1;
    }
    Ok(counts)
}

/// Number of samples whose cluster maps to their label.
pub fn agreement(counts: &[Vec<usize>], permutation: &LabelPermutation) -> usize {
    counts
        .iter()
        .enumerate()
        .map(|(c, row)| row[permutation.label_of(c)])
        .sum()
}

/// Cluster-to-label mapping maximising agreement, found by minimising
/// `max(N) - N` with the Hungarian method.
pub fn fit_permutation(
    cluster_ids: &[usize],
    labels: &[usize],
    k: usize,
) -> Result<LabelPermutation> {
    let counts = confusion_counts(cluster_ids, labels, k)?;
    let max = counts.iter().flatten().copied().max().unwrap_or(0);
    let cost: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| row.iter().map(|&n| (max - n) as f64).collect())
        .collect();
    let assignment = hungarian(&cost)?;
    LabelPermutation::new(assignment.row_to_col)
}

/// k-means model, label permutation and the presence mode it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub kmeans: KMeansModel,
    pub permutation: LabelPermutation,
    pub mode: PresenceMode,
}

impl ClassifierModel {
    pub fn new(
        kmeans: KMeansModel,
        permutation: LabelPermutation,
        mode: PresenceMode,
    ) -> Result<Self> {
        if kmeans.k() != permutation.len() {
            return Err(Error::Dimension {
                expected: kmeans.k(),
                got: permutation.len(),
            });
        }
        Ok(Self {
            kmeans,
            permutation,
            mode,
        })
    }

    /// Clusters `presences` into `k` groups and maps clusters to `labels`.
    pub fn fit(
        presences: &[Vec<f64>],
        labels: &[usize],
        k: usize,
        mode: PresenceMode,
        seed: u64,
    ) -> Result<Self> {
        if presences.len() != labels.len() {
            return Err(Error::Dimension {
                expected: presences.len(),
                got: labels.len(),
            });
        }
        let kmeans = kmeans_fit(presences, k, seed)?;
        let clusters = presences
            .iter()
            .map(|p| kmeans.assign(p))
            .collect::<Result<Vec<_>>>()?;
        let permutation = fit_permutation(&clusters, labels, k)?;
        Self::new(kmeans, permutation, mode)
    }

    /// Presence dimension `K`.
    pub fn dim(&self) -> usize {
        self.kmeans.dim()
    }

    pub fn classify(&self, presence: &[f64]) -> Result<usize> {
        Ok(self.permutation.label_of(self.kmeans.assign(presence)?))
    }

    /// Fraction of `presences` classified as their label.
    pub fn accuracy(&self, presences: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if presences.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        for (p, &l) in presences.iter().zip(labels) {
            if self.classify(p)? == l {
                correct += 1;
            }
        }
        Ok(correct as f64 / presences.len() as f64)
    }

    /// Serialises to the `CCLS` little-endian format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u8(self.mode.to_byte());
        w.usize(self.kmeans.k());
        w.usize(self.kmeans.dim());
        for c in self.kmeans.centroids() {
            w.f64s(c);
        }
        for &m in self.permutation.mapping() {
            w.usize(m);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new("classifier", data);
        if r.take(4)? != MAGIC {
            return Err(Error::format("classifier", "missing CCLS magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                "classifier",
                format!("unsupported version {version}"),
            ));
        }
        let mode = PresenceMode::from_byte(r.u8()?)
            .ok_or_else(|| Error::format("classifier", "unknown presence mode byte"))?;
        let k = r.usize()?;
        let dim = r.usize()?;
        if k == 0 || dim == 0 {
            return Err(Error::format("classifier", "k and K must be positive"));
        }
        let centroids = (0..k).map(|_| r.f64s(dim)).collect::<Result<Vec<_>>>()?;
        let mapping = (0..k).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        r.expect_end()?;
        let kmeans = KMeansModel::from_centroids(centroids)
            .map_err(|e| Error::format("classifier", e.to_string()))?;
        let permutation = LabelPermutation::new(mapping)
            .map_err(|e| Error::format("classifier", e.to_string()))?;
        Self::new(kmeans, permutation, mode)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn perfect_agreement() {
        // Labels 7 and 3 relabelled to 1 and 0.
        let p = fit_permutation(&[0, 0, 1, 1], &[1, 1, 0, 0], 2).unwrap();
        assert_eq!(p.mapping(), &[1, 0]);
    }

    #[test]
    fn swapped_agreement() {
        let p = fit_permutation(&[0, 1, 0, 1], &[1, 0, 1, 0], 2).unwrap();
        assert_eq!(p.mapping(), &[1, 0]);
    }

    #[test]
    fn out_of_range_values_rejected() {
        assert!(fit_permutation(&[0, 2], &[0, 1], 2).is_err());
        assert!(fit_permutation(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn permutation_must_be_bijective() {
        assert!(LabelPermutation::new(vec![0, 0]).is_err());
        assert!(LabelPermutation::new(vec![0, 2]).is_err());
        assert!(LabelPermutation::new(vec![1, 0]).is_ok());
    }

    fn model() -> ClassifierModel {
        let kmeans =
            KMeansModel::from_centroids(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]])
                .unwrap();
        let perm = LabelPermutation::new(vec![2, 0, 1]).unwrap();
        ClassifierModel::new(kmeans, perm, PresenceMode::Prior).unwrap()
    }

    #[test]
    fn classify_composes_assign_and_permutation() {
        let m = model();
        assert_eq!(m.classify(&[1.0, 0.0]).unwrap(), 2);
        assert_eq!(m.classify(&[0.0, 1.0]).unwrap(), 0);
        assert_eq!(
            m.classify(&[0.1, 0.9]).unwrap(),
            m.classify(&[0.2, 0.8]).unwrap()
        );
        assert_eq!(
            m.classify(&[0.4, 0.3]).unwrap(),
            m.classify(&[0.4, 0.3]).unwrap()
        );
        assert!(m.classify(&[1.0]).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let m = ClassifierModel {
            mode: PresenceMode::Posterior,
            ..model()
        };
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"CCLS");
        // magic + version + mode + k + K + 3*2 f64 + 3 u32
        assert_eq!(bytes.len(), 4 + 4 + 1 + 4 + 4 + 48 + 12);
        let back = ClassifierModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.kmeans.centroids(), m.kmeans.centroids());
        assert_eq!(back.permutation, m.permutation);
        assert_eq!(back.mode, PresenceMode::Posterior);
        assert_eq!(back.to_bytes(), bytes);
        assert!(ClassifierModel::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    fn brute_force_agreement(counts: &[Vec<usize>]) -> usize {
        fn rec(counts: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
            if row == counts.len() {
                return 0;
            }
            let mut best = 0;
            for j in 0..counts.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(counts[row][j] + rec(counts, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(counts, 0, &mut vec![false; counts.len()])
    }

    proptest! {
        #[test]
        fn permutation_maximises_agreement(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (clusters, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let p = fit_permutation(&clusters, &labels, 4).unwrap();
            let counts = confusion_counts(&clusters, &labels, 4).unwrap();
            let got = agreement(&counts, &p);
            prop_assert_eq!(got, brute_force_agreement(&counts));
            prop_assert!(got >= agreement(&counts, &LabelPermutation::identity(4)));
        }
    }
}
