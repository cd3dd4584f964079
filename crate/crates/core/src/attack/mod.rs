//! Evasion attacks that suppress the capsules activated by the true class.
//!
//! Every attack starts from the activated subset `S`, the capsules whose
//! presence exceeds the mean presence on the clean image, and drives down
//! `f(x') = sum_{i in S} E(x')_i` until the k-means classifier changes its
//! decision. Three perturbation strategies are provided:
//!
//! * [`gdu_attack`]: iterated signed-gradient steps clipped to `[0, 1]`.
//! * [`psc_attack`]: darkens the pixel pair with the strongest saliency.
//! * [`opt_attack`]: Adam on `||p||_2 + alpha * f` in tanh space with a
//!   binary search over `alpha`.

mod gdu;
mod mask;
mod opt;
mod psc;

pub use gdu::gdu_attack;
pub use mask::{compute_mask, Mask};
pub use opt::{
    adam_step, from_w_space, opt_attack, to_w_space, update_alpha, AdamConfig, AdamState,
    AlphaBracket,
};
pub use psc::{pixel_pair_saliency, psc_attack, select_pixel_pair};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::encoder::{EncoderParams, PresenceMode, WeightSource};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{Bindings, Graph, NodeId, Tensor};

/// Perturbation algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gdu,
    Psc,
    Opt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Gdu, Algorithm::Psc, Algorithm::Opt];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Gdu => "gdu",
            Algorithm::Psc => "psc",
            Algorithm::Opt => "opt",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gdu" => Ok(Algorithm::Gdu),
            "psc" => Ok(Algorithm::Psc),
            "opt" => Ok(Algorithm::Opt),
            other => Err(Error::Config(format!(
                "unknown algorithm `{other}` (expected gdu, psc or opt)"
            ))),
        }
    }
}

/// Hyperparameters for one attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub algorithm: Algorithm,
    /// Step size (GDU, PSC) or initial objective weight (OPT).
    pub alpha: f64,
    /// OPT only: initial lower bound of the alpha search.
    pub alpha_lower: f64,
    /// OPT only: initial upper bound; `None` is unbounded.
    pub alpha_upper: Option<f64>,
    /// GDU and PSC iteration budget.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub mask: bool,
    /// Scale applied to `2x - 1` before `atanh` so that `x in {0, 1}` stays finite.
    pub arctanh_epsilon: f64,
    pub adam: AdamConfig,
    /// Seeds the OPT starting points.
    pub seed: u64,
}

impl AttackConfig {
    /// Defaults for `algorithm`: GDU alpha 0.05 for 100 iterations, PSC alpha
    /// 0.5 for 200 iterations, OPT alpha 100 in `[0, inf)` with 9 outer and
    /// 300 inner iterations.
    pub fn defaults(algorithm: Algorithm) -> Self {
        let (alpha, iterations) = match algorithm {
            Algorithm::Gdu => (0.05, 100),
            Algorithm::Psc => (0.5, 200),
            Algorithm::Opt => (100.0, 0),
        };
        Self {
            algorithm,
            alpha,
            alpha_lower: 0.0,
            alpha_upper: None,
            iterations,
            outer_iterations: 9,
            inner_iterations: 300,
            mask: true,
            arctanh_epsilon: 0.999_999,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(0.0 < self.arctanh_epsilon && self.arctanh_epsilon < 1.0) {
            return fail(format!(
                "arctanh epsilon must lie in (0, 1), got {}",
                self.arctanh_epsilon
            ));
        }
        match self.algorithm {
            Algorithm::Gdu | Algorithm::Psc => {
                if self.iterations == 0 {
                    return fail("iteration count must be at least 1".into());
                }
            }
            Algorithm::Opt => {
                if self.outer_iterations == 0 || self.inner_iterations == 0 {
                    return fail("outer and inner iteration counts must be at least 1".into());
                }
                if !(self.alpha_lower >= 0.0 && self.alpha_lower <= self.alpha) {
                    return fail("alpha lower bound must satisfy 0 <= lower <= alpha".into());
                }
                if let Some(upper) = self.alpha_upper {
                    if !(upper >= self.alpha) {
                        return fail("alpha upper bound must be at least alpha".into());
                    }
                }
                if !(self.adam.learning_rate > 0.0) {
                    return fail("Adam learning rate must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Indices whose presence is strictly above the mean presence. When none
/// is (all presences equal), the single largest entry is used, lowest index
/// first.
pub fn capsule_subset(presence: &[f64]) -> Vec<usize> {
    if presence.is_empty() {
        return Vec::new();
    }
    let mean = presence.iter().sum::<f64>() / presence.len() as f64;
    let subset: Vec<usize> = (0..presence.len())
        .filter(|&i| presence[i] > mean)
        .collect();
    if !subset.is_empty() {
        return subset;
    }
    let mut best = 0;
    for (i, &p) in presence.iter().enumerate() {
        if p > presence[best] {
            best = i;
        }
    }
    vec![best]
}

/// Everything an attack needs to know about one clean sample.
#[derive(Debug, Clone)]
pub struct AttackTarget {
    encoder: Arc<EncoderParams>,
    classifier: Arc<ClassifierModel>,
    original_label: usize,
    subset: Vec<usize>,
}

impl AttackTarget {
    /// Encodes `x`, records the classifier's decision on it and the activated
    /// subset. The presence mode is the classifier's own mode.
    pub fn new(
        encoder: Arc<EncoderParams>,
        classifier: Arc<ClassifierModel>,
        x: &Image,
    ) -> Result<Self> {
        if classifier.dim() != encoder.capsules() {
            return Err(Error::Dimension {
                expected: encoder.capsules(),
                got: classifier.dim(),
            });
        }
        let presence = encoder.presence_for(x, classifier.mode)?;
        let original_label = classifier.classify(&presence)?;
        let subset = capsule_subset(&presence);
        Ok(Self {
            encoder,
            classifier,
            original_label,
            subset,
        })
    }

    /// Overrides the activated subset.
    pub fn with_subset(mut self, subset: Vec<usize>) -> Result<Self> {
        if subset.is_empty() || subset.iter().any(|&i| i >= self.encoder.capsules()) {
            return Err(Error::Config(format!("invalid capsule subset {subset:?}")));
        }
        self.subset = subset;
        Ok(self)
    }

    pub fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn classifier(&self) -> &ClassifierModel {
        &self.classifier
    }

    pub fn mode(&self) -> PresenceMode {
        self.classifier.mode
    }

    pub fn original_label(&self) -> usize {
        self.original_label
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn presence(&self, x: &Image) -> Result<Vec<f64>> {
        self.encoder.presence_for(x, self.mode())
    }

    pub fn classify(&self, x: &Image) -> Result<usize> {
        self.classifier.classify(&self.presence(x)?)
    }

    /// `f(x') = sum_{i in S} presence(x')_i`.
    pub fn target_f(&self, x_adv: &Image) -> Result<f64> {
        let presence = self.presence(x_adv)?;
        Ok(self.subset.iter().map(|&i| presence[i]).sum())
    }

    fn indicator(&self, inside: bool) -> Tensor {
        let mut v = vec![if inside { 0.0 } else { 1.0 }; self.encoder.capsules()];
        for &i in &self.subset {
            v[i] = if inside { 1.0 } else { 0.0 };
        }
        Tensor::vector(v)
    }

    /// Appends the encoder reading `input` plus the out-of-subset and
    /// in-subset presence sums. `f_in` is the last node pushed.
    pub(crate) fn build_objective(&self, graph: &mut Graph, input: NodeId) -> Objective {
        let nodes = self.encoder.build(graph, input, WeightSource::Embedded);
        let presence = nodes.presence(self.mode());
        let ind_in = graph.constant(self.indicator(true));
        let ind_out = graph.constant(self.indicator(false));
        let weighted_out = graph.mul(presence, ind_out);
        let f_out = graph.sum(weighted_out);
        let weighted_in = graph.mul(presence, ind_in);
        let f_in = graph.sum(weighted_in);
        Objective {
            presence,
            f_in,
            f_out,
        }
    }

    /// Graph of `target_f` over an input leaf named `x`.
    pub fn target_graph(&self) -> Graph {
        let mut graph = Graph::new();
        let x = graph.input("x");
        self.build_objective(&mut graph, x);
        graph
    }

    /// Gradient of `target_f` with respect to the pixels of `x_adv`.
    pub fn target_gradient(&self, x_adv: &Image) -> Result<Vec<f64>> {
        let graph = self.target_graph();
        let xt = x_adv.to_tensor();
        Ok(graph
            .gradient("x", &Bindings::new().with("x", &xt))?
            .into_data())
    }

    /// The new label when `presence` is classified differently from the clean image.
    pub(crate) fn flipped_label(&self, presence: &[f64]) -> Result<Option<usize>> {
        let label = self.classifier.classify(presence)?;
        Ok((label != self.original_label).then_some(label))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Objective {
    pub presence: NodeId,
    pub f_in: NodeId,
    pub f_out: NodeId,
}

/// One PSC iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PscStep {
    pub pair: (usize, usize),
    /// Pixel values after the decrease.
    pub values_after: (f64, f64),
    /// Pixels that reached zero and left the search domain this step.
    pub removed: Vec<usize>,
    pub domain_size: usize,
}

/// One OPT outer round: the bracket in force, whether any inner iterate
/// misclassified, and the bracket after the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRound {
    pub before: AlphaBracket,
    pub succeeded: bool,
    /// Smallest `||x_adv - x||_2` among this round's misclassified iterates.
    pub best_distance: Option<f64>,
    pub after: AlphaBracket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttackTrace {
    Gdu,
    Psc {
        initial_domain: Vec<usize>,
        steps: Vec<PscStep>,
    },
    Opt {
        rounds: Vec<AlphaRound>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub algorithm: Algorithm,
    pub success: bool,
    /// `x_adv - x`; all zeros when the attack fails.
    pub perturbation: Vec<f64>,
    /// The adversarial image as computed (the clean image on failure).
    pub adversarial: Image,
    /// Euclidean norm of `perturbation`.
    pub l2: f64,
    pub iterations: usize,
    /// Iterate that produced the returned perturbation, counted from 1.
    pub best_iterate: Option<usize>,
    pub original_label: usize,
    pub adversarial_label: Option<usize>,
    /// Pixel updates that were changed by clipping to `[0, 1]`.
    pub clip_events: usize,
    pub trace: AttackTrace,
}

impl AttackResult {
    pub(crate) fn failure(
        algorithm: Algorithm,
        x: &Image,
        target: &AttackTarget,
        iterations: usize,
        clip_events: usize,
        trace: AttackTrace,
    ) -> Self {
        Self {
            algorithm,
            success: false,
            perturbation: vec![0.0; x.len()],
            adversarial: x.clone(),
            l2: 0.0,
            iterations,
            best_iterate: None,
            original_label: target.original_label,
            adversarial_label: None,
            clip_events,
            trace,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn success(
        algorithm: Algorithm,
        x: &Image,
        adversarial: Image,
        adversarial_label: usize,
        target: &AttackTarget,
        iterations: usize,
        best_iterate: usize,
        clip_events: usize,
        trace: AttackTrace,
    ) -> Self {
        let perturbation = perturbation_of(x, &adversarial);
        let l2 = l2_norm(&perturbation);
        Self {
            algorithm,
            success: true,
            perturbation,
            adversarial,
            l2,
            iterations,
            best_iterate: Some(best_iterate),
            original_label: target.original_label,
            adversarial_label: Some(adversarial_label),
            clip_events,
            trace,
        }
    }
}

pub(crate) fn perturbation_of(x: &Image, adversarial: &Image) -> Vec<f64> {
    adversarial
        .pixels()
        .iter()
        .zip(x.pixels())
        .map(|(a, b)| a - b)
        .collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs the algorithm selected by `config`.
pub fn run_attack(target: &AttackTarget, x: &Image, config: &AttackConfig) -> Result<AttackResult> {
    match config.algorithm {
        Algorithm::Gdu => gdu_attack(target, x, config),
        Algorithm::Psc => psc_attack(target, x, config),
        Algorithm::Opt => opt_attack(target, x, config),
    }
}

fn check_input(target: &AttackTarget, x: &Image) -> Result<()> {
    if x.len() != target.encoder.pixels() {
        return Err(Error::PixelCount {
            expected: target.encoder.pixels(),
            got: x.len(),
        });
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::classifier::{KMeansModel, LabelPermutation};

    #[test]
    fn subset_above_mean() {
        assert_eq!(capsule_subset(&[0.9, 0.1, 0.2, 0.0]), vec![0]);
        assert_eq!(capsule_subset(&[0.8, 0.7, 0.1, 0.0]), vec![0, 1]);
    }

    #[test]
    fn subset_falls_back_to_argmax() {
        assert_eq!(capsule_subset(&[0.5, 0.5]), vec![0]);
        assert_eq!(capsule_subset(&[0.3]), vec![0]);
    }

    fn random_target(seed: u64) -> (AttackTarget, Image) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Arc::new(EncoderParams::random(4, 3, 4, 4, &mut rng));
        let centroids = (0..4)
            .map(|i| {
                let mut c = vec![0.0; 4];
                c[i] = 1.0;
                c
            })
            .collect();
        let classifier = Arc::new(
            ClassifierModel::new(
                KMeansModel::from_centroids(centroids).unwrap(),
                LabelPermutation::identity(4),
                PresenceMode::Prior,
            )
            .unwrap(),
        );
        let x = Image::new(4, 4, (0..16).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        (AttackTarget::new(encoder, classifier, &x).unwrap(), x)
    }

    #[test]
    fn target_f_is_indexed_sum() {
        let (target, x) = random_target(1);
        let presence = target.presence(&x).unwrap();
        let t = target.clone().with_subset(vec![0, 2]).unwrap();
        assert_eq!(t.target_f(&x).unwrap(), presence[0] + presence[2]);
        let all = target.with_subset(vec![0, 1, 2, 3]).unwrap();
        let total: f64 = presence.iter().sum();
        assert!((all.target_f(&x).unwrap() - total).abs() < 1e-15);
    }

    #[test]
    fn target_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (target, x) = random_target(10 + seed);
            let graph = target.target_graph();
            let xt = x.to_tensor();
            let err = graph
                .check_gradient("x", &Bindings::new().with("x", &xt), 1e-5)
                .unwrap();
            assert!(err < 1e-4, "relative error {err}");
            let f = graph
                .evaluate(&Bindings::new().with("x", &xt))
                .unwrap()
                .item();
            assert!((f - target.target_f(&x).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn subset_override_is_validated() {
        let (target, _) = random_target(2);
        assert!(target.clone().with_subset(vec![]).is_err());
        assert!(target.with_subset(vec![4]).is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let gdu = AttackConfig::defaults(Algorithm::Gdu);
        assert_eq!((gdu.alpha, gdu.iterations), (0.05, 100));
        let psc = AttackConfig::defaults(Algorithm::Psc);
        assert_eq!((psc.alpha, psc.iterations), (0.5, 200));
        let opt = AttackConfig::defaults(Algorithm::Opt);
        assert_eq!(
            (
                opt.alpha,
                opt.alpha_lower,
                opt.alpha_upper,
                opt.outer_iterations,
                opt.inner_iterations
            ),
            (100.0, 0.0, None, 9, 300)
        );
        for alg in Algorithm::ALL {
            assert!(AttackConfig::defaults(alg).validate().is_ok());
        }
        let bad = AttackConfig {
            alpha: -1.0,
            ..gdu.clone()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            iterations: 0,
            ..gdu
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            arctanh_epsilon: 1.0,
            ..opt
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn algorithm_names_parse() {
        for alg in Algorithm::ALL {
            assert_eq!(alg.as_str().parse::<Algorithm>().unwrap(), alg);
        }
        assert!("fgsm".parse::<Algorithm>().is_err());
    }
}
