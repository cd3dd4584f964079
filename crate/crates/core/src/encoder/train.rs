use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EncoderParams, WeightSource, DEFAULT_PARTS};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{Bindings, Graph, Tensor};

/// Optimiser and schedule settings for surrogate training.
///
/// The defaults are RMSProp with momentum 0.9, epsilon 1e-6, learning rate
/// 3e-5 decayed by 0.96 every 10000 steps, and batches of 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Decay of the squared-gradient accumulator.
    pub rho: f64,
    pub momentum: f64,
    pub epsilon: f64,
    pub decay_steps: u64,
    pub decay_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Number of part capsules `M`.
    pub parts: usize,
    /// Weight of the squared tie between posterior row sums and `K * prior`.
    pub posterior_tie_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            rho: 0.9,
            momentum: 0.9,
            epsilon: 1e-6,
            decay_steps: 10_000,
            decay_rate: 0.96,
            batch_size: 100,
            epochs: 300,
            seed: 42,
            parts: DEFAULT_PARTS,
            posterior_tie_weight: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.decay_steps == 0 {
            return Err(Error::Config("decay steps must be at least 1".into()));
        }
        if self.parts == 0 {
            return Err(Error::Config(
                "part capsule count must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Staircase-decayed learning rate for the update with zero-based index `step`.
    pub fn effective_lr(&self, step: u64) -> f64 {
        let exponent = (step / self.decay_steps) as i32;
        self.learning_rate * self.decay_rate.powi(exponent)
    }
}

/// RMSProp with momentum:
///
/// ```text
/// a <- rho * a + (1 - rho) * g^2
/// b <- momentum * b + lr * g / sqrt(a + eps)
/// param <- param - b
/// ```
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RmsPropState {
    step: u64,
    accum: Vec<Vec<f64>>,
    moment: Vec<Vec<f64>>,
}

impl RmsPropState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<'p>(
        &mut self,
        params: impl IntoIterator<Item = &'p mut Tensor>,
        grads: &[Tensor],
        config: &TrainConfig,
    ) {
        let lr = config.effective_lr(self.step);
        let init = self.accum.is_empty();
        let mut count = 0;
        for (i, (param, grad)) in params.into_iter().zip(grads).enumerate() {
            assert_eq!(param.shape(), grad.shape(), "parameter {i} shape mismatch");
            if init {
                self.accum.push(vec![0.0; param.len()]);
                self.moment.push(vec![0.0; param.len()]);
            }
            let accum = &mut self.accum[i];
            let moment = &mut self.moment[i];
            assert_eq!(accum.len(), param.len(), "state {i} shape mismatch");
            for (((p, &g), a), b) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(accum.iter_mut())
                .zip(moment.iter_mut())
            {
                *a = config.rho * *a + (1.0 - config.rho) * g * g;
                let denom = (*a + config.epsilon).sqrt();
                let update = if denom > 0.0 { lr * g / denom } else { 0.0 };
                *b = config.momentum * *b + update;
                *p -= *b;
            }
            count += 1;
        }
        assert_eq!(count, grads.len(), "gradient count mismatch");
        self.step += 1;
    }
}

struct LossGraph {
    graph: Graph,
}

impl LossGraph {
    fn new(template: &EncoderParams, tie_weight: f64) -> Self {
        let k = template.capsules() as f64;
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.input("y");
        let nodes = template.build(&mut g, x, WeightSource::Leaves);
        // Binary cross-entropy on logits: softplus(z) - y * z.
        let sp = g.softplus(nodes.prior_logits);
        let yz = g.mul(y, nodes.prior_logits);
        let bce = g.sub(sp, yz);
        let bce = g.sum(bce);
        let scaled_prior = g.scale(nodes.prior, k);
        let diff = g.sub(nodes.posterior_reduced, scaled_prior);
        let sq = g.mul(diff, diff);
        let tie = g.mean(sq);
        let tie = g.scale(tie, tie_weight);
        g.add(bce, tie);
        Self { graph: g }
    }

    fn sample_gradients(
        &self,
        params: &EncoderParams,
        x: &Tensor,
        y: &Tensor,
    ) -> Result<Vec<Tensor>> {
        let mut b = Bindings::new().with("x", x).with("y", y);
        params.bind(&mut b);
        let eval = self.graph.forward(&b)?;
        let root = self.graph.root().expect("loss graph is non-empty");
        let leaves: Vec<_> = EncoderParams::PARAM_NAMES
            .iter()
            .map(|n| self.graph.leaf_id(n).expect("parameter leaf"))
            .collect();
        Ok(eval.gradients(root, &leaves)?)
    }
}

/// Trains the surrogate so that class `c` activates capsule `c`.
///
/// Labels must lie in `0..capsules`. Data order and initialisation derive
/// from `config.seed`, so equal inputs give bit-identical weights.
pub fn train(
    config: &TrainConfig,
    images: &[Image],
    labels: &[usize],
    capsules: usize,
) -> Result<EncoderParams> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if images.len() != labels.len() {
        return Err(Error::Dimension {
            expected: images.len(),
            got: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= capsules) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: capsules,
        });
    }
    let (height, width) = (images[0].height(), images[0].width());
    if let Some(bad) = images.iter().find(|im| im.len() != height * width) {
        return Err(Error::PixelCount {
            expected: height * width,
            got: bad.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = EncoderParams::random(capsules, config.parts, height, width, &mut rng);
    let loss = LossGraph::new(&params, config.posterior_tie_weight);
    let inputs: Vec<Tensor> = images.iter().map(Image::to_tensor).collect();
    let targets: Vec<Tensor> = labels
        .iter()
        .map(|&l| {
            let mut t = Tensor::zeros(&[capsules]);
            t.data_mut()[l] = 1.0;
            t
        })
        .collect();

    let mut optimizer = RmsPropState::new();
    let mut order: Vec<usize> = (0..images.len()).collect();
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let per_sample = batch
                .par_iter()
                .map(|&i| loss.sample_gradients(&params, &inputs[i], &targets[i]))
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut total: Vec<Tensor> = per_sample[0]
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for grads in &per_sample {
                for (acc, g) in total.iter_mut().zip(grads) {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
            }
            for t in &mut total {
                for v in t.data_mut() {
                    *v *= scale;
                }
            }
            optimizer.step(params.tensors_mut(), &total, config);
        }
    }
    Ok(params)
}
