use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_input, compute_mask, Algorithm, AlphaRound, AttackConfig, AttackResult, AttackTarget,
    AttackTrace,
};
use crate::error::Result;
use crate::image::Image;
use crate::tensor::{Bindings, Graph, Tensor};

/// `w = atanh((2x - 1) * epsilon)`. The scaling keeps the argument strictly
/// inside `(-1, 1)` for pixels at 0 or 1.
pub fn to_w_space(x: &[f64], epsilon: f64) -> Vec<f64> {
    x.iter()
        .map(|&v| ((2.0 * v - 1.0) * epsilon).atanh())
        .collect()
}

/// `x_adv = (tanh(w + p') + 1) / 2`, always inside `[0, 1]`.
pub fn from_w_space(w: &[f64], p: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(p)
        .map(|(&w, &p)| ((w + p).tanh() + 1.0) * 0.5)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of `params` against `grad`.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64], config: &AdamConfig) {
    assert_eq!(
        params.len(),
        grad.len(),
        "parameter and gradient lengths differ"
    );
    if state.m.is_empty() {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
    }
    assert_eq!(state.m.len(), params.len(), "Adam state length mismatch");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}

/// Current objective weight with its search interval. `upper = None` means
/// no successful round has been seen yet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBracket {
    pub alpha: f64,
    pub lower: f64,
    pub upper: Option<f64>,
}

/// Binary-search step over `alpha`: a successful round lowers the upper
/// bound to `alpha`, a failed one raises the lower bound to it. The next
/// alpha is the midpoint, or `10 * alpha` while the upper bound is unbounded.
pub fn update_alpha(bracket: AlphaBracket, succeeded: bool) -> AlphaBracket {
    let AlphaBracket {
        alpha,
        mut lower,
        mut upper,
    } = bracket;
    if succeeded {
        upper = Some(alpha);
    } else {
        lower = alpha;
    }
    let alpha = match upper {
        Some(u) => (u + lower) / 2.0,
        None => alpha * 10.0,
    };
    AlphaBracket {
        alpha,
        lower,
        upper,
    }
}

/// Minimises `||x_adv - x||_2 + alpha * f(x_adv)` with Adam over `p'`, where
/// `x_adv = (tanh(w + p') + 1) / 2` and `w` is `x` in tanh space.
///
/// Each outer round restarts Adam from `p' ~ U(0, 1)` and runs the configured
/// number of inner steps, classifying every iterate. After the round, alpha
/// moves by [`update_alpha`]. With the mask on, the candidate is blended as
/// `x + m * (x_adv - x)`, which stays in `[0, 1]` without clipping. The
/// closest misclassified iterate over all rounds is returned.
pub fn opt_attack(target: &AttackTarget, x: &Image, config: &AttackConfig) -> Result<AttackResult> {
    check_input(target, x)?;
    let n = x.len();
    let w = to_w_space(x.pixels(), config.arctanh_epsilon);

    let mut graph = Graph::new();
    let p = graph.input("p");
    let alpha = graph.input("alpha");
    let w_node = graph.constant(Tensor::vector(w));
    let x_node = graph.constant(x.to_tensor());
    let shifted = graph.add(w_node, p);
    let t = graph.tanh(shifted);
    let one = graph.constant(Tensor::scalar(1.0));
    let t = graph.add(t, one);
    let candidate = graph.scale(t, 0.5);
    let x_adv = if config.mask {
        let m = graph.constant(Tensor::vector(compute_mask(x).weights().to_vec()));
        let diff = graph.sub(candidate, x_node);
        let masked = graph.mul(m, diff);
        graph.add(x_node, masked)
    } else {
        candidate
    };
    let delta = graph.sub(x_adv, x_node);
    let distance = graph.l2_norm(delta);
    let objective = target.build_objective(&mut graph, x_adv);
    let weighted = graph.mul(alpha, objective.f_in);
    let loss = graph.add(distance, weighted);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut bracket = AlphaBracket {
        alpha: config.alpha,
        lower: config.alpha_lower,
        upper: config.alpha_upper,
    };
    let mut rounds = Vec::with_capacity(config.outer_iterations);
    let mut best: Option<(f64, usize, Vec<f64>, usize)> = None;
    let inner = config.inner_iterations;

    for round in 0..config.outer_iterations {
        let mut p_prime: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mut adam = AdamState::new();
        let alpha_value = Tensor::scalar(bracket.alpha);
        let mut succeeded = false;
        let mut round_best = None;
        for j in 0..=inner {
            let p_tensor = Tensor::vector(p_prime);
            let bindings = Bindings::new()
                .with("p", &p_tensor)
                .with("alpha", &alpha_value);
            let eval = graph.forward(&bindings)?;
            if j > 0 {
                if let Some(label) = target.flipped_label(eval.value(objective.presence).data())? {
                    succeeded = true;
                    let dist = eval.value(distance).item();
                    round_best = Some(round_best.map_or(dist, |d: f64| d.min(dist)));
                    if best.as_ref().is_none_or(|(d, ..)| dist < *d) {
                        let pixels = eval.value(x_adv).data().to_vec();
                        best = Some((dist, round * inner + j, pixels, label));
                    }
                }
            }
            let grad = if j < inner {
                Some(eval.gradients(loss, &[p])?.remove(0))
            } else {
                None
            };
            drop(eval);
            p_prime = p_tensor.into_data();
            if let Some(grad) = grad {
                adam_step(&mut adam, &mut p_prime, grad.data(), &config.adam);
            }
        }
        let before = bracket;
        bracket = update_alpha(bracket, succeeded);
        rounds.push(AlphaRound {
            before,
            succeeded,
            best_distance: round_best,
            after: bracket,
        });
    }

    let iterations = config.outer_iterations * inner;
    let trace = AttackTrace::Opt { rounds };
    Ok(match best {
        Some((_, iterate, pixels, label)) => AttackResult::success(
            Algorithm::Opt,
            x,
            x.with_pixels(pixels)?,
            label,
            target,
            iterations,
            iterate,
            0,
            trace,
        ),
        None => AttackResult::failure(Algorithm::Opt, x, target, iterations, 0, trace),
    })
}
