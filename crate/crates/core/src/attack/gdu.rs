use super::{
    check_input, compute_mask, l2_norm, perturbation_of, Algorithm, AttackConfig, AttackResult,
    AttackTarget, AttackTrace, Mask,
};
use crate::error::Result;
use crate::image::Image;
use crate::tensor::{sign, Bindings, Graph, Tensor};

/// Iterated signed-gradient descent on `f`:
///
/// ```text
/// x_{N+1} = clip01(x_N - alpha * m * sign(grad f(x_N)))
/// ```
///
/// with `m = 1` when the mask is off. Every iterate is classified and the
/// misclassified one closest to `x` in L2 is returned.
pub fn gdu_attack(target: &AttackTarget, x: &Image, config: &AttackConfig) -> Result<AttackResult> {
    check_input(target, x)?;
    let mask = if config.mask {
        compute_mask(x)
    } else {
        Mask::ones(x.len())
    };
    let mut graph = Graph::new();
    let input = graph.input("x");
    let objective = target.build_objective(&mut graph, input);

    let mut current = x.to_tensor();
    let mut best: Option<(f64, usize, Image, usize)> = None;
    let mut clip_events = 0;
    for iteration in 1..=config.iterations {
        let grad = {
            let eval = graph.forward(&Bindings::new().with("x", &current))?;
            eval.gradients(objective.f_in, &[input])?.remove(0)
        };
        let mut next = Vec::with_capacity(current.len());
        for ((&v, &g), &m) in current.data().iter().zip(grad.data()).zip(mask.weights()) {
            let stepped = v - config.alpha * m * sign(g);
            if !(0.0..=1.0).contains(&stepped) {
                clip_events += 1;
            }
            next.push(stepped.clamp(0.0, 1.0));
        }
        current = Tensor::vector(next);

        let eval = graph.forward(&Bindings::new().with("x", &current))?;
        if let Some(label) = target.flipped_label(eval.value(objective.presence).data())? {
            let candidate = x.with_pixels(current.data().to_vec())?;
            let dist = l2_norm(&perturbation_of(x, &candidate));
            if best.as_ref().is_none_or(|(d, ..)| dist < *d) {
                best = Some((dist, iteration, candidate, label));
            }
        }
    }

    Ok(match best {
        Some((_, iteration, adversarial, label)) => AttackResult::success(
            Algorithm::Gdu,
            x,
            adversarial,
            label,
            target,
            config.iterations,
            iteration,
            clip_events,
            AttackTrace::Gdu,
        ),
        None => AttackResult::failure(
            Algorithm::Gdu,
            x,
            target,
            config.iterations,
            clip_events,
            AttackTrace::Gdu,
        ),
    })
}
