use super::{
    check_input, compute_mask, Algorithm, AttackConfig, AttackResult, AttackTarget, AttackTrace,
    PscStep,
};
use crate::error::Result;
use crate::image::Image;
use crate::tensor::{Bindings, Graph};

/// Saliency `(delta1, delta2)` of the pixel pair `(p, q)`: the summed
/// gradient components toward the in-subset and out-of-subset capsules.
pub fn pixel_pair_saliency(g_in: &[f64], g_out: &[f64], p: usize, q: usize) -> (f64, f64) {
    (g_in[p] + g_in[q], g_out[p] + g_out[q])
}

/// Pair in `domain` maximising `-delta1 * delta2` subject to `delta1 > 0`
/// and `delta2 < 0`.
///
/// `domain` must be sorted ascending; pairs are scanned lexicographically and
/// only a strictly larger score replaces the incumbent, so ties resolve to
/// the smallest pair. Returns `None` when no pair scores above zero.
pub fn select_pixel_pair(g_in: &[f64], g_out: &[f64], domain: &[usize]) -> Option<(usize, usize)> {
    let mut best = None;
    let mut best_score = 0.0;
    for (i, &p) in domain.iter().enumerate() {
        let (a, b) = (g_in[p], g_out[p]);
        for &q in &domain[i + 1..] {
            let d1 = a + g_in[q];
            let d2 = b + g_out[q];
            if d1 > 0.0 && d2 < 0.0 {
                let score = -d1 * d2;
                if score > best_score {
                    best_score = score;
                    best = Some((p, q));
                }
            }
        }
    }
    best
}

/// Repeatedly darkens the most salient pixel pair by `alpha` (floored at
/// zero) and stops as soon as the classifier changes its decision.
///
/// The search domain starts as the nonzero pixels of `x`; a pixel leaves it
/// once it reaches zero. With the mask on both gradients are weighted by the
/// mask before pairs are scored.
pub fn psc_attack(target: &AttackTarget, x: &Image, config: &AttackConfig) -> Result<AttackResult> {
    check_input(target, x)?;
    let mask = config.mask.then(|| compute_mask(x));
    let mut graph = Graph::new();
    let input = graph.input("x");
    let objective = target.build_objective(&mut graph, input);

    let initial_domain: Vec<usize> = (0..x.len()).filter(|&i| x.pixels()[i] > 0.0).collect();
    let mut domain = initial_domain.clone();
    let mut current = x.to_tensor();
    let mut steps = Vec::new();
    let mut outcome = None;

    for iteration in 1..=config.iterations {
        let (mut g_in, mut g_out) = {
            let eval = graph.forward(&Bindings::new().with("x", &current))?;
            let g_in = eval
                .gradients(objective.f_in, &[input])?
                .remove(0)
                .into_data();
            let g_out = eval
                .gradients(objective.f_out, &[input])?
                .remove(0)
                .into_data();
            (g_in, g_out)
        };
        if let Some(mask) = &mask {
            g_in = mask.apply(&g_in);
            g_out = mask.apply(&g_out);
        }
        let Some((p, q)) = select_pixel_pair(&g_in, &g_out, &domain) else {
            break;
        };
        let pixels = current.data_mut();
        let mut removed = Vec::new();
        for i in [p, q] {
            pixels[i] = (pixels[i] - config.alpha).max(0.0);
            if pixels[i] == 0.0 {
                removed.push(i);
            }
        }
        domain.retain(|i| !removed.contains(i));
        steps.push(PscStep {
            pair: (p, q),
            values_after: (pixels[p], pixels[q]),
            removed,
            domain_size: domain.len(),
        });

        let eval = graph.forward(&Bindings::new().with("x", &current))?;
        if let Some(label) = target.flipped_label(eval.value(objective.presence).data())? {
            outcome = Some((iteration, label));
            break;
        }
        if domain.is_empty() {
            break;
        }
    }

    let iterations = steps.len();
    let trace = AttackTrace::Psc {
        initial_domain,
        steps,
    };
    Ok(match outcome {
        Some((iteration, label)) => AttackResult::success(
            Algorithm::Psc,
            x,
            x.with_pixels(current.into_data())?,
            label,
            target,
            iterations,
            iteration,
            0,
            trace,
        ),
        None => AttackResult::failure(Algorithm::Psc, x, target, iterations, 0, trace),
    })
}
