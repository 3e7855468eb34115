use crate::masking::{self, MaskingError};
use crate::networks::Mlp;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityStep {
    /// Value of the diversity objective at the current masks.
    pub objective: f64,
    /// Adaptive coefficient the gradient was scaled by.
    pub coefficient: f64,
}

/// Adds the score gradients of `-coef * J` to `store`, where `J` is the
/// diversity objective over the net's mask owners and `coef` is the adaptive
/// coefficient for `ratio`. Weights are constants here; only score
/// gradients change. Returns `None` for nets with fewer than two learned owners.
pub fn apply_diversity(
    net: &Mlp,
    store: &mut ParamStore,
    ratio: f64,
    task_abs: f64,
    base: f64,
) -> Result<Option<DiversityStep>, MaskingError> {
    if !net.has_learned_masks() || net.members() < 2 {
        return Ok(None);
    }
    let thresholds = net.all_thresholds(store);
    let (objective, coefficient, grads) = {
        let theta = net.weights(store);
        let lw = masking::layer_weights(theta.len(), base);
        let masks = thresholds
            .iter()
            .map(|t| masking::derive_masks(&theta, t, store.step_count()))
            .collect::<Result<Vec<_>, _>>()?;
        let objective = masking::diversity_objective(&theta, &masks, &lw)?;
        let coefficient = masking::adaptive_coefficient(task_abs, objective, ratio);
        let grads = if coefficient > 0.0 {
            Some(masking::diversity_gradient_s(&theta, &thresholds, &lw)?)
        } else {
            None
        };
        (objective, coefficient, grads)
    };
    if let Some(grads) = grads {
        for (member, layers) in grads.iter().enumerate() {
            for (l, g) in layers.iter().enumerate() {
                let id = net.score_ids(member)[l];
                let scaled: Vec<f64> = g.data().iter().map(|v| -coefficient * v).collect();
                store.accumulate_grad(id, &scaled);
            }
        }
    }
    Ok(Some(DiversityStep { objective, coefficient }))
}
