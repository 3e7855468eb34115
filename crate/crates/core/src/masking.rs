//! Learnable threshold masks over a shared parameter set.
//!
//! Each owner (an agent, or a critic ensemble member) holds a score tensor
//! `s` per maskable layer. Its binary mask keeps weight `k` iff
//! `|theta_k| > sigmoid(s_k)`. The soft forward uses the shrinkage
//! `sign(theta) * relu(|theta| - sigmoid(s))`, whose zero set matches the mask.

use rand::Rng;
use thiserror::Error;

use crate::tensor::{sigmoid, Tensor, TensorError};

/// Lower bound on `|J_div|` when forming the adaptive coefficient.
pub const COEFFICIENT_GUARD: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskingError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("diversity needs at least two masks, got {0}")]
    TooFewMasks(usize),
    #[error("threshold sets disagree on layer count: {0} vs {1}")]
    LayerCount(usize, usize),
}

pub type Result<T> = std::result::Result<T, MaskingError>;

/// What one threshold controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    /// One score per weight.
    #[default]
    Weight,
    /// One score per input unit; the mask keeps or drops the unit's whole
    /// outgoing row of `W: [In, Out]`, judged by the row's mean magnitude.
    Row,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    pub owner: usize,
    pub layers: Vec<Tensor>,
    pub init_value: f64,
    pub granularity: Granularity,
}

impl ThresholdSet {
    /// Scores shaped to match `weights`, all set to `init_value`.
    pub fn uniform(owner: usize, weights: &[&Tensor], init_value: f64, granularity: Granularity) -> Self {
        let layers = weights
            .iter()
            .map(|w| Tensor::filled(&score_shape(w, granularity), init_value))
            .collect();
        Self {
            owner,
            layers,
            init_value,
            granularity,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Tensor::is_finite)
    }
}

pub fn score_shape(weight: &Tensor, granularity: Granularity) -> Vec<usize> {
    match granularity {
        Granularity::Weight => weight.shape().to_vec(),
        Granularity::Row => vec![weight.dims2().0],
    }
}

/// Binary masks for one owner, one tensor per maskable layer, shaped like the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub layers: Vec<Tensor>,
    pub derived_at_step: u64,
}

impl MaskSet {
    pub fn all_ones(weights: &[&Tensor]) -> Self {
        Self {
            layers: weights.iter().map(|w| Tensor::filled(w.shape(), 1.0)).collect(),
            derived_at_step: 0,
        }
    }

    pub fn numel(&self) -> usize {
        self.layers.iter().map(Tensor::len).sum()
    }

    pub fn zeros(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.data().iter().filter(|&&v| v == 0.0).count())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// Executed weights are the soft-thresholded parameters; scores get task gradients.
    #[default]
    Soft,
    /// Executed weights are `theta * mask`; scores move only through the diversity term.
    Hard,
}

/// Per-coordinate magnitude compared against `sigmoid(s)`.
fn magnitudes(theta: &Tensor, granularity: Granularity) -> Vec<f64> {
    match granularity {
        Granularity::Weight => theta.data().iter().map(|v| v.abs()).collect(),
        Granularity::Row => {
            let (rows, cols) = theta.dims2();
            (0..rows)
                .map(|r| theta.row(r).iter().map(|v| v.abs()).sum::<f64>() / cols.max(1) as f64)
                .collect()
        }
    }
}

/// `m_k = 1[|theta_k| > sigmoid(s_k)]` with a strict inequality.
pub fn compute_mask(theta: &Tensor, s: &Tensor) -> Result<Tensor> {
    Ok(theta.zip_map(s, "compute_mask", |t, sv| {
        if t.abs() > sigmoid(sv) {
            1.0
        } else {
            0.0
        }
    })?)
}

/// Weight-shaped mask for either granularity.
pub fn layer_mask(theta: &Tensor, s: &Tensor, granularity: Granularity) -> Result<Tensor> {
    match granularity {
        Granularity::Weight => compute_mask(theta, s),
        Granularity::Row => {
            let (rows, cols) = theta.dims2();
            if s.len() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "row mask",
                    left: theta.shape().to_vec(),
                    right: s.shape().to_vec(),
                }
                .into());
            }
            let mags = magnitudes(theta, granularity);
            let mut data = Vec::with_capacity(rows * cols);
            for (r, &m) in mags.iter().enumerate() {
                let keep = if m > sigmoid(s.data()[r]) { 1.0 } else { 0.0 };
                data.extend(std::iter::repeat_n(keep, cols));
            }
            Ok(Tensor::new(theta.shape().to_vec(), data)?)
        }
    }
}

pub fn derive_masks(theta0: &[&Tensor], thresholds: &ThresholdSet, step: u64) -> Result<MaskSet> {
    if theta0.len() != thresholds.layers.len() {
        return Err(MaskingError::LayerCount(theta0.len(), thresholds.layers.len()));
    }
    let layers = theta0
        .iter()
        .zip(&thresholds.layers)
        .map(|(t, s)| layer_mask(t, s, thresholds.granularity))
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskSet {
        layers,
        derived_at_step: step,
    })
}

/// `sign(theta) * relu(|theta| - sigmoid(s))`.
pub fn str_transform(theta: &Tensor, s: &Tensor) -> std::result::Result<Tensor, TensorError> {
    theta.zip_map(s, "str_transform", |t, sv| {
        let shrunk = (t.abs() - sigmoid(sv)).max(0.0);
        if t < 0.0 {
            -shrunk
        } else {
            shrunk
        }
    })
}

pub fn apply_hard_mask(theta: &Tensor, mask: &Tensor) -> Result<Tensor> {
    Ok(theta.zip_map(mask, "apply_hard_mask", |t, m| t * m)?)
}

/// `[base^1, ..., base^L]`.
pub fn layer_weights(num_layers: usize, base: f64) -> Vec<f64> {
    (1..=num_layers).map(|l| base.powi(l as i32)).collect()
}

fn check_layers(theta0: &[&Tensor], masks: &[MaskSet], weights: &[f64]) -> Result<()> {
    if masks.len() < 2 {
        return Err(MaskingError::TooFewMasks(masks.len()));
    }
    for m in masks {
        if m.layers.len() != theta0.len() {
            return Err(MaskingError::LayerCount(theta0.len(), m.layers.len()));
        }
        for (t, ml) in theta0.iter().zip(&m.layers) {
            t.ensure_same_shape(ml, "diversity")?;
        }
    }
    if weights.len() != theta0.len() {
        return Err(MaskingError::LayerCount(theta0.len(), weights.len()));
    }
    Ok(())
}

/// Layer-weighted sum over ordered owner pairs of `|| theta0 * (M_i - M_j) ||_1`.
/// `theta0` enters as a constant.
pub fn diversity_objective(theta0: &[&Tensor], masks: &[MaskSet], weights: &[f64]) -> Result<f64> {
    check_layers(theta0, masks, weights)?;
    let mut total = 0.0;
    for (l, (theta, &w)) in theta0.iter().zip(weights).enumerate() {
        let mut layer = 0.0;
        for (i, mi) in masks.iter().enumerate() {
            for (j, mj) in masks.iter().enumerate() {
                if i == j {
                    continue;
                }
                layer += theta
                    .data()
                    .iter()
                    .zip(mi.layers[l].data().iter().zip(mj.layers[l].data()))
                    .map(|(t, (a, b))| (t * (a - b)).abs())
                    .sum::<f64>();
            }
        }
        total += w * layer;
    }
    Ok(total)
}

/// Gradient of the diversity objective with respect to each owner's scores,
/// via the straight-through surrogate `dJ/dsigmoid(s_i) = -tanh(dJ/dM_i)`
/// chained through `sigmoid'(s_i)`.
///
/// `dJ/dM_i` at weight `k` is `w_l |theta_k| * sum_{j != i} 2 sign(M_ik - M_jk)`.
/// Where two masks agree, the sign is taken from the real-valued margin
/// `|theta_k| - sigmoid(s_k)` that the indicator thresholds, so the owner
/// with the larger margin is pushed to keep the weight and the other to drop
/// it. Exact ties contribute 0.
pub fn diversity_gradient_s(
    theta0: &[&Tensor],
    thresholds: &[ThresholdSet],
    weights: &[f64],
) -> Result<Vec<Vec<Tensor>>> {
    let masks = thresholds
        .iter()
        .map(|t| derive_masks(theta0, t, 0))
        .collect::<Result<Vec<_>>>()?;
    check_layers(theta0, &masks, weights)?;
    let dm = mask_gradient(theta0, &masks, thresholds, weights)?;
    let mut out = Vec::with_capacity(thresholds.len());
    for (ts, dmi) in thresholds.iter().zip(dm) {
        let mut layers = Vec::with_capacity(ts.layers.len());
        for (s, g) in ts.layers.iter().zip(dmi) {
            let reduced = reduce_to_scores(&g, ts.granularity);
            let data = reduced
                .iter()
                .zip(s.data())
                .map(|(&gm, &sv)| {
                    let sig = sigmoid(sv);
                    -gm.tanh() * sig * (1.0 - sig)
                })
                .collect();
            layers.push(Tensor::new(s.shape().to_vec(), data)?);
        }
        out.push(layers);
    }
    Ok(out)
}

/// `dJ/dM_i` per owner and layer, weight-shaped.
pub fn mask_gradient(
    theta0: &[&Tensor],
    masks: &[MaskSet],
    thresholds: &[ThresholdSet],
    weights: &[f64],
) -> Result<Vec<Vec<Tensor>>> {
    check_layers(theta0, masks, weights)?;
    let n = masks.len();
    let mut out: Vec<Vec<Tensor>> = (0..n).map(|_| Vec::with_capacity(theta0.len())).collect();
    for (l, (theta, &w)) in theta0.iter().zip(weights).enumerate() {
        let (rows, cols) = theta.dims2();
        // per-owner, per-weight threshold sigmoid(s) for the margin tie-break
        let sig: Vec<Vec<f64>> = thresholds
            .iter()
            .map(|ts| expand_scores(&ts.layers[l], ts.granularity, rows, cols))
            .collect();
        for i in 0..n {
            let mi = masks[i].layers[l].data();
            let mut g = vec![0.0; theta.len()];
            for (k, gk) in g.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let mj = masks[j].layers[l].data()[k];
                    let diff = mi[k] - mj;
                    let sign = if diff != 0.0 {
                        diff.signum()
                    } else {
                        let margin_diff = sig[j][k] - sig[i][k];
                        if margin_diff > 0.0 {
                            1.0
                        } else if margin_diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    };
                    acc += 2.0 * sign;
                }
                *gk = w * theta.data()[k].abs() * acc;
            }
            out[i].push(Tensor::new(theta.shape().to_vec(), g)?);
        }
    }
    Ok(out)
}

fn expand_scores(s: &Tensor, granularity: Granularity, rows: usize, cols: usize) -> Vec<f64> {
    match granularity {
        Granularity::Weight => s.data().iter().map(|&v| sigmoid(v)).collect(),
        Granularity::Row => (0..rows)
            .flat_map(|r| std::iter::repeat_n(sigmoid(s.data()[r]), cols))
            .collect(),
    }
}

fn reduce_to_scores(g: &Tensor, granularity: Granularity) -> Vec<f64> {
    match granularity {
        Granularity::Weight => g.data().to_vec(),
        Granularity::Row => {
            let (rows, _) = g.dims2();
            (0..rows).map(|r| g.row(r).iter().sum()).collect()
        }
    }
}

/// `ratio * |task| / max(|div|, 1e-8)`; callers treat the result as a constant.
pub fn adaptive_coefficient(task_loss_abs: f64, div_abs: f64, ratio: f64) -> f64 {
    ratio * task_loss_abs.abs() / div_abs.abs().max(COEFFICIENT_GUARD)
}

/// Re-initialization distributions for a network's maskable layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Reinit {
    /// Uniform bound for each layer's weights.
    pub weight_bounds: Vec<f64>,
    pub threshold_value: f64,
}

/// Number of trailing maskable layers that the actor reset touches.
pub const RESET_LAYERS: usize = 3;

/// Reset coordinates masked out by every owner: with probability `rho`
/// each such coordinate of `theta0` and every owner's score is redrawn.
/// Only the last three layers are eligible. Returns the number of coordinates reset.
pub fn actor_reset<R: Rng + ?Sized>(
    theta0: &mut [Tensor],
    thresholds: &mut [ThresholdSet],
    rho: f64,
    rng: &mut R,
    reinit: &Reinit,
) -> Result<usize> {
    if thresholds.is_empty() || rho <= 0.0 {
        return Ok(0);
    }
    let n_layers = theta0.len();
    for ts in thresholds.iter() {
        if ts.layers.len() != n_layers {
            return Err(MaskingError::LayerCount(n_layers, ts.layers.len()));
        }
    }
    let granularity = thresholds[0].granularity;
    let mut count = 0;
    for l in n_layers.saturating_sub(RESET_LAYERS)..n_layers {
        let (rows, cols) = theta0[l].dims2();
        let mags = magnitudes(&theta0[l], granularity);
        let bound = reinit.weight_bounds[l];
        for (k, &mag) in mags.iter().enumerate() {
            let all_masked = thresholds
                .iter()
                .all(|ts| mag <= sigmoid(ts.layers[l].data()[k]));
            if !all_masked {
                continue;
            }
            if rng.random::<f64>() >= rho {
                continue;
            }
            count += 1;
            match granularity {
                Granularity::Weight => {
                    theta0[l].data_mut()[k] = rng.random_range(-bound..=bound);
                }
                Granularity::Row => {
                    debug_assert!(k < rows);
                    for c in 0..cols {
                        theta0[l].data_mut()[k * cols + c] = rng.random_range(-bound..=bound);
                    }
                }
            }
            for ts in thresholds.iter_mut() {
                ts.layers[l].data_mut()[k] = reinit.threshold_value;
            }
        }
    }
    Ok(count)
}

/// Re-initialize only member `cursor`'s scores; returns the next cursor.
pub fn critic_cyclic_reset(thresholds: &mut [ThresholdSet], cursor: usize) -> usize {
    let k = thresholds.len();
    if k == 0 {
        return 0;
    }
    let cursor = cursor % k;
    let ts = &mut thresholds[cursor];
    let v = ts.init_value;
    for layer in &mut ts.layers {
        layer.data_mut().fill(v);
    }
    (cursor + 1) % k
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityStats {
    /// `[owner][layer]` fraction of zeros.
    pub per_layer_sparsity: Vec<Vec<f64>>,
    pub overall_sparsity: f64,
    /// Fraction of coordinates where two owners' masks disagree.
    pub pairwise_hamming: Vec<Vec<f64>>,
}

impl SparsityStats {
    /// Mean over unordered owner pairs; 0 with a single owner.
    pub fn mean_pairwise_hamming(&self) -> f64 {
        let n = self.pairwise_hamming.len();
        if n < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += self.pairwise_hamming[i][j];
            }
        }
        sum / (n * (n - 1) / 2) as f64
    }
}

pub fn sparsity_stats(masks: &[MaskSet]) -> SparsityStats {
    let per_layer_sparsity: Vec<Vec<f64>> = masks
        .iter()
        .map(|m| {
            m.layers
                .iter()
                .map(|l| {
                    let zeros = l.data().iter().filter(|&&v| v == 0.0).count();
                    zeros as f64 / l.len().max(1) as f64
                })
                .collect()
        })
        .collect();
    let total: usize = masks.iter().map(MaskSet::numel).sum();
    let zeros: usize = masks.iter().map(MaskSet::zeros).sum();
    let overall_sparsity = if total == 0 {
        0.0
    } else {
        zeros as f64 / total as f64
    };
    let n = masks.len();
    let mut pairwise_hamming = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let mut diff = 0usize;
            let mut count = 0usize;
            for (a, b) in masks[i].layers.iter().zip(&masks[j].layers) {
                count += a.len();
                diff += a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
            }
            let h = if count == 0 {
                0.0
            } else {
                diff as f64 / count as f64
            };
            pairwise_hamming[i][j] = h;
            pairwise_hamming[j][i] = h;
        }
    }
    SparsityStats {
        per_layer_sparsity,
        overall_sparsity,
        pairwise_hamming,
    }
}
