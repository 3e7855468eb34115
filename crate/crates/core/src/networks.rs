//! Masked multilayer perceptrons, agent and critic wrappers, and the
//! monotonic mixing network.

use std::cell::RefCell;

use rand::Rng;

use crate::masking::{
    self, Granularity, MaskMode, MaskSet, MaskingError, Reinit, ThresholdSet,
};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Activation, Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// How a network's parameters enter a tape.
#[derive(Clone, Copy)]
pub enum Bind<'a> {
    /// Gradients flow back into the store.
    Live(&'a ParamStore),
    /// Values only; used for targets and for frozen critics in the actor step.
    Frozen(&'a ParamStore),
}

impl<'a> Bind<'a> {
    pub fn store(&self) -> &'a ParamStore {
        match self {
            Bind::Live(s) | Bind::Frozen(s) => s,
        }
    }

    fn var(&self, tape: &mut Tape, id: ParamId) -> Var {
        match self {
            Bind::Live(s) => tape.param(s, id),
            Bind::Frozen(s) => tape.frozen(s, id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Uniform fan-in init, `U(-1/sqrt(in), 1/sqrt(in))` for weights and bias.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let bound = init_bound(fan_in);
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        let b: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        let weight = store.insert(format!("{name}.weight"), Tensor::new(vec![fan_in, fan_out], w).expect("sized"));
        let bias = store.insert(format!("{name}.bias"), Tensor::vector(b));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    fn forward(&self, tape: &mut Tape, bind: Bind<'_>, x: Var) -> Result<Var> {
        let w = bind.var(tape, self.weight);
        let b = bind.var(tape, self.bias);
        tape.linear(x, w, b)
    }
}

pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

/// Mask wiring of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Masking {
    None,
    /// Learnable scores, `scores[member][layer]`.
    Learned {
        mode: MaskMode,
        granularity: Granularity,
        init_value: f64,
        scores: Vec<Vec<ParamId>>,
    },
    /// Masks drawn once and never updated.
    Fixed(Vec<MaskSet>),
}

/// Options for a masked MLP's score parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskSpec {
    None,
    Learned {
        members: usize,
        mode: MaskMode,
        granularity: Granularity,
        init_value: f64,
    },
    /// Per-weight Bernoulli(keep_prob) masks, one per member.
    Fixed { members: usize, keep_prob: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub norms: Vec<Option<Norm>>,
    pub hidden: Activation,
    pub output: Option<Activation>,
    pub masking: Masking,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`. Hidden layers use ReLU; when `layer_norm`
    /// is set each hidden linear layer is followed by layer norm before the ReLU.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dims: &[usize],
        layer_norm: bool,
        output: Option<Activation>,
        mask: MaskSpec,
    ) -> Self {
        assert!(dims.len() >= 2, "an mlp needs at least one layer");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut norms = Vec::with_capacity(dims.len() - 1);
        for (l, pair) in dims.windows(2).enumerate() {
            layers.push(Linear::new(store, rng, &format!("{name}.l{l}"), pair[0], pair[1]));
            let hidden = l + 2 < dims.len();
            norms.push(if layer_norm && hidden {
                Some(Norm {
                    gain: store.insert(format!("{name}.ln{l}.gain"), Tensor::filled(&[pair[1]], 1.0)),
                    bias: store.insert(format!("{name}.ln{l}.bias"), Tensor::zeros(&[pair[1]])),
                })
            } else {
                None
            });
        }
        let masking = match mask {
            MaskSpec::None => Masking::None,
            MaskSpec::Learned {
                members,
                mode,
                granularity,
                init_value,
            } => {
                let scores = (0..members)
                    .map(|m| {
                        layers
                            .iter()
                            .enumerate()
                            .map(|(l, lin)| {
                                let shape = masking::score_shape(store.value(lin.weight), granularity);
                                store.insert(format!("{name}.s{m}.l{l}"), Tensor::filled(&shape, init_value))
                            })
                            .collect()
                    })
                    .collect();
                Masking::Learned {
                    mode,
                    granularity,
                    init_value,
                    scores,
                }
            }
            MaskSpec::Fixed { members, keep_prob } => {
                let masks = (0..members)
                    .map(|_| MaskSet {
                        layers: layers
                            .iter()
                            .map(|lin| {
                                let n = lin.fan_in * lin.fan_out;
                                let data = (0..n)
                                    .map(|_| if rng.random::<f64>() < keep_prob { 1.0 } else { 0.0 })
                                    .collect();
                                Tensor::new(vec![lin.fan_in, lin.fan_out], data).expect("sized")
                            })
                            .collect(),
                        derived_at_step: 0,
                    })
                    .collect();
                Masking::Fixed(masks)
            }
        };
        Self {
            layers,
            norms,
            hidden: Activation::Relu,
            output,
            masking,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    /// Number of mask owners (0 when unmasked).
    pub fn members(&self) -> usize {
        match &self.masking {
            Masking::None => 0,
            Masking::Learned { scores, .. } => scores.len(),
            Masking::Fixed(m) => m.len(),
        }
    }

    pub fn has_learned_masks(&self) -> bool {
        matches!(self.masking, Masking::Learned { .. })
    }

    fn check_member(&self, member: Option<usize>) -> Result<()> {
        if let Some(m) = member {
            let n = self.members();
            if n > 0 && m >= n {
                return Err(TensorError::OutOfRange {
                    what: "mask member",
                    index: m,
                    size: n,
                });
            }
        }
        Ok(())
    }

    fn effective_weight(&self, tape: &mut Tape, bind: Bind<'_>, l: usize, member: Option<usize>) -> Result<Var> {
        let w = bind.var(tape, self.layers[l].weight);
        let Some(m) = member else { return Ok(w) };
        match &self.masking {
            Masking::None => Ok(w),
            Masking::Fixed(masks) => tape.mask(w, &masks[m].layers[l]),
            Masking::Learned {
                mode,
                granularity,
                scores,
                ..
            } => {
                let sid = scores[m][l];
                match (mode, granularity) {
                    (MaskMode::Soft, Granularity::Weight) => {
                        let s = bind.var(tape, sid);
                        tape.soft_threshold(w, s)
                    }
                    _ => {
                        let store = bind.store();
                        let mask = masking::layer_mask(store.value(self.layers[l].weight), store.value(sid), *granularity)
                            .map_err(masking_to_tensor)?;
                        tape.mask(w, &mask)
                    }
                }
            }
        }
    }

    /// Forward pass for mask owner `member` (ignored when unmasked).
    pub fn forward(&self, tape: &mut Tape, bind: Bind<'_>, x: Var, member: Option<usize>) -> Result<Var> {
        self.check_member(member)?;
        let in_dim = tape.value(x).dims2().1;
        if in_dim != self.in_dim() {
            return Err(TensorError::ShapeMismatch {
                op: "mlp input",
                left: tape.value(x).shape().to_vec(),
                right: vec![self.in_dim()],
            });
        }
        let weights = (0..self.layers.len())
            .map(|l| self.effective_weight(tape, bind, l, member))
            .collect::<Result<Vec<_>>>()?;
        self.forward_with(tape, bind, x, &weights)
    }

    fn forward_with(&self, tape: &mut Tape, bind: Bind<'_>, x: Var, weights: &[Var]) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, &w) in weights.iter().enumerate() {
            let b = bind.var(tape, self.layers[l].bias);
            h = tape.linear(h, w, b)?;
            if l < last {
                if let Some(norm) = &self.norms[l] {
                    let g = bind.var(tape, norm.gain);
                    let nb = bind.var(tape, norm.bias);
                    h = tape.layer_norm(h, g, nb)?;
                }
                h = tape.activation(h, self.hidden);
            } else if let Some(act) = self.output {
                h = tape.activation(h, act);
            }
        }
        Ok(h)
    }

    /// Value-only forward on a fresh tape.
    pub fn eval(&self, store: &ParamStore, x: &Tensor, member: Option<usize>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, Bind::Frozen(store), xv, member)?;
        Ok(tape.value(y).clone())
    }

    /// Masked weights of `member`, for repeated value-only forwards while
    /// the parameters stay fixed.
    pub fn effective_weights(&self, store: &ParamStore, member: Option<usize>) -> Result<Vec<Tensor>> {
        self.check_member(member)?;
        let mut tape = Tape::new();
        (0..self.layers.len())
            .map(|l| {
                let w = self.effective_weight(&mut tape, Bind::Frozen(store), l, member)?;
                Ok(tape.value(w).clone())
            })
            .collect()
    }

    /// Same as [`Mlp::eval`] with weights from [`Mlp::effective_weights`].
    pub fn eval_with(&self, store: &ParamStore, weights: &[Tensor], x: &Tensor) -> Result<Tensor> {
        if weights.len() != self.layers.len() {
            return Err(TensorError::OutOfRange {
                what: "weight layer",
                index: weights.len(),
                size: self.layers.len(),
            });
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let ws: Vec<Var> = weights.iter().map(|w| tape.constant(w.clone())).collect();
        let y = self.forward_with(&mut tape, Bind::Frozen(store), xv, &ws)?;
        Ok(tape.value(y).clone())
    }

    pub fn weights<'s>(&self, store: &'s ParamStore) -> Vec<&'s Tensor> {
        self.layers.iter().map(|l| store.value(l.weight)).collect()
    }

    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.layers.iter().map(|l| l.weight).collect()
    }

    /// Binary masks of `member`; all ones when unmasked.
    pub fn masks(&self, store: &ParamStore, member: usize) -> MaskSet {
        match &self.masking {
            Masking::None => MaskSet::all_ones(&self.weights(store)),
            Masking::Fixed(m) => m[member].clone(),
            Masking::Learned { .. } => {
                let ts = self.thresholds(store, member).expect("learned masks have thresholds");
                masking::derive_masks(&self.weights(store), &ts, store.step_count()).expect("consistent layout")
            }
        }
    }

    pub fn all_masks(&self, store: &ParamStore) -> Vec<MaskSet> {
        (0..self.members()).map(|m| self.masks(store, m)).collect()
    }

    pub fn thresholds(&self, store: &ParamStore, member: usize) -> Option<ThresholdSet> {
        match &self.masking {
            Masking::Learned {
                granularity,
                init_value,
                scores,
                ..
            } => Some(ThresholdSet {
                owner: member,
                layers: scores[member].iter().map(|&id| store.value(id).clone()).collect(),
                init_value: *init_value,
                granularity: *granularity,
            }),
            _ => None,
        }
    }

    pub fn all_thresholds(&self, store: &ParamStore) -> Vec<ThresholdSet> {
        (0..self.members()).filter_map(|m| self.thresholds(store, m)).collect()
    }

    pub fn write_thresholds(&self, store: &mut ParamStore, sets: &[ThresholdSet]) {
        if let Masking::Learned { scores, .. } = &self.masking {
            for ts in sets {
                for (&id, layer) in scores[ts.owner].iter().zip(&ts.layers) {
                    store.value_mut(id).data_mut().copy_from_slice(layer.data());
                }
            }
        }
    }

    pub fn score_ids(&self, member: usize) -> &[ParamId] {
        match &self.masking {
            Masking::Learned { scores, .. } => &scores[member],
            _ => &[],
        }
    }

    pub fn reinit(&self) -> Reinit {
        let threshold_value = match &self.masking {
            Masking::Learned { init_value, .. } => *init_value,
            _ => 0.0,
        };
        Reinit {
            weight_bounds: self.layers.iter().map(|l| init_bound(l.fan_in)).collect(),
            threshold_value,
        }
    }

    /// Layer `(in, out)` pairs, input first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.fan_in, l.fan_out)).collect()
    }
}

fn masking_to_tensor(e: MaskingError) -> TensorError {
    match e {
        MaskingError::Tensor(t) => t,
        // layer_mask only fails on shapes
        other => unreachable!("{other}"),
    }
}

/// Appends a one-hot agent id to each observation row.
pub fn id_encode(obs: &Tensor, agent_id: usize, n_agents: usize) -> Result<Tensor> {
    if agent_id >= n_agents {
        return Err(TensorError::OutOfRange {
            what: "agent id",
            index: agent_id,
            size: n_agents,
        });
    }
    let (rows, _) = obs.dims2();
    let mut onehot = vec![0.0; rows * n_agents];
    for r in 0..rows {
        onehot[r * n_agents + agent_id] = 1.0;
    }
    let ids = Tensor::new(vec![rows, n_agents], onehot)?;
    let obs2 = if obs.shape().len() == 1 {
        obs.clone().reshape(&[1, obs.len()])?
    } else {
        obs.clone()
    };
    Tensor::concat_cols(&[&obs2, &ids])
}

/// How agents map onto parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharing {
    /// One network per agent.
    None,
    /// One network, identical inputs.
    Full,
    /// One network, one-hot agent id appended to the input.
    FullWithId,
    /// One network, one mask owner per agent.
    Masked,
}

/// The per-agent policy or utility networks for one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub sharing: Sharing,
    pub nets: Vec<Mlp>,
    pub n_agents: usize,
    pub obs_dim: usize,
}

impl AgentNets {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        sharing: Sharing,
        n_agents: usize,
        obs_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        output: Option<Activation>,
        mask: MaskSpec,
    ) -> Self {
        let in_dim = match sharing {
            Sharing::FullWithId => obs_dim + n_agents,
            _ => obs_dim,
        };
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let nets = match sharing {
            Sharing::None => (0..n_agents)
                .map(|i| Mlp::new(store, rng, &format!("{name}{i}"), &dims, false, output, MaskSpec::None))
                .collect(),
            Sharing::Full | Sharing::FullWithId => {
                vec![Mlp::new(store, rng, name, &dims, false, output, MaskSpec::None)]
            }
            Sharing::Masked => vec![Mlp::new(store, rng, name, &dims, false, output, mask)],
        };
        Self {
            sharing,
            nets,
            n_agents,
            obs_dim,
        }
    }

    pub fn shared(&self) -> &Mlp {
        &self.nets[0]
    }

    fn route(&self, agent: usize) -> (&Mlp, Option<usize>) {
        match self.sharing {
            Sharing::None => (&self.nets[agent], None),
            Sharing::Masked => (&self.nets[0], Some(agent)),
            _ => (&self.nets[0], None),
        }
    }

    /// Forward for agent `agent` on `obs: [B, obs_dim]`.
    pub fn forward(&self, tape: &mut Tape, bind: Bind<'_>, obs: &Tensor, agent: usize) -> Result<Var> {
        let x = tape.constant(self.input(obs, agent)?);
        let (net, member) = self.route(agent);
        net.forward(tape, bind, x, member)
    }

    fn input(&self, obs: &Tensor, agent: usize) -> Result<Tensor> {
        if agent >= self.n_agents {
            return Err(TensorError::OutOfRange {
                what: "agent",
                index: agent,
                size: self.n_agents,
            });
        }
        let (_, d) = obs.dims2();
        if d != self.obs_dim {
            return Err(TensorError::ShapeMismatch {
                op: "agent observation",
                left: obs.shape().to_vec(),
                right: vec![self.obs_dim],
            });
        }
        Ok(if self.sharing == Sharing::FullWithId {
            id_encode(obs, agent, self.n_agents)?
        } else if obs.shape().len() == 1 {
            obs.clone().reshape(&[1, d])?
        } else {
            obs.clone()
        })
    }

    pub fn eval(&self, store: &ParamStore, obs: &Tensor, agent: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, Bind::Frozen(store), obs, agent)?;
        Ok(tape.value(y).clone())
    }

    /// Each agent's effective weights, for acting between updates.
    pub fn acting_weights(&self, store: &ParamStore) -> Result<Vec<Vec<Tensor>>> {
        (0..self.n_agents)
            .map(|i| {
                let (net, member) = self.route(i);
                net.effective_weights(store, member)
            })
            .collect()
    }

    /// [`AgentNets::eval`] using weights from [`AgentNets::acting_weights`].
    pub fn eval_with(&self, store: &ParamStore, weights: &[Vec<Tensor>], obs: &Tensor, agent: usize) -> Result<Tensor> {
        let w = weights.get(agent).ok_or(TensorError::OutOfRange {
            what: "agent",
            index: agent,
            size: weights.len(),
        })?;
        let input = self.input(obs, agent)?;
        self.route(agent).0.eval_with(store, w, &input)
    }

    /// Per-agent binary masks; all ones for unmasked schemes.
    pub fn agent_masks(&self, store: &ParamStore) -> Vec<MaskSet> {
        (0..self.n_agents)
            .map(|i| {
                let (net, member) = self.route(i);
                match member {
                    Some(m) => net.masks(store, m),
                    None => MaskSet::all_ones(&net.weights(store)),
                }
            })
            .collect()
    }

    /// Per-agent `(in, out)` of every layer.
    pub fn layer_dims(&self, agent: usize) -> Vec<(usize, usize)> {
        self.route(agent).0.layer_dims()
    }
}

/// Per-agent effective weights, rebuilt whenever the store they came from
/// changes. Acting between updates then skips the mask transform.
#[derive(Debug, Default)]
pub struct ActingCache(RefCell<Option<(u64, Vec<Vec<Tensor>>)>>);

impl ActingCache {
    pub fn eval(&self, nets: &AgentNets, store: &ParamStore, obs: &Tensor, agent: usize) -> Result<Tensor> {
        let mut slot = self.0.borrow_mut();
        let fresh = matches!(&*slot, Some((v, _)) if *v == store.version());
        if !fresh {
            *slot = Some((store.version(), nets.acting_weights(store)?));
        }
        let (_, weights) = slot.as_ref().expect("filled above");
        nets.eval_with(store, weights, obs, agent)
    }
}

/// Centralized critics: a masked shared ensemble or independent networks.
#[derive(Debug, Clone, PartialEq)]
pub enum CriticSet {
    Ensemble(Mlp),
    Independent(Vec<Mlp>),
}

impl CriticSet {
    pub fn members(&self) -> usize {
        match self {
            CriticSet::Ensemble(m) => m.members().max(1),
            CriticSet::Independent(v) => v.len(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: Bind<'_>, input: Var, member: usize) -> Result<Var> {
        if member >= self.members() {
            return Err(TensorError::OutOfRange {
                what: "critic member",
                index: member,
                size: self.members(),
            });
        }
        match self {
            CriticSet::Ensemble(net) => {
                let m = if net.members() == 0 { None } else { Some(member) };
                net.forward(tape, bind, input, m)
            }
            CriticSet::Independent(nets) => nets[member].forward(tape, bind, input, None),
        }
    }

    pub fn masked(&self) -> Option<&Mlp> {
        match self {
            CriticSet::Ensemble(net) if net.has_learned_masks() => Some(net),
            _ => None,
        }
    }
}

/// Monotonic mixer: state-conditioned hypernetworks produce non-negative
/// weights for a single hidden mixing layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingNet {
    pub n_agents: usize,
    pub embed: usize,
    pub hyper_w1: Linear,
    pub hyper_b1: Linear,
    pub hyper_w2: Linear,
    pub value1: Linear,
    pub value2: Linear,
}

impl MixingNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, n_agents: usize, state_dim: usize, embed: usize) -> Self {
        Self {
            n_agents,
            embed,
            hyper_w1: Linear::new(store, rng, "mixer.hyper_w1", state_dim, n_agents * embed),
            hyper_b1: Linear::new(store, rng, "mixer.hyper_b1", state_dim, embed),
            hyper_w2: Linear::new(store, rng, "mixer.hyper_w2", state_dim, embed),
            value1: Linear::new(store, rng, "mixer.v1", state_dim, embed),
            value2: Linear::new(store, rng, "mixer.v2", embed, 1),
        }
    }

    /// `qs: [B, N]`, `state: [B, S]` to `Q_tot: [B, 1]`.
    pub fn forward(&self, tape: &mut Tape, bind: Bind<'_>, qs: Var, state: Var) -> Result<Var> {
        let w1 = self.hyper_w1.forward(tape, bind, state)?;
        let w1 = tape.abs(w1);
        let b1 = self.hyper_b1.forward(tape, bind, state)?;
        let mixed = tape.row_matmul(qs, w1)?;
        let pre = tape.add(mixed, b1)?;
        let hidden = tape.activation(pre, Activation::Elu);
        let w2 = self.hyper_w2.forward(tape, bind, state)?;
        let w2 = tape.abs(w2);
        let out = tape.row_matmul(hidden, w2)?;
        let v = self.value1.forward(tape, bind, state)?;
        let v = tape.activation(v, Activation::Relu);
        let v = self.value2.forward(tape, bind, v)?;
        tape.add(out, v)
    }

    pub fn eval(&self, store: &ParamStore, qs: &Tensor, state: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let q = tape.constant(qs.clone());
        let s = tape.constant(state.clone());
        let y = self.forward(&mut tape, Bind::Frozen(store), q, s)?;
        Ok(tape.value(y).clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetMode {
    Polyak(f64),
    Hard,
}

/// Moves a target copy toward its source; thresholds are copied like any other entry.
pub fn target_update(src: &ParamStore, dst: &mut ParamStore, mode: TargetMode) -> Result<()> {
    match mode {
        TargetMode::Polyak(tau) => dst.polyak_from(src, tau),
        TargetMode::Hard => dst.copy_values_from(src),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn id_encode_examples() {
        let obs = Tensor::matrix(&[vec![0.5, 0.25]]).unwrap();
        let e = id_encode(&obs, 1, 3).unwrap();
        assert_eq!(e.data(), &[0.5, 0.25, 0.0, 1.0, 0.0]);
        let e = id_encode(&obs, 0, 1).unwrap();
        assert_eq!(e.data(), &[0.5, 0.25, 1.0]);
        assert_eq!(e.dims2().1, 2 + 1);
        assert!(id_encode(&obs, 3, 3).is_err());
    }

    #[test]
    fn zero_weights_give_tanh_of_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = AgentNets::new(
            &mut store,
            &mut rng,
            "actor",
            Sharing::Masked,
            2,
            3,
            &[4],
            2,
            Some(Activation::Tanh),
            MaskSpec::Learned {
                members: 2,
                mode: MaskMode::Soft,
                granularity: Granularity::Weight,
                init_value: -5.0,
            },
        );
        for l in &net.shared().layers {
            store.value_mut(l.weight).data_mut().fill(0.0);
        }
        let last = net.shared().layers[1];
        let bias = store.value(last.bias).clone();
        let y = net.eval(&store, &Tensor::matrix(&[vec![1.0, -2.0, 3.0]]).unwrap(), 1).unwrap();
        for (a, b) in y.data().iter().zip(bias.data()) {
            assert_eq!(*a, b.tanh());
        }
    }

    #[test]
    fn agent_index_checked() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = AgentNets::new(&mut store, &mut rng, "q", Sharing::Full, 2, 3, &[4], 5, None, MaskSpec::None);
        assert!(net.eval(&store, &Tensor::zeros(&[1, 3]), 2).is_err());
        assert!(net.eval(&store, &Tensor::zeros(&[1, 4]), 0).is_err());
    }

    #[test]
    fn critic_member_out_of_range() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let critic = CriticSet::Independent(vec![Mlp::new(&mut store, &mut rng, "c", &[2, 4, 1], false, None, MaskSpec::None)]);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(critic.forward(&mut tape, Bind::Frozen(&store), x, 1).is_err());
    }

    #[test]
    fn hard_target_update_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::new();
        Mlp::new(&mut a, &mut rng, "n", &[3, 4, 2], false, None, MaskSpec::None);
        let mut b = ParamStore::new();
        Mlp::new(&mut b, &mut rng, "n", &[3, 4, 2], false, None, MaskSpec::None);
        assert_ne!(a, b);
        target_update(&a, &mut b, TargetMode::Hard).unwrap();
        for id in a.ids() {
            assert_eq!(a.value(id), b.value(id));
        }
        let mut c = ParamStore::new();
        Mlp::new(&mut c, &mut rng, "n", &[3, 5, 2], false, None, MaskSpec::None);
        assert!(target_update(&a, &mut c, TargetMode::Hard).is_err());
    }
}
