//! Deterministic actor-critic over candidate batches: a shared feature
//! network, a per-example actor with a softmax across the batch, a critic
//! regressing immediate rewards, a replay buffer and soft-updated targets.

use std::collections::VecDeque;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FEATURE_DIM, LOGP_RANGE, NGRAM_RANGE, SENLEN_RANGE, TAG_RANGE};
use crate::neural::{
    softmax, softmax_backward, soft_update, Activation, Cache, Direction, Fnv, Gradients, Network,
    NetworkRecord, Optimizer, Parameterized, CHECKPOINT_VERSION,
};

/// Embedding widths of the senlen, logp, tagging and n-gram maps.
pub const GROUP_WIDTHS: [usize; 4] = [1, 8, 16, 32];
pub const EMBED_DIM: usize = 57;

const GROUP_RANGES: [std::ops::Range<usize>; 4] = [SENLEN_RANGE, LOGP_RANGE, TAG_RANGE, NGRAM_RANGE];
/// Sign of every raw feature in each group; log-likelihoods are never positive.
const GROUP_INPUT_SIGNS: [f64; 4] = [1.0, -1.0, 1.0, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Candidates per state (b).
    pub batch_size: usize,
    pub actor_hidden: [usize; 2],
    pub critic_hidden: [usize; 2],
    pub replay_capacity: usize,
    /// Steps of pure exploration before any network update.
    pub warmup: usize,
    pub tau: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub critic_batch: usize,
    /// States per actor update, drawn from the replay buffer.
    pub actor_batch: usize,
    pub epsilon_end: f64,
    /// Step at which ε reaches `epsilon_end`.
    pub anneal_end: usize,
    /// Also store a zero-reward transition for every unselected slot.
    pub store_counterfactuals: bool,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            batch_size: 16,
            actor_hidden: [300, 400],
            critic_hidden: [300, 400],
            replay_capacity: 2500,
            warmup: 500,
            tau: 0.1,
            critic_lr: 1e-3,
            actor_lr: 1e-4,
            critic_batch: 32,
            actor_batch: 32,
            epsilon_end: 0.05,
            anneal_end: 5000,
            store_counterfactuals: false,
            seed: 11,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.replay_capacity == 0 || self.critic_batch == 0 || self.actor_batch == 0 {
            return bad("replay capacity and update batch sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("tau and epsilon_end must lie in [0, 1]");
        }
        if !(self.critic_lr >= 0.0 && self.actor_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        Ok(())
    }

    /// ε = 1 during warm-up, then linear down to `epsilon_end` at `anneal_end`.
    pub fn epsilon(&self, step: usize) -> f64 {
        if step < self.warmup {
            return 1.0;
        }
        if step >= self.anneal_end || self.anneal_end <= self.warmup {
            return self.epsilon_end;
        }
        let frac = (step - self.warmup) as f64 / (self.anneal_end - self.warmup) as f64;
        1.0 + (self.epsilon_end - 1.0) * frac
    }
}

/// Per-example embeddings, `b × 57`.
#[derive(Debug, Clone, PartialEq)]
pub struct State(pub Array2<f64>);

impl State {
    pub fn batch_size(&self) -> usize {
        self.0.nrows()
    }
}

/// Selection probabilities over the candidates of a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action(pub Vec<f64>);

impl Action {
    pub fn one_hot(b: usize, index: usize) -> Self {
        let mut v = vec![0.0; b];
        v[index] = 1.0;
        Action(v)
    }

    /// Highest probability, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// With probability `epsilon` a uniform index, otherwise the argmax.
pub fn select_index(action: &Action, epsilon: f64, rng: &mut impl Rng) -> usize {
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..action.0.len())
    } else {
        action.argmax()
    }
}

fn check_raw(raw: &ArrayView2<f64>) -> Result<()> {
    if raw.ncols() != FEATURE_DIM {
        return Err(Error::Shape(format!(
            "raw features have {} columns, expected {FEATURE_DIM}",
            raw.ncols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNetwork {
    /// senlen, logp, tagging, n-gram.
    pub maps: [Network; 4],
}

pub struct FeatureCache([Cache; 4]);

impl FeatureNetwork {
    pub fn new(rng: &mut impl Rng) -> Self {
        let map = |r: &std::ops::Range<usize>, w: usize, rng: &mut _| {
            Network::mlp(&[r.len(), w], Activation::Relu, Activation::Relu, rng)
        };
        let mut maps = [
            map(&GROUP_RANGES[0], GROUP_WIDTHS[0], rng),
            map(&GROUP_RANGES[1], GROUP_WIDTHS[1], rng),
            map(&GROUP_RANGES[2], GROUP_WIDTHS[2], rng),
            map(&GROUP_RANGES[3], GROUP_WIDTHS[3], rng),
        ];
        // Inputs of a group share one sign, so a unit whose weights all point
        // against it never activates and never receives a gradient.
        for (net, sign) in maps.iter_mut().zip(GROUP_INPUT_SIGNS) {
            for mut row in net.layers_mut()[0].weights.rows_mut() {
                if row.iter().all(|&w| sign * w <= 0.0) {
                    row.mapv_inplace(|w| -w);
                }
            }
        }
        FeatureNetwork { maps }
    }

    fn embed_inner(&self, raw: ArrayView2<f64>, keep: bool) -> Result<(Array2<f64>, Option<FeatureCache>)> {
        check_raw(&raw)?;
        let mut out = Array2::zeros((raw.nrows(), EMBED_DIM));
        let mut caches = Vec::with_capacity(4);
        let mut col = 0;
        for (net, range) in self.maps.iter().zip(&GROUP_RANGES) {
            let x = raw.slice(s![.., range.clone()]);
            let y = if keep {
                let (y, c) = net.forward_batch(x)?;
                caches.push(c);
                y
            } else {
                net.predict_batch(x)?
            };
            out.slice_mut(s![.., col..col + y.ncols()]).assign(&y);
            col += y.ncols();
        }
        let cache = keep.then(|| {
            let [a, b, c, d]: [Cache; 4] = caches.try_into().ok().expect("four groups");
            FeatureCache([a, b, c, d])
        });
        Ok((out, cache))
    }

    pub fn embed(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.embed_inner(raw, false)?.0)
    }

    pub fn embed_with_cache(&self, raw: ArrayView2<f64>) -> Result<(Array2<f64>, FeatureCache)> {
        let (e, c) = self.embed_inner(raw, true)?;
        Ok((e, c.expect("cache requested")))
    }

    pub fn backward(&self, cache: &FeatureCache, grad: ArrayView2<f64>) -> Result<[Gradients; 4]> {
        let mut col = 0;
        let mut out = Vec::with_capacity(4);
        for (net, c) in self.maps.iter().zip(&cache.0) {
            let w = net.output_size();
            out.push(net.backward(c, grad.slice(s![.., col..col + w]))?.0);
            col += w;
        }
        Ok(out.try_into().ok().expect("four groups"))
    }
}

/// Per-example scorer; a softmax across the batch turns scores into an action.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Network,
}

impl Actor {
    pub fn new(hidden: [usize; 2], rng: &mut impl Rng) -> Self {
        Actor {
            net: Network::mlp(&[EMBED_DIM, hidden[0], hidden[1], 1], Activation::Relu, Activation::Identity, rng),
        }
    }

    pub fn scores(&self, state: &State) -> Result<Vec<f64>> {
        Ok(self.net.predict_batch(state.0.view())?.into_raw_vec_and_offset().0)
    }
}

/// `Q(s, a)`: layer 1 reads the action-weighted pool of the example
/// embeddings, the action itself is concatenated into layer 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub lower: Network,
    pub upper: Network,
}

struct CriticCache {
    pooled_rows: usize,
    lower: Cache,
    upper: Cache,
}

struct CriticGrads {
    lower: Gradients,
    upper: Gradients,
    embeddings: Array2<f64>,
    actions: Array2<f64>,
}

impl Critic {
    pub fn new(hidden: [usize; 2], batch_size: usize, rng: &mut impl Rng) -> Self {
        Critic {
            lower: Network::mlp(&[EMBED_DIM, hidden[0]], Activation::Relu, Activation::Relu, rng),
            upper: Network::mlp(
                &[hidden[0] + batch_size, hidden[1], 1],
                Activation::Relu,
                Activation::Identity,
                rng,
            ),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.upper.input_size() - self.lower.output_size()
    }

    /// `embeddings` stacks `T` states of `b` rows; `actions` is `T × b`.
    fn forward(&self, embeddings: &Array2<f64>, actions: &Array2<f64>) -> Result<(Array1<f64>, CriticCache)> {
        let (t, b) = actions.dim();
        if b != self.batch_size() || embeddings.nrows() != t * b {
            return Err(Error::Shape(format!(
                "critic expects batches of {} candidates, got {} actions over {} rows",
                self.batch_size(),
                b,
                embeddings.nrows()
            )));
        }
        let mut pooled = Array2::zeros((t, EMBED_DIM));
        for k in 0..t {
            let block = embeddings.slice(s![k * b..(k + 1) * b, ..]);
            pooled.row_mut(k).assign(&block.t().dot(&actions.row(k)));
        }
        let (h, lower) = self.lower.forward_batch(pooled.view())?;
        let z = ndarray::concatenate(Axis(1), &[h.view(), actions.view()]).expect("same row count");
        let (q, upper) = self.upper.forward_batch(z.view())?;
        Ok((
            q.column(0).to_owned(),
            CriticCache {
                pooled_rows: t,
                lower,
                upper,
            },
        ))
    }

    fn backward(
        &self,
        cache: &CriticCache,
        embeddings: &Array2<f64>,
        actions: &Array2<f64>,
        grad_q: &Array1<f64>,
        with_params: bool,
    ) -> Result<CriticGrads> {
        let t = cache.pooled_rows;
        let b = actions.ncols();
        let hidden = self.lower.output_size();
        let gq = grad_q.view().insert_axis(Axis(1));
        let (upper, dz) = if with_params {
            self.upper.backward(&cache.upper, gq)?
        } else {
            (Gradients::zeros_like(&self.upper), self.upper.input_gradient(&cache.upper, gq)?)
        };
        let dh = dz.slice(s![.., ..hidden]);
        let (lower, dpooled) = if with_params {
            self.lower.backward(&cache.lower, dh)?
        } else {
            (Gradients::zeros_like(&self.lower), self.lower.input_gradient(&cache.lower, dh)?)
        };
        let mut d_embed = Array2::zeros((t * b, EMBED_DIM));
        let mut d_action = dz.slice(s![.., hidden..]).to_owned();
        for k in 0..t {
            let block = embeddings.slice(s![k * b..(k + 1) * b, ..]);
            let dp = dpooled.row(k);
            for i in 0..b {
                d_embed.row_mut(k * b + i).scaled_add(actions[(k, i)], &dp);
            }
            d_action.row_mut(k).scaled_add(1.0, &block.dot(&dp));
        }
        Ok(CriticGrads {
            lower,
            upper,
            embeddings: d_embed,
            actions: d_action,
        })
    }
}

/// The seven networks of one policy, in a fixed order: the four feature
/// maps, the actor, then critic layers 1 and 2.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNetworks {
    pub fnet: FeatureNetwork,
    pub actor: Actor,
    pub critic: Critic,
}

pub const NETWORK_COUNT: usize = 7;
/// Index of the actor in [`AgentNetworks::nets`].
pub const ACTOR_SLOT: usize = 4;

impl AgentNetworks {
    pub fn new(config: &AgentConfig, rng: &mut impl Rng) -> Self {
        AgentNetworks {
            fnet: FeatureNetwork::new(rng),
            actor: Actor::new(config.actor_hidden, rng),
            critic: Critic::new(config.critic_hidden, config.batch_size, rng),
        }
    }

    pub fn nets(&self) -> [&Network; NETWORK_COUNT] {
        let [a, b, c, d] = &self.fnet.maps;
        [a, b, c, d, &self.actor.net, &self.critic.lower, &self.critic.upper]
    }

    pub fn nets_mut(&mut self) -> [&mut Network; NETWORK_COUNT] {
        let [a, b, c, d] = &mut self.fnet.maps;
        [a, b, c, d, &mut self.actor.net, &mut self.critic.lower, &mut self.critic.upper]
    }

    pub fn batch_size(&self) -> usize {
        self.critic.batch_size()
    }

    pub fn embed_state(&self, raw: ArrayView2<f64>) -> Result<State> {
        if raw.nrows() < 2 {
            return Err(Error::InvalidBatch(raw.nrows()));
        }
        Ok(State(self.fnet.embed(raw)?))
    }

    pub fn act(&self, state: &State) -> Result<Action> {
        Ok(Action(softmax(&self.actor.scores(state)?)))
    }

    /// Action for raw candidate features.
    pub fn act_raw(&self, raw: ArrayView2<f64>) -> Result<Action> {
        self.act(&self.embed_state(raw)?)
    }

    fn action_matrix(&self, action: &Action) -> Result<Array2<f64>> {
        Array2::from_shape_vec((1, action.0.len()), action.0.clone()).map_err(|e| Error::Shape(e.to_string()))
    }

    pub fn critic_eval(&self, state: &State, action: &Action) -> Result<f64> {
        let a = self.action_matrix(action)?;
        Ok(self.critic.forward(&state.0, &a)?.0[0])
    }

    /// `∂Q/∂a` at `(state, action)`.
    pub fn critic_action_gradient(&self, state: &State, action: &Action) -> Result<Vec<f64>> {
        let a = self.action_matrix(action)?;
        let (_, cache) = self.critic.forward(&state.0, &a)?;
        let g = self.critic.backward(&cache, &state.0, &a, &Array1::ones(1), false)?;
        Ok(g.actions.row(0).to_vec())
    }

    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::default();
        for n in self.nets() {
            h.write(n.checksum());
        }
        h.0
    }

    pub fn to_records(&self) -> Vec<NetworkRecord> {
        self.nets().iter().map(|n| n.to_record()).collect()
    }

    pub fn from_records(records: &[NetworkRecord]) -> Result<Self> {
        if records.len() != NETWORK_COUNT {
            return Err(Error::Checkpoint(format!(
                "expected {NETWORK_COUNT} networks, found {}",
                records.len()
            )));
        }
        let n = records.iter().map(Network::from_record).collect::<Result<Vec<_>>>()?;
        let mut it = n.into_iter();
        let mut next = || it.next().expect("length checked");
        let nets = AgentNetworks {
            fnet: FeatureNetwork {
                maps: [next(), next(), next(), next()],
            },
            actor: Actor { net: next() },
            critic: Critic {
                lower: next(),
                upper: next(),
            },
        };
        let shapes_ok = nets
            .fnet
            .maps
            .iter()
            .zip(GROUP_RANGES.iter().zip(GROUP_WIDTHS))
            .all(|(m, (r, w))| m.input_size() == r.len() && m.output_size() == w)
            && nets.actor.net.input_size() == EMBED_DIM
            && nets.actor.net.output_size() == 1
            && nets.critic.lower.input_size() == EMBED_DIM
            && nets.critic.upper.input_size() > nets.critic.lower.output_size()
            && nets.critic.upper.output_size() == 1;
        if !shapes_ok {
            return Err(Error::Checkpoint("network shapes do not form an agent".into()));
        }
        Ok(nets)
    }
}

/// Flat addressing over all seven networks.
impl Parameterized for AgentNetworks {
    fn param_count(&self) -> usize {
        self.nets().iter().map(|n| n.param_count()).sum()
    }

    fn get_param(&self, mut index: usize) -> f64 {
        for n in self.nets() {
            if index < n.param_count() {
                return n.get_param(index);
            }
            index -= n.param_count();
        }
        panic!("parameter index out of range");
    }

    fn set_param(&mut self, mut index: usize, value: f64) {
        for n in self.nets_mut() {
            if index < n.param_count() {
                return n.set_param(index, value);
            }
            index -= n.param_count();
        }
        panic!("parameter index out of range");
    }
}

/// Gradients for [`AgentNetworks`]; `None` marks an untouched network.
#[derive(Debug, Clone)]
pub struct AgentGradients(pub [Option<Gradients>; NETWORK_COUNT]);

impl AgentGradients {
    /// Flattened in [`Parameterized`] order, zeros for untouched networks.
    pub fn flatten(&self, nets: &AgentNetworks) -> Vec<f64> {
        let mut out = Vec::with_capacity(nets.param_count());
        for (g, n) in self.0.iter().zip(nets.nets()) {
            match g {
                Some(g) => out.extend(g.flatten()),
                None => out.extend(std::iter::repeat(0.0).take(n.param_count())),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Raw candidate features, `b × FEATURE_DIM`.
    pub features: Array2<f64>,
    pub action: Action,
    pub reward: f64,
}

impl Transition {
    pub fn new(features: Array2<f64>, action: Action, reward: f64) -> Result<Self> {
        check_raw(&features.view())?;
        if action.0.len() != features.nrows() {
            return Err(Error::Shape("action length differs from candidate count".into()));
        }
        if !reward.is_finite() {
            return Err(Error::InvalidInput(format!("reward {reward} is not finite")));
        }
        Ok(Transition {
            features,
            action,
            reward,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// `k` distinct entries, uniformly without replacement.
    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>> {
        if k > self.items.len() {
            return Err(Error::InsufficientSamples {
                requested: k,
                available: self.items.len(),
            });
        }
        Ok(sample_indices(rng, self.items.len(), k)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}

fn stack_features(batch: &[&Array2<f64>]) -> Result<Array2<f64>> {
    let views: Vec<_> = batch.iter().map(|f| f.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

fn stack_actions(batch: &[&Transition], b: usize) -> Result<Array2<f64>> {
    let mut a = Array2::zeros((batch.len(), b));
    for (mut row, t) in a.rows_mut().into_iter().zip(batch) {
        if t.action.0.len() != b {
            return Err(Error::Shape("transition batch sizes differ".into()));
        }
        row.assign(&ndarray::ArrayView1::from(&t.action.0[..]));
    }
    Ok(a)
}

/// Statistics of one learning step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnStats {
    pub critic_loss: f64,
    pub mean_q: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub online: AgentNetworks,
    pub target: AgentNetworks,
    optimizers: Vec<Optimizer>,
    pub buffer: ReplayBuffer,
    updates: u64,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let online = AgentNetworks::new(&config, &mut rng);
        let optimizers = (0..NETWORK_COUNT)
            .map(|k| Optimizer::adam(if k == ACTOR_SLOT { config.actor_lr } else { config.critic_lr }))
            .collect();
        Ok(Agent {
            target: online.clone(),
            online,
            optimizers,
            buffer: ReplayBuffer::new(config.replay_capacity),
            updates: 0,
            rng,
            config,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn epsilon(&self, step: usize) -> f64 {
        self.config.epsilon(step)
    }

    /// Online-policy action for raw candidate features.
    pub fn act(&self, raw: ArrayView2<f64>) -> Result<Action> {
        self.online.act_raw(raw)
    }

    /// Stores the executed choice as a one-hot action.
    pub fn record(&mut self, features: Array2<f64>, selected: usize, reward: f64) -> Result<()> {
        let b = features.nrows();
        if selected >= b {
            return Err(Error::InvalidInput(format!("selected index {selected} outside batch of {b}")));
        }
        if self.config.store_counterfactuals {
            for j in (0..b).filter(|&j| j != selected) {
                self.buffer.push(Transition::new(features.clone(), Action::one_hot(b, j), 0.0)?);
            }
        }
        self.buffer.push(Transition::new(features, Action::one_hot(b, selected), reward)?);
        Ok(())
    }

    /// Mean δ² over `batch` and its gradients for the critic and feature maps.
    pub fn critic_gradients(&self, batch: &[&Transition]) -> Result<(f64, AgentGradients)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("critic update needs transitions".into()));
        }
        let nets = &self.online;
        let b = nets.batch_size();
        let raw = stack_features(&batch.iter().map(|t| &t.features).collect::<Vec<_>>())?;
        let actions = stack_actions(batch, b)?;
        let (emb, fcache) = nets.fnet.embed_with_cache(raw.view())?;
        let (q, ccache) = nets.critic.forward(&emb, &actions)?;
        let n = batch.len() as f64;
        let delta: Array1<f64> = batch.iter().zip(&q).map(|(t, q)| t.reward - q).collect();
        let loss = delta.mapv(|d| d * d).sum() / n;
        let grad_q = delta.mapv(|d| -2.0 * d / n);
        let cg = nets.critic.backward(&ccache, &emb, &actions, &grad_q, true)?;
        let [f0, f1, f2, f3] = nets.fnet.backward(&fcache, cg.embeddings.view())?;
        Ok((
            loss,
            AgentGradients([Some(f0), Some(f1), Some(f2), Some(f3), None, Some(cg.lower), Some(cg.upper)]),
        ))
    }

    /// Mean `Q(s, μ(s))` over `states` and its gradient for the actor.
    pub fn actor_gradients(&self, states: &[&Array2<f64>]) -> Result<(f64, AgentGradients)> {
        if states.is_empty() {
            return Err(Error::EmptyInput("actor update needs states".into()));
        }
        let nets = &self.online;
        let b = nets.batch_size();
        let raw = stack_features(states)?;
        if raw.nrows() != states.len() * b {
            return Err(Error::Shape("state batch sizes differ".into()));
        }
        let emb = nets.fnet.embed(raw.view())?;
        let (scores, acache) = nets.actor.net.forward_batch(emb.view())?;
        let t = states.len();
        let mut actions = Array2::zeros((t, b));
        for k in 0..t {
            let p = softmax(scores.slice(s![k * b..(k + 1) * b, 0]).as_slice().expect("contiguous column"));
            actions.row_mut(k).assign(&Array1::from(p));
        }
        let (q, ccache) = nets.critic.forward(&emb, &actions)?;
        let objective = q.sum() / t as f64;
        let grad_q = Array1::from_elem(t, 1.0 / t as f64);
        let cg = nets.critic.backward(&ccache, &emb, &actions, &grad_q, false)?;
        let mut d_scores = Array2::zeros((t * b, 1));
        for k in 0..t {
            let a = actions.row(k).to_vec();
            let ga = cg.actions.row(k).to_vec();
            for (i, g) in softmax_backward(&a, &ga).into_iter().enumerate() {
                d_scores[(k * b + i, 0)] = g;
            }
        }
        let (g, _) = nets.actor.net.backward(&acache, d_scores.view())?;
        let mut grads: [Option<Gradients>; NETWORK_COUNT] = Default::default();
        grads[ACTOR_SLOT] = Some(g);
        Ok((objective, AgentGradients(grads)))
    }

    fn apply(&mut self, grads: &AgentGradients, direction: Direction) -> Result<()> {
        for ((net, opt), g) in self.online.nets_mut().into_iter().zip(&mut self.optimizers).zip(&grads.0) {
            if let Some(g) = g {
                opt.apply(net, g, direction)?;
            }
        }
        Ok(())
    }

    /// One descent step on mean δ²; returns the pre-step loss.
    pub fn critic_update(&mut self, batch: &[&Transition]) -> Result<f64> {
        let (loss, grads) = self.critic_gradients(batch)?;
        self.apply(&grads, Direction::Descend)?;
        Ok(loss)
    }

    /// One ascent step on mean `Q(s, μ(s))`; returns the pre-step value.
    pub fn actor_update(&mut self, states: &[&Array2<f64>]) -> Result<f64> {
        let (objective, grads) = self.actor_gradients(states)?;
        self.apply(&grads, Direction::Ascend)?;
        Ok(objective)
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        for (t, o) in self.target.nets_mut().into_iter().zip(self.online.nets()) {
            soft_update(t, o, tau)?;
        }
        Ok(())
    }

    /// Critic step, actor step and target sync from replayed transitions.
    /// `None` while the buffer holds fewer than `critic_batch` entries.
    pub fn learn(&mut self) -> Result<Option<LearnStats>> {
        if self.buffer.len() < self.config.critic_batch {
            return Ok(None);
        }
        let mut rng = self.rng.clone();
        let (critic_loss, actor_states) = {
            let batch = self.buffer.sample(self.config.critic_batch, &mut rng)?;
            let (loss, cg) = self.critic_gradients(&batch)?;
            let k = self.config.actor_batch.min(self.buffer.len());
            let states: Vec<Array2<f64>> = self
                .buffer
                .sample(k, &mut rng)?
                .into_iter()
                .map(|t| t.features.clone())
                .collect();
            self.apply(&cg, Direction::Descend)?;
            (loss, states)
        };
        let refs: Vec<&Array2<f64>> = actor_states.iter().collect();
        let mean_q = self.actor_update(&refs)?;
        self.sync_targets()?;
        self.rng = rng;
        self.updates += 1;
        Ok(Some(LearnStats { critic_loss, mean_q }))
    }

    pub fn to_record(&self) -> AgentRecord {
        AgentRecord {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            online: self.online.to_records(),
            target: self.target.to_records(),
            optimizers: self.optimizers.clone(),
            buffer: BufferMeta {
                len: self.buffer.len(),
                capacity: self.buffer.capacity(),
            },
            updates: self.updates,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("agent serializes")
    }

    /// Restores networks and optimizer state; the buffer comes back empty.
    pub fn from_json(text: &str) -> Result<Self> {
        let r: AgentRecord = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if r.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", r.format_version)));
        }
        if r.optimizers.len() != NETWORK_COUNT {
            return Err(Error::Checkpoint("optimizer count differs from network count".into()));
        }
        let mut agent = Agent::new(r.config)?;
        agent.online = AgentNetworks::from_records(&r.online)?;
        agent.target = AgentNetworks::from_records(&r.target)?;
        agent.optimizers = r.optimizers;
        agent.updates = r.updates;
        Ok(agent)
    }
}

/// Policy-only checkpoint: the seven networks without optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub format_version: u32,
    pub batch_size: usize,
    pub networks: Vec<NetworkRecord>,
}

impl AgentNetworks {
    pub fn to_json(&self) -> String {
        let record = PolicyRecord {
            format_version: CHECKPOINT_VERSION,
            batch_size: self.batch_size(),
            networks: self.to_records(),
        };
        serde_json::to_string(&record).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: PolicyRecord = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if r.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", r.format_version)));
        }
        let nets = AgentNetworks::from_records(&r.networks)?;
        if nets.batch_size() != r.batch_size {
            return Err(Error::Checkpoint("critic width disagrees with the stored batch size".into()));
        }
        Ok(nets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferMeta {
    pub len: usize,
    pub capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub format_version: u32,
    pub config: AgentConfig,
    pub online: Vec<NetworkRecord>,
    pub target: Vec<NetworkRecord>,
    pub optimizers: Vec<Optimizer>,
    pub buffer: BufferMeta,
    pub updates: u64,
}
