//! Multi-turn rollouts between the bot and a simulated speaker, the
//! empathy-valence reward, and policy-gradient / deep Q-learning updates of
//! the next-emotion decision. Every other component is borrowed immutably.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::chm::{placeholder, ChmRetrieval, OracleParams, SyntheticOracle};
use crate::controller::{select, DetectorModel, PolicyHead, PredictorModel, SelectMode};
use crate::corpus::{CandidatePool, DialogueContext, Role, UtteranceRecord};
use crate::math;
use crate::nn::loss::smooth_l1;
use crate::nn::{
    absorb_grads, bind, Activation, DenseNet, DenseSpec, Init, Mat, Module, NodeId, OptimConfig, Optimizer, Tape,
    Tensor,
};
use crate::response::{rank, BiEncoder, Decode, ToyGenerator};
use crate::va::{EmotionCatalog, EmotionId, VaPoint};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlAlgorithm {
    Pg,
    Dqn,
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of
/// all environment steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 1.0, end: 0.05, decay_fraction: 0.3 }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, step: usize, total_steps: usize) -> f64 {
        let span = self.decay_fraction * total_steps as f64;
        if span <= 0.0 {
            return self.end;
        }
        let frac = step as f64 / span;
        if frac >= 1.0 {
            return self.end;
        }
        self.start + (self.end - self.start) * frac
    }
}

fn default_algorithm() -> RlAlgorithm {
    RlAlgorithm::Dqn
}
fn default_n_turns() -> usize {
    3
}
fn default_gamma() -> f64 {
    0.99
}
fn default_lr() -> f64 {
    5e-5
}
fn default_train_freq() -> usize {
    4
}
fn default_sync_freq() -> usize {
    3000
}
fn default_clip() -> f64 {
    1.0
}
fn default_episodes() -> usize {
    1000
}
fn default_batch() -> usize {
    32
}
fn default_capacity() -> usize {
    5000
}
fn default_window() -> usize {
    50
}
fn default_pg_batch() -> usize {
    1
}
fn default_q_hidden() -> usize {
    512
}
fn default_history() -> usize {
    crate::corpus::DEFAULT_HISTORY
}

/// RL run configuration. Everything except `seed` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: RlAlgorithm,
    #[serde(default = "default_n_turns")]
    pub n_turns: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_train_freq")]
    pub online_train_freq: usize,
    #[serde(default = "default_sync_freq")]
    pub target_sync_freq: usize,
    #[serde(default)]
    pub epsilon: EpsilonSchedule,
    #[serde(default = "default_clip")]
    pub clip: f64,
    pub seed: u64,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    /// Episodes per point of the reward curve.
    #[serde(default = "default_window")]
    pub reward_window: usize,
    /// Episodes per policy-gradient update.
    #[serde(default = "default_pg_batch")]
    pub pg_batch: usize,
    #[serde(default = "default_q_hidden")]
    pub q_hidden: usize,
    #[serde(default = "default_history")]
    pub history_len: usize,
    /// Synthetic speaker parameters; `None` selects the retrieval speaker.
    #[serde(default)]
    pub oracle: Option<OracleParams>,
}

impl RlConfig {
    pub fn new(algorithm: RlAlgorithm, seed: u64) -> Self {
        RlConfig {
            algorithm,
            n_turns: default_n_turns(),
            gamma: default_gamma(),
            lr: default_lr(),
            online_train_freq: default_train_freq(),
            target_sync_freq: default_sync_freq(),
            epsilon: EpsilonSchedule::default(),
            clip: default_clip(),
            seed,
            episodes: default_episodes(),
            batch_size: default_batch(),
            buffer_capacity: default_capacity(),
            reward_window: default_window(),
            pg_batch: default_pg_batch(),
            q_hidden: default_q_hidden(),
            history_len: default_history(),
            oracle: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.online_train_freq == 0 || self.target_sync_freq == 0 {
            return bad("update frequencies must be at least 1");
        }
        if self.n_turns == 0 || self.batch_size == 0 || self.reward_window == 0 || self.pg_batch == 0 {
            return bad("turns, batch sizes and reward window must be at least 1");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("replay capacity below batch size");
        }
        if self.history_len == 0 || self.q_hidden == 0 {
            return bad("history length and hidden width must be at least 1");
        }
        if let Some(o) = &self.oracle {
            o.validate()?;
        }
        OptimConfig::adam(self.lr).with_clip(self.clip).validate()
    }

    pub fn optimizer(&self) -> OptimConfig {
        OptimConfig::adam(self.lr).with_clip(self.clip)
    }
}

/// `R = last − first` over a valence trace.
pub fn empathy_valence(trace: &[f64]) -> Result<f64> {
    match (trace.first(), trace.last()) {
        (Some(first), Some(last)) if trace.len() >= 2 => Ok(last - first),
        _ => Err(Error::Config("valence trace needs at least two points".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker_text: String,
    pub detected: EmotionId,
    pub va: VaPoint,
    pub action: EmotionId,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub turns: Vec<Turn>,
    pub valence_trace: Vec<f64>,
    /// State features before every action plus the final state.
    pub states: Vec<Vec<f64>>,
}

impl Episode {
    pub fn n_turns(&self) -> usize {
        self.turns.len()
    }

    pub fn actions(&self) -> Vec<EmotionId> {
        self.turns.iter().map(|t| t.action).collect()
    }

    pub fn reward(&self) -> Result<f64> {
        if self.valence_trace.len() != self.turns.len() + 1 {
            return Err(Error::Config("incomplete valence trace".into()));
        }
        empathy_valence(&self.valence_trace)
    }

    /// Terminal-reward transitions: every step but the last carries 0.
    pub fn transitions(&self) -> Result<Vec<Transition>> {
        let r = self.reward()?;
        let n = self.turns.len();
        Ok((0..n)
            .map(|t| Transition {
                state: self.states[t].clone(),
                action: self.turns[t].action,
                reward: if t + 1 == n { r } else { 0.0 },
                next_state: self.states[t + 1].clone(),
                done: t + 1 == n,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: EmotionId,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring; inserting into a full buffer evicts the oldest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be at least 1".into()));
        }
        Ok(ReplayBuffer { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), head: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    /// Uniform draw without replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<&Transition> {
        rand::seq::index::sample(rng, self.items.len(), n.min(self.items.len()))
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// Action-value head over the predictor's state features.
#[derive(Debug, Clone, PartialEq)]
pub struct QHead {
    net: DenseNet,
}

impl QHead {
    pub fn new(in_dim: usize, hidden: usize, n_actions: usize, rng: &mut Rng) -> Result<Self> {
        let spec = DenseSpec::mlp(&[in_dim, hidden, n_actions], Activation::LeakyRelu, Activation::Identity);
        Ok(QHead { net: DenseNet::new(&spec, Init::Xavier, rng)? })
    }

    pub fn from_net(net: DenseNet) -> Self {
        QHead { net }
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn forward(&self, tape: &mut Tape, params: &[NodeId], x: NodeId) -> NodeId {
        self.net.forward(tape, params, x)
    }

    pub fn q_batch(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if rows.is_empty() {
            return Vec::new();
        }
        let mut tape = Tape::new();
        let b = bind(self, &mut tape);
        let x = tape.leaf(Mat::from_rows(rows));
        let out = self.forward(&mut tape, b.nodes(), x);
        let m = tape.value(out);
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }

    pub fn q_values(&self, features: &[f64]) -> Vec<f64> {
        self.q_batch(&[features.to_vec()]).pop().unwrap()
    }
}

impl Module for QHead {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.net.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.net.visit_mut(f);
    }
}

/// How the listener turns a chosen emotion into a reply.
#[derive(Debug, Clone, Copy)]
pub enum Responder<'a> {
    Retrieval { encoder: &'a BiEncoder, pool: &'a CandidatePool },
    Generative { generator: &'a ToyGenerator, max_len: usize },
    /// Fixed sentence naming the emotion; used with the synthetic speaker.
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opening {
    pub text: String,
    pub situation: String,
}

#[derive(Debug, Clone, Copy)]
pub enum Speaker<'a> {
    Oracle(OracleParams),
    Retrieval { chm: &'a ChmRetrieval, detector: &'a DetectorModel, openings: &'a [Opening] },
}

#[derive(Debug, Clone, Copy)]
pub struct Environment<'a> {
    pub catalog: &'a EmotionCatalog,
    pub responder: Responder<'a>,
    pub speaker: Speaker<'a>,
    pub history_len: usize,
}

/// Next-emotion decision rule used during a rollout.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// The predictor's own head.
    Predictor(SelectMode),
    /// ε-greedy over a Q-head.
    QValues { q: &'a QHead, epsilon: f64 },
    Uniform,
    Fixed(EmotionId),
}

impl Policy<'_> {
    pub fn choose(&self, features: &PredictorModel, state: &[f64], rng: &mut Rng) -> EmotionId {
        let k = features.config().n_classes;
        match *self {
            Policy::Predictor(mode) => EmotionId(select(&features.head().probs(state), mode, rng)),
            Policy::QValues { q, epsilon } => {
                EmotionId(select(&q.q_values(state), SelectMode::EpsilonGreedy(epsilon), rng))
            }
            Policy::Uniform => EmotionId(rng.random_range(0..k)),
            Policy::Fixed(e) => e,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Observation {
    text: String,
    emotion: EmotionId,
    va: VaPoint,
}

#[allow(clippy::large_enum_variant)]
enum SpeakerState<'a> {
    Oracle(SyntheticOracle),
    Retrieval { chm: &'a ChmRetrieval, detector: &'a DetectorModel, situation: String },
}

fn oracle_observation(v: f64, catalog: &EmotionCatalog) -> Result<Observation> {
    let emotion = catalog.nearest_by_valence(v).ok_or(Error::Empty("catalog coordinates"))?;
    let arousal = catalog.va_of(emotion)?.arousal;
    Ok(Observation { text: placeholder(v, catalog), emotion, va: VaPoint::new(v, arousal)? })
}

fn detected_observation(detector: &DetectorModel, text: String) -> Result<Observation> {
    let out = detector.detect(&text)?;
    Ok(Observation { text, emotion: out.dominant, va: out.va })
}

impl<'a> Environment<'a> {
    fn open(&self, rng: &mut Rng) -> Result<(SpeakerState<'a>, Observation)> {
        match self.speaker {
            Speaker::Oracle(params) => {
                let with_va: Vec<EmotionId> = self.catalog.ids().filter(|id| self.catalog.has_va(*id)).collect();
                if with_va.is_empty() {
                    return Err(Error::Empty("catalog coordinates"));
                }
                let e0 = with_va[rng.random_range(0..with_va.len())];
                let v0 = self.catalog.va_of(e0)?.valence;
                let oracle = SyntheticOracle::new(params, v0, Rng::from_rng(rng))?;
                Ok((SpeakerState::Oracle(oracle), oracle_observation(v0, self.catalog)?))
            }
            Speaker::Retrieval { chm, detector, openings } => {
                if openings.is_empty() {
                    return Err(Error::Empty("opening utterances"));
                }
                let o = &openings[rng.random_range(0..openings.len())];
                let obs = detected_observation(detector, o.text.clone())?;
                Ok((SpeakerState::Retrieval { chm, detector, situation: o.situation.clone() }, obs))
            }
        }
    }

    fn respond(&self, context: &DialogueContext, action: EmotionId, rng: &mut Rng) -> Result<String> {
        match self.responder {
            Responder::Retrieval { encoder, pool } => {
                let r = rank(&encoder.encode_context(context), pool, Some(action), 1)?;
                Ok(pool.entries()[r.hits[0].index].text.clone())
            }
            Responder::Generative { generator, max_len } => {
                generator.generate(context, action, max_len, Decode::Greedy, rng)
            }
            Responder::Template => Ok(format!("i feel {} for you", self.catalog.label(action)?.name)),
        }
    }

    fn record(&self, role: Role, turn_idx: usize, text: &str, emotion: EmotionId) -> Result<UtteranceRecord> {
        Ok(UtteranceRecord {
            conv_id: String::from("rollout"),
            turn_idx,
            role,
            text: text.into(),
            situation_emotion: self.catalog.label(emotion)?.clone(),
            situation_prompt: String::new(),
        })
    }
}

fn react(
    state: &mut SpeakerState<'_>,
    catalog: &EmotionCatalog,
    context: &DialogueContext,
    action: EmotionId,
) -> Result<Observation> {
    match state {
        SpeakerState::Oracle(oracle) => {
            let (v, _) = oracle.react(action, catalog)?;
            oracle_observation(v, catalog)
        }
        SpeakerState::Retrieval { chm, detector, situation } => {
            let text = chm.react(context, situation)?;
            detected_observation(detector, text)
        }
    }
}

fn at_turn<T>(turn: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Turn { turn, source: Box::new(e) })
}

/// One rollout of `n_turns` listener decisions. `features` supplies the
/// state encoding (and the head for [`Policy::Predictor`]).
pub fn run_episode(
    env: &Environment<'_>,
    features: &PredictorModel,
    policy: &Policy<'_>,
    n_turns: usize,
    rng: &mut Rng,
) -> Result<Episode> {
    if n_turns == 0 {
        return Err(Error::Config("an episode needs at least one turn".into()));
    }
    let h = env.history_len.max(1);
    let (mut speaker, mut obs) = at_turn(0, env.open(rng))?;
    let mut context = DialogueContext::default();
    context.push(at_turn(0, env.record(Role::Speaker, 0, &obs.text, obs.emotion))?, h);
    let mut trace = alloc::vec![obs.va.valence];
    let mut states = Vec::with_capacity(n_turns + 1);
    let mut turns = Vec::with_capacity(n_turns);
    for t in 0..n_turns {
        let state = at_turn(t, features.state_features(&obs.text, obs.emotion))?;
        let action = policy.choose(features, &state, rng);
        let reply = at_turn(t, env.respond(&context, action, rng))?;
        context.push(at_turn(t, env.record(Role::Listener, 2 * t + 1, &reply, action))?, h);
        let next = at_turn(t, react(&mut speaker, env.catalog, &context, action))?;
        context.push(at_turn(t, env.record(Role::Speaker, 2 * t + 2, &next.text, next.emotion))?, h);
        trace.push(next.va.valence);
        states.push(state);
        turns.push(Turn { speaker_text: obs.text, detected: obs.emotion, va: obs.va, action, reply });
        obs = next;
    }
    states.push(at_turn(n_turns, features.state_features(&obs.text, obs.emotion))?);
    Ok(Episode { turns, valence_trace: trace, states })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningMean {
    count: u64,
    mean: f64,
}

impl RunningMean {
    pub fn value(&self) -> f64 {
        self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, x: f64) {
        self.count += 1;
        self.mean += (x - self.mean) / self.count as f64;
    }
}

/// Records `−(1/N) Σ_episodes Σ_t γ^(T−1−t)·(R − b)·log π(a_t | s_t)`.
pub fn pg_record_loss(
    head: &PolicyHead,
    tape: &mut Tape,
    params: &[NodeId],
    episodes: &[Episode],
    baseline: f64,
    gamma: f64,
) -> Result<NodeId> {
    if episodes.is_empty() {
        return Err(Error::Empty("policy-gradient batch"));
    }
    let mut rows = Vec::new();
    let mut actions = Vec::new();
    let mut weights = Vec::new();
    let scale = 1.0 / episodes.len() as f64;
    for ep in episodes {
        let advantage = ep.reward()? - baseline;
        let n = ep.n_turns();
        for t in 0..n {
            rows.push(ep.states[t].clone());
            actions.push(ep.turns[t].action.0);
            weights.push(-scale * math::powi(gamma, (n - 1 - t) as i32) * advantage);
        }
    }
    let x = tape.leaf(Mat::from_rows(&rows));
    let logits = head.forward(tape, params, x, None);
    let lp = tape.log_softmax(logits);
    let picked = tape.pick(lp, actions);
    Ok(tape.weighted_sum(picked, weights))
}

/// One clipped step on the policy head; the baseline is the running mean
/// of returns seen before this batch and is updated afterwards.
pub fn pg_update(
    head: &mut PolicyHead,
    opt: &mut Optimizer,
    episodes: &[Episode],
    baseline: &mut RunningMean,
    gamma: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let binding = bind(head, &mut tape);
    let loss = pg_record_loss(head, &mut tape, binding.nodes(), episodes, baseline.value(), gamma)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss);
    absorb_grads(head, &binding, &grads);
    opt.step(head)?;
    for ep in episodes {
        baseline.update(ep.reward()?);
    }
    Ok(value)
}

/// Bootstrapped target of one transition.
pub fn dqn_target(reward: f64, done: bool, max_next_q: f64, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * max_next_q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DqnStats {
    pub env_steps: u64,
    pub updates: u64,
    pub syncs: u64,
    pub max_applied_grad: f64,
}

/// Online and target Q-heads with their replay buffer.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    online: QHead,
    target: QHead,
    buffer: ReplayBuffer,
    opt: Optimizer,
    gamma: f64,
    train_freq: u64,
    sync_freq: u64,
    batch_size: usize,
    stats: DqnStats,
}

impl DqnAgent {
    pub fn new(online: QHead, config: &RlConfig) -> Result<Self> {
        config.validate()?;
        Ok(DqnAgent {
            target: online.clone(),
            online,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            opt: Optimizer::new(config.optimizer())?,
            gamma: config.gamma,
            train_freq: config.online_train_freq as u64,
            sync_freq: config.target_sync_freq as u64,
            batch_size: config.batch_size,
            stats: DqnStats::default(),
        })
    }

    pub fn online(&self) -> &QHead {
        &self.online
    }

    pub fn target(&self) -> &QHead {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn stats(&self) -> DqnStats {
        self.stats
    }

    pub fn into_online(self) -> QHead {
        self.online
    }

    /// Stores a transition, then advances the step counter.
    pub fn observe(&mut self, t: Transition, rng: &mut Rng) -> Result<Option<f64>> {
        self.buffer.push(t);
        self.step(rng)
    }

    /// Counts one environment step. Every `train_freq`-th step trains the
    /// online head on a replay batch (once the buffer holds one); every
    /// `sync_freq`-th step copies it into the target head.
    pub fn step(&mut self, rng: &mut Rng) -> Result<Option<f64>> {
        self.stats.env_steps += 1;
        let n = self.stats.env_steps;
        let mut loss = None;
        if n.is_multiple_of(self.train_freq) && self.buffer.len() >= self.batch_size {
            loss = Some(self.train_batch(rng)?);
        }
        if n.is_multiple_of(self.sync_freq) {
            self.target = self.online.clone();
            self.stats.syncs += 1;
        }
        Ok(loss)
    }

    fn train_batch(&mut self, rng: &mut Rng) -> Result<f64> {
        let batch: Vec<Transition> = self.buffer.sample(self.batch_size, rng).into_iter().cloned().collect();
        let next_rows: Vec<Vec<f64>> = batch.iter().map(|t| t.next_state.clone()).collect();
        let next_q = self.target.q_batch(&next_rows);
        let targets: Vec<f64> = batch
            .iter()
            .zip(&next_q)
            .map(|(t, q)| dqn_target(t.reward, t.done, q.iter().copied().fold(f64::NEG_INFINITY, f64::max), self.gamma))
            .collect();
        let mut tape = Tape::new();
        let binding = bind(&self.online, &mut tape);
        let loss = dqn_record_loss(&self.online, &mut tape, binding.nodes(), &batch, &targets);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("q loss"));
        }
        let grads = tape.backward(loss);
        absorb_grads(&mut self.online, &binding, &grads);
        let s = self.opt.step(&mut self.online)?;
        self.stats.updates += 1;
        self.stats.max_applied_grad = self.stats.max_applied_grad.max(s.max_applied_grad);
        Ok(value)
    }
}

/// Mean smooth-L1 between `Q(s, a)` and fixed targets.
pub fn dqn_record_loss(q: &QHead, tape: &mut Tape, params: &[NodeId], batch: &[Transition], targets: &[f64]) -> NodeId {
    let rows: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
    let x = tape.leaf(Mat::from_rows(&rows));
    let out = q.forward(tape, params, x);
    let picked = tape.pick(out, batch.iter().map(|t| t.action.0).collect());
    let y = tape.leaf(Mat::from_vec(targets.len(), 1, targets.to_vec()));
    smooth_l1(tape, picked, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardPoint {
    /// Episodes completed.
    pub step: usize,
    pub mean_reward_window: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub algorithm: RlAlgorithm,
    /// Same encoder as the input predictor; the head is updated under PG.
    pub predictor: PredictorModel,
    pub q_head: Option<QHead>,
    pub curve: Vec<RewardPoint>,
    pub rewards: Vec<f64>,
    pub dqn_stats: Option<DqnStats>,
}

impl TrainOutcome {
    /// Greedy decision rule of the trained policy.
    pub fn greedy_policy(&self) -> Policy<'_> {
        match &self.q_head {
            Some(q) => Policy::QValues { q, epsilon: 0.0 },
            None => Policy::Predictor(SelectMode::Argmax),
        }
    }
}

fn push_curve(curve: &mut Vec<RewardPoint>, rewards: &[f64], window: usize) {
    if rewards.len().is_multiple_of(window) {
        let tail = &rewards[rewards.len() - window..];
        curve.push(RewardPoint { step: rewards.len(), mean_reward_window: tail.iter().sum::<f64>() / window as f64 });
    }
}

/// Trains the next-emotion decision against `env`. Only the predictor head
/// (PG) or a fresh Q-head over the predictor's features (DQN) changes.
pub fn train_rl(config: &RlConfig, env: &Environment<'_>, predictor: &PredictorModel) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = crate::rng_from_seed(config.seed);
    let mut policy_model = predictor.clone();
    let mut rewards = Vec::with_capacity(config.episodes);
    let mut curve = Vec::new();
    match config.algorithm {
        RlAlgorithm::Pg => {
            let mut opt = Optimizer::new(config.optimizer())?;
            let mut baseline = RunningMean::default();
            let mut pending = Vec::with_capacity(config.pg_batch);
            for _ in 0..config.episodes {
                let ep = run_episode(env, &policy_model, &Policy::Predictor(SelectMode::Sample), config.n_turns, &mut rng)?;
                rewards.push(ep.reward()?);
                push_curve(&mut curve, &rewards, config.reward_window);
                pending.push(ep);
                if pending.len() == config.pg_batch {
                    pg_update(policy_model.head_mut(), &mut opt, &pending, &mut baseline, config.gamma)?;
                    pending.clear();
                }
            }
            Ok(TrainOutcome { algorithm: config.algorithm, predictor: policy_model, q_head: None, curve, rewards, dqn_stats: None })
        }
        RlAlgorithm::Dqn => {
            let k = predictor.config().n_classes;
            let q = QHead::new(predictor.config().feature_dim(), config.q_hidden, k, &mut rng)?;
            let mut agent = DqnAgent::new(q, config)?;
            let total_steps = config.episodes * config.n_turns;
            for _ in 0..config.episodes {
                let eps = config.epsilon.at(agent.stats().env_steps as usize, total_steps);
                let online = agent.online().clone();
                let ep = run_episode(env, &policy_model, &Policy::QValues { q: &online, epsilon: eps }, config.n_turns, &mut rng)?;
                for t in ep.transitions()? {
                    agent.observe(t, &mut rng)?;
                }
                rewards.push(ep.reward()?);
                push_curve(&mut curve, &rewards, config.reward_window);
            }
            let stats = agent.stats();
            policy_model = predictor.clone();
            Ok(TrainOutcome {
                algorithm: config.algorithm,
                predictor: policy_model,
                q_head: Some(agent.into_online()),
                curve,
                rewards,
                dqn_stats: Some(stats),
            })
        }
    }
}

/// Rolls out `episodes` evaluation episodes.
pub fn evaluate(
    env: &Environment<'_>,
    features: &PredictorModel,
    policy: &Policy<'_>,
    n_turns: usize,
    episodes: usize,
    rng: &mut Rng,
) -> Result<Vec<Episode>> {
    (0..episodes).map(|_| run_episode(env, features, policy, n_turns, rng)).collect()
}

pub fn mean_reward(episodes: &[Episode]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Empty("episodes"));
    }
    let mut sum = 0.0;
    for e in episodes {
        sum += e.reward()?;
    }
    Ok(sum / episodes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::PredictorConfig;
    use crate::nn::grad_check;
    use crate::rng_from_seed;
    use crate::synthetic;
    use crate::text::EncoderSpec;
    use alloc::vec;

    #[test]
    fn reward_hand_cases() {
        assert!((empathy_valence(&[-0.12, 0.85]).unwrap() - 0.97).abs() < 1e-12);
        assert_eq!(empathy_valence(&[0.3, 0.3]).unwrap(), 0.0);
        assert!((empathy_valence(&[-0.5, 0.0, 0.3, 0.4]).unwrap() - 0.9).abs() < 1e-12);
        assert!(empathy_valence(&[0.1]).is_err());
    }

    #[test]
    fn dqn_target_hand_cases() {
        assert_eq!(dqn_target(1.0, true, 123.0, 0.99), 1.0);
        assert!((dqn_target(0.5, false, 1.0, 0.99) - 1.49).abs() < 1e-12);
    }

    #[test]
    fn epsilon_schedule() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.at(0, 1000), 1.0);
        assert!((s.at(150, 1000) - 0.525).abs() < 1e-12);
        assert_eq!(s.at(300, 1000), 0.05);
        assert_eq!(s.at(999, 1000), 0.05);
    }

    fn transition(i: usize) -> Transition {
        Transition { state: vec![i as f64], action: EmotionId(0), reward: 0.0, next_state: vec![], done: false }
    }

    proptest::proptest! {
        #[test]
        fn replay_matches_shadow_list(cap in 1usize..40, n in 0usize..120) {
            let mut buf = ReplayBuffer::new(cap).unwrap();
            let mut shadow = Vec::new();
            for i in 0..n {
                buf.push(transition(i));
                shadow.push(i);
                if shadow.len() > cap {
                    shadow.remove(0);
                }
                proptest::prop_assert!(buf.len() <= cap);
            }
            let got: Vec<usize> = buf.iter().map(|t| t.state[0] as usize).collect();
            proptest::prop_assert_eq!(got, shadow);
        }

        #[test]
        fn reward_uses_endpoints_only(mid in proptest::collection::vec(-1.0f64..1.0, 0..6), a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let mut trace = vec![a];
            trace.extend(mid);
            trace.push(b);
            proptest::prop_assert_eq!(empathy_valence(&trace).unwrap(), b - a);
        }
    }

    fn setup() -> (EmotionCatalog, PredictorModel) {
        let cat = synthetic::pull_catalog(5, 2).unwrap();
        let vocab = synthetic::placeholder_vocab(&cat);
        let cfg = PredictorConfig {
            encoder: EncoderSpec { emb_dim: 4, hidden: 8, out_dim: 4, ..Default::default() },
            hidden: 16,
            dropout: 0.0,
            ..PredictorConfig::new(cat.len())
        };
        let p = PredictorModel::new(vocab, cfg, Init::ScaledXavier(0.1), &mut rng_from_seed(1)).unwrap();
        (cat, p)
    }

    fn env(cat: &EmotionCatalog, alpha: f64, sigma: f64) -> Environment<'_> {
        Environment {
            catalog: cat,
            responder: Responder::Template,
            speaker: Speaker::Oracle(OracleParams { alpha, noise_sigma: sigma }),
            history_len: 4,
        }
    }

    #[test]
    fn one_turn_episode_shape() {
        let (cat, p) = setup();
        let e = env(&cat, 0.5, 0.0);
        let ep = run_episode(&e, &p, &Policy::Uniform, 1, &mut rng_from_seed(0)).unwrap();
        assert_eq!(ep.turns.len(), 1);
        assert_eq!(ep.valence_trace.len(), 2);
        assert_eq!(ep.states.len(), 2);
    }

    #[test]
    fn full_pull_closed_form() {
        let (cat, p) = setup();
        let e = env(&cat, 1.0, 0.0);
        let mut rng = rng_from_seed(3);
        for _ in 0..20 {
            let ep = run_episode(&e, &p, &Policy::Uniform, 3, &mut rng).unwrap();
            let last = *ep.actions().last().unwrap();
            let expect = cat.va_of(last).unwrap().valence - ep.valence_trace[0];
            assert_eq!(ep.reward().unwrap(), expect);
        }
    }

    #[test]
    fn rollouts_are_reproducible() {
        let (cat, p) = setup();
        let e = env(&cat, 0.4, 0.0);
        let a = run_episode(&e, &p, &Policy::Predictor(SelectMode::Sample), 3, &mut rng_from_seed(9)).unwrap();
        let b = run_episode(&e, &p, &Policy::Predictor(SelectMode::Sample), 3, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transitions_carry_terminal_reward_only() {
        let (cat, p) = setup();
        let e = env(&cat, 0.7, 0.0);
        let ep = run_episode(&e, &p, &Policy::Uniform, 3, &mut rng_from_seed(2)).unwrap();
        let ts = ep.transitions().unwrap();
        assert_eq!(ts.iter().map(|t| t.done).collect::<Vec<_>>(), [false, false, true]);
        assert_eq!(ts[0].reward, 0.0);
        assert_eq!(ts[1].reward, 0.0);
        assert_eq!(ts[2].reward, ep.reward().unwrap());
        assert_eq!(ts[0].next_state, ts[1].state);
    }

    #[test]
    fn centered_advantage_leaves_head_unchanged() {
        let (cat, mut p) = setup();
        let e = env(&cat, 0.5, 0.0);
        let ep = run_episode(&e, &p, &Policy::Uniform, 3, &mut rng_from_seed(4)).unwrap();
        let r = ep.reward().unwrap();
        let mut baseline = RunningMean::default();
        baseline.update(r);
        let before = p.head().flat_values();
        let mut opt = Optimizer::new(OptimConfig::adam(0.1).with_clip(1.0)).unwrap();
        pg_update(p.head_mut(), &mut opt, &[ep], &mut baseline, 0.99).unwrap();
        assert_eq!(before, p.head().flat_values());
    }

    #[test]
    fn pg_surrogate_gradient_check() {
        let (cat, p) = setup();
        let e = env(&cat, 0.5, 0.1);
        let mut rng = rng_from_seed(5);
        let eps: Vec<Episode> = (0..3).map(|_| run_episode(&e, &p, &Policy::Uniform, 3, &mut rng).unwrap()).collect();
        let err = grad_check(p.head(), 1e-5, |h, t, b| pg_record_loss(h, t, b.nodes(), &eps, 0.1, 0.99)).unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn bandit_converges() {
        // single state, two actions, reward 1 for action 0
        let mut rng = rng_from_seed(0);
        let mut head = PolicyHead::new(1, 8, 2, 0.0, Init::Xavier, &mut rng).unwrap();
        let mut opt = Optimizer::new(OptimConfig::adam(0.05).with_clip(1.0)).unwrap();
        let mut baseline = RunningMean::default();
        let mut p0 = 0.0;
        for _ in 0..500 {
            let probs = head.probs(&[1.0]);
            p0 = probs[0];
            let a = crate::controller::sample_categorical(&probs, &mut rng);
            let r = if a == 0 { 1.0 } else { 0.0 };
            let ep = Episode {
                turns: vec![Turn {
                    speaker_text: String::new(),
                    detected: EmotionId(0),
                    va: VaPoint { valence: 0.0, arousal: 0.0 },
                    action: EmotionId(a),
                    reply: String::new(),
                }],
                valence_trace: vec![0.0, r],
                states: vec![vec![1.0], vec![1.0]],
            };
            pg_update(&mut head, &mut opt, &[ep], &mut baseline, 0.99).unwrap();
        }
        assert!(head.probs(&[1.0])[0] > 0.99, "{p0}");
    }

    #[test]
    fn dqn_cadence_and_sync() {
        let (cat, p) = setup();
        let mut cfg = RlConfig::new(RlAlgorithm::Dqn, 0);
        cfg.batch_size = 4;
        cfg.target_sync_freq = 10;
        cfg.lr = 1e-2;
        let mut rng = rng_from_seed(1);
        let q = QHead::new(p.config().feature_dim(), 8, cat.len(), &mut rng).unwrap();
        let mut agent = DqnAgent::new(q, &cfg).unwrap();
        let e = env(&cat, 0.5, 0.0);
        let mut snapshot = agent.target().flat_values();
        for step in 1..=40u64 {
            let ep = run_episode(&e, &p, &Policy::Uniform, 1, &mut rng).unwrap();
            let before = agent.stats().updates;
            let loss = agent.observe(ep.transitions().unwrap().remove(0), &mut rng).unwrap();
            let trained = step % 4 == 0 && step >= 4;
            assert_eq!(loss.is_some(), trained, "step {step}");
            assert_eq!(agent.stats().updates - before, trained as u64);
            if step % 10 == 0 {
                assert_eq!(agent.target().flat_values(), agent.online().flat_values());
                snapshot = agent.target().flat_values();
            } else {
                assert_eq!(agent.target().flat_values(), snapshot);
            }
        }
        assert_eq!(agent.stats().syncs, 4);
        assert!(agent.stats().max_applied_grad <= 1.0);
    }

    #[test]
    fn config_validation_and_defaults() {
        let cfg = RlConfig::new(RlAlgorithm::Pg, 7);
        assert_eq!((cfg.n_turns, cfg.gamma, cfg.lr), (3, 0.99, 5e-5));
        assert_eq!((cfg.online_train_freq, cfg.target_sync_freq, cfg.buffer_capacity), (4, 3000, 5000));
        assert!(cfg.validate().is_ok());
        let mut bad = cfg.clone();
        bad.gamma = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.online_train_freq = 0;
        assert!(bad.validate().is_err());
    }
}
