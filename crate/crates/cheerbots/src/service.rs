//! Live chat: frozen components, per-session state and the turn pipeline
//! detect → predict next emotion → retrieve or generate.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use cheerbots_core::controller::{DetectorModel, PredictorModel};
use cheerbots_core::corpus::{CandidatePool, DialogueContext, Role, UtteranceRecord, DEFAULT_HISTORY};
use cheerbots_core::math::argmax;
use cheerbots_core::metrics::module_hash;
use cheerbots_core::response::{rank, BiEncoder, Decode, ToyGenerator};
use cheerbots_core::rl::empathy_valence;
use cheerbots_core::va::{EmotionCatalog, EmotionId};
use cheerbots_core::{rng_from_seed, Rng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Bundle;
use crate::components::{self, TrainedPolicy};
use crate::error::{AppError, AppResult};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);
pub const DEFAULT_REPLY_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ResponderKind {
    #[default]
    Retrieval,
    Generative,
    /// A fixed sentence naming the chosen emotion; needs no trained model.
    Template,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaPayload {
    pub valence: f64,
    pub arousal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurnPayload {
    pub turn_index: usize,
    pub user_text: String,
    pub reply_text: String,
    pub detected_emotion: String,
    pub detected_va: VaPayload,
    pub predicted_next_emotion: String,
    /// Last minus first detected valence of the user's turns so far.
    pub empathy_valence_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePayload {
    pub valence_trace: Vec<f64>,
    pub turns: Vec<ChatTurnPayload>,
}

#[derive(Debug, Clone)]
enum Replier {
    Retrieval { encoder: BiEncoder, pool: CandidatePool },
    Generative(ToyGenerator),
    Template,
}

/// Every model the chat pipeline reads. Never mutated after loading.
#[derive(Debug, Clone)]
pub struct ChatEngine {
    catalog: EmotionCatalog,
    detector: DetectorModel,
    predictor: PredictorModel,
    policy: Option<TrainedPolicy>,
    replier: Replier,
    history_len: usize,
    reply_len: usize,
}

impl ChatEngine {
    /// Loads the full detector, the predictor, the RL policy when present
    /// and the chosen responder.
    pub fn load(bundle: &Bundle, kind: ResponderKind) -> AppResult<Self> {
        let (_, catalog) = components::load_catalog(bundle)?;
        let detector = components::load_full_detector(bundle)?;
        let predictor = components::load_predictor(bundle)?;
        let policy = if bundle.has(crate::checkpoint::Artifact::Policy) {
            Some(components::load_policy(bundle)?.1)
        } else {
            None
        };
        let replier = match kind {
            ResponderKind::Retrieval => {
                let encoder = components::load_retrieval(bundle)?;
                let train = crate::pipeline::train_records(bundle)?;
                let pool = components::listener_pool(bundle, &train, &encoder)?;
                Replier::Retrieval { encoder, pool }
            }
            ResponderKind::Generative => Replier::Generative(components::load_generator(bundle)?),
            ResponderKind::Template => Replier::Template,
        };
        Ok(ChatEngine { catalog, detector, predictor, policy, replier, history_len: DEFAULT_HISTORY, reply_len: DEFAULT_REPLY_LEN })
    }

    pub fn catalog(&self) -> &EmotionCatalog {
        &self.catalog
    }

    pub fn detector(&self) -> &DetectorModel {
        &self.detector
    }

    /// Greedy next emotion: the RL policy when one was trained, otherwise
    /// the supervised predictor.
    pub fn next_emotion(&self, text: &str, now: EmotionId) -> AppResult<EmotionId> {
        let state = self.predictor.state_features(text, now)?;
        let scores = match &self.policy {
            Some(TrainedPolicy::Q(q)) => q.q_values(&state),
            Some(TrainedPolicy::Predictor(p)) => p.head().probs(&state),
            None => self.predictor.head().probs(&state),
        };
        Ok(EmotionId(argmax(&scores)))
    }

    pub fn reply(&self, context: &DialogueContext, emotion: EmotionId, rng: &mut Rng) -> AppResult<String> {
        Ok(match &self.replier {
            Replier::Retrieval { encoder, pool } => {
                let r = rank(&encoder.encode_context(context), pool, Some(emotion), 1)?;
                pool.entries()[r.hits[0].index].text.clone()
            }
            Replier::Generative(g) => g.generate(context, emotion, self.reply_len, Decode::Greedy, rng)?,
            Replier::Template => format!("i feel {} for you", self.catalog.label(emotion)?.name),
        })
    }

    fn record(&self, role: Role, turn_idx: usize, text: &str, emotion: EmotionId) -> AppResult<UtteranceRecord> {
        Ok(UtteranceRecord {
            conv_id: "chat".into(),
            turn_idx,
            role,
            text: text.into(),
            situation_emotion: self.catalog.label(emotion)?.clone(),
            situation_prompt: String::new(),
        })
    }

    /// Runs one user message through the pipeline and appends it to the
    /// session. On error the session is left untouched.
    pub fn turn(&self, session: &mut Session, text: &str) -> AppResult<ChatTurnPayload> {
        let text = text.trim();
        if text.is_empty() {
            return Err(AppError::EmptyMessage);
        }
        let detected = self.detector.detect(text)?;
        let next = self.next_emotion(text, detected.dominant)?;
        let turn_index = session.turns.len();
        let mut context = session.context.clone();
        context.push(self.record(Role::Speaker, 2 * turn_index, text, detected.dominant)?, self.history_len);
        let reply_text = self.reply(&context, next, &mut session.rng)?;
        context.push(self.record(Role::Listener, 2 * turn_index + 1, &reply_text, next)?, self.history_len);

        let mut trace = session.trace.clone();
        trace.push(detected.va.valence);
        let empathy_valence_so_far = if trace.len() < 2 { 0.0 } else { empathy_valence(&trace)? };
        let payload = ChatTurnPayload {
            turn_index,
            user_text: text.into(),
            reply_text,
            detected_emotion: self.catalog.label(detected.dominant)?.name.clone(),
            detected_va: VaPayload { valence: detected.va.valence, arousal: detected.va.arousal },
            predicted_next_emotion: self.catalog.label(next)?.name.clone(),
            empathy_valence_so_far,
        };
        session.context = context;
        session.trace = trace;
        session.turns.push(payload.clone());
        Ok(payload)
    }

    /// Parameter hashes of every loaded model, for frozen-weight checks.
    pub fn parameter_hashes(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        out.insert("detector".into(), module_hash(&self.detector));
        out.insert("predictor".into(), module_hash(&self.predictor));
        match &self.policy {
            Some(TrainedPolicy::Q(q)) => out.insert("policy".into(), module_hash(q)),
            Some(TrainedPolicy::Predictor(p)) => out.insert("policy".into(), module_hash(p)),
            None => None,
        };
        match &self.replier {
            Replier::Retrieval { encoder, .. } => out.insert("retrieval".into(), module_hash(encoder)),
            Replier::Generative(g) => out.insert("generator".into(), module_hash(g)),
            Replier::Template => None,
        };
        out
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    context: DialogueContext,
    trace: Vec<f64>,
    turns: Vec<ChatTurnPayload>,
    rng: Rng,
    pub created_at: std::time::SystemTime,
    last_active: Instant,
}

impl Session {
    pub fn new(id: String, seed: u64) -> Self {
        Session {
            id,
            context: DialogueContext::default(),
            trace: Vec::new(),
            turns: Vec::new(),
            rng: rng_from_seed(seed),
            created_at: std::time::SystemTime::now(),
            last_active: Instant::now(),
        }
    }

    pub fn trace(&self) -> TracePayload {
        TracePayload { valence_trace: self.trace.clone(), turns: self.turns.clone() }
    }
}

/// Feeds `messages` through a fresh session; the offline twin of a live
/// conversation.
pub fn replay<S: AsRef<str>>(engine: &ChatEngine, seed: u64, messages: &[S]) -> AppResult<Vec<ChatTurnPayload>> {
    let mut s = Session::new("replay".into(), seed);
    messages.iter().map(|m| engine.turn(&mut s, m.as_ref())).collect()
}

/// Shared engine plus the session table. Each session has its own lock, so
/// requests to one session run in order while sessions proceed in parallel.
#[derive(Debug)]
pub struct ChatService {
    engine: Arc<ChatEngine>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    seed: u64,
    idle_timeout: Duration,
}

impl ChatService {
    pub fn new(engine: ChatEngine, seed: u64, idle_timeout: Duration) -> Self {
        ChatService { engine: Arc::new(engine), sessions: Mutex::new(HashMap::new()), seed, idle_timeout }
    }

    pub fn engine(&self) -> &ChatEngine {
        &self.engine
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn create_session(&self) -> String {
        self.sweep();
        let id = uuid::Uuid::new_v4().to_string();
        let session = Session::new(id.clone(), self.seed);
        self.sessions.lock().expect("session table").insert(id.clone(), Arc::new(Mutex::new(session)));
        id
    }

    fn session(&self, id: &str) -> AppResult<Arc<Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| AppError::UnknownSession(id.into()))
    }

    pub fn message(&self, id: &str, text: &str) -> AppResult<ChatTurnPayload> {
        let s = self.session(id)?;
        let mut s = s.lock().expect("session");
        s.last_active = Instant::now();
        self.engine.turn(&mut s, text)
    }

    pub fn trace(&self, id: &str) -> AppResult<TracePayload> {
        let s = self.session(id)?;
        let mut s = s.lock().expect("session");
        s.last_active = Instant::now();
        Ok(s.trace())
    }

    /// Drops sessions idle for longer than the timeout; returns how many.
    pub fn sweep(&self) -> usize {
        let now = Instant::now();
        let mut table = self.sessions.lock().expect("session table");
        let before = table.len();
        table.retain(|_, s| match s.try_lock() {
            Ok(s) => now.duration_since(s.last_active) <= self.idle_timeout,
            // busy sessions are active by definition
            Err(_) => true,
        });
        before - table.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session table").len()
    }
}
