//! Pipeline stages. Each reads its inputs from the bundle, trains or
//! evaluates, and writes its outputs back through the manifest.

use std::collections::BTreeMap;
use std::path::Path;

use cheerbots_core::chm::{reaction_pairs, ChmRetrieval, OracleParams};
use cheerbots_core::controller::{
    bootstrap_va_table, next_emotion_pairs, shuffled_batches, train_detector as fit_detector, DetectorConfig,
    DetectorModel, PredictorConfig, PredictorModel, SelectMode, TrainSchedule,
};
use cheerbots_core::corpus::{
    build_pools, conversations, make_context, split_of, tokenize_and_vocab, CandidatePool, Role, Split,
    UtteranceRecord, DEFAULT_HISTORY,
};
use cheerbots_core::metrics::{
    avg_bleu, p_at_1_100, perplexity, reward_report, top_k_accuracy, ConfigDigest, MetricReport,
};
use cheerbots_core::nn::{Init, OptimConfig, Optimizer};
use cheerbots_core::response::{
    gen_examples, reply_pairs, train_bi_encoder, train_generator, BiEncoder, GenConfig, GenInput, ToyGenerator,
};
use cheerbots_core::rl::{self, Environment, Opening, Policy, Responder, RlAlgorithm, RlConfig, Speaker};
use cheerbots_core::rng_from_seed;
use cheerbots_core::text::EncoderSpec;
use cheerbots_core::va::EmotionCatalog;
use serde::Serialize;

use crate::checkpoint::{Artifact, Bundle};
use crate::components::{self, DetectorStage, TrainedPolicy};
use crate::error::{AppError, AppResult};
use crate::service::{ChatEngine, ResponderKind, DEFAULT_REPLY_LEN};

/// Shared knobs of the supervised stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOpts {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Turns of history fed to context encoders.
    pub history: usize,
}

impl TrainOpts {
    pub fn new(seed: u64) -> Self {
        TrainOpts { seed, epochs: 5, batch_size: 32, lr: 1e-3, history: DEFAULT_HISTORY }
    }

    fn schedule(&self) -> TrainSchedule {
        TrainSchedule { epochs: self.epochs, batch_size: self.batch_size }
    }

    fn optimizer(&self) -> AppResult<Optimizer> {
        Ok(Optimizer::new(OptimConfig::adam(self.lr).with_clip(1.0))?)
    }
}

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Valid => "valid",
        Split::Test => "test",
    }
}

fn split_records(bundle: &Bundle, split: Split) -> AppResult<Vec<UtteranceRecord>> {
    let records: Vec<UtteranceRecord> =
        components::load_records(bundle)?.into_iter().filter(|r| split_of(&r.conv_id) == split).collect();
    if records.is_empty() {
        return Err(AppError::Invalid(format!("the {} split holds no conversations", split_name(split))));
    }
    Ok(records)
}

pub fn train_records(bundle: &Bundle) -> AppResult<Vec<UtteranceRecord>> {
    split_records(bundle, Split::Train)
}

fn labelled(records: &[UtteranceRecord]) -> Vec<(String, cheerbots_core::va::EmotionId)> {
    records.iter().map(|r| (r.text.clone(), r.situation_emotion.id)).collect()
}

fn is_complete(catalog: &EmotionCatalog) -> bool {
    catalog.ids().all(|id| catalog.has_va(id))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub records: usize,
    pub conversations: usize,
    pub labels: usize,
}

/// Parses an ED-style CSV into canonical records and stores them with the
/// label catalog (the bundled one unless `catalog_path` is given).
pub fn ingest(bundle: &mut Bundle, csv_path: &Path, catalog_path: Option<&Path>) -> AppResult<IngestSummary> {
    let (spec, catalog) = match catalog_path {
        Some(p) => crate::catalog_io::load_catalog(p)?,
        None => crate::catalog_io::default_catalog(),
    };
    let records = crate::ed_csv::ingest_file(csv_path, &catalog)?;
    components::save_records(bundle, &records)?;
    components::save_catalog(bundle, &spec, &catalog)?;
    Ok(IngestSummary { records: records.len(), conversations: conversations(&records).len(), labels: catalog.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub items: usize,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorSummary {
    pub stage: DetectorStage,
    pub fit: FitSummary,
}

fn new_detector(catalog: &EmotionCatalog, train: &[UtteranceRecord], lambda_va: f64, rng: &mut cheerbots_core::Rng) -> AppResult<DetectorModel> {
    let vocab = tokenize_and_vocab(train, 1, catalog)?;
    let config = DetectorConfig { lambda_va, ..DetectorConfig::new(catalog.len()) };
    Ok(DetectorModel::new(vocab, config, Init::Xavier, rng)?)
}

/// With a complete VA table the detector is trained on every label and is
/// final. Otherwise only seed-labelled utterances are used, and
/// `bootstrap-va` must follow.
pub fn train_detector(bundle: &mut Bundle, opts: &TrainOpts, lambda_va: f64) -> AppResult<DetectorSummary> {
    let (_, catalog) = components::load_catalog(bundle)?;
    let train = train_records(bundle)?;
    let mut rng = rng_from_seed(opts.seed);
    let stage = if is_complete(&catalog) { DetectorStage::Full } else { DetectorStage::Seed };
    let data: Vec<_> =
        labelled(&train).into_iter().filter(|(_, l)| stage == DetectorStage::Full || catalog.is_seed(*l)).collect();
    let mut model = new_detector(&catalog, &train, lambda_va, &mut rng)?;
    let losses = fit_detector(&mut model, &mut opts.optimizer()?, &data, &catalog, opts.schedule(), &mut rng)?;
    components::save_detector(bundle, &model, stage)?;
    Ok(DetectorSummary { stage, fit: FitSummary { items: data.len(), epoch_losses: losses } })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSummary {
    /// Labels whose coordinates came from the seed detector.
    pub filled: Vec<String>,
    pub fit: FitSummary,
}

/// Fills the missing VA coordinates with the seed detector's mean output
/// per label, then trains the final detector from scratch on all labels.
pub fn bootstrap_va(bundle: &mut Bundle, opts: &TrainOpts, lambda_va: f64) -> AppResult<BootstrapSummary> {
    let (spec, catalog) = components::load_catalog(bundle)?;
    let (seed_model, stage) = components::load_detector(bundle)?;
    let train = train_records(bundle)?;
    let data = labelled(&train);
    let completed = match stage {
        DetectorStage::Seed => bootstrap_va_table(&seed_model, &catalog, &data)?,
        DetectorStage::Full => catalog.clone(),
    };
    let filled = catalog.ids().filter(|id| !catalog.has_va(*id)).map(|id| catalog.name(id).to_string()).collect();
    let mut rng = rng_from_seed(opts.seed);
    let mut model = new_detector(&completed, &train, lambda_va, &mut rng)?;
    let losses = fit_detector(&mut model, &mut opts.optimizer()?, &data, &completed, opts.schedule(), &mut rng)?;
    components::save_catalog(bundle, &spec, &completed)?;
    components::save_detector(bundle, &model, DetectorStage::Full)?;
    Ok(BootstrapSummary { filled, fit: FitSummary { items: data.len(), epoch_losses: losses } })
}

/// Supervised next-emotion training on detector labels of consecutive
/// speaker and listener turns.
pub fn train_predictor(bundle: &mut Bundle, opts: &TrainOpts, hidden: usize) -> AppResult<FitSummary> {
    let detector = components::load_full_detector(bundle)?;
    let (_, catalog) = components::load_catalog(bundle)?;
    let train = train_records(bundle)?;
    let pairs = next_emotion_pairs(&detector, &conversations(&train))?;
    if pairs.is_empty() {
        return Err(AppError::Invalid("no speaker turn is followed by a listener turn".into()));
    }
    let mut rng = rng_from_seed(opts.seed);
    let config = PredictorConfig { hidden, ..PredictorConfig::new(catalog.len()) };
    let mut model = PredictorModel::new(detector.vocab().clone(), config, Init::Xavier, &mut rng)?;
    let mut opt = opts.optimizer()?;
    let mut losses = Vec::with_capacity(opts.epochs);
    for _ in 0..opts.epochs {
        let batches = shuffled_batches(pairs.len(), opts.batch_size, &mut rng);
        let mut sum = 0.0;
        for idx in &batches {
            let batch: Vec<_> = idx.iter().map(|&i| pairs[i].clone()).collect();
            sum += model.train_step(&mut opt, &batch, &mut rng)?;
        }
        losses.push(sum / batches.len() as f64);
    }
    components::save_predictor(bundle, &model)?;
    Ok(FitSummary { items: pairs.len(), epoch_losses: losses })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalSummary {
    pub listener: FitSummary,
    pub speaker: FitSummary,
    pub pool_size: usize,
}

/// Trains the listener bi-encoder on `(history, reply)` pairs and the
/// speaker-side encoder of the simulated human on `(situation + history,
/// reaction)` pairs, then caches the embedded listener pool.
pub fn train_retrieval(bundle: &mut Bundle, opts: &TrainOpts) -> AppResult<RetrievalSummary> {
    let (_, catalog) = components::load_catalog(bundle)?;
    let train = train_records(bundle)?;
    let convs = conversations(&train);
    let vocab = tokenize_and_vocab(&train, 1, &catalog)?;
    let mut rng = rng_from_seed(opts.seed);

    let fit = |pairs: Vec<(String, String)>, rng: &mut cheerbots_core::Rng| -> AppResult<(BiEncoder, FitSummary)> {
        let mut enc = BiEncoder::new(vocab.clone(), EncoderSpec::default(), rng)?;
        let losses = train_bi_encoder(&mut enc, &mut opts.optimizer()?, &pairs, opts.schedule(), rng)?;
        Ok((enc, FitSummary { items: pairs.len(), epoch_losses: losses }))
    };
    let (listener, listener_fit) = fit(reply_pairs(&convs, opts.history), &mut rng)?;
    let (speaker, speaker_fit) = fit(reaction_pairs(&convs, opts.history), &mut rng)?;

    components::save_retrieval(bundle, &listener)?;
    components::save_chm(bundle, &speaker)?;
    let (mut pool, _) = build_pools(&train);
    listener.materialize(&mut pool)?;
    components::save_pool_cache(bundle, &pool)?;
    Ok(RetrievalSummary { listener: listener_fit, speaker: speaker_fit, pool_size: pool.len() })
}

/// Generator trained on listener turns; the emotion target of each reply
/// is its conversation label.
pub fn train_gen(bundle: &mut Bundle, opts: &TrainOpts, config: GenConfig) -> AppResult<FitSummary> {
    let (_, catalog) = components::load_catalog(bundle)?;
    let train = train_records(bundle)?;
    let vocab = tokenize_and_vocab(&train, 1, &catalog)?;
    let mut rng = rng_from_seed(opts.seed);
    let mut gen = ToyGenerator::new(vocab.clone(), config, Init::Xavier, &mut rng)?;
    let examples =
        gen_examples(&vocab, &conversations(&train), opts.history, config.max_len, |r| r.situation_emotion.id, &mut rng);
    let losses = train_generator(&mut gen, &mut opts.optimizer()?, &examples, opts.schedule(), &mut rng)?;
    components::save_generator(bundle, &gen)?;
    Ok(FitSummary { items: examples.len(), epoch_losses: losses })
}

/// Owned pieces of an RL environment.
#[derive(Debug, Clone)]
pub struct RlAssets {
    catalog: EmotionCatalog,
    oracle: Option<OracleParams>,
    speaker: Option<(ChmRetrieval, DetectorModel, Vec<Opening>)>,
    responder: ResponderAssets,
    history_len: usize,
}

#[derive(Debug, Clone)]
enum ResponderAssets {
    Retrieval(BiEncoder, CandidatePool),
    Generative(ToyGenerator),
    Template,
}

/// First speaker turn and situation of every training conversation.
fn openings(train: &[UtteranceRecord]) -> Vec<Opening> {
    conversations(train)
        .iter()
        .filter_map(|c| c.first().filter(|r| r.role == Role::Speaker))
        .map(|r| Opening { text: r.text.clone(), situation: r.situation_prompt.clone() })
        .collect()
}

impl RlAssets {
    /// `oracle = None` selects the retrieval speaker, which needs the full
    /// detector and the speaker encoder.
    pub fn load(bundle: &Bundle, kind: ResponderKind, oracle: Option<OracleParams>, history_len: usize) -> AppResult<Self> {
        let (_, catalog) = components::load_catalog(bundle)?;
        let needs_train = oracle.is_none() || kind == ResponderKind::Retrieval;
        let train = if needs_train { train_records(bundle)? } else { Vec::new() };
        let speaker = match oracle {
            Some(_) => None,
            None => {
                let detector = components::load_full_detector(bundle)?;
                let chm = components::load_chm(bundle, &train)?;
                Some((chm, detector, openings(&train)))
            }
        };
        let responder = match kind {
            ResponderKind::Retrieval => {
                let enc = components::load_retrieval(bundle)?;
                let pool = components::listener_pool(bundle, &train, &enc)?;
                ResponderAssets::Retrieval(enc, pool)
            }
            ResponderKind::Generative => ResponderAssets::Generative(components::load_generator(bundle)?),
            ResponderKind::Template => ResponderAssets::Template,
        };
        Ok(RlAssets { catalog, oracle, speaker, responder, history_len })
    }

    pub fn environment(&self) -> Environment<'_> {
        let responder = match &self.responder {
            ResponderAssets::Retrieval(encoder, pool) => Responder::Retrieval { encoder, pool },
            ResponderAssets::Generative(generator) => Responder::Generative { generator, max_len: DEFAULT_REPLY_LEN },
            ResponderAssets::Template => Responder::Template,
        };
        let speaker = match (&self.oracle, &self.speaker) {
            (Some(p), _) => Speaker::Oracle(*p),
            (None, Some((chm, detector, openings))) => Speaker::Retrieval { chm, detector, openings },
            (None, None) => unreachable!("load fills the speaker when no oracle is set"),
        };
        Environment { catalog: &self.catalog, responder, speaker, history_len: self.history_len }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RlSummary {
    pub algorithm: RlAlgorithm,
    pub episodes: usize,
    pub last_window_reward: Option<f64>,
    pub policy_sha256: String,
    pub curve_sha256: String,
}

pub fn reward_curve_csv(curve: &[rl::RewardPoint]) -> String {
    let mut out = String::from("step,mean_reward_window\n");
    for p in curve {
        out.push_str(&format!("{},{:?}\n", p.step, p.mean_reward_window));
    }
    out
}

/// Runs RL against the configured environment. Only the policy and the
/// reward curve are written; every other component is read-only here.
pub fn train_rl(bundle: &mut Bundle, config: &RlConfig, kind: ResponderKind) -> AppResult<RlSummary> {
    let predictor = components::load_predictor(bundle)?;
    let assets = RlAssets::load(bundle, kind, config.oracle, config.history_len)?;
    let outcome = rl::train_rl(config, &assets.environment(), &predictor)?;
    let policy = match outcome.q_head {
        Some(q) => TrainedPolicy::Q(q),
        None => TrainedPolicy::Predictor(outcome.predictor),
    };
    let policy_sha256 = components::save_policy(bundle, config.algorithm, config.seed, &policy)?;
    let curve_sha256 = bundle.put_bytes(Artifact::RewardCurve, reward_curve_csv(&outcome.curve).as_bytes())?;
    Ok(RlSummary {
        algorithm: config.algorithm,
        episodes: outcome.rewards.len(),
        last_window_reward: outcome.curve.last().map(|p| p.mean_reward_window),
        policy_sha256,
        curve_sha256,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Metric {
    #[value(name = "p@1,100")]
    PAt1,
    Bleu,
    Ppl,
    #[value(name = "top-k")]
    TopK,
    Reward,
}

impl Metric {
    /// File stem of the report files.
    pub fn slug(self) -> &'static str {
        match self {
            Metric::PAt1 => "p_at_1_100",
            Metric::Bleu => "bleu",
            Metric::Ppl => "ppl",
            Metric::TopK => "top_k",
            Metric::Reward => "reward",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOpts {
    pub seed: u64,
    pub split: Split,
    pub history: usize,
    pub responder: ResponderKind,
    pub episodes: usize,
    /// Synthetic speaker for the reward metric; `None` uses the retrieval speaker.
    pub oracle: Option<OracleParams>,
}

impl EvalOpts {
    pub fn new(seed: u64) -> Self {
        EvalOpts {
            seed,
            split: Split::Test,
            history: DEFAULT_HISTORY,
            responder: ResponderKind::Retrieval,
            episodes: 200,
            oracle: None,
        }
    }
}

fn digest(bundle: &Bundle, opts: &EvalOpts, used: &[Artifact]) -> ConfigDigest {
    let model_hashes: BTreeMap<String, String> = used
        .iter()
        .filter_map(|a| bundle.hash(*a).map(|h| (a.name().to_string(), h.to_string())))
        .collect();
    ConfigDigest { seed: opts.seed, split: Some(split_name(opts.split).into()), model_hashes }
}

fn responder_artifact(kind: ResponderKind) -> Option<Artifact> {
    match kind {
        ResponderKind::Retrieval => Some(Artifact::Retrieval),
        ResponderKind::Generative => Some(Artifact::Generator),
        ResponderKind::Template => None,
    }
}

/// Computes one metric over the requested split.
pub fn eval(bundle: &Bundle, metric: Metric, opts: &EvalOpts) -> AppResult<Vec<MetricReport>> {
    let h = opts.history.max(1);
    match metric {
        Metric::PAt1 => {
            let enc = components::load_retrieval(bundle)?;
            let records = split_records(bundle, opts.split)?;
            let items = reply_pairs(&conversations(&records), h);
            let r = p_at_1_100(&enc, &items, opts.seed)?;
            let d = digest(bundle, opts, &[Artifact::Retrieval]);
            Ok(vec![MetricReport::new("p@1,100", r.accuracy(), r.items, d)?])
        }
        Metric::Bleu => {
            let engine = ChatEngine::load(bundle, opts.responder)?;
            let records = split_records(bundle, opts.split)?;
            let mut rng = rng_from_seed(opts.seed);
            let mut pairs = Vec::new();
            for conv in conversations(&records) {
                for t in 1..conv.len() {
                    if conv[t].role != Role::Listener {
                        continue;
                    }
                    let ctx = make_context(&conv, t - 1, h)?;
                    let now = engine.detector().detect(&conv[t - 1].text)?.dominant;
                    let next = engine.next_emotion(&conv[t - 1].text, now)?;
                    pairs.push((engine.reply(&ctx, next, &mut rng)?, conv[t].text.clone()));
                }
            }
            let mut used = vec![Artifact::Detector, Artifact::Predictor, Artifact::Policy];
            used.extend(responder_artifact(opts.responder));
            let d = digest(bundle, opts, &used);
            Ok(vec![MetricReport::new("avg_bleu", avg_bleu(&pairs)?, pairs.len(), d)?])
        }
        Metric::Ppl => {
            let gen = components::load_generator(bundle)?;
            let records = split_records(bundle, opts.split)?;
            let mut inputs = Vec::new();
            for conv in conversations(&records) {
                for t in 1..conv.len() {
                    if conv[t].role != Role::Listener {
                        continue;
                    }
                    let ctx: Vec<&str> = conv[t.saturating_sub(h)..t].iter().map(|r| r.text.as_str()).collect();
                    let input =
                        GenInput::new(gen.vocab(), &ctx, conv[t].situation_emotion.id, &conv[t].text, gen.config().max_len);
                    if !input.reply.is_empty() {
                        inputs.push(input);
                    }
                }
            }
            let d = digest(bundle, opts, &[Artifact::Generator]);
            Ok(vec![MetricReport::new("ppl", perplexity(&gen, &inputs)?, inputs.len(), d)?])
        }
        Metric::TopK => {
            let detector = components::load_full_detector(bundle)?;
            let records = split_records(bundle, opts.split)?;
            let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
            let scores: Vec<Vec<f64>> = detector.detect_batch(&texts)?.into_iter().map(|o| o.probs).collect();
            let gold: Vec<usize> = records.iter().map(|r| r.situation_emotion.id.0).collect();
            let d = digest(bundle, opts, &[Artifact::Detector]);
            [1, 3, 5]
                .into_iter()
                .map(|k| Ok(MetricReport::new(&format!("top_{k}"), top_k_accuracy(&scores, &gold, k)?, gold.len(), d.clone())?))
                .collect()
        }
        Metric::Reward => {
            let predictor = components::load_predictor(bundle)?;
            let assets = RlAssets::load(bundle, opts.responder, opts.oracle, h)?;
            let policy = if bundle.has(Artifact::Policy) { Some(components::load_policy(bundle)?.1) } else { None };
            let (features, rule) = match &policy {
                Some(TrainedPolicy::Q(q)) => (&predictor, Policy::QValues { q, epsilon: 0.0 }),
                Some(TrainedPolicy::Predictor(p)) => (p, Policy::Predictor(SelectMode::Argmax)),
                None => (&predictor, Policy::Predictor(SelectMode::Argmax)),
            };
            let mut used = vec![Artifact::Predictor, Artifact::Policy, Artifact::Detector, Artifact::Chm];
            used.extend(responder_artifact(opts.responder));
            let d = digest(bundle, opts, &used);
            Ok(reward_report(&assets.environment(), features, &rule, opts.episodes, d)?.to_vec())
        }
    }
}
