//! Typed save/load of every trained component through a [`Bundle`].

use cheerbots_core::chm::ChmRetrieval;
use cheerbots_core::controller::{DetectorConfig, DetectorModel, PredictorConfig, PredictorModel};
use cheerbots_core::corpus::{build_pools, CandidatePool, UtteranceRecord, Vocab};
use cheerbots_core::nn::Init;
use cheerbots_core::response::{BiEncoder, GenConfig, ToyGenerator};
use cheerbots_core::rl::{QHead, RlAlgorithm};
use cheerbots_core::text::EncoderSpec;
use cheerbots_core::va::EmotionCatalog;
use cheerbots_core::{rng_from_seed, Rng};
use serde::{Deserialize, Serialize};

use crate::catalog_io::parse_catalog;
use crate::checkpoint::{Artifact, Bundle, Checkpoint, FORMAT_VERSION};
use crate::ed_csv::read_ndjson;
use crate::error::{AppError, AppResult};

/// Parameters are overwritten on load, so the construction seed is moot.
fn scratch_rng() -> Rng {
    rng_from_seed(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorStage {
    /// Trained on seed-labelled data only, ahead of the VA bootstrap.
    Seed,
    /// Trained on every label of a complete VA table.
    Full,
}

#[derive(Serialize, Deserialize)]
struct DetectorMeta {
    config: DetectorConfig,
    vocab: Vocab,
    stage: DetectorStage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictorMeta {
    config: PredictorConfig,
    vocab: Vocab,
}

#[derive(Serialize, Deserialize)]
struct EncoderMeta {
    spec: EncoderSpec,
    vocab: Vocab,
}

#[derive(Serialize, Deserialize)]
struct GeneratorMeta {
    config: GenConfig,
    vocab: Vocab,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub algorithm: RlAlgorithm,
    pub seed: u64,
    /// `[features, hidden, actions]` of the Q-head; absent for PG, whose
    /// checkpoint holds a whole predictor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_dims: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predictor: Option<PredictorMeta>,
}

pub fn save_records(bundle: &mut Bundle, records: &[UtteranceRecord]) -> AppResult<String> {
    let mut buf = Vec::new();
    crate::ed_csv::write_ndjson(&mut buf, records)?;
    bundle.put_bytes(Artifact::Records, &buf)
}

pub fn load_records(bundle: &Bundle) -> AppResult<Vec<UtteranceRecord>> {
    read_ndjson(bundle.get_bytes(Artifact::Records)?.as_slice())
}

pub fn load_catalog(bundle: &Bundle) -> AppResult<(cheerbots_core::va::CatalogSpec, EmotionCatalog)> {
    let bytes = bundle.get_bytes(Artifact::Catalog)?;
    parse_catalog(&String::from_utf8_lossy(&bytes))
}

pub fn save_catalog(
    bundle: &mut Bundle,
    original: &cheerbots_core::va::CatalogSpec,
    catalog: &EmotionCatalog,
) -> AppResult<String> {
    bundle.put_json(Artifact::Catalog, &catalog.to_spec(&original.labels))
}

pub fn save_detector(bundle: &mut Bundle, model: &DetectorModel, stage: DetectorStage) -> AppResult<String> {
    let meta = DetectorMeta { config: *model.config(), vocab: model.vocab().clone(), stage };
    bundle.put_json(Artifact::Detector, &Checkpoint::capture("detector", &meta, model)?)
}

pub fn load_detector(bundle: &Bundle) -> AppResult<(DetectorModel, DetectorStage)> {
    let c = bundle.checkpoint(Artifact::Detector)?;
    let meta: DetectorMeta = c.config()?;
    let mut m = DetectorModel::new(meta.vocab, meta.config, Init::Xavier, &mut scratch_rng())?;
    c.restore_into(&mut m)?;
    Ok((m, meta.stage))
}

/// The detector trained on the completed VA table.
pub fn load_full_detector(bundle: &Bundle) -> AppResult<DetectorModel> {
    let (m, stage) = match load_detector(bundle) {
        Err(AppError::MissingStage { .. }) => {
            return Err(AppError::MissingStage { stage: "train-detector", artifact: "detector".into() })
        }
        other => other?,
    };
    if stage != DetectorStage::Full {
        return Err(AppError::MissingStage { stage: "bootstrap-va", artifact: "full detector".into() });
    }
    Ok(m)
}

pub fn save_predictor(bundle: &mut Bundle, model: &PredictorModel) -> AppResult<String> {
    let meta = PredictorMeta { config: *model.config(), vocab: model.vocab().clone() };
    bundle.put_json(Artifact::Predictor, &Checkpoint::capture("predictor", &meta, model)?)
}

fn restore_predictor(c: &Checkpoint, meta: PredictorMeta) -> AppResult<PredictorModel> {
    let mut m = PredictorModel::new(meta.vocab, meta.config, Init::Xavier, &mut scratch_rng())?;
    c.restore_into(&mut m)?;
    Ok(m)
}

pub fn load_predictor(bundle: &Bundle) -> AppResult<PredictorModel> {
    let c = bundle.checkpoint(Artifact::Predictor)?;
    let meta = c.config()?;
    restore_predictor(&c, meta)
}

fn save_encoder(bundle: &mut Bundle, a: Artifact, enc: &BiEncoder) -> AppResult<String> {
    let meta = EncoderMeta { spec: *enc.encoder().spec(), vocab: enc.encoder().vocab().clone() };
    bundle.put_json(a, &Checkpoint::capture(a.name(), &meta, enc)?)
}

fn load_encoder(bundle: &Bundle, a: Artifact) -> AppResult<BiEncoder> {
    let c = bundle.checkpoint(a)?;
    let meta: EncoderMeta = c.config()?;
    let mut enc = BiEncoder::new(meta.vocab, meta.spec, &mut scratch_rng())?;
    c.restore_into(&mut enc)?;
    Ok(enc)
}

pub fn save_retrieval(bundle: &mut Bundle, enc: &BiEncoder) -> AppResult<String> {
    save_encoder(bundle, Artifact::Retrieval, enc)
}

pub fn load_retrieval(bundle: &Bundle) -> AppResult<BiEncoder> {
    load_encoder(bundle, Artifact::Retrieval)
}

pub fn save_chm(bundle: &mut Bundle, enc: &BiEncoder) -> AppResult<String> {
    save_encoder(bundle, Artifact::Chm, enc)
}

/// Speaker-side retrieval over the training split's speaker turns.
pub fn load_chm(bundle: &Bundle, train_records: &[UtteranceRecord]) -> AppResult<ChmRetrieval> {
    let enc = load_encoder(bundle, Artifact::Chm)?;
    let (_, speaker) = build_pools(train_records);
    Ok(ChmRetrieval::new(enc, speaker)?)
}

pub fn save_generator(bundle: &mut Bundle, gen: &ToyGenerator) -> AppResult<String> {
    let meta = GeneratorMeta { config: *gen.config(), vocab: gen.vocab().clone() };
    bundle.put_json(Artifact::Generator, &Checkpoint::capture("generator", &meta, gen)?)
}

pub fn load_generator(bundle: &Bundle) -> AppResult<ToyGenerator> {
    let c = bundle.checkpoint(Artifact::Generator)?;
    let meta: GeneratorMeta = c.config()?;
    let mut g = ToyGenerator::new(meta.vocab, meta.config, Init::Xavier, &mut scratch_rng())?;
    c.restore_into(&mut g)?;
    Ok(g)
}

/// RL output: either the PG-updated predictor or a Q-head over the frozen
/// predictor's features.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum TrainedPolicy {
    Predictor(PredictorModel),
    Q(QHead),
}

pub fn save_policy(bundle: &mut Bundle, algorithm: RlAlgorithm, seed: u64, policy: &TrainedPolicy) -> AppResult<String> {
    let ckpt = match policy {
        TrainedPolicy::Predictor(p) => {
            let meta = PolicyMeta {
                algorithm,
                seed,
                q_dims: None,
                predictor: Some(PredictorMeta { config: *p.config(), vocab: p.vocab().clone() }),
            };
            Checkpoint::capture("policy", &meta, p)?
        }
        TrainedPolicy::Q(q) => {
            let net = q.net();
            let hidden = net.layers()[0].weight.shape()[1];
            let meta = PolicyMeta {
                algorithm,
                seed,
                q_dims: Some([net.input_dim(), hidden, net.output_dim()]),
                predictor: None,
            };
            Checkpoint::capture("policy", &meta, q)?
        }
    };
    bundle.put_json(Artifact::Policy, &ckpt)
}

pub fn load_policy(bundle: &Bundle) -> AppResult<(PolicyMeta, TrainedPolicy)> {
    let c = bundle.checkpoint(Artifact::Policy)?;
    let mut meta: PolicyMeta = c.config()?;
    let policy = match (meta.q_dims, meta.predictor.take()) {
        (Some([i, h, k]), _) => {
            let mut q = QHead::new(i, h, k, &mut scratch_rng())?;
            c.restore_into(&mut q)?;
            TrainedPolicy::Q(q)
        }
        (None, Some(p)) => TrainedPolicy::Predictor(restore_predictor(&c, p)?),
        (None, None) => return Err(AppError::Invalid("policy checkpoint describes no module".into())),
    };
    Ok((meta, policy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolCache {
    pub format_version: u32,
    pub pool_hash: String,
    pub encoder_checkpoint_hash: String,
    pub vectors: Vec<Vec<f64>>,
}

pub fn save_pool_cache(bundle: &mut Bundle, pool: &CandidatePool) -> AppResult<String> {
    let encoder_checkpoint_hash = bundle
        .hash(Artifact::Retrieval)
        .ok_or(AppError::MissingStage { stage: "train-retrieval", artifact: "retrieval".into() })?
        .to_string();
    let vectors = pool.entries().iter().map(|e| e.embedding.clone().unwrap_or_default()).collect();
    let cache = PoolCache {
        format_version: FORMAT_VERSION,
        pool_hash: format!("{:016x}", pool.content_hash()),
        encoder_checkpoint_hash,
        vectors,
    };
    bundle.put_json(Artifact::PoolCache, &cache)
}

/// Listener candidates from the training records, embedded with `enc`.
/// The cache is used only when both the pool and encoder hashes match.
pub fn listener_pool(bundle: &Bundle, train_records: &[UtteranceRecord], enc: &BiEncoder) -> AppResult<CandidatePool> {
    let (mut pool, _) = build_pools(train_records);
    let want_pool = format!("{:016x}", pool.content_hash());
    let cached = match bundle.get_json::<PoolCache>(Artifact::PoolCache) {
        Ok(c) => Some(c),
        Err(AppError::MissingStage { .. }) => None,
        Err(e) => return Err(e),
    };
    match cached {
        Some(c)
            if c.format_version == FORMAT_VERSION
                && c.pool_hash == want_pool
                && Some(c.encoder_checkpoint_hash.as_str()) == bundle.hash(Artifact::Retrieval) =>
        {
            pool.set_embeddings(c.vectors)?
        }
        _ => enc.materialize(&mut pool)?,
    }
    Ok(pool)
}
