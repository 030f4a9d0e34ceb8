//! Measurement routines shared by the integration tests and the
//! acceptance harness. Each returns raw numbers; callers assert.
#![allow(dead_code)]

use cheerbots_core::chm::OracleParams;
use cheerbots_core::controller::{
    bootstrap_pipeline, DetectorConfig, DetectorModel, PolicyHead, PredictorConfig, PredictorModel, SelectMode,
    TrainSchedule,
};
use cheerbots_core::corpus::{vocab_from_texts, CandidatePool, Role, Vocab};
use cheerbots_core::metrics::{p_at_1_100, perplexity, reward_report, ConfigDigest};
use cheerbots_core::nn::{grad_check, Init, OptimConfig, Optimizer};
use cheerbots_core::response::{rank, train_bi_encoder, BiEncoder, GenConfig, GenExample, GenInput, ToyGenerator};
use cheerbots_core::rl::{
    dqn_record_loss, evaluate, pg_record_loss, train_rl, Environment, Episode, Policy, QHead, Responder,
    RlAlgorithm, RlConfig, Speaker, Transition, Turn,
};
use cheerbots_core::synthetic::{
    bootstrap_catalog, bootstrap_corpus, placeholder_vocab, pull_catalog, random_pairs, separable_pairs,
};
use cheerbots_core::text::EncoderSpec;
use cheerbots_core::va::{EmotionCatalog, EmotionId, VaPoint};
use cheerbots_core::{rng_from_seed, Rng};
use rand::Rng as _;

use super::oracles::brute_force_rank;

pub const GRAD_EPS: f64 = 1e-5;

const WORDS: [&str; 12] = ["i", "lost", "my", "dog", "got", "a", "new", "job", "so", "sad", "happy", "today"];

fn random_text(rng: &mut Rng, n: usize) -> String {
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn tiny_encoder() -> EncoderSpec {
    EncoderSpec { emb_dim: 3, hidden: 5, out_dim: 3, ..Default::default() }
}

fn small_vocab(cat: &EmotionCatalog) -> Vocab {
    vocab_from_texts(WORDS.iter().copied(), 1, cat)
}

/// Worst relative finite-difference error per loss over `seeds`.
pub fn gradient_suite(seeds: std::ops::Range<u64>) -> Vec<(&'static str, f64)> {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut note = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(slot) => slot.1 = slot.1.max(e),
        None => worst.push((name, e)),
    };
    for seed in seeds {
        let mut rng = rng_from_seed(seed);
        let cat = pull_catalog(4, 1).unwrap();
        let vocab = small_vocab(&cat);

        let det = DetectorModel::new(
            vocab.clone(),
            DetectorConfig { encoder: tiny_encoder(), ..DetectorConfig::new(cat.len()) },
            Init::Xavier,
            &mut rng,
        )
        .unwrap();
        let batch: Vec<(String, EmotionId)> =
            (0..3).map(|_| (random_text(&mut rng, 4), EmotionId(rng.random_range(0..4)))).collect();
        let gc = |f: &dyn Fn(&DetectorModel, &mut cheerbots_core::nn::Tape, &[cheerbots_core::nn::NodeId]) -> cheerbots_core::nn::NodeId| {
            grad_check(&det, GRAD_EPS, |m, t, b| Ok(f(m, t, b.nodes()))).unwrap()
        };
        note("detector classification", gc(&|m, t, p| m.record_loss(t, p, &batch, &cat).unwrap().classification));
        note("detector va", gc(&|m, t, p| m.record_loss(t, p, &batch, &cat).unwrap().va));
        note("detector total", gc(&|m, t, p| m.record_loss(t, p, &batch, &cat).unwrap().total));

        let pred = PredictorModel::new(
            vocab.clone(),
            PredictorConfig { encoder: tiny_encoder(), hidden: 6, dropout: 0.5, ..PredictorConfig::new(cat.len()) },
            Init::Xavier,
            &mut rng,
        )
        .unwrap();
        let pbatch: Vec<(String, EmotionId, EmotionId)> = (0..3)
            .map(|_| (random_text(&mut rng, 4), EmotionId(rng.random_range(0..4)), EmotionId(rng.random_range(0..4))))
            .collect();
        let mask = pred.head().dropout_mask(3, &mut rng);
        note(
            "predictor cross-entropy",
            grad_check(&pred, GRAD_EPS, |m, t, b| Ok(m.record_loss(t, b.nodes(), &pbatch, Some(mask.clone())))).unwrap(),
        );

        let bi = BiEncoder::new(vocab.clone(), tiny_encoder(), &mut rng).unwrap();
        let pairs: Vec<(String, String)> = (0..3).map(|_| (random_text(&mut rng, 5), random_text(&mut rng, 3))).collect();
        note("in-batch nll", grad_check(&bi, GRAD_EPS, |m, t, b| m.record_loss(t, b.nodes(), &pairs)).unwrap());

        let gen = ToyGenerator::new(
            vocab.clone(),
            GenConfig { emb_dim: 3, hidden: 5, window: 2, max_len: 24 },
            Init::Xavier,
            &mut rng,
        )
        .unwrap();
        let examples: Vec<GenExample> = (0..2)
            .map(|_| {
                let e = EmotionId(rng.random_range(0..4));
                let hist = [random_text(&mut rng, 3)];
                GenExample {
                    input: GenInput::new(&vocab, &hist, e, &random_text(&mut rng, 3), 24),
                    distractor: vocab.encode(&random_text(&mut rng, 3)),
                    emotion: e,
                }
            })
            .collect();
        let gg = |pick: fn(&cheerbots_core::response::GenLossNodes) -> cheerbots_core::nn::NodeId| {
            grad_check(&gen, GRAD_EPS, |m, t, b| Ok(pick(&m.record_loss(t, b.nodes(), &examples)?))).unwrap()
        };
        note("generator lm", gg(|n| n.lm));
        note("generator nsp", gg(|n| n.nsp));
        note("generator esg", gg(|n| n.esg));
        note("generator total", gg(|n| n.total));

        let feat = 5;
        let q = QHead::new(feat, 6, 4, &mut rng).unwrap();
        let transitions: Vec<Transition> = (0..4)
            .map(|_| Transition {
                state: (0..feat).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: EmotionId(rng.random_range(0..4)),
                reward: 0.0,
                next_state: Vec::new(),
                done: true,
            })
            .collect();
        // targets spread so both the quadratic and linear branches occur
        let targets: Vec<f64> = (0..4).map(|i| [-2.5, -0.3, 0.4, 3.0][i] + rng.random_range(-0.1..0.1)).collect();
        note(
            "smooth l1",
            grad_check(&q, GRAD_EPS, |m, t, b| Ok(dqn_record_loss(m, t, b.nodes(), &transitions, &targets))).unwrap(),
        );

        let head = PolicyHead::new(feat, 6, 4, 0.0, Init::Xavier, &mut rng).unwrap();
        let episodes: Vec<Episode> = (0..3).map(|_| random_episode(&mut rng, feat, 3)).collect();
        let baseline = rng.random_range(-0.5..0.5);
        note(
            "policy-gradient surrogate",
            grad_check(&head, GRAD_EPS, |m, t, b| pg_record_loss(m, t, b.nodes(), &episodes, baseline, 0.99)).unwrap(),
        );
    }
    worst
}

fn random_episode(rng: &mut Rng, feat: usize, turns: usize) -> Episode {
    let turns_v = (0..turns)
        .map(|_| Turn {
            speaker_text: String::new(),
            detected: EmotionId(0),
            va: VaPoint { valence: 0.0, arousal: 0.0 },
            action: EmotionId(rng.random_range(0..4)),
            reply: String::new(),
        })
        .collect();
    Episode {
        turns: turns_v,
        valence_trace: (0..=turns).map(|_| rng.random_range(-1.0..1.0)).collect(),
        states: (0..=turns).map(|_| (0..feat).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
    }
}

/// Emotion Filter check: `(filtered calls outside their group,
/// unfiltered calls differing from the brute-force sort)`.
pub fn filter_exactness(calls: usize, seed: u64) -> (usize, usize) {
    let mut rng = rng_from_seed(seed);
    let (mut outside, mut mismatched) = (0, 0);
    let n_emotions = 6;
    for call in 0..calls {
        // every 50th pool is large, up to the 1000-entry limit
        let size = rng.random_range(1..=if call % 50 == 0 { 1000 } else { 60 });
        let dim = 4;
        let entries: Vec<(String, EmotionId)> =
            (0..size).map(|i| (format!("c{i}"), EmotionId(rng.random_range(0..n_emotions)))).collect();
        let mut pool = CandidatePool::new(Role::Listener, entries);
        let vecs: Vec<Vec<f64>> = (0..size).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        pool.set_embeddings(vecs.clone()).unwrap();
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = rng.random_range(1..=5);
        let e = EmotionId(rng.random_range(0..n_emotions));
        let r = rank(&q, &pool, Some(e), k).unwrap();
        if !r.fell_back {
            outside += r.hits.iter().filter(|h| pool.entries()[h.index].emotion != e).count();
        } else if !pool.group(e).is_empty() {
            outside += 1;
        }
        let all: Vec<usize> = (0..size).collect();
        let got: Vec<usize> = rank(&q, &pool, None, k).unwrap().hits.iter().map(|h| h.index).collect();
        if got != brute_force_rank(&q, &vecs, &all, k) {
            mismatched += 1;
        }
    }
    (outside, mismatched)
}

/// `(hits, items)` of P@1,100 for an untrained encoder on random pairs.
pub fn random_encoder_p_at_1(items: usize, seed: u64) -> (usize, usize) {
    let mut rng = rng_from_seed(seed);
    let pairs = random_pairs(items, 200, &mut rng);
    let cat = pull_catalog(2, 0).unwrap();
    let texts: Vec<&str> = pairs.iter().flat_map(|(c, r)| [c.as_str(), r.as_str()]).collect();
    let vocab = vocab_from_texts(texts.iter().copied(), 1, &cat);
    let enc = BiEncoder::new(vocab, EncoderSpec::default(), &mut rng).unwrap();
    let r = p_at_1_100(&enc, &pairs, seed).unwrap();
    (r.hits, r.items)
}

/// P@1,100 of a bi-encoder trained on the separable topic fixture.
pub fn separable_p_at_1(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let (train, test) = separable_pairs(150, 8, 6, &mut rng);
    let cat = pull_catalog(2, 0).unwrap();
    let vocab = vocab_from_texts(train.iter().flat_map(|p| [p.context.as_str(), p.reply.as_str()]), 1, &cat);
    let mut enc = BiEncoder::new(vocab, EncoderSpec::default(), &mut rng).unwrap();
    let mut opt = Optimizer::new(OptimConfig::adam(5e-3)).unwrap();
    let pairs: Vec<(String, String)> = train.iter().map(|p| (p.context.clone(), p.reply.clone())).collect();
    train_bi_encoder(&mut enc, &mut opt, &pairs, TrainSchedule { epochs: 8, batch_size: 32 }, &mut rng).unwrap();
    let items: Vec<(String, String)> = test.iter().map(|p| (p.context.clone(), p.reply.clone())).collect();
    p_at_1_100(&enc, &items, seed).unwrap().accuracy()
}

/// `(perplexity, vocabulary size)` for a generator whose next-token head
/// outputs all-zero logits.
pub fn uniform_lm_perplexity() -> (f64, usize) {
    let cat = pull_catalog(3, 0).unwrap();
    let vocab = small_vocab(&cat);
    let gen = ToyGenerator::new(vocab.clone(), GenConfig::default(), Init::Zeros, &mut rng_from_seed(0)).unwrap();
    let inputs: Vec<GenInput> = (0..5)
        .map(|i| GenInput::new(&vocab, &["i lost my dog"], EmotionId(i % 3), "so sad today", 64))
        .collect();
    (perplexity(&gen, &inputs).unwrap(), vocab.len())
}

/// Largest planted-centroid distance over unseeded labels, and whether the
/// seed coordinates survived bitwise.
pub fn bootstrap_experiment(seed: u64) -> (f64, bool) {
    let mut rng = rng_from_seed(seed);
    let cat = bootstrap_catalog(4, 6).unwrap();
    let (corpus, planted) = bootstrap_corpus(&cat, 60, &mut rng).unwrap();
    let vocab = vocab_from_texts(corpus.iter().map(|(t, _)| t.as_str()), 1, &cat);
    let config = DetectorConfig { encoder: EncoderSpec { emb_dim: 16, hidden: 32, out_dim: 16, ..Default::default() }, ..DetectorConfig::new(cat.len()) };
    let out = bootstrap_pipeline(
        &vocab,
        config,
        &cat,
        &corpus,
        TrainSchedule { epochs: 30, batch_size: 16 },
        OptimConfig::adam(5e-3),
        &mut rng,
    )
    .unwrap();
    let worst = planted
        .iter()
        .map(|(id, p)| out.catalog.va_of(*id).unwrap().squared_distance(p).sqrt())
        .fold(0.0, f64::max);
    let seeds_same = cat.seed_ids().iter().all(|id| {
        let (a, b) = (cat.va_of(*id).unwrap(), out.catalog.va_of(*id).unwrap());
        a.valence.to_bits() == b.valence.to_bits() && a.arousal.to_bits() == b.arousal.to_bits()
    });
    (worst, seeds_same)
}

pub const PULL_LABELS: usize = 8;
pub const PULL_OPTIMAL: EmotionId = EmotionId(5);

pub fn pull_oracle() -> OracleParams {
    OracleParams { alpha: 0.5, noise_sigma: 0.05 }
}

pub fn pull_predictor(cat: &EmotionCatalog) -> PredictorModel {
    let cfg = PredictorConfig {
        encoder: EncoderSpec { emb_dim: 16, hidden: 32, out_dim: 16, ..Default::default() },
        hidden: 64,
        dropout: 0.5,
        ..PredictorConfig::new(cat.len())
    };
    PredictorModel::new(placeholder_vocab(cat), cfg, Init::ScaledXavier(0.1), &mut rng_from_seed(1)).unwrap()
}

pub fn pull_config(alg: RlAlgorithm, seed: u64) -> RlConfig {
    let mut c = RlConfig::new(alg, seed);
    c.lr = 1e-3;
    c.episodes = 1500;
    c.q_hidden = 64;
    c.oracle = Some(pull_oracle());
    c
}

#[derive(Debug, Clone, Copy)]
pub struct RlRun {
    pub trained_1: f64,
    pub trained_3: f64,
    pub uniform_3: f64,
    pub untrained_3: f64,
    /// Share of greedy actions equal to the optimum over 200 episodes.
    pub greedy_optimal: f64,
    /// Optimal-emotion share of sampled predictor outputs before and after.
    pub hist_before: f64,
    pub hist_after: f64,
}

fn optimal_share(eps: &[Episode]) -> f64 {
    let (hit, total) = eps.iter().flat_map(|e| &e.turns).fold((0, 0), |(h, n), t| (h + (t.action == PULL_OPTIMAL) as usize, n + 1));
    hit as f64 / total as f64
}

pub fn rl_experiment(alg: RlAlgorithm, seed: u64) -> RlRun {
    let cat = pull_catalog(PULL_LABELS, PULL_OPTIMAL.0).unwrap();
    let predictor = pull_predictor(&cat);
    let env = Environment {
        catalog: &cat,
        responder: Responder::Template,
        speaker: Speaker::Oracle(pull_oracle()),
        history_len: 4,
    };
    let out = train_rl(&pull_config(alg, seed), &env, &predictor).unwrap();
    let digest = ConfigDigest { seed: 1000 + seed, ..Default::default() };
    let greedy = out.greedy_policy();
    let [t1, t3] = reward_report(&env, &out.predictor, &greedy, 200, digest.clone()).unwrap();
    let [_, u3] = reward_report(&env, &predictor, &Policy::Uniform, 200, digest.clone()).unwrap();
    let [_, n3] = reward_report(&env, &predictor, &Policy::Predictor(SelectMode::Argmax), 200, digest).unwrap();
    let mut rng = rng_from_seed(2000 + seed);
    let greedy_eps = evaluate(&env, &out.predictor, &greedy, 3, 200, &mut rng).unwrap();
    let mut rng = rng_from_seed(3000 + seed);
    let before = evaluate(&env, &predictor, &Policy::Predictor(SelectMode::Sample), 3, 200, &mut rng).unwrap();
    let after_policy = match &out.q_head {
        Some(q) => Policy::QValues { q, epsilon: 0.0 },
        None => Policy::Predictor(SelectMode::Sample),
    };
    let mut rng = rng_from_seed(3000 + seed);
    let after = evaluate(&env, &out.predictor, &after_policy, 3, 200, &mut rng).unwrap();
    RlRun {
        trained_1: t1.value,
        trained_3: t3.value,
        uniform_3: u3.value,
        untrained_3: n3.value,
        greedy_optimal: optimal_share(&greedy_eps),
        hist_before: optimal_share(&before),
        hist_after: optimal_share(&after),
    }
}
