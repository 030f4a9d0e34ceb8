//! Automatic metrics: sentence BLEU, P@1,100 retrieval accuracy,
//! generator perplexity, top-k accuracy and RL reward reports.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::controller::PredictorModel;
use crate::math;
use crate::nn::Module;
use crate::response::{BiEncoder, GenInput, ToyGenerator};
use crate::rl::{evaluate, mean_reward, Environment, Policy};
use crate::{rng_from_seed, Error, Result};

pub const BLEU_MAX_N: usize = 4;
pub const P_AT_1_CANDIDATES: usize = 100;

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and hypothesis n-gram total.
fn modified_precision<T: Ord>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

/// Geometric mean of modified n-gram precisions (add-one smoothed for
/// n > 1) times the brevity penalty.
pub fn sentence_bleu<T: Ord>(hypothesis: &[T], reference: &[T], max_n: usize) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("reference"));
    }
    if max_n == 0 {
        return Err(Error::Config("max_n must be at least 1".into()));
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, total) = modified_precision(hypothesis, reference, n);
        let p = if n == 1 {
            if m == 0 {
                return Ok(0.0);
            }
            m as f64 / total as f64
        } else {
            (m + 1) as f64 / (total + 1) as f64
        };
        log_sum += math::ln(p);
    }
    let (c, r) = (hypothesis.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { math::exp(1.0 - r / c) };
    Ok(bp * math::exp(log_sum / max_n as f64))
}

/// Mean sentence BLEU over `(hypothesis, reference)` texts, tokenized the
/// same way as the corpus.
pub fn avg_bleu<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("bleu pairs"));
    }
    let mut sum = 0.0;
    for (h, r) in pairs {
        let h = crate::corpus::tokenize(h.as_ref());
        let r = crate::corpus::tokenize(r.as_ref());
        sum += sentence_bleu(&h, &r, BLEU_MAX_N)?;
    }
    Ok(sum / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PAt1 {
    pub hits: usize,
    pub items: usize,
}

impl PAt1 {
    pub fn accuracy(&self) -> f64 {
        self.hits as f64 / self.items as f64
    }
}

/// Per item: the gold reply plus 99 distinct other replies from the test
/// set, drawn with the seeded generator. A hit needs the gold dot-product
/// score to be strictly above every distractor's.
pub fn p_at_1_100<C: AsRef<str>, R: AsRef<str>>(enc: &BiEncoder, items: &[(C, R)], seed: u64) -> Result<PAt1> {
    if items.is_empty() {
        return Err(Error::Empty("test items"));
    }
    let distinct: Vec<&str> = items.iter().map(|(_, r)| r.as_ref()).collect::<BTreeSet<_>>().into_iter().collect();
    if distinct.len() < P_AT_1_CANDIDATES {
        return Err(Error::InsufficientCandidates { needed: P_AT_1_CANDIDATES, found: distinct.len() });
    }
    let reply_vecs = enc.encode_texts(&distinct);
    let contexts: Vec<&str> = items.iter().map(|(c, _)| c.as_ref()).collect();
    let ctx_vecs = enc.encode_texts(&contexts);
    let mut rng = rng_from_seed(seed);
    let mut hits = 0;
    for ((_, gold), q) in items.iter().zip(&ctx_vecs) {
        let gold_idx = distinct.binary_search(&gold.as_ref()).expect("gold is among the distinct replies");
        let gold_score = math::dot(q, &reply_vecs[gold_idx]);
        // sample from the pool with the gold removed
        let picks = rand::seq::index::sample(&mut rng, distinct.len() - 1, P_AT_1_CANDIDATES - 1);
        let beaten = picks.into_iter().all(|i| {
            let j = if i >= gold_idx { i + 1 } else { i };
            math::dot(q, &reply_vecs[j]) < gold_score
        });
        hits += beaten as usize;
    }
    Ok(PAt1 { hits, items: items.len() })
}

/// `exp(total NLL / total tokens)` over reply segments (end token included).
pub fn perplexity(gen: &ToyGenerator, inputs: &[GenInput]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Empty("perplexity items"));
    }
    let (mut nll, mut count) = (0.0, 0usize);
    for input in inputs {
        let (s, c) = gen.reply_nll(input);
        nll += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::Empty("reply tokens"));
    }
    Ok(math::exp(nll / count as f64))
}

/// Fraction of rows whose gold class is among the `k` highest scores.
pub fn top_k_accuracy(scores: &[Vec<f64>], gold: &[usize], k: usize) -> Result<f64> {
    if scores.is_empty() || scores.len() != gold.len() {
        return Err(Error::Shape("scores and gold labels must be nonempty and aligned".into()));
    }
    let mut hits = 0;
    for (row, &g) in scores.iter().zip(gold) {
        let above = row.iter().filter(|&&s| s > row[g]).count();
        hits += (above < k) as usize;
    }
    Ok(hits as f64 / scores.len() as f64)
}

/// FNV-1a over the little-endian bits of every parameter.
pub fn module_hash<M: Module + ?Sized>(module: &M) -> u64 {
    let mut h = math::Fnv64::default();
    module.visit(&mut |t| {
        for v in t.values() {
            h.write_u64(v.to_bits());
        }
    });
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfigDigest {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    /// Component name to hex hash.
    #[serde(default)]
    pub model_hashes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_items: usize,
    pub digest: ConfigDigest,
}

impl MetricReport {
    pub fn new(metric: &str, value: f64, n_items: usize, digest: ConfigDigest) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("metric value"));
        }
        Ok(MetricReport { metric: metric.into(), value, n_items, digest })
    }
}

/// Mean empathy valence of `episodes` seeded rollouts, once with one turn
/// and once with three. Both runs start from the same seed.
pub fn reward_report(
    env: &Environment<'_>,
    features: &PredictorModel,
    policy: &Policy<'_>,
    episodes: usize,
    digest: ConfigDigest,
) -> Result<[MetricReport; 2]> {
    let run = |turns: usize| -> Result<MetricReport> {
        let mut rng = rng_from_seed(digest.seed);
        let eps = evaluate(env, features, policy, turns, episodes, &mut rng)?;
        let name = if turns == 1 { "reward_1_turn" } else { "reward_3_turn" };
        MetricReport::new(name, mean_reward(&eps)?, episodes, digest.clone())
    };
    Ok([run(1)?, run(3)?])
}
