//! Simulated speaker: a retrieval backend over speaker-side utterances
//! conditioned on the situation prompt, and a synthetic valence oracle with
//! a known transition rule.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{CandidatePool, DialogueContext, Role, UtteranceRecord};
use crate::response::{rank, BiEncoder};
use crate::va::{EmotionCatalog, EmotionId};
use crate::{Error, Result, Rng};

/// Query text for the speaker side: situation first, then the history.
pub fn situation_query<S: AsRef<str>>(situation: &str, history: &[S]) -> String {
    let mut q = String::from(situation);
    for t in history {
        q.push(' ');
        q.push_str(t.as_ref());
    }
    q
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChmRetrieval {
    encoder: BiEncoder,
    pool: CandidatePool,
}

impl ChmRetrieval {
    /// Embeds the pool with `encoder` unless it already carries vectors.
    pub fn new(encoder: BiEncoder, mut pool: CandidatePool) -> Result<Self> {
        if pool.side() != Role::Speaker {
            return Err(Error::Config("the simulated speaker needs a speaker-side pool".into()));
        }
        if pool.is_empty() {
            return Err(Error::Empty("speaker pool"));
        }
        if !pool.has_embeddings() {
            encoder.materialize(&mut pool)?;
        }
        Ok(ChmRetrieval { encoder, pool })
    }

    pub fn encoder(&self) -> &BiEncoder {
        &self.encoder
    }

    pub fn pool(&self) -> &CandidatePool {
        &self.pool
    }

    /// Top-1 speaker utterance for the situation-conditioned history.
    pub fn react(&self, history: &DialogueContext, situation: &str) -> Result<String> {
        let query = self.encoder.encoder().encode(&situation_query(situation, &history.texts()));
        let best = rank(&query, &self.pool, None, 1)?;
        Ok(self.pool.entries()[best.hits[0].index].text.clone())
    }
}

/// `(situation + history, speaker reaction)` pairs for every speaker turn
/// after the opening one.
pub fn reaction_pairs(conversations: &[Vec<UtteranceRecord>], h: usize) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for conv in conversations {
        for t in 1..conv.len() {
            if conv[t].role != Role::Speaker {
                continue;
            }
            let hist: Vec<&str> = conv[t.saturating_sub(h)..t].iter().map(|r| r.text.as_str()).collect();
            out.push((situation_query(&conv[t].situation_prompt, &hist), conv[t].text.clone()));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// Pull toward the listener emotion's valence, in [0, 1].
    pub alpha: f64,
    pub noise_sigma: f64,
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config("oracle alpha must lie in [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("oracle noise must be a finite non-negative deviation".into()));
        }
        Ok(())
    }
}

/// `v' = clamp(v + alpha·(valence(listener) − v) + noise)`.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    params: OracleParams,
    v: f64,
    rng: Rng,
}

impl SyntheticOracle {
    pub fn new(params: OracleParams, initial_valence: f64, rng: Rng) -> Result<Self> {
        params.validate()?;
        if !initial_valence.is_finite() {
            return Err(Error::NonFinite("initial valence"));
        }
        Ok(SyntheticOracle { params, v: initial_valence.clamp(-1.0, 1.0), rng })
    }

    pub fn valence(&self) -> f64 {
        self.v
    }

    /// Applies one transition and returns the new valence with its
    /// placeholder utterance.
    pub fn react(&mut self, listener_emotion: EmotionId, catalog: &EmotionCatalog) -> Result<(f64, String)> {
        let target = catalog.va_of(listener_emotion)?.valence;
        // convex form keeps both endpoints exact at alpha 0 and 1
        let a = self.params.alpha;
        let mut next = (1.0 - a) * self.v + a * target;
        if self.params.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.params.noise_sigma).map_err(|_| Error::Config("oracle noise".into()))?;
            next += normal.sample(&mut self.rng);
        }
        self.v = next.clamp(-1.0, 1.0);
        Ok((self.v, placeholder(self.v, catalog)))
    }
}

/// Templated utterance such as `[v=+0.40] joyful`, tagged with the label
/// nearest in valence.
pub fn placeholder(v: f64, catalog: &EmotionCatalog) -> String {
    let name = catalog.nearest_by_valence(v).map_or("neutral", |id| catalog.name(id));
    format!("[v={v:+.2}] {name}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab_from_texts;
    use crate::rng_from_seed;
    use crate::text::EncoderSpec;
    use crate::va::CatalogSpec;
    use alloc::string::ToString;
    use alloc::vec;

    fn catalog() -> EmotionCatalog {
        EmotionCatalog::from_spec(&CatalogSpec {
            labels: vec!["afraid".into(), "joyful".into(), "content".into()],
            va_seed: [
                ("afraid".to_string(), [-0.12, 0.79]),
                ("joyful".to_string(), [0.85, 0.15]),
                ("content".to_string(), [0.8, -0.55]),
            ]
            .into_iter()
            .collect(),
            ..Default::default()
        })
        .unwrap()
    }

    fn oracle(alpha: f64, v: f64) -> SyntheticOracle {
        SyntheticOracle::new(OracleParams { alpha, noise_sigma: 0.0 }, v, rng_from_seed(0)).unwrap()
    }

    #[test]
    fn transition_hand_cases() {
        let cat = catalog();
        let joyful = EmotionId(1);
        let (v, text) = oracle(1.0, -0.12).react(joyful, &cat).unwrap();
        assert_eq!(v, 0.85);
        assert_eq!(text, "[v=+0.85] joyful");
        assert_eq!(oracle(0.0, -0.3).react(joyful, &cat).unwrap().0, -0.3);
        // content sits at 0.8
        let (v, _) = oracle(0.5, 0.0).react(EmotionId(2), &cat).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
    }

    #[test]
    fn invalid_params() {
        assert!(SyntheticOracle::new(OracleParams { alpha: 1.5, noise_sigma: 0.0 }, 0.0, rng_from_seed(0)).is_err());
        assert!(SyntheticOracle::new(OracleParams { alpha: 0.5, noise_sigma: -1.0 }, 0.0, rng_from_seed(0)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn transitions_stay_in_bounds(
            alpha in 0.0f64..=1.0,
            sigma in 0.0f64..3.0,
            v0 in -1.0f64..=1.0,
            actions in proptest::collection::vec(0usize..3, 1..20),
            seed in 0u64..1000,
        ) {
            let cat = catalog();
            let mut o = SyntheticOracle::new(OracleParams { alpha, noise_sigma: sigma }, v0, rng_from_seed(seed)).unwrap();
            for a in actions {
                let (v, _) = o.react(EmotionId(a), &cat).unwrap();
                proptest::prop_assert!((-1.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn noiseless_is_a_pure_function(alpha in 0.0f64..=1.0, v0 in -1.0f64..=1.0, a in 0usize..3) {
            let cat = catalog();
            let mut x = SyntheticOracle::new(OracleParams { alpha, noise_sigma: 0.0 }, v0, rng_from_seed(1)).unwrap();
            let mut y = SyntheticOracle::new(OracleParams { alpha, noise_sigma: 0.0 }, v0, rng_from_seed(2)).unwrap();
            proptest::prop_assert_eq!(x.react(EmotionId(a), &cat).unwrap().0.to_bits(), y.react(EmotionId(a), &cat).unwrap().0.to_bits());
        }
    }

    fn encoder() -> BiEncoder {
        let vocab = vocab_from_texts(["my dog ran away", "i got a job", "so scared", "so happy"], 1, &catalog());
        BiEncoder::new(vocab, EncoderSpec { emb_dim: 4, hidden: 6, out_dim: 3, ..Default::default() }, &mut rng_from_seed(0)).unwrap()
    }

    #[test]
    fn single_entry_pool_always_returns_it() {
        let pool = CandidatePool::new(Role::Speaker, vec![("so scared".into(), EmotionId(0))]);
        let chm = ChmRetrieval::new(encoder(), pool).unwrap();
        let ctx = DialogueContext::default();
        assert_eq!(chm.react(&ctx, "my dog ran away").unwrap(), "so scared");
        assert_eq!(chm.react(&ctx, "i got a job").unwrap(), "so scared");
    }

    #[test]
    fn listener_pool_rejected() {
        let pool = CandidatePool::new(Role::Listener, vec![("x".into(), EmotionId(0))]);
        assert!(ChmRetrieval::new(encoder(), pool).is_err());
    }
}
