//! Constructed fixtures with known answers: the positive-pull emotion
//! catalog for RL, separable and random retrieval corpora, and a planted
//! corpus for the VA bootstrap.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::Rng as _;

use crate::chm::placeholder;
use crate::corpus::{vocab_from_texts, Vocab};
use crate::va::{CatalogSpec, EmotionCatalog, EmotionId, VaPoint};
use crate::{Error, Result, Rng};

/// Valence of the one emotion that pulls the speaker upward.
pub const OPTIMAL_VALENCE: f64 = 0.9;

/// Catalog where label `optimal` sits at valence +0.9 and every other label
/// is spread evenly over [-0.9, 0]. Arousal is 0 throughout.
pub fn pull_catalog(n_labels: usize, optimal: usize) -> Result<EmotionCatalog> {
    if n_labels < 2 || optimal >= n_labels {
        return Err(Error::Config("pull catalog needs two labels and a valid optimum".into()));
    }
    let labels: Vec<String> = (0..n_labels).map(|i| format!("emotion{i}")).collect();
    let others = n_labels - 1;
    let mut va_seed = BTreeMap::new();
    let mut j = 0;
    for (i, name) in labels.iter().enumerate() {
        let v = if i == optimal {
            OPTIMAL_VALENCE
        } else {
            let v = if others == 1 { 0.0 } else { -0.9 + 0.9 * j as f64 / (others - 1) as f64 };
            j += 1;
            v
        };
        va_seed.insert(name.clone(), [v, 0.0]);
    }
    EmotionCatalog::from_spec(&CatalogSpec { labels, va_seed, ..Default::default() })
}

/// Vocabulary covering every placeholder utterance and template reply the
/// synthetic environment can produce.
pub fn placeholder_vocab(catalog: &EmotionCatalog) -> Vocab {
    let mut texts: Vec<String> = (-100..=100).map(|i| placeholder(i as f64 / 100.0, catalog)).collect();
    for l in catalog.labels() {
        texts.push(format!("i feel {} for you", l.name));
    }
    vocab_from_texts(texts.iter().map(String::as_str), 1, catalog)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicPair {
    pub topic: usize,
    pub context: String,
    pub reply: String,
}

fn topic_word(topic: usize, j: usize) -> String {
    format!("t{topic}w{j}")
}

fn sample_sentence(words: &[String], n: usize, rng: &mut Rng) -> String {
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(words.choose(rng).expect("non-empty word list"));
    }
    out
}

/// Context and reply share their topic's private words, so a bag-of-words
/// encoder can separate topics. Returns `per_topic_train` training pairs
/// and one fresh test pair per topic.
pub fn separable_pairs(
    n_topics: usize,
    per_topic_train: usize,
    words_per_topic: usize,
    rng: &mut Rng,
) -> (Vec<TopicPair>, Vec<TopicPair>) {
    let mut train = Vec::with_capacity(n_topics * per_topic_train);
    let mut test = Vec::with_capacity(n_topics);
    for topic in 0..n_topics {
        let words: Vec<String> = (0..words_per_topic.max(1)).map(|j| topic_word(topic, j)).collect();
        for k in 0..=per_topic_train {
            let p = TopicPair { topic, context: sample_sentence(&words, 5, rng), reply: sample_sentence(&words, 3, rng) };
            if k == per_topic_train {
                test.push(p);
            } else {
                train.push(p);
            }
        }
    }
    (train, test)
}

/// Contexts and replies drawn independently from a shared word list.
pub fn random_pairs(n: usize, vocab_size: usize, rng: &mut Rng) -> Vec<(String, String)> {
    let words: Vec<String> = (0..vocab_size.max(1)).map(|j| format!("w{j}")).collect();
    (0..n)
        .map(|i| {
            // a unique tag keeps every reply text distinct
            let reply = format!("{} r{i}", sample_sentence(&words, 4, rng));
            (sample_sentence(&words, 6, rng), reply)
        })
        .collect()
}

/// Bootstrap fixture: `n_seeds` seeded labels with spread-out coordinates
/// followed by `n_unseeded` labels without any.
pub fn bootstrap_catalog(n_seeds: usize, n_unseeded: usize) -> Result<EmotionCatalog> {
    if n_seeds == 0 {
        return Err(Error::Config("bootstrap fixture needs a seed label".into()));
    }
    let mut labels = Vec::new();
    let mut va_seed = BTreeMap::new();
    for i in 0..n_seeds {
        let name = format!("seed{i}");
        let angle = core::f64::consts::TAU * i as f64 / n_seeds as f64;
        va_seed.insert(name.clone(), [0.7 * libm::cos(angle), 0.7 * libm::sin(angle)]);
        labels.push(name);
    }
    labels.extend((0..n_unseeded).map(|i| format!("open{i}")));
    EmotionCatalog::from_spec(&CatalogSpec { labels, va_seed, ..Default::default() })
}

/// Sentences with their labels, plus the planted centroid of every
/// unseeded label.
pub type BootstrapCorpus = (Vec<(String, EmotionId)>, BTreeMap<EmotionId, VaPoint>);

/// Labelled sentences where every unseeded label copies the word
/// distribution of seed `i % n_seeds`. The planted centroid of an unseeded
/// label is the coordinate of the seed it copies.
pub fn bootstrap_corpus(
    catalog: &EmotionCatalog,
    per_label: usize,
    rng: &mut Rng,
) -> Result<BootstrapCorpus> {
    let seeds = catalog.seed_ids();
    if seeds.is_empty() {
        return Err(Error::Empty("seed labels"));
    }
    let words: Vec<Vec<String>> =
        seeds.iter().map(|s| (0..8).map(|j| format!("s{}x{j}", s.0)).collect()).collect();
    let mut corpus = Vec::new();
    let mut planted = BTreeMap::new();
    let mut open = 0;
    for id in catalog.ids() {
        let source = match seeds.iter().position(|s| *s == id) {
            Some(k) => k,
            None => {
                let k = open % seeds.len();
                open += 1;
                planted.insert(id, catalog.va_of(seeds[k])?);
                k
            }
        };
        for _ in 0..per_label {
            let n = rng.random_range(3..7);
            corpus.push((sample_sentence(&words[source], n, rng), id));
        }
    }
    Ok((corpus, planted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn pull_catalog_layout() {
        let c = pull_catalog(5, 2).unwrap();
        let vs: Vec<f64> = c.ids().map(|id| c.va_of(id).unwrap().valence).collect();
        assert_eq!(vs[2], OPTIMAL_VALENCE);
        assert!(vs.iter().enumerate().all(|(i, v)| i == 2 || *v <= 0.0));
        assert!(pull_catalog(1, 0).is_err());
        assert!(pull_catalog(3, 3).is_err());
    }

    #[test]
    fn placeholder_text_is_in_vocab() {
        let c = pull_catalog(4, 0).unwrap();
        let v = placeholder_vocab(&c);
        let ids = v.encode(&placeholder(-0.37, &c));
        assert!(ids.iter().all(|&i| i != crate::corpus::UNK_ID));
    }

    #[test]
    fn separable_topics_share_words() {
        let (train, test) = separable_pairs(10, 3, 6, &mut rng_from_seed(0));
        assert_eq!((train.len(), test.len()), (30, 10));
        let p = &test[4];
        let prefix = "t4w";
        assert!(p.context.split(' ').all(|w| w.starts_with(prefix)));
        assert!(p.reply.split(' ').all(|w| w.starts_with(prefix)));
    }

    #[test]
    fn bootstrap_fixture_plants_seed_coordinates() {
        let c = bootstrap_catalog(3, 4).unwrap();
        let (corpus, planted) = bootstrap_corpus(&c, 5, &mut rng_from_seed(1)).unwrap();
        assert_eq!(corpus.len(), 35);
        assert_eq!(planted.len(), 4);
        assert_eq!(planted[&EmotionId(3)], c.va_of(EmotionId(0)).unwrap());
        assert_eq!(planted[&EmotionId(4)], c.va_of(EmotionId(1)).unwrap());
    }
}
