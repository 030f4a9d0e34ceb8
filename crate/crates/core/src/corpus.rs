//! Conversation records, bounded dialogue contexts, emotion-grouped
//! candidate pools and the word vocabulary.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::fnv64;
use crate::va::{EmotionCatalog, EmotionId, EmotionLabel};
use crate::{Error, Result};

/// Default dialogue history length.
pub const DEFAULT_HISTORY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Speaker,
    Listener,
}

impl Role {
    /// Even turns belong to the speaker, odd turns to the listener.
    pub fn of_turn(turn_idx: usize) -> Role {
        if turn_idx.is_multiple_of(2) {
            Role::Speaker
        } else {
            Role::Listener
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub conv_id: String,
    pub turn_idx: usize,
    pub role: Role,
    pub text: String,
    /// Conversation-level emotion, used as the gold label of every turn.
    pub situation_emotion: EmotionLabel,
    pub situation_prompt: String,
}

/// One raw ED row after column extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub conv_id: String,
    /// 1-based as in the ED files.
    pub utterance_idx: usize,
    pub context: String,
    pub prompt: String,
    pub utterance: String,
}

/// Undoes the ED comma escape.
pub fn unescape_ed(text: &str) -> String {
    text.replace("_comma_", ",")
}

pub fn escape_ed(text: &str) -> String {
    text.replace(',', "_comma_")
}

/// Maps raw rows onto canonical records grouped by conversation (first
/// appearance order) and ordered by turn.
pub fn records_from_rows(rows: &[RawRow], catalog: &EmotionCatalog) -> Result<Vec<UtteranceRecord>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<UtteranceRecord>> = BTreeMap::new();
    for row in rows {
        if row.utterance_idx == 0 {
            return Err(Error::Config(alloc::format!(
                "conversation {}: utterance_idx is 1-based",
                row.conv_id
            )));
        }
        let text = unescape_ed(row.utterance.trim());
        if text.trim().is_empty() {
            return Err(Error::Empty("utterance text"));
        }
        let label = catalog.resolve_label(&row.context)?.clone();
        let turn_idx = row.utterance_idx - 1;
        let record = UtteranceRecord {
            conv_id: row.conv_id.clone(),
            turn_idx,
            role: Role::of_turn(turn_idx),
            text,
            situation_emotion: label,
            situation_prompt: unescape_ed(row.prompt.trim()),
        };
        if !groups.contains_key(&row.conv_id) {
            order.push(row.conv_id.clone());
        }
        groups.entry(row.conv_id.clone()).or_default().push(record);
    }
    let mut out = Vec::with_capacity(rows.len());
    for id in order {
        let mut conv = groups.remove(&id).unwrap();
        conv.sort_by_key(|r| r.turn_idx);
        out.extend(conv);
    }
    Ok(out)
}

/// Splits a flat record list into conversations, keeping record order.
pub fn conversations(records: &[UtteranceRecord]) -> Vec<Vec<UtteranceRecord>> {
    let mut out: Vec<Vec<UtteranceRecord>> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some(conv) if conv[0].conv_id == r.conv_id => conv.push(r.clone()),
            _ => out.push(alloc::vec![r.clone()]),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// 80/10/10 split keyed on a hash of the conversation id, so whole
/// conversations stay on one side.
pub fn split_of(conv_id: &str) -> Split {
    match fnv64(conv_id.as_bytes()) % 10 {
        0 => Split::Valid,
        1 => Split::Test,
        _ => Split::Train,
    }
}

/// Chronological window of at most `max_len` turns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DialogueContext {
    history: Vec<UtteranceRecord>,
}

impl DialogueContext {
    pub fn new(mut history: Vec<UtteranceRecord>, max_len: usize) -> Self {
        if history.len() > max_len {
            history.drain(..history.len() - max_len);
        }
        DialogueContext { history }
    }

    pub fn history(&self) -> &[UtteranceRecord] {
        &self.history
    }

    pub fn texts(&self) -> Vec<&str> {
        self.history.iter().map(|r| r.text.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Appends a turn and drops the oldest ones beyond `max_len`.
    pub fn push(&mut self, record: UtteranceRecord, max_len: usize) {
        self.history.push(record);
        if self.history.len() > max_len {
            self.history.drain(..self.history.len() - max_len);
        }
    }
}

/// Last `min(h, upto_turn + 1)` turns of one conversation ending at
/// `upto_turn`.
pub fn make_context(conversation: &[UtteranceRecord], upto_turn: usize, h: usize) -> Result<DialogueContext> {
    if upto_turn >= conversation.len() {
        return Err(Error::OutOfRange { index: upto_turn, len: conversation.len() });
    }
    if h == 0 {
        return Err(Error::Config("history length must be at least 1".into()));
    }
    let start = (upto_turn + 1).saturating_sub(h);
    Ok(DialogueContext { history: conversation[start..=upto_turn].to_vec() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub text: String,
    pub emotion: EmotionId,
    pub embedding: Option<Vec<f64>>,
}

/// Reply candidates of one side, indexed by emotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    side: Role,
    entries: Vec<PoolEntry>,
    by_emotion: BTreeMap<EmotionId, Vec<usize>>,
}

impl CandidatePool {
    pub fn new(side: Role, entries: Vec<(String, EmotionId)>) -> Self {
        let mut by_emotion: BTreeMap<EmotionId, Vec<usize>> = BTreeMap::new();
        let entries = entries
            .into_iter()
            .enumerate()
            .map(|(i, (text, emotion))| {
                by_emotion.entry(emotion).or_default().push(i);
                PoolEntry { text, emotion, embedding: None }
            })
            .collect();
        CandidatePool { side, entries, by_emotion }
    }

    pub fn side(&self) -> Role {
        self.side
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices of one emotion group (empty when absent).
    pub fn group(&self, emotion: EmotionId) -> &[usize] {
        self.by_emotion.get(&emotion).map_or(&[], Vec::as_slice)
    }

    pub fn has_embeddings(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.embedding.is_some())
    }

    pub fn set_embeddings(&mut self, vectors: Vec<Vec<f64>>) -> Result<()> {
        if vectors.len() != self.entries.len() {
            return Err(Error::Shape("one embedding per pool entry".into()));
        }
        for (e, v) in self.entries.iter_mut().zip(vectors) {
            e.embedding = Some(v);
        }
        Ok(())
    }

    pub fn clear_embeddings(&mut self) {
        for e in &mut self.entries {
            e.embedding = None;
        }
    }

    /// Stable digest of entry texts and emotions (not embeddings).
    pub fn content_hash(&self) -> u64 {
        let mut h = crate::math::Fnv64::default();
        for e in &self.entries {
            h.write(e.text.as_bytes());
            h.write(&[0]);
            h.write_u64(e.emotion.0 as u64);
        }
        h.finish()
    }
}

/// Partitions records into (listener pool, speaker pool).
pub fn build_pools(records: &[UtteranceRecord]) -> (CandidatePool, CandidatePool) {
    let pick = |role: Role| {
        records
            .iter()
            .filter(|r| r.role == role)
            .map(|r| (r.text.clone(), r.situation_emotion.id))
            .collect()
    };
    (
        CandidatePool::new(Role::Listener, pick(Role::Listener)),
        CandidatePool::new(Role::Speaker, pick(Role::Speaker)),
    )
}

/// Lowercases and splits on whitespace; every ASCII punctuation character
/// becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                tokens.push(core::mem::take(&mut cur));
            }
        } else if ch.is_ascii_punctuation() {
            if !cur.is_empty() {
                tokens.push(core::mem::take(&mut cur));
            }
            tokens.push(ch.to_string());
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EOS_ID: usize = 2;
const FIRST_EMOTION_ID: usize = 3;

/// Token ↔ id map. Reserved ids: padding, unknown, end-of-sequence, then
/// one id per catalog emotion; words follow in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    n_emotions: usize,
    index: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    n_emotions: usize,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        let mut v = Vocab { tokens: r.tokens, n_emotions: r.n_emotions, index: BTreeMap::new() };
        v.rebuild_index();
        v
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { tokens: v.tokens, n_emotions: v.n_emotions }
    }
}

impl Vocab {
    pub fn new(catalog: &EmotionCatalog, words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = ["<pad>", "<unk>", "<eos>"].iter().map(|s| s.to_string()).collect();
        tokens.extend(catalog.labels().iter().map(|l| alloc::format!("<{}>", l.name)));
        let mut v = Vocab { n_emotions: catalog.len(), tokens, index: BTreeMap::new() };
        v.rebuild_index();
        for w in words {
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.tokens.len());
                v.tokens.push(w);
            }
        }
        v
    }

    fn rebuild_index(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_emotions(&self) -> usize {
        self.n_emotions
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn emotion_token(&self, emotion: EmotionId) -> usize {
        debug_assert!(emotion.0 < self.n_emotions);
        FIRST_EMOTION_ID + emotion.0
    }

    pub fn is_reserved(&self, id: usize) -> bool {
        id < FIRST_EMOTION_ID + self.n_emotions
    }

    /// Word tokens (non-reserved), in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[FIRST_EMOTION_ID + self.n_emotions..]
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let words: Vec<&str> = ids.iter().filter_map(|&i| self.token(i)).collect();
        words.join(" ")
    }
}

/// Builds the vocabulary from record texts and situation prompts; tokens
/// seen fewer than `min_count` times are left out (they map to unknown).
pub fn tokenize_and_vocab(records: &[UtteranceRecord], min_count: usize, catalog: &EmotionCatalog) -> Result<Vocab> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let texts = records.iter().flat_map(|r| [r.text.as_str(), r.situation_prompt.as_str()]);
    Ok(vocab_from_texts(texts, min_count, catalog))
}

pub fn vocab_from_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    min_count: usize,
    catalog: &EmotionCatalog,
) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut order = Vec::new();
    for text in texts {
        for tok in tokenize(text) {
            let c = counts.entry(tok.clone()).or_insert(0);
            if *c == 0 {
                order.push(tok);
            }
            *c += 1;
        }
    }
    Vocab::new(catalog, order.into_iter().filter(|t| counts[t] >= min_count))
}
