//! Listener reply selection: a shared-weight bi-encoder over the candidate
//! pool with an emotion filter, and a toy generative model trained on
//! language modeling, next-sentence and emotion classification losses.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{CandidatePool, DialogueContext, Role, UtteranceRecord, Vocab, EOS_ID, PAD_ID};
use crate::math;
use crate::nn::loss::{bce_with_logits, cross_entropy_logits, in_batch_nll};
use crate::nn::{
    absorb_grads, bind, Activation, DenseNet, DenseSpec, Init, Module, NodeId, Optimizer, Tape, Tensor,
};
use crate::text::{split_nodes, EncoderSpec, TextEncoder};
use crate::va::EmotionId;
use crate::{Error, Result, Rng};

/// Dual encoder whose context and candidate sides share one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoder {
    encoder: TextEncoder,
}

impl BiEncoder {
    pub fn new(vocab: Vocab, spec: EncoderSpec, rng: &mut Rng) -> Result<Self> {
        Ok(BiEncoder { encoder: TextEncoder::new(vocab, spec, rng)? })
    }

    pub fn from_encoder(encoder: TextEncoder) -> Self {
        BiEncoder { encoder }
    }

    pub fn encoder(&self) -> &TextEncoder {
        &self.encoder
    }

    pub fn dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn encode_texts<S: AsRef<str>>(&self, texts: &[S]) -> Vec<Vec<f64>> {
        self.encoder.encode_texts(texts)
    }

    pub fn encode_context(&self, context: &DialogueContext) -> Vec<f64> {
        self.encoder.encode(&context_text(context))
    }

    /// Mean in-batch negative log-likelihood of the gold replies.
    pub fn record_loss<C: AsRef<str>, R: AsRef<str>>(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        batch: &[(C, R)],
    ) -> Result<NodeId> {
        if batch.len() < 2 {
            return Err(Error::InsufficientCandidates { needed: 2, found: batch.len() });
        }
        let ctx_bags = batch.iter().map(|(c, _)| self.encoder.token_bag(c.as_ref())).collect();
        let cand_bags = batch.iter().map(|(_, r)| self.encoder.token_bag(r.as_ref())).collect();
        let hx = self.encoder.forward(tape, params, ctx_bags);
        let hy = self.encoder.forward(tape, params, cand_bags);
        let scores = tape.matmul_t(hx, hy);
        Ok(in_batch_nll(tape, scores))
    }

    pub fn train_step<C: AsRef<str>, R: AsRef<str>>(&mut self, opt: &mut Optimizer, batch: &[(C, R)]) -> Result<f64> {
        let mut tape = Tape::new();
        let binding = bind(self, &mut tape);
        let loss = self.record_loss(&mut tape, binding.nodes(), batch)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("retrieval loss"));
        }
        let grads = tape.backward(loss);
        absorb_grads(self, &binding, &grads);
        opt.step(self)?;
        Ok(value)
    }

    /// Caches candidate embeddings inside the pool.
    pub fn materialize(&self, pool: &mut CandidatePool) -> Result<()> {
        let texts: Vec<&str> = pool.entries().iter().map(|e| e.text.as_str()).collect();
        let vectors = self.encode_texts(&texts);
        pool.set_embeddings(vectors)
    }
}

impl Module for BiEncoder {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.encoder.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.encoder.visit_mut(f);
    }
}

/// History turns joined in order; this is what the context side encodes.
pub fn context_text(context: &DialogueContext) -> String {
    context.texts().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub hits: Vec<Hit>,
    /// The requested emotion group was empty and the whole pool was ranked.
    pub fell_back: bool,
}

/// Top-`k` pool entries by dot product with `query`, restricted to the
/// `e_next` group when given. Ties go to the lower entry index.
pub fn rank(query: &[f64], pool: &CandidatePool, e_next: Option<EmotionId>, k: usize) -> Result<Retrieval> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    if !pool.has_embeddings() {
        return Err(Error::EmbeddingsMissing);
    }
    let all: Vec<usize>;
    let (eligible, fell_back) = match e_next {
        Some(e) if !pool.group(e).is_empty() => (pool.group(e), false),
        filter => {
            all = (0..pool.len()).collect();
            (all.as_slice(), filter.is_some())
        }
    };
    let mut hits: Vec<Hit> = eligible
        .iter()
        .map(|&i| Hit { index: i, score: math::dot(query, pool.entries()[i].embedding.as_ref().unwrap()) })
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    hits.truncate(k);
    Ok(Retrieval { hits, fell_back })
}

pub fn retrieve(
    enc: &BiEncoder,
    pool: &CandidatePool,
    context: &DialogueContext,
    e_next: Option<EmotionId>,
    k: usize,
) -> Result<Retrieval> {
    rank(&enc.encode_context(context), pool, e_next, k)
}

/// `(context text, listener reply)` training pairs, each context holding up
/// to `h` turns before the reply.
pub fn reply_pairs(conversations: &[Vec<UtteranceRecord>], h: usize) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for conv in conversations {
        for t in 1..conv.len() {
            if conv[t].role != Role::Listener {
                continue;
            }
            let start = t.saturating_sub(h);
            let ctx: Vec<&str> = conv[start..t].iter().map(|r| r.text.as_str()).collect();
            out.push((ctx.join(" "), conv[t].text.clone()));
        }
    }
    out
}

/// Epoch loop over shuffled in-batch-negative batches; a trailing batch of
/// one item is dropped. Returns the mean loss per epoch.
pub fn train_bi_encoder<C: AsRef<str>, R: AsRef<str>>(
    enc: &mut BiEncoder,
    opt: &mut Optimizer,
    pairs: &[(C, R)],
    schedule: crate::controller::TrainSchedule,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientCandidates { needed: 2, found: pairs.len() });
    }
    let mut curve = Vec::with_capacity(schedule.epochs);
    for _ in 0..schedule.epochs {
        let (mut sum, mut n) = (0.0, 0);
        for idx in crate::controller::shuffled_batches(pairs.len(), schedule.batch_size.max(2), rng) {
            if idx.len() < 2 {
                continue;
            }
            let batch: Vec<(&str, &str)> = idx.iter().map(|&i| (pairs[i].0.as_ref(), pairs[i].1.as_ref())).collect();
            sum += enc.train_step(opt, &batch)?;
            n += 1;
        }
        curve.push(sum / n as f64);
    }
    Ok(curve)
}

pub const DEFAULT_PERSONA: &str = "i like to help people .";

/// Token segments of one generation item: persona, emotion token,
/// history, reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenInput {
    pub persona: Vec<usize>,
    pub emotion_token: usize,
    pub history: Vec<usize>,
    pub reply: Vec<usize>,
}

impl GenInput {
    /// History is cut from the front so the full sequence plus the end
    /// token fits in `max_len`.
    pub fn new<S: AsRef<str>>(vocab: &Vocab, history: &[S], emotion: EmotionId, reply: &str, max_len: usize) -> Self {
        let persona = vocab.encode(DEFAULT_PERSONA);
        let mut hist: Vec<usize> = history.iter().flat_map(|t| vocab.encode(t.as_ref())).collect();
        let reply = vocab.encode(reply);
        let fixed = persona.len() + 1 + reply.len() + 1;
        let room = max_len.saturating_sub(fixed);
        if hist.len() > room {
            hist.drain(..hist.len() - room);
        }
        GenInput { persona, emotion_token: vocab.emotion_token(emotion), history: hist, reply }
    }

    /// `[persona, emotion, history]`.
    pub fn prefix(&self) -> Vec<usize> {
        let mut s = self.persona.clone();
        s.push(self.emotion_token);
        s.extend_from_slice(&self.history);
        s
    }

    pub fn len(&self) -> usize {
        self.persona.len() + 1 + self.history.len() + self.reply.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenExample {
    pub input: GenInput,
    pub distractor: Vec<usize>,
    pub emotion: EmotionId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub emb_dim: usize,
    pub hidden: usize,
    /// Previous tokens seen by the next-token head.
    pub window: usize,
    pub max_len: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { emb_dim: 16, hidden: 64, window: 3, max_len: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GenLosses {
    pub total: f64,
    pub lm: f64,
    pub nsp: f64,
    pub esg: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GenLossNodes {
    pub total: NodeId,
    pub lm: NodeId,
    pub nsp: NodeId,
    pub esg: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decode {
    Greedy,
    TopK(usize),
}

/// Fixed-window feedforward language model with pooled next-sentence and
/// emotion heads. The next-token head sees the last `window` tokens plus
/// the prepended emotion token, so conditioning survives long histories.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGenerator {
    config: GenConfig,
    vocab: Vocab,
    table: Tensor,
    lm: DenseNet,
    nsp: DenseNet,
    esg: DenseNet,
}

impl ToyGenerator {
    pub fn new(vocab: Vocab, config: GenConfig, head_init: Init, rng: &mut Rng) -> Result<Self> {
        if config.window == 0 || config.emb_dim == 0 || vocab.n_emotions() == 0 {
            return Err(Error::Config("generator needs a window, an embedding width and emotion tokens".into()));
        }
        let (v, d) = (vocab.len(), config.emb_dim);
        let values = (0..v * d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let table = Tensor::new(vec![v, d], values)?;
        let lm = DenseNet::new(
            &DenseSpec::mlp(&[(config.window + 1) * d, config.hidden, v], Activation::LeakyRelu, Activation::Identity),
            head_init,
            rng,
        )?;
        let nsp = DenseNet::new(&DenseSpec::mlp(&[d, 1], Activation::Identity, Activation::Identity), head_init, rng)?;
        let esg = DenseNet::new(
            &DenseSpec::mlp(&[d, vocab.n_emotions()], Activation::Identity, Activation::Identity),
            head_init,
            rng,
        )?;
        Ok(ToyGenerator { config, vocab, table, lm, nsp, esg })
    }

    pub fn config(&self) -> &GenConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn node_sizes(&self) -> [usize; 4] {
        [1, self.lm.param_nodes(), self.nsp.param_nodes(), self.esg.param_nodes()]
    }

    /// Window of the `window` tokens before position `pos` in `seq` (padded
    /// on the left), followed by the emotion token.
    fn lm_window(&self, seq: &[usize], pos: usize, emotion_token: usize) -> Vec<usize> {
        let w = self.config.window;
        let mut win: Vec<usize> = (0..w)
            .map(|j| {
                let back = w - j;
                if pos >= back {
                    seq[pos - back]
                } else {
                    PAD_ID
                }
            })
            .collect();
        win.push(emotion_token);
        win
    }

    /// Next-token windows and targets over the reply and its end token.
    fn lm_positions(&self, input: &GenInput) -> (Vec<Vec<usize>>, Vec<usize>) {
        let mut seq = input.prefix();
        let start = seq.len();
        seq.extend_from_slice(&input.reply);
        seq.push(EOS_ID);
        (start..seq.len()).map(|p| (self.lm_window(&seq, p, input.emotion_token), seq[p])).unzip()
    }

    fn pooled_bag(input: &GenInput, reply: &[usize]) -> Vec<usize> {
        input.history.iter().chain(reply).copied().collect()
    }

    pub fn record_loss(&self, tape: &mut Tape, params: &[NodeId], batch: &[GenExample]) -> Result<GenLossNodes> {
        if batch.is_empty() {
            return Err(Error::Empty("generation batch"));
        }
        let mut windows = Vec::new();
        let mut targets = Vec::new();
        let mut bags = Vec::new();
        let mut nsp_targets = Vec::new();
        let mut esg_bags = Vec::new();
        let mut esg_targets = Vec::new();
        for ex in batch {
            if ex.input.reply.is_empty() {
                return Err(Error::Empty("reply segment"));
            }
            if ex.distractor == ex.input.reply {
                return Err(Error::Config("distractor equals the gold reply".into()));
            }
            if ex.emotion.0 >= self.vocab.n_emotions() {
                return Err(Error::OutOfRange { index: ex.emotion.0, len: self.vocab.n_emotions() });
            }
            let (w, t) = self.lm_positions(&ex.input);
            windows.extend(w);
            targets.extend(t);
            bags.push(Self::pooled_bag(&ex.input, &ex.input.reply));
            bags.push(Self::pooled_bag(&ex.input, &ex.distractor));
            nsp_targets.extend([1.0, 0.0]);
            esg_bags.push(Self::pooled_bag(&ex.input, &ex.input.reply));
            esg_targets.push(ex.emotion.0);
        }
        let p = split_nodes(params, &self.node_sizes());
        let table = p[0][0];

        let x = tape.embed_concat(table, windows);
        let logits = self.lm.forward(tape, p[1], x);
        let lm = cross_entropy_logits(tape, logits, targets);

        let pooled = tape.embed_mean(table, bags);
        let nsp_logits = self.nsp.forward(tape, p[2], pooled);
        let nsp = bce_with_logits(tape, nsp_logits, nsp_targets);

        let pooled = tape.embed_mean(table, esg_bags);
        let esg_logits = self.esg.forward(tape, p[3], pooled);
        let esg = cross_entropy_logits(tape, esg_logits, esg_targets);

        let sum = tape.add(lm, nsp);
        let total = tape.add(sum, esg);
        Ok(GenLossNodes { total, lm, nsp, esg })
    }

    /// Loss components on a batch without updating anything.
    pub fn losses(&self, batch: &[GenExample]) -> Result<GenLosses> {
        let mut tape = Tape::new();
        let b = bind(self, &mut tape);
        let n = self.record_loss(&mut tape, b.nodes(), batch)?;
        Ok(GenLosses {
            total: tape.scalar(n.total),
            lm: tape.scalar(n.lm),
            nsp: tape.scalar(n.nsp),
            esg: tape.scalar(n.esg),
        })
    }

    pub fn train_step(&mut self, opt: &mut Optimizer, batch: &[GenExample]) -> Result<GenLosses> {
        let mut tape = Tape::new();
        let binding = bind(self, &mut tape);
        let n = self.record_loss(&mut tape, binding.nodes(), batch)?;
        let losses = GenLosses {
            total: tape.scalar(n.total),
            lm: tape.scalar(n.lm),
            nsp: tape.scalar(n.nsp),
            esg: tape.scalar(n.esg),
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite("generation loss"));
        }
        let grads = tape.backward(n.total);
        absorb_grads(self, &binding, &grads);
        opt.step(self)?;
        Ok(losses)
    }

    fn next_logits(&self, windows: Vec<Vec<usize>>) -> Vec<Vec<f64>> {
        let mut tape = Tape::new();
        let b = bind(self, &mut tape);
        let p = split_nodes(b.nodes(), &self.node_sizes());
        let x = tape.embed_concat(p[0][0], windows);
        let out = self.lm.forward(&mut tape, p[1], x);
        let m = tape.value(out);
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }

    /// Summed negative log-likelihood of the reply tokens and the end
    /// token, with the token count.
    pub fn reply_nll(&self, input: &GenInput) -> (f64, usize) {
        let (windows, targets) = self.lm_positions(input);
        let rows = self.next_logits(windows);
        let mut sum = 0.0;
        for (mut row, t) in rows.into_iter().zip(&targets) {
            math::log_softmax_in_place(&mut row);
            sum -= row[*t];
        }
        (sum, targets.len())
    }

    /// Autoregressive decode from `[persona, e_next, history]`. Reserved
    /// tokens are never emitted; the end token stops decoding and is
    /// withheld at the first step so the reply is nonempty.
    pub fn generate_ids<S: AsRef<str>>(
        &self,
        history: &[S],
        e_next: EmotionId,
        max_len: usize,
        mode: Decode,
        rng: &mut Rng,
    ) -> Result<Vec<usize>> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if e_next.0 >= self.vocab.n_emotions() {
            return Err(Error::OutOfRange { index: e_next.0, len: self.vocab.n_emotions() });
        }
        let probe = GenInput::new(&self.vocab, history, e_next, "", self.config.max_len.saturating_sub(max_len));
        let mut seq = probe.prefix();
        let mut out = Vec::new();
        while out.len() < max_len {
            let win = self.lm_window(&seq, seq.len(), probe.emotion_token);
            let mut logits = self.next_logits(vec![win]).pop().unwrap();
            for (id, l) in logits.iter_mut().enumerate() {
                if (self.vocab.is_reserved(id) && id != EOS_ID) || (id == EOS_ID && out.is_empty()) {
                    *l = f64::NEG_INFINITY;
                }
            }
            let next = match mode {
                Decode::Greedy => math::argmax(&logits),
                Decode::TopK(k) => {
                    let mut order: Vec<usize> = (0..logits.len()).collect();
                    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
                    order.truncate(k.max(1));
                    let mut probs: Vec<f64> = order.iter().map(|&i| logits[i]).collect();
                    math::softmax_in_place(&mut probs);
                    order[crate::controller::sample_categorical(&probs, rng)]
                }
            };
            if next == EOS_ID {
                break;
            }
            out.push(next);
            seq.push(next);
        }
        Ok(out)
    }

    pub fn generate(
        &self,
        context: &DialogueContext,
        e_next: EmotionId,
        max_len: usize,
        mode: Decode,
        rng: &mut Rng,
    ) -> Result<String> {
        let ids = self.generate_ids(&context.texts(), e_next, max_len, mode, rng)?;
        Ok(self.vocab.decode(&ids))
    }
}

impl Module for ToyGenerator {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.table);
        self.lm.visit(f);
        self.nsp.visit(f);
        self.esg.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.table);
        self.lm.visit_mut(f);
        self.nsp.visit_mut(f);
        self.esg.visit_mut(f);
    }
}

/// Generation examples from listener turns. `emotion_of` labels each reply;
/// distractors are other listener replies drawn with `rng`.
pub fn gen_examples(
    vocab: &Vocab,
    conversations: &[Vec<UtteranceRecord>],
    h: usize,
    max_len: usize,
    emotion_of: impl Fn(&UtteranceRecord) -> EmotionId,
    rng: &mut Rng,
) -> Vec<GenExample> {
    let replies: Vec<&UtteranceRecord> =
        conversations.iter().flatten().filter(|r| r.role == Role::Listener).collect();
    let mut out = Vec::new();
    for conv in conversations {
        for t in 1..conv.len() {
            if conv[t].role != Role::Listener {
                continue;
            }
            let ctx: Vec<&str> = conv[t.saturating_sub(h)..t].iter().map(|r| r.text.as_str()).collect();
            let emotion = emotion_of(&conv[t]);
            let input = GenInput::new(vocab, &ctx, emotion, &conv[t].text, max_len);
            if input.reply.is_empty() {
                continue;
            }
            // a handful of draws; skip the item if every candidate matches
            let mut distractor = None;
            for _ in 0..8 {
                let cand = vocab.encode(&replies[rng.random_range(0..replies.len())].text);
                if cand != input.reply {
                    distractor = Some(cand);
                    break;
                }
            }
            if let Some(distractor) = distractor {
                out.push(GenExample { input, distractor, emotion });
            }
        }
    }
    out
}

pub fn train_generator(
    gen: &mut ToyGenerator,
    opt: &mut Optimizer,
    examples: &[GenExample],
    schedule: crate::controller::TrainSchedule,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Empty("generation examples"));
    }
    let mut curve = Vec::with_capacity(schedule.epochs);
    for _ in 0..schedule.epochs {
        let batches = crate::controller::shuffled_batches(examples.len(), schedule.batch_size, rng);
        let mut sum = 0.0;
        for idx in &batches {
            let batch: Vec<GenExample> = idx.iter().map(|&i| examples[i].clone()).collect();
            sum += gen.train_step(opt, &batch)?.total;
        }
        curve.push(sum / batches.len() as f64);
    }
    Ok(curve)
}
