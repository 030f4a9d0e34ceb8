//! Emotion detector (discrete label plus VA regression), the pseudo-label
//! bootstrap of the VA table, and the next-emotion predictor.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{UtteranceRecord, Vocab};
use crate::math;
use crate::nn::loss::{cross_entropy_logits, cross_entropy_loss, va_l2, va_l2_loss};
use crate::nn::{
    absorb_grads, bind, Activation, DenseNet, DenseSpec, Init, Mat, Module, NodeId, OptimConfig, Optimizer,
    Tape, Tensor,
};
use crate::text::{split_nodes, EncoderSpec, TextEncoder};
use crate::va::{EmotionCatalog, EmotionId, VaPoint};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub encoder: EncoderSpec,
    pub n_classes: usize,
    /// Weight of the VA regression term in the total loss.
    pub lambda_va: f64,
}

impl DetectorConfig {
    pub fn new(n_classes: usize) -> Self {
        DetectorConfig { encoder: EncoderSpec::default(), n_classes, lambda_va: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutput {
    pub probs: Vec<f64>,
    pub dominant: EmotionId,
    pub va: VaPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectorLosses {
    pub total: f64,
    pub classification: f64,
    pub va: f64,
}

/// Loss nodes recorded by [`DetectorModel::record_loss`].
#[derive(Debug, Clone, Copy)]
pub struct DetectorLossNodes {
    pub total: NodeId,
    pub classification: NodeId,
    pub va: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    config: DetectorConfig,
    encoder: TextEncoder,
    class_head: DenseNet,
    va_head: DenseNet,
}

impl DetectorModel {
    /// `head_init` applies to both heads; `Init::Zeros` gives a uniform
    /// classifier and a VA output of (0, 0).
    pub fn new(vocab: Vocab, config: DetectorConfig, head_init: Init, rng: &mut Rng) -> Result<Self> {
        if config.n_classes == 0 {
            return Err(Error::Config("detector needs at least one class".into()));
        }
        if !(config.lambda_va >= 0.0 && config.lambda_va.is_finite()) {
            return Err(Error::Config("lambda_va must be a finite non-negative weight".into()));
        }
        let encoder = TextEncoder::new(vocab, config.encoder, rng)?;
        let d = encoder.out_dim();
        let class_head = DenseNet::new(
            &DenseSpec::mlp(&[d, config.n_classes], Activation::Identity, Activation::Identity),
            head_init,
            rng,
        )?;
        // tanh keeps the projected coordinates inside [-1, 1]
        let va_head = DenseNet::new(&DenseSpec::mlp(&[d, 2], Activation::Tanh, Activation::Tanh), head_init, rng)?;
        Ok(DetectorModel { config, encoder, class_head, va_head })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        self.encoder.vocab()
    }

    pub fn set_lambda_va(&mut self, lambda: f64) {
        self.config.lambda_va = lambda;
    }

    fn node_sizes(&self) -> [usize; 3] {
        [self.encoder.param_nodes(), self.class_head.param_nodes(), self.va_head.param_nodes()]
    }

    /// Records logits and VA rows for a batch of token bags.
    pub fn forward(&self, tape: &mut Tape, params: &[NodeId], bags: Vec<Vec<usize>>) -> (NodeId, NodeId) {
        let p = split_nodes(params, &self.node_sizes());
        let h = self.encoder.forward(tape, p[0], bags);
        let logits = self.class_head.forward(tape, p[1], h);
        let va = self.va_head.forward(tape, p[2], h);
        (logits, va)
    }

    pub fn detect(&self, text: &str) -> Result<DetectorOutput> {
        Ok(self.detect_batch(&[text])?.pop().unwrap())
    }

    pub fn detect_batch<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<DetectorOutput>> {
        if texts.iter().any(|t| t.as_ref().trim().is_empty()) {
            return Err(Error::Empty("text"));
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let b = bind(self, &mut tape);
        let bags = texts.iter().map(|t| self.encoder.token_bag(t.as_ref())).collect();
        let (logits, va) = self.forward(&mut tape, b.nodes(), bags);
        let (lv, vv) = (tape.value(logits), tape.value(va));
        (0..lv.rows)
            .map(|i| {
                let mut probs = lv.row(i).to_vec();
                math::softmax_in_place(&mut probs);
                let dominant = EmotionId(math::argmax(&probs));
                let row = vv.row(i);
                Ok(DetectorOutput { probs, dominant, va: VaPoint::new(row[0], row[1])? })
            })
            .collect()
    }

    /// Records `L_d + λ·L_c` for a labeled batch. Every gold label needs a
    /// VA coordinate.
    pub fn record_loss<S: AsRef<str>>(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        batch: &[(S, EmotionId)],
        catalog: &EmotionCatalog,
    ) -> Result<DetectorLossNodes> {
        if batch.is_empty() {
            return Err(Error::Empty("detector batch"));
        }
        let mut gold_va = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for (_, label) in batch {
            if label.0 >= self.config.n_classes {
                return Err(Error::OutOfRange { index: label.0, len: self.config.n_classes });
            }
            gold_va.push(catalog.va_of(*label)?);
            targets.push(label.0);
        }
        let bags = batch.iter().map(|(t, _)| self.encoder.token_bag(t.as_ref())).collect();
        let (logits, va) = self.forward(tape, params, bags);
        let classification = cross_entropy_logits(tape, logits, targets);
        let va = va_l2(tape, va, &gold_va);
        let weighted = tape.scale(va, self.config.lambda_va);
        let total = tape.add(classification, weighted);
        Ok(DetectorLossNodes { total, classification, va })
    }

    /// One optimizer step on a labeled batch; returns the pre-step losses.
    pub fn train_step<S: AsRef<str>>(
        &mut self,
        opt: &mut Optimizer,
        batch: &[(S, EmotionId)],
        catalog: &EmotionCatalog,
    ) -> Result<DetectorLosses> {
        let mut tape = Tape::new();
        let binding = bind(self, &mut tape);
        let nodes = self.record_loss(&mut tape, binding.nodes(), batch, catalog)?;
        let losses = DetectorLosses {
            total: tape.scalar(nodes.total),
            classification: tape.scalar(nodes.classification),
            va: tape.scalar(nodes.va),
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite("detector loss"));
        }
        let grads = tape.backward(nodes.total);
        absorb_grads(self, &binding, &grads);
        opt.step(self)?;
        Ok(losses)
    }
}

impl Module for DetectorModel {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.encoder.visit(f);
        self.class_head.visit(f);
        self.va_head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.encoder.visit_mut(f);
        self.class_head.visit_mut(f);
        self.va_head.visit_mut(f);
    }
}

/// The detector objective on already computed outputs.
pub fn detector_loss_value(
    probs: &[Vec<f64>],
    va: &[VaPoint],
    gold: &[EmotionId],
    catalog: &EmotionCatalog,
    lambda_va: f64,
) -> Result<DetectorLosses> {
    let targets: Vec<usize> = gold.iter().map(|g| g.0).collect();
    let gold_va = gold.iter().map(|g| catalog.va_of(*g)).collect::<Result<Vec<_>>>()?;
    let classification = cross_entropy_loss(probs, &targets)?.value;
    let va = va_l2_loss(va, &gold_va)?;
    Ok(DetectorLosses { total: classification + lambda_va * va, classification, va })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
}

/// Shuffled index batches for one epoch.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Mini-batch training; returns the mean total loss of every epoch.
pub fn train_detector<S: AsRef<str>>(
    model: &mut DetectorModel,
    opt: &mut Optimizer,
    data: &[(S, EmotionId)],
    catalog: &EmotionCatalog,
    schedule: TrainSchedule,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty("detector training data"));
    }
    let mut curve = Vec::with_capacity(schedule.epochs);
    for _ in 0..schedule.epochs {
        let mut sum = 0.0;
        let batches = shuffled_batches(data.len(), schedule.batch_size, rng);
        for idx in &batches {
            let batch: Vec<(&str, EmotionId)> = idx.iter().map(|&i| (data[i].0.as_ref(), data[i].1)).collect();
            sum += model.train_step(opt, &batch, catalog)?.total;
        }
        curve.push(sum / batches.len() as f64);
    }
    Ok(curve)
}

/// Fills every non-seed coordinate with the mean VA output of `seed_model`
/// over that label's utterances. Seed coordinates are left untouched.
pub fn bootstrap_va_table<S: AsRef<str>>(
    seed_model: &DetectorModel,
    catalog: &EmotionCatalog,
    corpus: &[(S, EmotionId)],
) -> Result<EmotionCatalog> {
    let mut completed = catalog.clone();
    for id in catalog.ids() {
        if catalog.is_seed(id) {
            continue;
        }
        let texts: Vec<&str> = corpus.iter().filter(|(_, l)| *l == id).map(|(t, _)| t.as_ref()).collect();
        if texts.is_empty() {
            return Err(Error::NoUtterances(catalog.name(id).into()));
        }
        let outputs = seed_model.detect_batch(&texts)?;
        let n = outputs.len() as f64;
        let v = outputs.iter().map(|o| o.va.valence).sum::<f64>() / n;
        let a = outputs.iter().map(|o| o.va.arousal).sum::<f64>() / n;
        completed.assign_va(id, VaPoint::new(v, a)?)?;
    }
    Ok(completed)
}

#[derive(Debug, Clone)]
pub struct BootstrapOutcome {
    /// Detector trained on seed-labeled utterances only.
    pub seed_model: DetectorModel,
    pub catalog: EmotionCatalog,
    /// Detector trained from scratch over every label with the completed table.
    pub detector: DetectorModel,
}

/// Seed phase, pseudo-labeling, then a fresh detector over all labels.
pub fn bootstrap_pipeline<S: AsRef<str>>(
    vocab: &Vocab,
    config: DetectorConfig,
    catalog: &EmotionCatalog,
    corpus: &[(S, EmotionId)],
    schedule: TrainSchedule,
    optim: OptimConfig,
    rng: &mut Rng,
) -> Result<BootstrapOutcome> {
    let seed_items: Vec<(&str, EmotionId)> = corpus
        .iter()
        .filter(|(_, l)| catalog.is_seed(*l))
        .map(|(t, l)| (t.as_ref(), *l))
        .collect();
    let mut seed_model = DetectorModel::new(vocab.clone(), config, Init::Xavier, rng)?;
    let mut opt = Optimizer::new(optim)?;
    train_detector(&mut seed_model, &mut opt, &seed_items, catalog, schedule, rng)?;

    let completed = bootstrap_va_table(&seed_model, catalog, corpus)?;

    let mut detector = DetectorModel::new(vocab.clone(), config, Init::Xavier, rng)?;
    let mut opt = Optimizer::new(optim)?;
    train_detector(&mut detector, &mut opt, corpus, &completed, schedule, rng)?;
    Ok(BootstrapOutcome { seed_model, catalog: completed, detector })
}

/// Action selection rule over a next-emotion distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    Argmax,
    Sample,
    EpsilonGreedy(f64),
}

/// Picks an index from `probs`; argmax ties go to the lowest index.
pub fn select(probs: &[f64], mode: SelectMode, rng: &mut Rng) -> usize {
    match mode {
        SelectMode::Argmax => math::argmax(probs),
        SelectMode::Sample => sample_categorical(probs, rng),
        SelectMode::EpsilonGreedy(eps) => {
            if rng.random::<f64>() < eps {
                rng.random_range(0..probs.len())
            } else {
                math::argmax(probs)
            }
        }
    }
}

pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u at the very top
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Trainable head mapping state features to next-emotion logits: one
/// leaky-ReLU hidden layer, dropout during training passes, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHead {
    hidden: DenseNet,
    out: DenseNet,
    dropout: f64,
}

impl PolicyHead {
    pub fn new(in_dim: usize, hidden: usize, n_out: usize, dropout: f64, out_init: Init, rng: &mut Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        let h = DenseNet::new(
            &DenseSpec::mlp(&[in_dim, hidden], Activation::LeakyRelu, Activation::LeakyRelu),
            Init::Xavier,
            rng,
        )?;
        let out = DenseNet::new(
            &DenseSpec::mlp(&[hidden, n_out], Activation::Identity, Activation::Identity),
            out_init,
            rng,
        )?;
        Ok(PolicyHead { hidden: h, out, dropout })
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.output_dim()
    }

    pub fn n_out(&self) -> usize {
        self.out.output_dim()
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn param_nodes(&self) -> usize {
        self.hidden.param_nodes() + self.out.param_nodes()
    }

    /// Inverted-dropout keep mask for `rows` hidden activations.
    pub fn dropout_mask(&self, rows: usize, rng: &mut Rng) -> Vec<f64> {
        let keep = 1.0 - self.dropout;
        (0..rows * self.hidden_dim())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }

    /// Logit rows for feature rows `x`; `mask` enables dropout.
    pub fn forward(&self, tape: &mut Tape, params: &[NodeId], x: NodeId, mask: Option<Vec<f64>>) -> NodeId {
        let p = split_nodes(params, &[self.hidden.param_nodes(), self.out.param_nodes()]);
        let mut h = self.hidden.forward(tape, p[0], x);
        if let Some(m) = mask {
            h = tape.mask_mul(h, m);
        }
        self.out.forward(tape, p[1], h)
    }

    pub fn logits_batch(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if rows.is_empty() {
            return Vec::new();
        }
        let mut tape = Tape::new();
        let b = bind(self, &mut tape);
        let x = tape.leaf(Mat::from_rows(rows));
        let out = self.forward(&mut tape, b.nodes(), x, None);
        let m = tape.value(out);
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.logits_batch(&[features.to_vec()]).pop().unwrap()
    }

    pub fn probs(&self, features: &[f64]) -> Vec<f64> {
        let mut p = self.logits(features);
        math::softmax_in_place(&mut p);
        p
    }
}

impl Module for PolicyHead {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.hidden.visit(f);
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.hidden.visit_mut(f);
        self.out.visit_mut(f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub encoder: EncoderSpec,
    pub n_classes: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl PredictorConfig {
    pub fn new(n_classes: usize) -> Self {
        PredictorConfig { encoder: EncoderSpec::default(), n_classes, hidden: 512, dropout: 0.5 }
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.out_dim + self.n_classes
    }
}

/// Next-emotion policy: text encoding joined with the one-hot current
/// emotion, fed to a [`PolicyHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    config: PredictorConfig,
    encoder: TextEncoder,
    head: PolicyHead,
}

impl PredictorModel {
    pub fn new(vocab: Vocab, config: PredictorConfig, head_init: Init, rng: &mut Rng) -> Result<Self> {
        if config.n_classes == 0 {
            return Err(Error::Config("predictor needs at least one class".into()));
        }
        let encoder = TextEncoder::new(vocab, config.encoder, rng)?;
        let head = PolicyHead::new(config.feature_dim(), config.hidden, config.n_classes, config.dropout, head_init, rng)?;
        Ok(PredictorModel { config, encoder, head })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        self.encoder.vocab()
    }

    pub fn encoder(&self) -> &TextEncoder {
        &self.encoder
    }

    pub fn head(&self) -> &PolicyHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut PolicyHead {
        &mut self.head
    }

    fn one_hot(&self, e: EmotionId) -> Vec<f64> {
        let mut v = vec![0.0; self.config.n_classes];
        v[e.0] = 1.0;
        v
    }

    /// `encoding(text) ⊕ one_hot(e_now)`.
    pub fn state_features(&self, text: &str, e_now: EmotionId) -> Result<Vec<f64>> {
        if e_now.0 >= self.config.n_classes {
            return Err(Error::OutOfRange { index: e_now.0, len: self.config.n_classes });
        }
        let mut f = self.encoder.encode(text);
        f.extend(self.one_hot(e_now));
        Ok(f)
    }

    pub fn predict_next(
        &self,
        text: &str,
        e_now: EmotionId,
        mode: SelectMode,
        rng: &mut Rng,
    ) -> Result<(EmotionId, Vec<f64>)> {
        let probs = self.head.probs(&self.state_features(text, e_now)?);
        Ok((EmotionId(select(&probs, mode, rng)), probs))
    }

    /// Supervised cross-entropy step on `(text, e_now, gold_next)` items
    /// with dropout active; returns the pre-step loss.
    pub fn train_step<S: AsRef<str>>(
        &mut self,
        opt: &mut Optimizer,
        batch: &[(S, EmotionId, EmotionId)],
        rng: &mut Rng,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("predictor batch"));
        }
        for (_, now, next) in batch {
            for e in [now, next] {
                if e.0 >= self.config.n_classes {
                    return Err(Error::OutOfRange { index: e.0, len: self.config.n_classes });
                }
            }
        }
        let mask = (self.head.dropout > 0.0).then(|| self.head.dropout_mask(batch.len(), rng));
        let mut tape = Tape::new();
        let binding = bind(self, &mut tape);
        let loss = self.record_loss(&mut tape, binding.nodes(), batch, mask);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("predictor loss"));
        }
        let grads = tape.backward(loss);
        absorb_grads(self, &binding, &grads);
        opt.step(self)?;
        Ok(value)
    }

    pub fn record_loss<S: AsRef<str>>(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        batch: &[(S, EmotionId, EmotionId)],
        mask: Option<Vec<f64>>,
    ) -> NodeId {
        let p = split_nodes(params, &[self.encoder.param_nodes(), self.head.param_nodes()]);
        let bags = batch.iter().map(|(t, _, _)| self.encoder.token_bag(t.as_ref())).collect();
        let enc = self.encoder.forward(tape, p[0], bags);
        let hot = tape.leaf(Mat::from_rows(&batch.iter().map(|(_, now, _)| self.one_hot(*now)).collect::<Vec<_>>()));
        let x = tape.concat_cols(enc, hot);
        let logits = self.head.forward(tape, p[1], x, mask);
        cross_entropy_logits(tape, logits, batch.iter().map(|(_, _, next)| next.0).collect())
    }
}

impl Module for PredictorModel {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.encoder.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.encoder.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// Supervised predictor targets: for each speaker turn followed by a
/// listener turn, `(speaker text, detected emotion of the speaker turn,
/// detected emotion of the listener reply)`.
pub fn next_emotion_pairs(
    detector: &DetectorModel,
    conversations: &[Vec<UtteranceRecord>],
) -> Result<Vec<(String, EmotionId, EmotionId)>> {
    let mut out = Vec::new();
    for conv in conversations {
        if conv.is_empty() {
            continue;
        }
        let texts: Vec<&str> = conv.iter().map(|r| r.text.as_str()).collect();
        let detected = detector.detect_batch(&texts)?;
        for t in 0..conv.len() - 1 {
            if conv[t].role == crate::corpus::Role::Speaker && conv[t + 1].role == crate::corpus::Role::Listener {
                out.push((conv[t].text.clone(), detected[t].dominant, detected[t + 1].dominant));
            }
        }
    }
    Ok(out)
}
