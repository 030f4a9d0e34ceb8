//! Bag-of-words text encoder: trainable token embeddings, mean pooling and
//! a small dense stack on top.

use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::nn::{Activation, DenseNet, DenseSpec, Init, Module, NodeId, Tape, Tensor};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub emb_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub output: Activation,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec { emb_dim: 32, hidden: 64, out_dim: 32, output: Activation::Tanh }
    }
}

/// Half-width of the uniform initialization of embedding rows.
const EMBED_INIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    vocab: Vocab,
    spec: EncoderSpec,
    table: Tensor,
    net: DenseNet,
}

impl TextEncoder {
    pub fn new(vocab: Vocab, spec: EncoderSpec, rng: &mut Rng) -> Result<Self> {
        if spec.emb_dim == 0 || vocab.is_empty() {
            return Err(Error::Config("encoder needs a vocabulary and a nonzero embedding width".into()));
        }
        let n = vocab.len() * spec.emb_dim;
        let values = (0..n).map(|_| rng.random_range(-EMBED_INIT..EMBED_INIT)).collect();
        let table = Tensor::new(alloc::vec![vocab.len(), spec.emb_dim], values)?;
        let net = DenseNet::new(
            &DenseSpec::mlp(&[spec.emb_dim, spec.hidden, spec.out_dim], Activation::LeakyRelu, spec.output),
            Init::Xavier,
            rng,
        )?;
        Ok(TextEncoder { vocab, spec, table, net })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim
    }

    pub fn param_nodes(&self) -> usize {
        1 + self.net.param_nodes()
    }

    pub fn token_bag(&self, text: &str) -> Vec<usize> {
        self.vocab.encode(text)
    }

    /// One output row per bag; `params` are this encoder's bound nodes.
    pub fn forward(&self, tape: &mut Tape, params: &[NodeId], bags: Vec<Vec<usize>>) -> NodeId {
        let pooled = tape.embed_mean(params[0], bags);
        self.net.forward(tape, &params[1..], pooled)
    }

    /// Inference over a batch of texts.
    pub fn encode_texts<S: AsRef<str>>(&self, texts: &[S]) -> Vec<Vec<f64>> {
        if texts.is_empty() {
            return Vec::new();
        }
        let mut tape = Tape::new();
        let b = crate::nn::bind(self, &mut tape);
        let bags = texts.iter().map(|t| self.token_bag(t.as_ref())).collect();
        let out = self.forward(&mut tape, b.nodes(), bags);
        let m = tape.value(out);
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.encode_texts(&[text]).pop().unwrap()
    }
}

impl Module for TextEncoder {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.table);
        self.net.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.table);
        self.net.visit_mut(f);
    }
}

/// Splits a binding's node list into consecutive per-component slices.
pub(crate) fn split_nodes<'a>(nodes: &'a [NodeId], sizes: &[usize]) -> Vec<&'a [NodeId]> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut rest = nodes;
    for &n in sizes {
        let (head, tail) = rest.split_at(n);
        out.push(head);
        rest = tail;
    }
    debug_assert!(rest.is_empty());
    out
}
