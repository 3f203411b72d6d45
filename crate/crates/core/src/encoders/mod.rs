//! Concept encoders: networks mapping a description to a unit-norm embedding.
//!
//! Both encoders end in the normalization layer `e = z / ‖z‖₂` with
//! `z = W x + b`, so their outputs live on the same unit sphere as the entity
//! table of the translation model. [`OutputLayer::Affine`] swaps that layer for
//! a plain affine map; it exists only for ablation runs.

mod cnn;
mod mlp;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cnn::{CnnConfig, CnnEncoder, CnnLayer, CnnTrace};
pub use mlp::{MlpConfig, MlpEncoder, MlpTrace};

use crate::dataset::{EntityId, WordVectorTable};
use crate::error::{Error, Result};
use crate::featurize::NgramVocabulary;
use crate::kernels::{self, Parameter, SparseVector, Tensor};
use crate::rng::{substream, Stream};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputLayer {
    /// Affine map followed by L2 normalization.
    Normalized,
    /// Affine map only (ablation).
    Affine,
}

/// Uniform init in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Parameter {
    let bound = (6.0 / (fan_in + fan_out) as Real).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
    Parameter::new(Tensor::new(shape.to_vec(), data).expect("positive shape"))
}

pub(crate) fn zeros(shape: &[usize]) -> Parameter {
    Parameter::new(Tensor::zeros(shape))
}

/// Final layer shared by both encoders.
pub(crate) fn output_forward(kind: OutputLayer, x: &Tensor, w: &Parameter, b: &Parameter) -> Result<Tensor> {
    match kind {
        OutputLayer::Normalized => kernels::l2norm_layer_forward(x, w, b),
        OutputLayer::Affine => kernels::dense_forward(x, w, b),
    }
}

pub(crate) fn output_backward(
    kind: OutputLayer,
    x: &Tensor,
    grad: &Tensor,
    w: &mut Parameter,
    b: &mut Parameter,
) -> Result<Tensor> {
    match kind {
        OutputLayer::Normalized => kernels::l2norm_layer_backward(x, grad, w, b),
        OutputLayer::Affine => kernels::dense_backward(x, grad, w, b),
    }
}

/// Featurized description, ready for [`ConceptEncoder::forward`].
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderInput {
    Grams(SparseVector),
    /// Rows of the encoder's word table; the last row is UNK.
    Tokens(Vec<usize>),
}

/// Values saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub enum Trace {
    Mlp(MlpTrace),
    Cnn(CnnTrace),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    Mlp(MlpConfig),
    Cnn(CnnConfig),
}

impl EncoderConfig {
    pub fn dim(&self) -> usize {
        match self {
            EncoderConfig::Mlp(c) => c.dim,
            EncoderConfig::Cnn(c) => c.dim,
        }
    }
}

/// Featurization resources an encoder needs besides its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderResources {
    /// `gram\tindex` lines.
    Ngrams(String),
    /// Word list; row `i` of the word table belongs to `words[i]`, UNK is last.
    Words(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConceptEncoder {
    Mlp(MlpEncoder),
    Cnn(CnnEncoder),
}

impl ConceptEncoder {
    /// Builds an encoder with deterministic weights for `seed`.
    ///
    /// MLP encoders take their 3-gram vocabulary from `training_texts`; CNN
    /// encoders require `word_vectors`.
    pub fn init<'a>(
        config: &EncoderConfig,
        seed: u64,
        training_texts: impl IntoIterator<Item = &'a str>,
        word_vectors: Option<&WordVectorTable>,
    ) -> Result<Self> {
        let mut rng = substream(seed, Stream::Encoder);
        match config {
            EncoderConfig::Mlp(c) => {
                let vocab = NgramVocabulary::build(training_texts);
                Ok(ConceptEncoder::Mlp(MlpEncoder::init(c, vocab, &mut rng)?))
            }
            EncoderConfig::Cnn(c) => {
                let words =
                    word_vectors.ok_or_else(|| Error::Config("CNN encoder requires a word-vector table".into()))?;
                Ok(ConceptEncoder::Cnn(CnnEncoder::init(c, words, &mut rng)?))
            }
        }
    }

    pub fn config(&self) -> EncoderConfig {
        match self {
            ConceptEncoder::Mlp(m) => EncoderConfig::Mlp(m.config.clone()),
            ConceptEncoder::Cnn(c) => EncoderConfig::Cnn(c.config.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        self.config().dim()
    }

    pub fn featurize(&self, text: &str) -> EncoderInput {
        match self {
            ConceptEncoder::Mlp(m) => EncoderInput::Grams(m.vocab.featurize(text).features),
            ConceptEncoder::Cnn(c) => EncoderInput::Tokens(c.token_rows(text)),
        }
    }

    pub fn forward(&self, input: &EncoderInput) -> Result<(Tensor, Trace)> {
        match (self, input) {
            (ConceptEncoder::Mlp(m), EncoderInput::Grams(x)) => {
                let (e, t) = m.forward(x)?;
                Ok((e, Trace::Mlp(t)))
            }
            (ConceptEncoder::Cnn(c), EncoderInput::Tokens(ids)) => {
                let (e, t) = c.forward(ids)?;
                Ok((e, Trace::Cnn(t)))
            }
            _ => Err(Error::State("encoder input does not match encoder kind".into())),
        }
    }

    /// Accumulates parameter gradients for `grad = dL/de`.
    pub fn backward(&mut self, trace: &Trace, grad: &Tensor) -> Result<()> {
        match (self, trace) {
            (ConceptEncoder::Mlp(m), Trace::Mlp(t)) => m.backward(t, grad),
            (ConceptEncoder::Cnn(c), Trace::Cnn(t)) => c.backward(t, grad),
            _ => Err(Error::State("trace does not match encoder kind".into())),
        }
    }

    /// Embedding of `text`; read-only over the parameters.
    pub fn encode(&self, text: &str) -> Result<Tensor> {
        Ok(self.forward(&self.featurize(text))?.0)
    }

    pub fn named_parameters(&self) -> Vec<(String, &Parameter)> {
        match self {
            ConceptEncoder::Mlp(m) => m.named_parameters(),
            ConceptEncoder::Cnn(c) => c.named_parameters(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            ConceptEncoder::Mlp(m) => m.parameters_mut(),
            ConceptEncoder::Cnn(c) => c.parameters_mut(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
    }

    pub fn resources(&self) -> EncoderResources {
        match self {
            ConceptEncoder::Mlp(m) => EncoderResources::Ngrams(m.vocab.to_lines()),
            ConceptEncoder::Cnn(c) => EncoderResources::Words(c.words.names().to_vec()),
        }
    }

    /// Rebuilds an encoder from its config, resources and named tensors.
    pub fn from_parts(
        config: &EncoderConfig,
        resources: &EncoderResources,
        tensors: &BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let mut encoder = match (config, resources) {
            (EncoderConfig::Mlp(c), EncoderResources::Ngrams(lines)) => {
                let vocab = NgramVocabulary::from_lines(lines)?;
                ConceptEncoder::Mlp(MlpEncoder::init(c, vocab, &mut substream(0, Stream::Init))?)
            }
            (EncoderConfig::Cnn(c), EncoderResources::Words(words)) => {
                let dim = tensors
                    .get("cnn.words")
                    .map(|t| t.shape()[1])
                    .ok_or_else(|| Error::Integrity("missing tensor `cnn.words`".into()))?;
                let mut table = WordVectorTable::new(dim)?;
                let zero = vec![0.0; dim];
                for w in words {
                    table.insert(w, &zero)?;
                }
                ConceptEncoder::Cnn(CnnEncoder::init(c, &table, &mut substream(0, Stream::Init))?)
            }
            _ => return Err(Error::Integrity("encoder resources do not match encoder kind".into())),
        };
        let names: Vec<String> = encoder.named_parameters().into_iter().map(|(n, _)| n).collect();
        for (name, param) in names.iter().zip(encoder.parameters_mut()) {
            let t = tensors.get(name).ok_or_else(|| Error::Integrity(format!("missing tensor `{name}`")))?;
            if t.shape() != param.shape() {
                return Err(Error::dim("checkpoint tensor", param.shape(), t.shape()));
            }
            param.value = t.clone();
        }
        Ok(encoder)
    }
}

/// Forward traces of one mini-batch, keyed by entity.
#[derive(Debug, Default)]
pub struct TraceCache {
    traces: BTreeMap<EntityId, Trace>,
}

impl TraceCache {
    pub fn clear(&mut self) {
        self.traces.clear();
    }

    pub fn contains(&self, id: EntityId) -> bool {
        self.traces.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Runs the forward pass for `id` and keeps its trace.
    pub fn forward(&mut self, encoder: &ConceptEncoder, id: EntityId, input: &EncoderInput) -> Result<Tensor> {
        let (e, trace) = encoder.forward(input)?;
        self.traces.insert(id, trace);
        Ok(e)
    }

    /// Backward pass for `id`; fails when no forward pass was cached.
    pub fn backward(&self, encoder: &mut ConceptEncoder, id: EntityId, grad: &Tensor) -> Result<()> {
        let trace =
            self.traces.get(&id).ok_or_else(|| Error::State(format!("no cached forward pass for entity {}", id.0)))?;
        encoder.backward(trace, grad)
    }
}
