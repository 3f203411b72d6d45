use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, output_backward, output_forward, zeros, OutputLayer};
use crate::error::{Error, Result};
use crate::featurize::NgramVocabulary;
use crate::kernels::{self, Parameter, SparseVector, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub dim: usize,
    pub output: OutputLayer,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: 500, dim: 50, output: OutputLayer::Normalized }
    }
}

/// Bag-of-3-grams → dense(hidden) → ReLU → output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    pub config: MlpConfig,
    pub vocab: NgramVocabulary,
    pub hidden_w: Parameter,
    pub hidden_b: Parameter,
    pub out_w: Parameter,
    pub out_b: Parameter,
}

#[derive(Debug, Clone)]
pub struct MlpTrace {
    input: SparseVector,
    pre: Tensor,
    hidden: Tensor,
}

impl MlpEncoder {
    pub fn init<R: Rng>(config: &MlpConfig, vocab: NgramVocabulary, rng: &mut R) -> Result<Self> {
        if config.hidden == 0 || config.dim == 0 {
            return Err(Error::Config("MLP hidden size and embedding dimension must be positive".into()));
        }
        if vocab.is_empty() {
            return Err(Error::Config("MLP encoder needs a non-empty 3-gram vocabulary".into()));
        }
        let v = vocab.len();
        let (h, n) = (config.hidden, config.dim);
        Ok(MlpEncoder {
            config: config.clone(),
            vocab,
            hidden_w: glorot(rng, &[h, v], v, h),
            hidden_b: zeros(&[h]),
            out_w: glorot(rng, &[n, h], h, n),
            out_b: zeros(&[n]),
        })
    }

    pub fn forward(&self, x: &SparseVector) -> Result<(Tensor, MlpTrace)> {
        let pre = kernels::sparse_dense_forward(x, &self.hidden_w, &self.hidden_b)?;
        let hidden = kernels::relu(&pre);
        let e = output_forward(self.config.output, &hidden, &self.out_w, &self.out_b)?;
        Ok((e, MlpTrace { input: x.clone(), pre, hidden }))
    }

    pub fn backward(&mut self, trace: &MlpTrace, grad: &Tensor) -> Result<()> {
        let g_hidden = output_backward(self.config.output, &trace.hidden, grad, &mut self.out_w, &mut self.out_b)?;
        let g_pre = kernels::relu_backward(&g_hidden, &trace.pre)?;
        kernels::sparse_dense_backward(&trace.input, &g_pre, &mut self.hidden_w, &mut self.hidden_b)
    }

    pub fn named_parameters(&self) -> Vec<(String, &Parameter)> {
        vec![
            ("mlp.hidden.w".into(), &self.hidden_w),
            ("mlp.hidden.b".into(), &self.hidden_b),
            ("mlp.out.w".into(), &self.out_w),
            ("mlp.out.b".into(), &self.out_b),
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.hidden_w, &mut self.hidden_b, &mut self.out_w, &mut self.out_b]
    }
}
