use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, output_backward, output_forward, zeros, OutputLayer};
use crate::dataset::{NameIndex, WordVectorTable};
use crate::error::{Error, Result};
use crate::featurize::tokenize;
use crate::kernels::{self, Padding, Parameter, Pooled, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CnnLayer {
    /// Stride-1 convolution. The first layer's kernel spans the whole
    /// word-vector axis; later kernels have height 1 and same padding.
    Conv {
        channels: usize,
        width: usize,
    },
    Pool {
        width: usize,
        stride: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub layers: Vec<CnnLayer>,
    /// Width of the fully connected layer before the output layer.
    pub dense: usize,
    pub dim: usize,
    /// Every description is truncated or right-padded with UNK to this many tokens.
    pub input_len: usize,
    pub conv_bias: bool,
    pub conv_relu: bool,
    pub dense_relu: bool,
    pub output: OutputLayer,
}

impl CnnConfig {
    /// The ten convolution/pooling layers, a 500-wide dense layer and the
    /// normalization layer.
    pub fn standard(dim: usize, input_len: usize) -> Self {
        use CnnLayer::*;
        let pool = Pool { width: 2, stride: 2 };
        CnnConfig {
            layers: vec![
                Conv { channels: 64, width: 1 },
                Conv { channels: 64, width: 3 },
                pool,
                Conv { channels: 128, width: 3 },
                Conv { channels: 128, width: 3 },
                pool,
                Conv { channels: 256, width: 3 },
                pool,
                Conv { channels: 512, width: 3 },
                pool,
            ],
            dense: 500,
            dim,
            input_len,
            conv_bias: true,
            conv_relu: true,
            dense_relu: true,
            output: OutputLayer::Normalized,
        }
    }

    /// Shortest input for which every pooling window lies inside the sequence.
    pub fn min_input_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                CnnLayer::Pool { stride, .. } => *stride,
                CnnLayer::Conv { .. } => 1,
            })
            .product()
    }

    /// Sequence length and channel count entering the dense layer.
    pub fn flattened_shape(&self) -> (usize, usize) {
        let mut len = self.input_len;
        let mut channels = 1;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                CnnLayer::Conv { channels: c, width } => {
                    if i == 0 {
                        len = len + 1 - width.min(len);
                    }
                    channels = c;
                }
                CnnLayer::Pool { width, stride } => len = (len.max(width) - width) / stride + 1,
            }
        }
        (channels, len)
    }

    pub fn validate(&self) -> Result<()> {
        match self.layers.first() {
            Some(CnnLayer::Conv { channels, width }) if *channels > 0 && *width > 0 => {}
            _ => return Err(Error::Config("CNN stack must start with a convolution".into())),
        }
        for layer in &self.layers {
            let ok = match *layer {
                CnnLayer::Conv { channels, width } => channels > 0 && width > 0,
                CnnLayer::Pool { width, stride } => width > 0 && stride > 0,
            };
            if !ok {
                return Err(Error::Config(format!("invalid CNN layer {layer:?}")));
            }
        }
        if self.dense == 0 || self.dim == 0 {
            return Err(Error::Config("CNN dense width and embedding dimension must be positive".into()));
        }
        if self.input_len < self.min_input_len() {
            return Err(Error::Config(format!(
                "CNN input length {} is shorter than the stack minimum {}",
                self.input_len,
                self.min_input_len()
            )));
        }
        Ok(())
    }
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig::standard(50, 16)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel: Parameter,
    pub bias: Option<Parameter>,
}

/// Word vectors → convolution/pooling stack → dense → output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnEncoder {
    pub config: CnnConfig,
    pub words: NameIndex,
    /// `[words + 1, d]`; the last row is the UNK vector.
    pub word_vectors: Parameter,
    pub convs: Vec<ConvParams>,
    pub dense_w: Parameter,
    pub dense_b: Parameter,
    pub out_w: Parameter,
    pub out_b: Parameter,
}

#[derive(Debug, Clone)]
enum LayerTrace {
    Conv { input: Tensor, pre: Tensor },
    Pool { input_shape: Vec<usize>, pooled: Pooled },
}

#[derive(Debug, Clone)]
pub struct CnnTrace {
    rows: Vec<usize>,
    layers: Vec<LayerTrace>,
    pooled_shape: Vec<usize>,
    flat: Tensor,
    dense_pre: Tensor,
    hidden: Tensor,
}

impl CnnEncoder {
    pub fn init<R: Rng>(config: &CnnConfig, table: &WordVectorTable, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = table.dim();
        let mut words = NameIndex::default();
        let mut data = Vec::with_capacity((table.len() + 1) * d);
        for (i, w) in table.words().iter().enumerate() {
            words.intern(w);
            data.extend_from_slice(table.row(i));
        }
        data.extend(std::iter::repeat_n(0.0, d));
        let word_vectors = Parameter::new(Tensor::matrix(table.len() + 1, d, data)?);

        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, layer) in config.layers.iter().enumerate() {
            if let CnnLayer::Conv { channels, width } = *layer {
                let kh = if i == 0 { d } else { 1 };
                let shape = [channels, c_in, kh, width];
                convs.push(ConvParams {
                    kernel: glorot(rng, &shape, c_in * kh * width, channels * kh * width),
                    bias: config.conv_bias.then(|| zeros(&[channels])),
                });
                c_in = channels;
            }
        }
        let (channels, len) = config.flattened_shape();
        let flat = channels * len;
        Ok(CnnEncoder {
            config: config.clone(),
            words,
            word_vectors,
            convs,
            dense_w: glorot(rng, &[config.dense, flat], flat, config.dense),
            dense_b: zeros(&[config.dense]),
            out_w: glorot(rng, &[config.dim, config.dense], config.dense, config.dim),
            out_b: zeros(&[config.dim]),
        })
    }

    pub fn word_dim(&self) -> usize {
        self.word_vectors.shape()[1]
    }

    pub fn unk_row(&self) -> usize {
        self.words.len()
    }

    /// Word-table rows for `text`, truncated or UNK-padded to the input length.
    pub fn token_rows(&self, text: &str) -> Vec<usize> {
        let unk = self.unk_row();
        let mut rows: Vec<usize> =
            tokenize(text).iter().take(self.config.input_len).map(|t| self.words.get(t).unwrap_or(unk)).collect();
        rows.resize(self.config.input_len, unk);
        rows
    }

    fn input_matrix(&self, rows: &[usize]) -> Result<Tensor> {
        let d = self.word_dim();
        let len = rows.len();
        let mut data = vec![0.0; d * len];
        for (col, &row) in rows.iter().enumerate() {
            if row > self.unk_row() {
                return Err(Error::Index { kind: "word", index: row, count: self.unk_row() + 1 });
            }
            for (r, v) in self.word_vectors.value.row(row).iter().enumerate() {
                data[r * len + col] = *v;
            }
        }
        Tensor::new(vec![1, d, len], data)
    }

    pub fn forward(&self, rows: &[usize]) -> Result<(Tensor, CnnTrace)> {
        if rows.len() != self.config.input_len {
            return Err(Error::dim("CNN token rows", &[self.config.input_len], &[rows.len()]));
        }
        let mut current = self.input_matrix(rows)?;
        let mut traces = Vec::with_capacity(self.config.layers.len());
        let mut conv_index = 0;
        for (i, layer) in self.config.layers.iter().enumerate() {
            match *layer {
                CnnLayer::Conv { .. } => {
                    let p = &self.convs[conv_index];
                    conv_index += 1;
                    let padding = if i == 0 { Padding::Valid } else { Padding::Same };
                    let pre = kernels::conv_seq_forward(&current, &p.kernel, p.bias.as_ref(), 1, padding)?;
                    let out = if self.config.conv_relu { kernels::relu(&pre) } else { pre.clone() };
                    traces.push(LayerTrace::Conv { input: current, pre });
                    current = out;
                }
                CnnLayer::Pool { width, stride } => {
                    let pooled = kernels::maxpool_seq(&current, width, stride)?;
                    let next = pooled.output.clone();
                    traces.push(LayerTrace::Pool { input_shape: current.shape().to_vec(), pooled });
                    current = next;
                }
            }
        }
        let pooled_shape = current.shape().to_vec();
        let flat_len = current.len();
        let flat = current.reshape(&[flat_len])?;
        let dense_pre = kernels::dense_forward(&flat, &self.dense_w, &self.dense_b)?;
        let hidden = if self.config.dense_relu { kernels::relu(&dense_pre) } else { dense_pre.clone() };
        let e = output_forward(self.config.output, &hidden, &self.out_w, &self.out_b)?;
        Ok((e, CnnTrace { rows: rows.to_vec(), layers: traces, pooled_shape, flat, dense_pre, hidden }))
    }

    pub fn backward(&mut self, trace: &CnnTrace, grad: &Tensor) -> Result<()> {
        let mut g = output_backward(self.config.output, &trace.hidden, grad, &mut self.out_w, &mut self.out_b)?;
        if self.config.dense_relu {
            g = kernels::relu_backward(&g, &trace.dense_pre)?;
        }
        let g_flat = kernels::dense_backward(&trace.flat, &g, &mut self.dense_w, &mut self.dense_b)?;
        let mut g = g_flat.reshape(&trace.pooled_shape)?;
        let mut conv_index = self.convs.len();
        for (i, layer) in trace.layers.iter().enumerate().rev() {
            match layer {
                LayerTrace::Conv { input, pre } => {
                    conv_index -= 1;
                    if self.config.conv_relu {
                        g = kernels::relu_backward(&g, pre)?;
                    }
                    let padding = if i == 0 { Padding::Valid } else { Padding::Same };
                    let p = &mut self.convs[conv_index];
                    g = kernels::conv_seq_backward(input, &g, &mut p.kernel, p.bias.as_mut(), 1, padding)?;
                }
                LayerTrace::Pool { input_shape, pooled } => {
                    g = kernels::maxpool_backward(input_shape, pooled, &g)?;
                }
            }
        }
        // g is dL/dA with shape [1, d, L]; scatter columns into word rows.
        let d = self.word_dim();
        let len = trace.rows.len();
        let gd = g.data();
        for (col, &row) in trace.rows.iter().enumerate() {
            let wg = self.word_vectors.grad.row_mut(row);
            for (r, slot) in wg.iter_mut().enumerate().take(d) {
                *slot += gd[r * len + col];
            }
        }
        Ok(())
    }

    pub fn named_parameters(&self) -> Vec<(String, &Parameter)> {
        let mut out = vec![("cnn.words".to_string(), &self.word_vectors)];
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("cnn.conv{i}.k"), &c.kernel));
            if let Some(b) = &c.bias {
                out.push((format!("cnn.conv{i}.b"), b));
            }
        }
        out.push(("cnn.dense.w".into(), &self.dense_w));
        out.push(("cnn.dense.b".into(), &self.dense_b));
        out.push(("cnn.out.w".into(), &self.out_w));
        out.push(("cnn.out.b".into(), &self.out_b));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.word_vectors];
        for c in &mut self.convs {
            out.push(&mut c.kernel);
            if let Some(b) = &mut c.bias {
                out.push(b);
            }
        }
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }
}
