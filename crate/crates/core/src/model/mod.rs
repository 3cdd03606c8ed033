//! Encoder-to-decoder network over a complete label graph.
//!
//! The encoder maps a sparse feature row to a latent vector `z`. The decoder
//! keeps one state vector per label, initialized from the label embeddings,
//! and runs `T` blocks. Each block (optionally) injects `z` into every node,
//! then applies a multi-head self-attention sublayer and a feedforward
//! sublayer, each followed by layer normalization. A per-label readout row and
//! a sigmoid turn the final node states into probabilities.

mod checkpoint;
mod decoder;
mod encoder;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION,
};
pub use decoder::{
    attention_weights, batch_forward_backward, batch_loss, decoder_forward, forward_backward, layer_norm, message_pass,
    predict, predict_one, softmax_rows, BatchGradients, DecoderOutput, LAYER_NORM_EPS,
};
pub use encoder::encode;

use crate::{Error, Result};

/// Where the latent vector enters the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LatentInjection {
    /// `z` is added (through its own map) at the start of every block.
    #[default]
    EveryBlock,
    /// Only block 0 receives `z`.
    FirstBlock,
}

impl std::str::FromStr for LatentInjection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "every-block" => Ok(LatentInjection::EveryBlock),
            "first-block" => Ok(LatentInjection::FirstBlock),
            _ => Err(Error::Config(format!(
                "unknown latent injection {s:?} (expected every-block or first-block)"
            ))),
        }
    }
}

impl std::fmt::Display for LatentInjection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LatentInjection::EveryBlock => "every-block",
            LatentInjection::FirstBlock => "first-block",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// S, width of the sparse input.
    pub num_features: usize,
    /// L, number of label nodes.
    pub num_labels: usize,
    /// d, node width; equal to the label-embedding dimension.
    pub label_dim: usize,
    /// T, number of attention + feedforward blocks.
    pub num_layers: usize,
    /// H, attention heads; must divide `label_dim`.
    pub num_heads: usize,
    pub encoder_hidden: usize,
    pub feedforward_hidden: usize,
    pub latent_injection: LatentInjection,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_features", self.num_features),
            ("num_labels", self.num_labels),
            ("label_dim", self.label_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("encoder_hidden", self.encoder_hidden),
            ("feedforward_hidden", self.feedforward_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.label_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "label_dim {} is not divisible by num_heads {}",
                self.label_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.label_dim / self.num_heads
    }

    fn injects_latent(&self, block: usize) -> bool {
        match self.latent_injection {
            LatentInjection::EveryBlock => true,
            LatentInjection::FirstBlock => block == 0,
        }
    }
}

/// Two-layer bag-of-features encoder: `z = relu(x·W1 + b1)·W2 + b2`.
///
/// `w1` is stored feature-major (S × hidden) so a sparse row touches only
/// the rows of its active features.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNormParams {
    fn new(d: usize) -> Self {
        LayerNormParams {
            gain: Array1::ones(d),
            bias: Array1::zeros(d),
        }
    }
}

/// Latent update: `v ← LayerNorm(v + z·Wᶻ)` for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentParams {
    pub value: Array2<f64>,
    pub norm: LayerNormParams,
}

/// One decoder block. Matrices act on row vectors (`x · W`).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub latent: Option<LatentParams>,
    /// d×d; columns `h·d_h .. (h+1)·d_h` form head `h`.
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    /// d×d mixing of the concatenated heads.
    pub attn_out: Array2<f64>,
    pub attn_norm: LayerNormParams,
    pub ff_w1: Array2<f64>,
    pub ff_b1: Array1<f64>,
    pub ff_w2: Array2<f64>,
    pub ff_b2: Array1<f64>,
    pub ff_norm: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub blocks: Vec<BlockParams>,
    /// L×d, one readout row per label.
    pub readout: Array2<f64>,
}

/// Borrowed view of one named parameter array.
pub struct NamedArray<'a> {
    pub name: String,
    pub data: ArrayViewD<'a, f64>,
    /// Whether weight decay applies (false for normalization gains/biases).
    pub decays: bool,
}

pub struct NamedArrayMut<'a> {
    pub name: String,
    pub data: ArrayViewMutD<'a, f64>,
    pub decays: bool,
}

macro_rules! collect_arrays {
    ($params:expr, $view:ident, $iter:ident, $opt:ident, $item:ident) => {{
        let p = $params;
        let mut out = Vec::new();
        let mut push = |name: String, data, decays| out.push($item { name, data, decays });
        push("encoder.w1".into(), p.encoder.w1.$view().into_dyn(), true);
        push("encoder.b1".into(), p.encoder.b1.$view().into_dyn(), true);
        push("encoder.w2".into(), p.encoder.w2.$view().into_dyn(), true);
        push("encoder.b2".into(), p.encoder.b2.$view().into_dyn(), true);
        for (t, b) in p.blocks.$iter().enumerate() {
            if let Some(z) = b.latent.$opt() {
                push(format!("block{t}.latent.value"), z.value.$view().into_dyn(), true);
                push(
                    format!("block{t}.latent.norm.gain"),
                    z.norm.gain.$view().into_dyn(),
                    false,
                );
                push(
                    format!("block{t}.latent.norm.bias"),
                    z.norm.bias.$view().into_dyn(),
                    false,
                );
            }
            push(format!("block{t}.attn.query"), b.query.$view().into_dyn(), true);
            push(format!("block{t}.attn.key"), b.key.$view().into_dyn(), true);
            push(format!("block{t}.attn.value"), b.value.$view().into_dyn(), true);
            push(format!("block{t}.attn.out"), b.attn_out.$view().into_dyn(), true);
            push(
                format!("block{t}.attn.norm.gain"),
                b.attn_norm.gain.$view().into_dyn(),
                false,
            );
            push(
                format!("block{t}.attn.norm.bias"),
                b.attn_norm.bias.$view().into_dyn(),
                false,
            );
            push(format!("block{t}.ff.w1"), b.ff_w1.$view().into_dyn(), true);
            push(format!("block{t}.ff.b1"), b.ff_b1.$view().into_dyn(), true);
            push(format!("block{t}.ff.w2"), b.ff_w2.$view().into_dyn(), true);
            push(format!("block{t}.ff.b2"), b.ff_b2.$view().into_dyn(), true);
            push(
                format!("block{t}.ff.norm.gain"),
                b.ff_norm.gain.$view().into_dyn(),
                false,
            );
            push(
                format!("block{t}.ff.norm.bias"),
                b.ff_norm.bias.$view().into_dyn(),
                false,
            );
        }
        push("readout".into(), p.readout.$view().into_dyn(), true);
        out
    }};
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let normal = Normal::new(0.0, std).unwrap();
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl ModelParams {
    /// Seeded Xavier-normal initialization; biases zero, norm gains one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, l, d, h, f) = (
            config.num_features,
            config.num_labels,
            config.label_dim,
            config.encoder_hidden,
            config.feedforward_hidden,
        );
        let encoder = EncoderParams {
            w1: xavier(&mut rng, s, h, s, h),
            b1: Array1::zeros(h),
            w2: xavier(&mut rng, h, d, h, d),
            b2: Array1::zeros(d),
        };
        let blocks = (0..config.num_layers)
            .map(|t| {
                let latent = config.injects_latent(t).then(|| LatentParams {
                    value: xavier(&mut rng, d, d, d, d),
                    norm: LayerNormParams::new(d),
                });
                BlockParams {
                    latent,
                    query: xavier(&mut rng, d, d, d, d),
                    key: xavier(&mut rng, d, d, d, d),
                    value: xavier(&mut rng, d, d, d, d),
                    attn_out: xavier(&mut rng, d, d, d, d),
                    attn_norm: LayerNormParams::new(d),
                    ff_w1: xavier(&mut rng, d, f, d, f),
                    ff_b1: Array1::zeros(f),
                    ff_w2: xavier(&mut rng, f, d, f, d),
                    ff_b2: Array1::zeros(d),
                    ff_norm: LayerNormParams::new(d),
                }
            })
            .collect();
        let readout = xavier(&mut rng, l, d, d, 1);
        Ok(ModelParams {
            encoder,
            blocks,
            readout,
        })
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for mut a in z.arrays_mut() {
            a.data.fill(0.0);
        }
        z
    }

    /// Every parameter array with a stable dotted name, in a fixed order.
    pub fn arrays(&self) -> Vec<NamedArray<'_>> {
        collect_arrays!(self, view, iter, as_ref, NamedArray)
    }

    pub fn arrays_mut(&mut self) -> Vec<NamedArrayMut<'_>> {
        collect_arrays!(self, view_mut, iter_mut, as_mut, NamedArrayMut)
    }

    /// Checks shapes against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = ModelParams::init(config, 0)?;
        let a = self.arrays();
        let b = expected.arrays();
        if a.len() != b.len() {
            return Err(Error::Data(format!(
                "parameter set has {} arrays, configuration implies {}",
                a.len(),
                b.len()
            )));
        }
        for (x, y) in a.iter().zip(&b) {
            if x.name != y.name || x.data.shape() != y.data.shape() {
                return Err(Error::Data(format!(
                    "parameter {} has shape {:?}, expected {} {:?}",
                    x.name,
                    x.data.shape(),
                    y.name,
                    y.data.shape()
                )));
            }
        }
        Ok(())
    }

    /// Applies a label permutation to the readout rows: row `i` becomes row `perm[i]`.
    pub fn permute_labels(&self, perm: &[usize]) -> Self {
        let mut p = self.clone();
        p.readout = self.readout.select(ndarray::Axis(0), perm);
        p
    }
}

/// Gradients of the objective with respect to every trainable array.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: ModelParams,
    /// With respect to `LabelEmbeddings::current`.
    pub label_embeddings: Array2<f64>,
}

pub const LABEL_EMBEDDINGS: &str = "label_embeddings";

impl Gradients {
    pub fn zeros(params: &ModelParams, num_labels: usize, dim: usize) -> Self {
        Gradients {
            params: params.zeros_like(),
            label_embeddings: Array2::zeros((num_labels, dim)),
        }
    }

    /// Named gradient slices: model arrays first, then the label embeddings.
    pub fn arrays(&self) -> Vec<NamedArray<'_>> {
        let mut v = self.params.arrays();
        v.push(NamedArray {
            name: LABEL_EMBEDDINGS.into(),
            data: self.label_embeddings.view().into_dyn(),
            decays: false,
        });
        v
    }

    pub fn arrays_mut(&mut self) -> Vec<NamedArrayMut<'_>> {
        let mut v = self.params.arrays_mut();
        v.push(NamedArrayMut {
            name: LABEL_EMBEDDINGS.into(),
            data: self.label_embeddings.view_mut().into_dyn(),
            decays: false,
        });
        v
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (mut a, b) in self.arrays_mut().into_iter().zip(other.arrays()) {
            a.data += &b.data;
        }
    }

    /// First array holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.arrays()
            .into_iter()
            .find(|a| a.data.iter().any(|x| !x.is_finite()))
            .map(|a| a.name)
    }
}

/// Model parameters and label embeddings viewed as one trainable set, in the
/// same order as [`Gradients::arrays`].
pub fn trainable_arrays_mut<'a>(
    params: &'a mut ModelParams,
    embeddings: &'a mut crate::embeddings::LabelEmbeddings,
) -> Vec<NamedArrayMut<'a>> {
    let mut v = params.arrays_mut();
    v.push(NamedArrayMut {
        name: LABEL_EMBEDDINGS.into(),
        data: embeddings.current.view_mut().into_dyn(),
        decays: false,
    });
    v
}
