//! Multi-head self-attention segment encoder.
//!
//! ```text
//! frames [T×d] ─▶ conv1d_k1 (d→D) ─▶ + positional table ─▶ L × block ─▶ mean over T ─▶ [D]
//!
//! block(h):  a  = concat_h softmax(q_h k_hᵀ / √(D/H)) v_h · W_o + b_o
//!            h' = norm(h + a)
//!            out = norm(h' + conv1d_k1(relu(conv1d_k1(h'))))
//! ```
//!
//! Residual connections and layer normalization can each be switched off
//! through [`EncoderConfig`].

mod forward;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tensor, TensorError};
use crate::checkpoint::{Checkpoint, CheckpointError, Entry};
use crate::scalar::Scalar;

pub use forward::{positional_encode, AttentionTrace};
pub use params::{Param, ParamStore};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("feature width {got} does not match encoder input width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("segment has {frames} frames but the positional table holds {max}; increase max_positions")]
    TooManyFrames { frames: usize, max: usize },
    #[error("segments in a batch must share a frame count: {first} vs {other}")]
    RaggedBatch { first: usize, other: usize },
    #[error("empty segment (no frames)")]
    EmptySegment,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// How frame positions are encoded before the first attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalMode {
    /// Random table drawn once and never updated.
    Fixed,
    /// Random initial table updated by the optimizer.
    Learned,
    /// No positional signal.
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_positions: usize,
    pub positional: PositionalMode,
    pub positional_seed: u64,
    pub residual: bool,
    pub layer_norm: bool,
    pub norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 60,
            hidden_dim: 256,
            num_layers: 2,
            num_heads: 8,
            max_positions: 256,
            positional: PositionalMode::Fixed,
            positional_seed: 0x5eed,
            residual: true,
            layer_norm: true,
            norm_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::Config(m));
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return bad("input_dim and hidden_dim must be positive".into());
        }
        if self.num_layers == 0 || self.num_heads == 0 {
            return bad("num_layers and num_heads must be at least 1".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return bad(format!("hidden_dim {} is not divisible by num_heads {}", self.hidden_dim, self.num_heads));
        }
        if self.max_positions == 0 {
            return bad("max_positions must be positive".into());
        }
        if !(self.norm_eps > 0.0) {
            return bad("norm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

/// Parameter indices of one attention block inside the [`ParamStore`].
#[derive(Debug, Clone)]
struct LayerLayout {
    query: Vec<usize>,
    key: Vec<usize>,
    value: Vec<usize>,
    out_w: usize,
    out_b: usize,
    norm1_gain: usize,
    norm1_bias: usize,
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
    norm2_gain: usize,
    norm2_bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    input_w: usize,
    input_b: usize,
    positional: usize,
    layers: Vec<LayerLayout>,
}

enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
    Positional,
}

/// Declares every parameter (name, shape, initializer) in canonical order.
fn declare(config: &EncoderConfig) -> (Layout, Vec<(String, Vec<usize>, Init, bool)>) {
    let (d, h, dh) = (config.input_dim, config.hidden_dim, config.head_dim());
    let mut decls = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init, trainable: bool| {
        decls.push((name, shape, init, trainable));
        decls.len() - 1
    };
    let input_w = add("input.weight".into(), vec![d, h], Init::Glorot { fan_in: d, fan_out: h }, true);
    let input_b = add("input.bias".into(), vec![h], Init::Zeros, true);
    let positional = add(
        "positional.table".into(),
        vec![config.max_positions, h],
        Init::Positional,
        config.positional == PositionalMode::Learned,
    );
    let mut layers = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        let mut proj = |kind: &str| -> Vec<usize> {
            (0..config.num_heads)
                .map(|head| {
                    add(p(&format!("heads.{head}.{kind}")), vec![h, dh], Init::Glorot { fan_in: h, fan_out: dh }, true)
                })
                .collect()
        };
        let (query, key, value) = (proj("query"), proj("key"), proj("value"));
        let square = || Init::Glorot { fan_in: h, fan_out: h };
        layers.push(LayerLayout {
            query,
            key,
            value,
            out_w: add(p("attn_out.weight"), vec![h, h], square(), true),
            out_b: add(p("attn_out.bias"), vec![h], Init::Zeros, true),
            norm1_gain: add(p("norm1.gain"), vec![h], Init::Ones, true),
            norm1_bias: add(p("norm1.bias"), vec![h], Init::Zeros, true),
            ff1_w: add(p("ff1.weight"), vec![h, h], square(), true),
            ff1_b: add(p("ff1.bias"), vec![h], Init::Zeros, true),
            ff2_w: add(p("ff2.weight"), vec![h, h], square(), true),
            ff2_b: add(p("ff2.bias"), vec![h], Init::Zeros, true),
            norm2_gain: add(p("norm2.gain"), vec![h], Init::Ones, true),
            norm2_bias: add(p("norm2.bias"), vec![h], Init::Zeros, true),
        });
    }
    (Layout { input_w, input_b, positional, layers }, decls)
}

/// All learnable state of the encoder plus its hyperparameters.
#[derive(Debug, Clone)]
pub struct EncoderModel<S: Scalar> {
    config: EncoderConfig,
    params: ParamStore<S>,
    layout: Layout,
}

impl<S: Scalar> EncoderModel<S> {
    /// Glorot-uniform weights from `seed`; the positional table is drawn from
    /// `N(0, 1) / √D` with the config's positional seed.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let (layout, decls) = declare(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pos_rng = ChaCha8Rng::seed_from_u64(config.positional_seed);
        let pos_scale = 1.0 / (config.hidden_dim as f64).sqrt();
        let mut params = ParamStore::default();
        for (name, shape, init, trainable) in decls {
            let n: usize = shape.iter().product();
            let values: Vec<S> = match init {
                Init::Glorot { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    (0..n).map(|_| S::lit(dist.sample(&mut rng))).collect()
                }
                Init::Zeros => vec![S::zero(); n],
                Init::Ones => vec![S::one(); n],
                Init::Positional => (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut pos_rng);
                        S::lit(z * pos_scale)
                    })
                    .collect(),
            };
            let tensor = Tensor::new(shape, values)?;
            params.push(Param { name, tensor, trainable });
        }
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// The positional lookup table, `max_positions x D`.
    pub fn positional_table(&self) -> &Tensor<S> {
        &self.params.get(self.layout.positional).tensor
    }

    pub fn positional_table_mut(&mut self) -> &mut Tensor<S> {
        &mut self.params.get_mut(self.layout.positional).tensor
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }

    pub fn param_entries(&self) -> Vec<Entry> {
        self.params
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                values: p.tensor.values().iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_json: serde_json::to_string(&self.config).expect("config serializes"),
            params: self.param_entries(),
            training: None,
        }
    }

    /// Rebuilds the model from a checkpoint whose config record is either an
    /// encoder config or an object holding one under `"encoder"`.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, EncoderError> {
        let malformed = |e: serde_json::Error| CheckpointError::Malformed(format!("config record: {e}"));
        let mut record: serde_json::Value = serde_json::from_str(&ck.config_json).map_err(malformed)?;
        if let Some(inner) = record.get_mut("encoder") {
            record = inner.take();
        }
        let config: EncoderConfig = serde_json::from_value(record).map_err(malformed)?;
        let mut model = Self::init(config, 0)?;
        model.load_entries(&ck.params)?;
        Ok(model)
    }

    /// Overwrites every parameter from name-matched entries.
    pub fn load_entries(&mut self, entries: &[Entry]) -> Result<(), EncoderError> {
        for p in self.params.iter_mut() {
            let e = entries
                .iter()
                .find(|e| e.name == p.name)
                .ok_or_else(|| CheckpointError::MissingEntry(p.name.clone()))?;
            if e.shape != p.tensor.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: p.name.clone(),
                    expected: p.tensor.shape().to_vec(),
                    found: e.shape.clone(),
                }
                .into());
            }
            for (dst, &src) in p.tensor.values_mut().iter_mut().zip(&e.values) {
                *dst = S::lit(src);
            }
        }
        Ok(())
    }
}
