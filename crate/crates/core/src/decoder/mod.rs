//! Transformer decoder conditioned on a single context vector.
//!
//! The stack is pre-LN: token embedding plus sinusoidal positions, then per
//! layer masked self-attention, cross-attention over the conditioning memory
//! and a GELU feed-forward block, each wrapped as `h + sublayer(LN(h))`. A
//! final layer norm feeds the vocabulary projection. The memory is the context
//! vector mapped through a learned `context_dim -> model_dim` projection and
//! used as a length-1 sequence, so one model shape serves both `d`- and
//! `2d`-wide strategies.
//!
//! All parameters live in one flat buffer described by a [`Layout`]; the
//! optimizer, checkpoints and the gradient check work on that buffer. The
//! model is generic over [`Real`] so the same code runs in `f32` for training
//! and in `f64` for numerical checks.

mod checkpoint;
mod generate;
mod layers;
mod model;
mod train;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategy::ContextStrategy;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use generate::{generate, DecodeMode, GenOutput};
pub use model::{nll_loss, nll_sum};
pub use train::{lr_at, total_updates, train, EpochLog, TrainConfig, TrainExample, TrainReport};

/// Floating-point element type of a model.
pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub context_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            layers: 3,
            model_dim: 256,
            heads: 4,
            ffn_dim: 1024,
            max_len: 256,
            vocab_size: 8192,
            context_dim: 768,
            dropout: 0.1,
            seed: 42,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return bad("decoder layers, model_dim, heads and ffn_dim must be positive".into());
        }
        if self.model_dim % self.heads != 0 {
            return bad(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            ));
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        if self.vocab_size <= crate::tokenizer::SPECIALS.len() {
            return bad(format!("vocab_size {} leaves no room past the specials", self.vocab_size));
        }
        if self.context_dim == 0 {
            return bad("context_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Checks that the context width fits `strategy` over `embed_dim`-wide embeddings.
    pub fn check_strategy(&self, strategy: ContextStrategy, embed_dim: usize) -> Result<()> {
        let want = strategy.out_dim(embed_dim);
        if self.context_dim != want {
            return Err(Error::Config(format!(
                "{strategy} produces {want}-wide contexts but the decoder expects context_dim {}",
                self.context_dim
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    fn range(self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnSlots {
    pub wq: Slot,
    pub bq: Slot,
    pub wk: Slot,
    pub bk: Slot,
    pub wv: Slot,
    pub bv: Slot,
    pub wo: Slot,
    pub bo: Slot,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerSlots {
    pub ln1_g: Slot,
    pub ln1_b: Slot,
    pub self_attn: AttnSlots,
    pub ln2_g: Slot,
    pub ln2_b: Slot,
    pub cross_attn: AttnSlots,
    pub ln3_g: Slot,
    pub ln3_b: Slot,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
}

/// Where every named tensor sits in the flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Layout {
    pub(crate) tok_emb: Slot,
    pub(crate) ctx_w: Slot,
    pub(crate) ctx_b: Slot,
    pub(crate) layers: Vec<LayerSlots>,
    pub(crate) lnf_g: Slot,
    pub(crate) lnf_b: Slot,
    pub(crate) out_w: Slot,
    pub(crate) out_b: Slot,
    entries: Vec<ParamEntry>,
    total: usize,
}

struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl LayoutBuilder {
    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> Slot {
        let slot = Slot {
            offset: self.total,
            rows,
            cols,
        };
        self.entries.push(ParamEntry {
            name,
            shape: vec![rows, cols],
            offset: self.total,
        });
        self.total += rows * cols;
        slot
    }

    fn vector(&mut self, name: String, len: usize) -> Slot {
        let slot = Slot {
            offset: self.total,
            rows: 1,
            cols: len,
        };
        self.entries.push(ParamEntry {
            name,
            shape: vec![len],
            offset: self.total,
        });
        self.total += len;
        slot
    }

    fn attention(&mut self, prefix: &str, d: usize) -> AttnSlots {
        AttnSlots {
            wq: self.matrix(format!("{prefix}.wq"), d, d),
            bq: self.vector(format!("{prefix}.bq"), d),
            wk: self.matrix(format!("{prefix}.wk"), d, d),
            bk: self.vector(format!("{prefix}.bk"), d),
            wv: self.matrix(format!("{prefix}.wv"), d, d),
            bv: self.vector(format!("{prefix}.bv"), d),
            wo: self.matrix(format!("{prefix}.wo"), d, d),
            bo: self.vector(format!("{prefix}.bo"), d),
        }
    }
}

impl Layout {
    pub fn new(config: &DecoderConfig) -> Self {
        let d = config.model_dim;
        let mut b = LayoutBuilder {
            entries: Vec::new(),
            total: 0,
        };
        let tok_emb = b.matrix("tok_emb".into(), config.vocab_size, d);
        let ctx_w = b.matrix("ctx_proj.w".into(), config.context_dim, d);
        let ctx_b = b.vector("ctx_proj.b".into(), d);
        let layers = (0..config.layers)
            .map(|l| LayerSlots {
                ln1_g: b.vector(format!("layer{l}.ln1.g"), d),
                ln1_b: b.vector(format!("layer{l}.ln1.b"), d),
                self_attn: b.attention(&format!("layer{l}.self"), d),
                ln2_g: b.vector(format!("layer{l}.ln2.g"), d),
                ln2_b: b.vector(format!("layer{l}.ln2.b"), d),
                cross_attn: b.attention(&format!("layer{l}.cross"), d),
                ln3_g: b.vector(format!("layer{l}.ln3.g"), d),
                ln3_b: b.vector(format!("layer{l}.ln3.b"), d),
                w1: b.matrix(format!("layer{l}.ffn.w1"), d, config.ffn_dim),
                b1: b.vector(format!("layer{l}.ffn.b1"), config.ffn_dim),
                w2: b.matrix(format!("layer{l}.ffn.w2"), config.ffn_dim, d),
                b2: b.vector(format!("layer{l}.ffn.b2"), d),
            })
            .collect();
        let lnf_g = b.vector("ln_f.g".into(), d);
        let lnf_b = b.vector("ln_f.b".into(), d);
        let out_w = b.matrix("out.w".into(), d, config.vocab_size);
        let out_b = b.vector("out.b".into(), config.vocab_size);
        Layout {
            tok_emb,
            ctx_w,
            ctx_b,
            layers,
            lnf_g,
            lnf_b,
            out_w,
            out_b,
            entries: b.entries,
            total: b.total,
        }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

pub(crate) fn view2<F>(buf: &[F], s: Slot) -> ArrayView2<'_, F> {
    ArrayView2::from_shape((s.rows, s.cols), &buf[s.range()]).expect("slot shape")
}

pub(crate) fn view1<F>(buf: &[F], s: Slot) -> ArrayView1<'_, F> {
    ArrayView1::from(&buf[s.range()])
}

pub(crate) fn view2_mut<F>(buf: &mut [F], s: Slot) -> ArrayViewMut2<'_, F> {
    ArrayViewMut2::from_shape((s.rows, s.cols), &mut buf[s.range()]).expect("slot shape")
}

pub(crate) fn view1_mut<F>(buf: &mut [F], s: Slot) -> ArrayViewMut1<'_, F> {
    ArrayViewMut1::from(&mut buf[s.range()])
}

pub fn sinusoidal_positions<F: Real>(max_len: usize, d: usize) -> Array2<F> {
    Array2::from_shape_fn((max_len, d), |(pos, i)| {
        let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 / rate;
        F::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

#[derive(Debug, Clone)]
pub struct DecoderModel<F: Real = f32> {
    config: DecoderConfig,
    layout: Layout,
    positions: Array2<F>,
    params: Vec<F>,
}

impl<F: Real> DecoderModel<F> {
    /// Fresh model: weight matrices ~ N(0, 0.02), layer-norm gains 1, biases 0.
    pub fn init(config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![F::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for entry in &layout.entries {
            let slice = &mut params[entry.offset..entry.offset + entry.len()];
            if entry.shape.len() == 2 {
                for p in slice.iter_mut() {
                    *p = F::lit(normal.sample(&mut rng));
                }
            } else if entry.name.ends_with(".g") {
                slice.fill(F::one());
            }
        }
        Ok(Self::assemble(config, layout, params))
    }

    pub fn from_params(config: DecoderConfig, params: Vec<F>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::DimMismatch {
                expected: layout.total,
                got: params.len(),
            });
        }
        Ok(Self::assemble(config, layout, params))
    }

    fn assemble(config: DecoderConfig, layout: Layout, params: Vec<F>) -> Self {
        let positions = sinusoidal_positions(config.max_len, config.model_dim);
        DecoderModel {
            config,
            layout,
            positions,
            params,
        }
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Same weights in another float type.
    pub fn cast<G: Real>(&self) -> DecoderModel<G> {
        let params = self
            .params
            .iter()
            .map(|&p| G::lit(p.to_f64().expect("finite parameter")))
            .collect();
        DecoderModel::assemble(self.config.clone(), self.layout.clone(), params)
    }

    pub(crate) fn check_context(&self, context: &[F]) -> Result<()> {
        if context.len() != self.config.context_dim {
            return Err(Error::DimMismatch {
                expected: self.config.context_dim,
                got: context.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_ids(&self, ids: &[u32]) -> Result<()> {
        for &id in ids {
            if id as usize >= self.config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }
}
