//! The arithmetic-attention transformer layer.
//!
//! Each layer fuses a standard multi-head attention operator (additive)
//! with a multiplicative operator that runs the same attention in log
//! space over relu-clamped, one-shifted inputs. A fully connected map
//! along the token axis mixes the two operator outputs, followed by the
//! usual post-norm residual feed-forward block.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{ParamBinding, Tape, ValueId};
use rand_chacha::ChaCha20Rng;

/// Layer-norm regularizer used throughout the model.
pub const LN_EPS: f64 = 1e-5;

/// Static geometry of one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerShape {
    /// Embedding width d.
    pub d: usize,
    /// Head count M; d must divide evenly.
    pub heads: usize,
    /// Token count this layer operates on (indicators + CLS).
    pub tokens: usize,
}

impl LayerShape {
    pub fn new(d: usize, heads: usize, tokens: usize) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "embedding size {d} is not divisible by {heads} heads"
            )));
        }
        Ok(LayerShape { d, heads, tokens })
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

/// Register one attention layer's parameters under `prefix`:
/// `head{m}.wq|wk|wv`, `wo`, `fc.w`, `fc.b`, `ffn.*`, `ln{1,2}.*`.
pub fn register_attention_layer(
    store: &mut ParamStore,
    rng: &mut ChaCha20Rng,
    prefix: &str,
    shape: LayerShape,
) -> Result<()> {
    let (d, t) = (shape.d, shape.tokens);
    let dh = shape.head_dim();
    for m in 0..shape.heads {
        store.register_uniform(&format!("{prefix}.head{m}.wq"), vec![d, dh], d, rng)?;
        store.register_uniform(&format!("{prefix}.head{m}.wk"), vec![d, dh], d, rng)?;
        store.register_uniform(&format!("{prefix}.head{m}.wv"), vec![d, dh], d, rng)?;
    }
    store.register_uniform(&format!("{prefix}.wo"), vec![d, d], d, rng)?;
    store.register_uniform(&format!("{prefix}.fc.w"), vec![t, 2 * t], 2 * t, rng)?;
    store.register_zeros(&format!("{prefix}.fc.b"), vec![t])?;
    let d_ff = 2 * d;
    store.register_uniform(&format!("{prefix}.ffn.w0"), vec![d, d_ff], d, rng)?;
    store.register_zeros(&format!("{prefix}.ffn.b0"), vec![d_ff])?;
    store.register_uniform(&format!("{prefix}.ffn.w1"), vec![d_ff, d], d_ff, rng)?;
    store.register_zeros(&format!("{prefix}.ffn.b1"), vec![d])?;
    store.register_ones(&format!("{prefix}.ln1.g"), vec![d])?;
    store.register_zeros(&format!("{prefix}.ln1.b"), vec![d])?;
    store.register_ones(&format!("{prefix}.ln2.g"), vec![d])?;
    store.register_zeros(&format!("{prefix}.ln2.b"), vec![d])?;
    Ok(())
}

/// Tape handles for one attention layer's parameters.
pub struct LayerNodes {
    pub shape: LayerShape,
    pub wq: Vec<ValueId>,
    pub wk: Vec<ValueId>,
    pub wv: Vec<ValueId>,
    pub wo: ValueId,
    pub fc_w: ValueId,
    pub fc_b: ValueId,
    pub ffn_w0: ValueId,
    pub ffn_b0: ValueId,
    pub ffn_w1: ValueId,
    pub ffn_b1: ValueId,
    pub ln1_g: ValueId,
    pub ln1_b: ValueId,
    pub ln2_g: ValueId,
    pub ln2_b: ValueId,
}

pub fn resolve_layer(binding: &ParamBinding, prefix: &str, shape: LayerShape) -> Result<LayerNodes> {
    let mut wq = Vec::new();
    let mut wk = Vec::new();
    let mut wv = Vec::new();
    for m in 0..shape.heads {
        wq.push(binding.id(&format!("{prefix}.head{m}.wq"))?);
        wk.push(binding.id(&format!("{prefix}.head{m}.wk"))?);
        wv.push(binding.id(&format!("{prefix}.head{m}.wv"))?);
    }
    Ok(LayerNodes {
        shape,
        wq,
        wk,
        wv,
        wo: binding.id(&format!("{prefix}.wo"))?,
        fc_w: binding.id(&format!("{prefix}.fc.w"))?,
        fc_b: binding.id(&format!("{prefix}.fc.b"))?,
        ffn_w0: binding.id(&format!("{prefix}.ffn.w0"))?,
        ffn_b0: binding.id(&format!("{prefix}.ffn.b0"))?,
        ffn_w1: binding.id(&format!("{prefix}.ffn.w1"))?,
        ffn_b1: binding.id(&format!("{prefix}.ffn.b1"))?,
        ln1_g: binding.id(&format!("{prefix}.ln1.g"))?,
        ln1_b: binding.id(&format!("{prefix}.ln1.b"))?,
        ln2_g: binding.id(&format!("{prefix}.ln2.g"))?,
        ln2_b: binding.id(&format!("{prefix}.ln2.b"))?,
    })
}

/// Standard multi-head self-attention: concatenated softmax(QKᵀ/√d′)V
/// heads projected through W^O.
pub fn multi_head(tape: &mut Tape, h: ValueId, layer: &LayerNodes) -> Result<ValueId> {
    let scale = 1.0 / (layer.shape.head_dim() as f64).sqrt();
    let mut heads = Vec::with_capacity(layer.shape.heads);
    for m in 0..layer.shape.heads {
        let q = tape.matmul(h, layer.wq[m])?;
        let k = tape.matmul(h, layer.wk[m])?;
        let v = tape.matmul(h, layer.wv[m])?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale);
        let probs = tape.softmax(scores);
        heads.push(tape.matmul(probs, v)?);
    }
    let cat = tape.concat_cols(&heads)?;
    tape.matmul(cat, layer.wo)
}

/// The additive operator is multi-head attention itself.
pub fn att_additive(tape: &mut Tape, h: ValueId, layer: &LayerNodes) -> Result<ValueId> {
    multi_head(tape, h, layer)
}

/// Multiplicative operator: exp(MultiHead(log(relu(H) + 1))).
///
/// The all-one shift puts every log argument in [1, ∞), so the log is
/// always defined and the output strictly positive.
pub fn att_multiplicative(tape: &mut Tape, h: ValueId, layer: &LayerNodes) -> Result<ValueId> {
    let clamped = tape.relu(h);
    let shifted = tape.add_scalar(clamped, 1.0);
    let logged = tape.log(shifted)?;
    let attended = multi_head(tape, logged, layer)?;
    tape.exp(attended)
}

/// Token-axis fusion of the two operators: output row k is the learned
/// combination of all 2(K+1) concatenated operator rows, the same
/// combination for every feature dimension, plus one bias per token row.
pub fn arithmetic_attention(tape: &mut Tape, h: ValueId, layer: &LayerNodes) -> Result<ValueId> {
    let t = layer.shape.tokens;
    let fc_shape = tape.value(layer.fc_w).shape().to_vec();
    if fc_shape != [t, 2 * t] {
        return Err(Error::Config(format!(
            "fusion matrix shape {fc_shape:?} does not match tokens {t} (expected [{t}, {}])",
            2 * t
        )));
    }
    let additive = att_additive(tape, h, layer)?;
    let multiplicative = att_multiplicative(tape, h, layer)?;
    let stacked = tape.concat_rows(&[additive, multiplicative])?;
    let mixed = tape.matmul(layer.fc_w, stacked)?;
    tape.add_col_bias(mixed, layer.fc_b)
}

fn feed_forward(tape: &mut Tape, z: ValueId, layer: &LayerNodes) -> Result<ValueId> {
    let a = tape.matmul(z, layer.ffn_w0)?;
    let a = tape.add_row_bias(a, layer.ffn_b0)?;
    let a = tape.relu(a);
    let b = tape.matmul(a, layer.ffn_w1)?;
    tape.add_row_bias(b, layer.ffn_b1)
}

/// One transformer layer: post-norm residual attention then post-norm
/// residual feed-forward.
pub fn transformer_layer(tape: &mut Tape, h: ValueId, layer: &LayerNodes) -> Result<ValueId> {
    let att = arithmetic_attention(tape, h, layer)?;
    let res1 = tape.add(h, att)?;
    let z = tape.layer_norm(res1, layer.ln1_g, layer.ln1_b, LN_EPS)?;
    let ff = feed_forward(tape, z, layer)?;
    let res2 = tape.add(z, ff)?;
    tape.layer_norm(res2, layer.ln2_g, layer.ln2_b, LN_EPS)
}

/// Compose L transformer layers; the empty stack is the identity.
pub fn run_stack(tape: &mut Tape, h0: ValueId, layers: &[LayerNodes]) -> Result<ValueId> {
    let mut h = h0;
    for layer in layers {
        h = transformer_layer(tape, h, layer)?;
    }
    Ok(h)
}
