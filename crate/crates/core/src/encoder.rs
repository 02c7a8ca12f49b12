//! Indicator feature encoding: per-indicator row encodings fused with
//! sample-independent column encodings, plus the shared CLS embedding.

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{ParamBinding, Tape, ValueId};
use crate::tensor::Tensor;
use rand_chacha::ChaCha20Rng;

/// Parameter names: `row.w.{j}` / `row.b.{j}` per indicator, the column
/// MLPs under `col.mlp1.*` / `col.mlp2.*`, and the shared `cls` vector.
pub fn register_encoder_params(
    store: &mut ParamStore,
    rng: &mut ChaCha20Rng,
    k: usize,
    d: usize,
    n_train: usize,
    with_column_encoder: bool,
) -> Result<()> {
    store.register_uniform("cls", vec![d], d, rng)?;
    for j in 0..k {
        // Each row encoder maps one scalar indicator to d dims: fan_in 1.
        store.register_uniform(&format!("row.w.{j}"), vec![d], 1, rng)?;
        store.register_zeros(&format!("row.b.{j}"), vec![d])?;
    }
    if with_column_encoder {
        // Hidden width = d for both column MLPs.
        for mlp in ["col.mlp1", "col.mlp2"] {
            let out = if mlp == "col.mlp1" { d } else { 1 };
            store.register_uniform(&format!("{mlp}.w0"), vec![n_train, d], n_train, rng)?;
            store.register_zeros(&format!("{mlp}.b0"), vec![d])?;
            store.register_uniform(&format!("{mlp}.w1"), vec![d, out], d, rng)?;
            store.register_zeros(&format!("{mlp}.b1"), vec![out])?;
        }
    }
    Ok(())
}

/// Row-encoder parameters stacked into K×d matrices on the tape.
pub struct RowEncoderNodes {
    pub weights: ValueId,
    pub biases: ValueId,
}

pub fn stack_row_params(tape: &mut Tape, binding: &ParamBinding, k: usize) -> Result<RowEncoderNodes> {
    let w_ids: Vec<ValueId> = (0..k)
        .map(|j| binding.id(&format!("row.w.{j}")))
        .collect::<Result<_>>()?;
    let b_ids: Vec<ValueId> = (0..k)
        .map(|j| binding.id(&format!("row.b.{j}")))
        .collect::<Result<_>>()?;
    Ok(RowEncoderNodes {
        weights: tape.stack_rows(&w_ids)?,
        biases: tape.stack_rows(&b_ids)?,
    })
}

/// Encode one scaled sample: row j of the result is wⱼ·x[j] + bⱼ.
pub fn encode_row(
    tape: &mut Tape,
    x_scaled: &[f64],
    nodes: &RowEncoderNodes,
    d: usize,
) -> Result<ValueId> {
    let k = x_scaled.len();
    let x_col = tape.constant(Tensor::matrix(k, 1, x_scaled.to_vec())?);
    let ones = tape.ones(1, d);
    let x_mat = tape.matmul(x_col, ones)?;
    let scaled = tape.mul(x_mat, nodes.weights)?;
    tape.add(scaled, nodes.biases)
}

/// Encode every column: row j is MLP₁(vⱼ) scaled by the scalar MLP₂(vⱼ).
///
/// `frozen_columns` is the K×N matrix of scaled training columns captured
/// at model construction; the output depends only on it and the current
/// MLP parameters, never on the sample being encoded.
pub fn encode_columns(
    tape: &mut Tape,
    binding: &ParamBinding,
    frozen_columns: ValueId,
    d: usize,
) -> Result<ValueId> {
    let two_layer = |tape: &mut Tape, prefix: &str| -> Result<ValueId> {
        let w0 = binding.id(&format!("{prefix}.w0"))?;
        let b0 = binding.id(&format!("{prefix}.b0"))?;
        let w1 = binding.id(&format!("{prefix}.w1"))?;
        let b1 = binding.id(&format!("{prefix}.b1"))?;
        let h = tape.matmul(frozen_columns, w0)?;
        let h = tape.add_row_bias(h, b0)?;
        let h = tape.relu(h);
        let out = tape.matmul(h, w1)?;
        tape.add_row_bias(out, b1)
    };
    let vectors = two_layer(tape, "col.mlp1")?; // [K, d]
    let scales = two_layer(tape, "col.mlp2")?; // [K, 1]
    let ones = tape.ones(1, d);
    let scale_mat = tape.matmul(scales, ones)?;
    tape.mul(vectors, scale_mat)
}

/// Element-wise fusion of row and column embeddings with the CLS row
/// prepended: output row 0 is the CLS embedding, row j (1-based) is
/// rowⱼ ⊙ colⱼ.
pub fn fuse(
    tape: &mut Tape,
    row_embeddings: ValueId,
    col_embeddings: ValueId,
    cls_row: ValueId,
) -> Result<ValueId> {
    let fused = tape.mul(row_embeddings, col_embeddings)?;
    tape.concat_rows(&[cls_row, fused])
}
