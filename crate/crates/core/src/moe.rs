//! Mixture of experts over the four indicator types.
//!
//! The encoded token matrix is split into one block per type, each block
//! keeping the shared CLS row at position 0. Four experts (one arithmetic
//! attention layer plus a scalar head each) predict independently and a
//! softmax gate over the CLS embedding combines them. Expert order is
//! fixed to (PJ, DJ, JE, JC) everywhere: gate outputs, reports, and
//! checkpoints.

use crate::attention::{
    register_attention_layer, resolve_layer, transformer_layer, LayerNodes, LayerShape, LN_EPS,
};
use crate::dataset::{IndicatorType, SchemaColumn};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{ParamBinding, Tape, ValueId};
use rand_chacha::ChaCha20Rng;

/// Indicator column indices per type, in canonical column order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypePartition {
    indices: [Vec<usize>; 4],
    k: usize,
}

impl TypePartition {
    pub fn from_schema(schema: &[SchemaColumn]) -> Result<TypePartition> {
        let mut indices: [Vec<usize>; 4] = Default::default();
        for (j, col) in schema.iter().enumerate() {
            indices[col.itype.index()].push(j);
        }
        Self::new(indices, schema.len())
    }

    /// Validate that the four lists partition {0..K-1}.
    pub fn new(indices: [Vec<usize>; 4], k: usize) -> Result<TypePartition> {
        let mut seen = vec![false; k];
        for (t, list) in indices.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Partition(format!(
                    "type {} has no indicators",
                    IndicatorType::from_index(t)
                )));
            }
            for &j in list {
                if j >= k {
                    return Err(Error::Partition(format!(
                        "column index {j} out of range for K={k}"
                    )));
                }
                if seen[j] {
                    return Err(Error::Partition(format!("column index {j} listed twice")));
                }
                seen[j] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Partition(format!("column index {missing} unassigned")));
        }
        Ok(TypePartition { indices, k })
    }

    pub fn indices(&self, t: usize) -> &[usize] {
        &self.indices[t]
    }

    pub fn count(&self, t: usize) -> usize {
        self.indices[t].len()
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Parameter names under `expert.{pj,dj,je,jc}.*` plus `gate.w`/`gate.b`.
pub fn register_moe_params(
    store: &mut ParamStore,
    rng: &mut ChaCha20Rng,
    partition: &TypePartition,
    d: usize,
    heads: usize,
) -> Result<()> {
    for t in 0..4 {
        let prefix = expert_prefix(t);
        let shape = LayerShape::new(d, heads, partition.count(t) + 1)?;
        register_attention_layer(store, rng, &prefix, shape)?;
        store.register_ones(&format!("{prefix}.headnorm.g"), vec![d])?;
        store.register_zeros(&format!("{prefix}.headnorm.b"), vec![d])?;
        store.register_uniform(&format!("{prefix}.out.w"), vec![d, 1], d, rng)?;
        store.register_zeros(&format!("{prefix}.out.b"), vec![1])?;
    }
    store.register_uniform("gate.w", vec![d, 4], d, rng)?;
    store.register_zeros("gate.b", vec![4])?;
    Ok(())
}

fn expert_prefix(t: usize) -> String {
    format!("expert.{}", IndicatorType::from_index(t).as_str().to_lowercase())
}

/// Resolved tape handles for one expert.
pub struct ExpertNodes {
    pub layer: LayerNodes,
    pub headnorm_g: ValueId,
    pub headnorm_b: ValueId,
    pub out_w: ValueId,
    pub out_b: ValueId,
}

pub fn resolve_expert(
    binding: &ParamBinding,
    t: usize,
    d: usize,
    heads: usize,
    tokens: usize,
) -> Result<ExpertNodes> {
    let prefix = expert_prefix(t);
    let shape = LayerShape::new(d, heads, tokens)?;
    Ok(ExpertNodes {
        layer: resolve_layer(binding, &prefix, shape)?,
        headnorm_g: binding.id(&format!("{prefix}.headnorm.g"))?,
        headnorm_b: binding.id(&format!("{prefix}.headnorm.b"))?,
        out_w: binding.id(&format!("{prefix}.out.w"))?,
        out_b: binding.id(&format!("{prefix}.out.b"))?,
    })
}

/// Split the encoded (K+1)×d matrix into four (Nᵗ+1)×d blocks, each with
/// the shared CLS row (row 0) prepended to that type's indicator rows.
pub fn combine_features(
    tape: &mut Tape,
    encoded: ValueId,
    partition: &TypePartition,
) -> Result<[ValueId; 4]> {
    let rows = tape.value(encoded).dims2().0;
    if rows != partition.k() + 1 {
        return Err(Error::Partition(format!(
            "encoded matrix has {rows} rows, partition expects {}",
            partition.k() + 1
        )));
    }
    let mut blocks = Vec::with_capacity(4);
    for t in 0..4 {
        let mut gather = Vec::with_capacity(partition.count(t) + 1);
        gather.push(0);
        // Indicator j sits at token row j+1 (CLS occupies row 0).
        gather.extend(partition.indices(t).iter().map(|&j| j + 1));
        blocks.push(tape.gather_rows(encoded, &gather)?);
    }
    Ok([blocks[0], blocks[1], blocks[2], blocks[3]])
}

/// One expert: its transformer layer over the type block, then
/// Linear(Relu(LayerNorm(CLS row))) to a scalar prediction.
pub fn expert_predict(tape: &mut Tape, block: ValueId, expert: &ExpertNodes) -> Result<ValueId> {
    let rows = tape.value(block).dims2().0;
    if rows != expert.layer.shape.tokens {
        return Err(Error::Shape {
            op: "expert_predict",
            lhs: tape.value(block).shape().to_vec(),
            rhs: vec![expert.layer.shape.tokens, expert.layer.shape.d],
        });
    }
    let refined = transformer_layer(tape, block, &expert.layer)?;
    let cls = tape.row(refined, 0)?;
    let normed = tape.layer_norm(cls, expert.headnorm_g, expert.headnorm_b, LN_EPS)?;
    let activated = tape.relu(normed);
    let row = tape.as_row(activated)?;
    let out = tape.matmul(row, expert.out_w)?;
    let out = tape.reshape(out, vec![1])?;
    tape.add(out, expert.out_b)
}

/// Softmax gate over the pre-expert CLS embedding; outputs the four
/// expert weights in fixed (PJ, DJ, JE, JC) order.
pub fn gate(tape: &mut Tape, cls: ValueId, gate_w: ValueId, gate_b: ValueId) -> Result<ValueId> {
    let row = tape.as_row(cls)?;
    let logits = tape.matmul(row, gate_w)?;
    let logits = tape.reshape(logits, vec![4])?;
    let logits = tape.add(logits, gate_b)?;
    Ok(tape.softmax(logits))
}

/// ŷ = Σₜ aᵗ·ŷᵗ.
pub fn weighted_combination(tape: &mut Tape, weights: ValueId, expert_preds: &[ValueId; 4]) -> Result<ValueId> {
    let preds = tape.stack_scalars(expert_preds)?;
    let weighted = tape.mul(weights, preds)?;
    Ok(tape.sum_all(weighted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::bind_params;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn partition_for(counts: [usize; 4]) -> TypePartition {
        let mut indices: [Vec<usize>; 4] = Default::default();
        let mut next = 0;
        for (t, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                indices[t].push(next);
                next += 1;
            }
        }
        TypePartition::new(indices, next).unwrap()
    }

    #[test]
    fn minimal_partition_shares_cls_row() {
        let partition = partition_for([1, 1, 1, 1]);
        let mut tape = Tape::new();
        let encoded = tape.constant(
            Tensor::matrix(5, 2, (0..10).map(|v| v as f64).collect()).unwrap(),
        );
        let blocks = combine_features(&mut tape, encoded, &partition).unwrap();
        for (t, &b) in blocks.iter().enumerate() {
            assert_eq!(tape.value(b).shape(), &[2, 2]);
            assert_eq!(&tape.value(b).data()[..2], &[0.0, 1.0], "CLS row of block {t}");
            let expect = [(t + 1) * 2, (t + 1) * 2 + 1].map(|v| v as f64);
            assert_eq!(&tape.value(b).data()[2..], &expect);
        }
    }

    #[test]
    fn shuffled_partition_reassembles_to_original_rows() {
        // K=8, types interleaved; gathering blocks and undoing the
        // permutation must reproduce E_i exactly.
        let mut indices: [Vec<usize>; 4] = Default::default();
        indices[0] = vec![0, 5];
        indices[1] = vec![2, 6];
        indices[2] = vec![1, 7];
        indices[3] = vec![3, 4];
        let partition = TypePartition::new(indices.clone(), 8).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..9 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let encoded = tape.constant(Tensor::matrix(9, 3, data.clone()).unwrap());
        let blocks = combine_features(&mut tape, encoded, &partition).unwrap();
        for (t, &b) in blocks.iter().enumerate() {
            let block = tape.value(b);
            for (pos, &j) in indices[t].iter().enumerate() {
                let got = &block.data()[(pos + 1) * 3..(pos + 2) * 3];
                let expect = &data[(j + 1) * 3..(j + 2) * 3];
                assert_eq!(got, expect);
            }
        }
    }

    #[test]
    fn overlapping_indices_rejected() {
        let mut indices: [Vec<usize>; 4] = Default::default();
        indices[0] = vec![0, 1];
        indices[1] = vec![1];
        indices[2] = vec![2];
        indices[3] = vec![3];
        assert!(TypePartition::new(indices, 4).is_err());
    }

    #[test]
    fn uniform_gate_with_zero_params() {
        let mut store = ParamStore::new(0);
        store.register_zeros("gate.w", vec![4, 4]).unwrap();
        store.register_zeros("gate.b", vec![4]).unwrap();
        let mut tape = Tape::new();
        let binding = bind_params(&mut tape, &store);
        let cls = tape.constant(Tensor::vector(vec![0.3, -0.7, 1.1, 0.0]));
        let a = gate(
            &mut tape,
            cls,
            binding.id("gate.w").unwrap(),
            binding.id("gate.b").unwrap(),
        )
        .unwrap();
        for &v in tape.value(a).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn gate_bias_ln_values_give_analytic_softmax() {
        let mut store = ParamStore::new(0);
        store.register_zeros("gate.w", vec![4, 4]).unwrap();
        store
            .register(
                "gate.b",
                Tensor::vector(vec![1.0_f64.ln(), 3.0_f64.ln(), 1.0_f64.ln(), 3.0_f64.ln()]),
            )
            .unwrap();
        let mut tape = Tape::new();
        let binding = bind_params(&mut tape, &store);
        let cls = tape.constant(Tensor::vector(vec![0.0; 4]));
        let a = gate(
            &mut tape,
            cls,
            binding.id("gate.w").unwrap(),
            binding.id("gate.b").unwrap(),
        )
        .unwrap();
        let expect = [0.125, 0.375, 0.125, 0.375];
        for (got, want) in tape.value(a).data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_head_ignores_input() {
        let d = 4;
        let partition = partition_for([2, 1, 1, 1]);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut store = ParamStore::new(3);
        register_moe_params(&mut store, &mut rng, &partition, d, 2).unwrap();
        store.value_mut("expert.pj.out.w").unwrap().fill(0.0);
        store
            .value_mut("expert.pj.out.b")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[42.0]);
        for trial in 0..2 {
            let mut tape = Tape::new();
            let binding = bind_params(&mut tape, &store);
            let expert = resolve_expert(&binding, 0, d, 2, 3).unwrap();
            let data: Vec<f64> = (0..3 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let block = tape.constant(Tensor::matrix(3, d, data).unwrap());
            let y = expert_predict(&mut tape, block, &expert).unwrap();
            assert_eq!(tape.value(y).item(), 42.0, "trial {trial}");
        }
    }

    #[test]
    fn one_hot_gate_selects_single_expert() {
        let mut tape = Tape::new();
        let weights = tape.constant(Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]));
        let preds = [
            tape.constant(Tensor::scalar(5.5)),
            tape.constant(Tensor::scalar(-2.0)),
            tape.constant(Tensor::scalar(7.0)),
            tape.constant(Tensor::scalar(0.1)),
        ];
        let y = weighted_combination(&mut tape, weights, &preds).unwrap();
        assert_eq!(tape.value(y).item(), 5.5);
    }

    #[test]
    fn equal_experts_make_gating_irrelevant() {
        let mut tape = Tape::new();
        let weights = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]));
        let preds: Vec<ValueId> = (0..4).map(|_| tape.constant(Tensor::scalar(3.25))).collect();
        let preds = [preds[0], preds[1], preds[2], preds[3]];
        let y = weighted_combination(&mut tape, weights, &preds).unwrap();
        assert!((tape.value(y).item() - 3.25).abs() < 1e-15);
    }
}
