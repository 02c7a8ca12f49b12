//! The full regressor: encoders, transformer stack, and the expert
//! mixture, wired over one parameter store.

use crate::attention::{
    register_attention_layer, resolve_layer, run_stack, transformer_layer, LayerNodes, LayerShape,
    LN_EPS,
};
use crate::checkpoint;
use crate::dataset::{ColumnScaler, IndicatorTable, SchemaColumn};
use crate::encoder::{encode_columns, encode_row, fuse, register_encoder_params, stack_row_params};
use crate::error::{Error, Result};
use crate::moe::{
    combine_features, expert_predict, gate, register_moe_params, resolve_expert,
    weighted_combination, ExpertNodes, TypePartition,
};
use crate::params::ParamStore;
use crate::tape::{bind_params, ParamBinding, Tape, ValueId};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Model variants for the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Four experts with a learned gate.
    Full,
    /// One extra transformer layer and a single head instead of the MoE.
    WoMoe,
    /// Column embeddings replaced by the all-ones vector.
    WoCe,
}

impl Ablation {
    pub fn label(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::WoMoe => "wo_moe",
            Ablation::WoCe => "wo_ce",
        }
    }
}

/// Optional transform applied to the FDI target before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    None,
    Log1p,
}

impl TargetTransform {
    pub fn apply(&self, y: f64) -> Result<f64> {
        match self {
            TargetTransform::None => Ok(y),
            TargetTransform::Log1p => {
                if y <= -1.0 {
                    return Err(Error::Domain {
                        primitive: "log1p",
                        detail: format!("target {y} ≤ -1"),
                    });
                }
                Ok(y.ln_1p())
            }
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        match self {
            TargetTransform::None => z,
            TargetTransform::Log1p => z.exp_m1(),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding size d.
    pub d: usize,
    /// Transformer layer count L in the encoder stack.
    pub layers: usize,
    /// Attention head count M.
    pub heads: usize,
    pub ablation: Ablation,
    pub target_transform: TargetTransform,
}

/// Per-sample outputs of one forward pass, still on the tape.
pub struct SampleNodes {
    pub y_hat: ValueId,
    pub gate: Option<ValueId>,
    pub experts: Option<[ValueId; 4]>,
}

/// Per-sample prediction values (model/transformed scale).
#[derive(Debug, Clone)]
pub struct Prediction {
    pub y_hat: f64,
    pub gate: Option<[f64; 4]>,
    pub experts: Option<[f64; 4]>,
}

/// A configured model: architecture, schema-derived partition, the
/// training-data scaler, and the frozen scaled training columns the
/// column encoder consumes.
pub struct TljdModel {
    pub config: ModelConfig,
    pub schema: Vec<SchemaColumn>,
    pub partition: TypePartition,
    pub scaler: ColumnScaler,
    /// K×N matrix; row j is scaled training column j.
    pub frozen_columns: Tensor,
}

impl TljdModel {
    pub fn new(
        config: ModelConfig,
        schema: Vec<SchemaColumn>,
        scaler: ColumnScaler,
        frozen_columns: Tensor,
    ) -> Result<TljdModel> {
        let partition = TypePartition::from_schema(&schema)?;
        LayerShape::new(config.d, config.heads, schema.len() + 1)?;
        if config.d < 2 {
            return Err(Error::Config(format!("embedding size {} too small", config.d)));
        }
        if frozen_columns.shape()[0] != schema.len() {
            return Err(Error::Shape {
                op: "frozen_columns",
                lhs: frozen_columns.shape().to_vec(),
                rhs: vec![schema.len()],
            });
        }
        Ok(TljdModel {
            config,
            schema,
            partition,
            scaler,
            frozen_columns,
        })
    }

    /// Fit the scaler on the training rows and freeze their scaled columns.
    pub fn from_table(
        config: ModelConfig,
        table: &IndicatorTable,
        train_indices: &[usize],
    ) -> Result<TljdModel> {
        let scaler = ColumnScaler::fit(table, train_indices)?;
        let scaled = scaler.scale_rows(table, train_indices);
        let n = train_indices.len();
        let k = table.k();
        let mut data = vec![0.0; k * n];
        for (i, row) in scaled.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                data[j * n + i] = v;
            }
        }
        TljdModel::new(
            config,
            table.schema().to_vec(),
            scaler,
            Tensor::matrix(k, n, data)?,
        )
    }

    pub fn k(&self) -> usize {
        self.schema.len()
    }

    pub fn n_train(&self) -> usize {
        self.frozen_columns.shape()[1]
    }

    /// Initialize every trainable parameter, drawing in a fixed
    /// registration order from one seeded generator.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        let (d, heads) = (self.config.d, self.config.heads);
        let k = self.k();
        register_encoder_params(
            &mut store,
            &mut rng,
            k,
            d,
            self.n_train(),
            self.config.ablation != Ablation::WoCe,
        )?;
        for l in 0..self.config.layers {
            let shape = LayerShape::new(d, heads, k + 1)?;
            register_attention_layer(&mut store, &mut rng, &format!("enc.layer{l}"), shape)?;
        }
        match self.config.ablation {
            Ablation::WoMoe => {
                let shape = LayerShape::new(d, heads, k + 1)?;
                register_attention_layer(&mut store, &mut rng, "single", shape)?;
                store.register_ones("single.headnorm.g", vec![d])?;
                store.register_zeros("single.headnorm.b", vec![d])?;
                store.register_uniform("single.out.w", vec![d, 1], d, &mut rng)?;
                store.register_zeros("single.out.b", vec![1])?;
            }
            _ => {
                register_moe_params(&mut store, &mut rng, &self.partition, d, heads)?;
            }
        }
        Ok(store)
    }

    fn check_scaled(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.k() {
            return Err(Error::Shape {
                op: "predict",
                lhs: vec![x.len()],
                rhs: vec![self.k()],
            });
        }
        for (index, &value) in x.iter().enumerate() {
            if !(-1e-9..=1.0 + 1e-9).contains(&value) {
                return Err(Error::UnscaledInput { index, value });
            }
        }
        Ok(())
    }

    /// Build the forward graph for a batch of scaled samples.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        xs: &[Vec<f64>],
    ) -> Result<Vec<SampleNodes>> {
        let (d, heads) = (self.config.d, self.config.heads);
        let k = self.k();
        for x in xs {
            self.check_scaled(x)?;
        }

        // Shared per batch: stacked row params, column embeddings, CLS row.
        let row_nodes = stack_row_params(tape, binding, k)?;
        let col_embeddings = match self.config.ablation {
            Ablation::WoCe => tape.constant(Tensor::full(vec![k, d], 1.0)),
            _ => {
                let v = tape.constant(self.frozen_columns.clone());
                encode_columns(tape, binding, v, d)?
            }
        };
        let cls = binding.id("cls")?;
        let cls_row = tape.as_row(cls)?;

        let enc_layers: Vec<LayerNodes> = (0..self.config.layers)
            .map(|l| {
                let shape = LayerShape::new(d, heads, k + 1)?;
                resolve_layer(binding, &format!("enc.layer{l}"), shape)
            })
            .collect::<Result<_>>()?;

        enum Head {
            Moe {
                experts: Box<[ExpertNodes; 4]>,
                gate_w: ValueId,
                gate_b: ValueId,
            },
            Single {
                layer: Box<LayerNodes>,
                norm_g: ValueId,
                norm_b: ValueId,
                out_w: ValueId,
                out_b: ValueId,
            },
        }
        let head = match self.config.ablation {
            Ablation::WoMoe => Head::Single {
                layer: Box::new(resolve_layer(
                    binding,
                    "single",
                    LayerShape::new(d, heads, k + 1)?,
                )?),
                norm_g: binding.id("single.headnorm.g")?,
                norm_b: binding.id("single.headnorm.b")?,
                out_w: binding.id("single.out.w")?,
                out_b: binding.id("single.out.b")?,
            },
            _ => {
                let experts = [0, 1, 2, 3].map(|t| {
                    resolve_expert(binding, t, d, heads, self.partition.count(t) + 1)
                });
                let mut resolved = Vec::with_capacity(4);
                for e in experts {
                    resolved.push(e?);
                }
                Head::Moe {
                    experts: Box::new(resolved.try_into().map_err(|_| Error::Config("expert count".into()))?),
                    gate_w: binding.id("gate.w")?,
                    gate_b: binding.id("gate.b")?,
                }
            }
        };

        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let row_embeddings = encode_row(tape, x, &row_nodes, d)?;
            let h0 = fuse(tape, row_embeddings, col_embeddings, cls_row)?;
            let encoded = run_stack(tape, h0, &enc_layers)?;
            let sample = match &head {
                Head::Moe {
                    experts,
                    gate_w,
                    gate_b,
                } => {
                    let cls_out = tape.row(encoded, 0)?;
                    let weights = gate(tape, cls_out, *gate_w, *gate_b)?;
                    let blocks = combine_features(tape, encoded, &self.partition)?;
                    let mut preds = Vec::with_capacity(4);
                    for (t, &block) in blocks.iter().enumerate() {
                        preds.push(expert_predict(tape, block, &experts[t])?);
                    }
                    let preds: [ValueId; 4] =
                        preds.try_into().map_err(|_| Error::Config("expert count".into()))?;
                    let y_hat = weighted_combination(tape, weights, &preds)?;
                    SampleNodes {
                        y_hat,
                        gate: Some(weights),
                        experts: Some(preds),
                    }
                }
                Head::Single {
                    layer,
                    norm_g,
                    norm_b,
                    out_w,
                    out_b,
                } => {
                    let refined = transformer_layer(tape, encoded, layer)?;
                    let cls_out = tape.row(refined, 0)?;
                    let normed = tape.layer_norm(cls_out, *norm_g, *norm_b, LN_EPS)?;
                    let activated = tape.relu(normed);
                    let row = tape.as_row(activated)?;
                    let y = tape.matmul(row, *out_w)?;
                    let y = tape.reshape(y, vec![1])?;
                    let y_hat = tape.add(y, *out_b)?;
                    SampleNodes {
                        y_hat,
                        gate: None,
                        experts: None,
                    }
                }
            };
            out.push(sample);
        }
        Ok(out)
    }

    /// Scalar joint training loss over a batch: (1−λ)·L_reg + λ·L_er.
    ///
    /// Targets are expected on the transformed scale. Without experts
    /// (the MoE-less variant) the loss reduces to L_reg.
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        xs: &[Vec<f64>],
        ys: &[f64],
        lambda: f64,
    ) -> Result<ValueId> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::EmptyBatch);
        }
        let samples = self.forward_batch(tape, binding, xs)?;
        let yhat_ids: Vec<ValueId> = samples.iter().map(|s| s.y_hat).collect();
        let yhat = tape.stack_scalars(&yhat_ids)?;
        let y = tape.constant(Tensor::vector(ys.to_vec()));
        let diff = tape.sub(yhat, y)?;
        let sq = tape.mul(diff, diff)?;
        let l_reg = tape.mean_all(sq);

        if samples[0].experts.is_none() {
            return Ok(l_reg);
        }
        let l_er = er_loss_graph(tape, &samples, ys)?;
        let weighted_reg = tape.scale(l_reg, 1.0 - lambda);
        let weighted_er = tape.scale(l_er, lambda);
        tape.add(weighted_reg, weighted_er)
    }

    /// Run the model on already-scaled inputs.
    pub fn predict_scaled(&self, params: &ParamStore, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(xs.len());
        // Chunked so one tape never holds more than a small batch.
        for chunk in xs.chunks(64.max(1)) {
            let mut tape = Tape::new();
            let binding = bind_params(&mut tape, params);
            let samples = self.forward_batch(&mut tape, &binding, chunk)?;
            for s in samples {
                out.push(Prediction {
                    y_hat: tape.value(s.y_hat).item(),
                    gate: s.gate.map(|g| {
                        let d = tape.value(g).data();
                        [d[0], d[1], d[2], d[3]]
                    }),
                    experts: s.experts.map(|ids| ids.map(|id| tape.value(id).item())),
                });
            }
        }
        Ok(out)
    }

    /// Scale the selected table rows and predict them.
    pub fn predict_table(
        &self,
        params: &ParamStore,
        table: &IndicatorTable,
        indices: &[usize],
    ) -> Result<Vec<Prediction>> {
        let xs = self.scaler.scale_rows(table, indices);
        self.predict_scaled(params, &xs)
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            format_version: checkpoint::FORMAT_VERSION,
            d: self.config.d,
            layers: self.config.layers,
            heads: self.config.heads,
            ablation: self.config.ablation,
            target_transform: self.config.target_transform,
            schema: self.schema.clone(),
            schema_hash: schema_hash(&self.schema),
            n_train: self.n_train(),
        }
    }

    /// Write the binary checkpoint (parameters plus the scaler and frozen
    /// columns under reserved `data.*` names) and the JSON descriptor.
    pub fn save(&self, ckpt_path: &Path, json_path: &Path, params: &ParamStore) -> Result<()> {
        let mins = Tensor::vector(self.scaler.mins().to_vec());
        let maxs = Tensor::vector(self.scaler.maxs().to_vec());
        let mut entries: Vec<(String, &Tensor)> = params
            .iter_values()
            .map(|(name, t)| (name.to_string(), t))
            .collect();
        entries.push(("data.frozen_columns".to_string(), &self.frozen_columns));
        entries.push(("data.scaler.min".to_string(), &mins));
        entries.push(("data.scaler.max".to_string(), &maxs));
        checkpoint::write_entries(ckpt_path, params.rng_seed(), &entries)?;

        let json = serde_json::to_string_pretty(&self.descriptor())
            .map_err(|e| Error::Checkpoint(format!("descriptor serialization: {e}")))?;
        let tmp = json_path.with_extension("tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, json_path)?;
        Ok(())
    }

    /// Load a model and its parameters saved by [`TljdModel::save`].
    pub fn load(ckpt_path: &Path, json_path: &Path) -> Result<(TljdModel, ParamStore)> {
        let text = std::fs::read_to_string(json_path)?;
        let desc: ModelDescriptor = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("descriptor parse: {e}")))?;
        if desc.format_version != checkpoint::FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "descriptor format version {} does not match {}",
                desc.format_version,
                checkpoint::FORMAT_VERSION
            )));
        }
        let (rng_seed, entries) = checkpoint::read_entries(ckpt_path)?;
        let mut store = ParamStore::new(rng_seed);
        let mut frozen = None;
        let mut mins = None;
        let mut maxs = None;
        for (name, tensor) in entries {
            match name.as_str() {
                "data.frozen_columns" => frozen = Some(tensor),
                "data.scaler.min" => mins = Some(tensor),
                "data.scaler.max" => maxs = Some(tensor),
                _ => store.register(&name, tensor)?,
            }
        }
        let missing = |what: &str| Error::Checkpoint(format!("checkpoint is missing {what}"));
        let frozen = frozen.ok_or_else(|| missing("data.frozen_columns"))?;
        let mins = mins.ok_or_else(|| missing("data.scaler.min"))?;
        let maxs = maxs.ok_or_else(|| missing("data.scaler.max"))?;
        let scaler = ColumnScaler::from_bounds(mins.data().to_vec(), maxs.data().to_vec());
        let model = TljdModel::new(
            ModelConfig {
                d: desc.d,
                layers: desc.layers,
                heads: desc.heads,
                ablation: desc.ablation,
                target_transform: desc.target_transform,
            },
            desc.schema,
            scaler,
            frozen,
        )?;
        Ok((model, store))
    }
}

/// Expert responsibility loss: −(1/N) Σᵢ log Σₜ aᵢᵗ·exp(−(yᵢ−ŷᵢᵗ)²/2),
/// evaluated in max-shifted log-sum-exp form. The shift constant is
/// detached from the graph, which changes neither the value nor the
/// gradient.
fn er_loss_graph(tape: &mut Tape, samples: &[SampleNodes], ys: &[f64]) -> Result<ValueId> {
    let mut per_sample = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let experts = s.experts.as_ref().expect("experts present");
        let gate_id = s.gate.expect("gate present");
        let mut neg_halves = Vec::with_capacity(4);
        for &e in experts.iter() {
            let diff = tape.add_scalar(e, -ys[i]);
            let sq = tape.mul(diff, diff)?;
            neg_halves.push(tape.scale(sq, -0.5));
        }
        let shift = neg_halves
            .iter()
            .map(|&id| tape.value(id).item())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = None;
        for (t, &nd) in neg_halves.iter().enumerate() {
            let shifted = tape.add_scalar(nd, -shift);
            let e = tape.exp(shifted)?;
            let a_t = tape.elem(gate_id, t)?;
            let term = tape.mul(a_t, e)?;
            sum = Some(match sum {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let lse = tape.log(sum.expect("four terms"))?;
        per_sample.push(tape.add_scalar(lse, shift));
    }
    let stacked = tape.stack_scalars(&per_sample)?;
    let mean = tape.mean_all(stacked);
    Ok(tape.scale(mean, -1.0))
}

/// Inference-time metadata stored next to the binary checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub format_version: u32,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ablation: Ablation,
    pub target_transform: TargetTransform,
    pub schema: Vec<SchemaColumn>,
    pub schema_hash: String,
    pub n_train: usize,
}

impl ModelDescriptor {
    /// Verify a loaded schema matches the checkpointed one, naming the
    /// differing columns otherwise.
    pub fn check_schema(&self, schema: &[SchemaColumn]) -> Result<()> {
        if schema_hash(schema) == self.schema_hash {
            return Ok(());
        }
        let ours: Vec<String> = self.schema.iter().map(|c| format!("{}:{}", c.name, c.itype)).collect();
        let theirs: Vec<String> = schema.iter().map(|c| format!("{}:{}", c.name, c.itype)).collect();
        let only_ckpt: Vec<&String> = ours.iter().filter(|c| !theirs.contains(c)).collect();
        let only_data: Vec<&String> = theirs.iter().filter(|c| !ours.contains(c)).collect();
        let mut detail = String::new();
        if !only_ckpt.is_empty() {
            detail.push_str(&format!("checkpoint-only columns {only_ckpt:?}; "));
        }
        if !only_data.is_empty() {
            detail.push_str(&format!("data-only columns {only_data:?}; "));
        }
        if detail.is_empty() {
            detail = "column order differs".into();
        }
        Err(Error::SchemaMismatch(detail))
    }
}

/// SHA-256 over the canonical `name,TYPE` schema listing.
pub fn schema_hash(schema: &[SchemaColumn]) -> String {
    let mut hasher = Sha256::new();
    for col in schema {
        hasher.update(col.name.as_bytes());
        hasher.update(b",");
        hasher.update(col.itype.as_str().as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
