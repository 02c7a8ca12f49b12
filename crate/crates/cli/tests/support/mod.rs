//! Independent dense-matrix recomputation of the model forward pass.
//!
//! Everything here is scripted from the written formulas with plain
//! nested loops over `Vec<Vec<f64>>`. It reads parameters from the store
//! by name and deliberately shares no code with the tape, encoder,
//! attention, or moe modules it cross-checks.

use tljd_core::model::{Ablation, TljdModel};
use tljd_core::ParamStore;

pub type Mat = Vec<Vec<f64>>;

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn softmax_row(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn layer_norm_row(row: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let denom = (var + eps).sqrt();
    row.iter()
        .zip(gain.iter().zip(bias))
        .map(|(x, (g, b))| g * (x - mean) / denom + b)
        .collect()
}

fn mat_of(store: &ParamStore, name: &str) -> Mat {
    let t = store.value(name).unwrap();
    let (rows, cols) = match t.shape().len() {
        2 => (t.shape()[0], t.shape()[1]),
        _ => (1, t.numel()),
    };
    (0..rows)
        .map(|i| t.data()[i * cols..(i + 1) * cols].to_vec())
        .collect()
}

fn vec_of(store: &ParamStore, name: &str) -> Vec<f64> {
    store.value(name).unwrap().data().to_vec()
}

fn multi_head(h: &Mat, store: &ParamStore, prefix: &str, heads: usize) -> Mat {
    let d = h[0].len();
    let dh = d / heads;
    let t = h.len();
    let mut concat = vec![vec![0.0; d]; t];
    for m in 0..heads {
        let wq = mat_of(store, &format!("{prefix}.head{m}.wq"));
        let wk = mat_of(store, &format!("{prefix}.head{m}.wk"));
        let wv = mat_of(store, &format!("{prefix}.head{m}.wv"));
        let q = matmul(h, &wq);
        let k = matmul(h, &wk);
        let v = matmul(h, &wv);
        let scale = 1.0 / (dh as f64).sqrt();
        for i in 0..t {
            let scores: Vec<f64> = (0..t)
                .map(|j| (0..dh).map(|c| q[i][c] * k[j][c]).sum::<f64>() * scale)
                .collect();
            let probs = softmax_row(&scores);
            for c in 0..dh {
                concat[i][m * dh + c] = (0..t).map(|j| probs[j] * v[j][c]).sum();
            }
        }
    }
    let wo = mat_of(store, &format!("{prefix}.wo"));
    matmul(&concat, &wo)
}

fn att_multiplicative(h: &Mat, store: &ParamStore, prefix: &str, heads: usize) -> Mat {
    let logged: Mat = h
        .iter()
        .map(|row| row.iter().map(|&x| (x.max(0.0) + 1.0).ln()).collect())
        .collect();
    multi_head(&logged, store, prefix, heads)
        .into_iter()
        .map(|row| row.into_iter().map(f64::exp).collect())
        .collect()
}

fn transformer_layer(h: &Mat, store: &ParamStore, prefix: &str, heads: usize) -> Mat {
    let t = h.len();
    let d = h[0].len();
    let additive = multi_head(h, store, prefix, heads);
    let multiplicative = att_multiplicative(h, store, prefix, heads);
    let mut stacked = additive.clone();
    stacked.extend(multiplicative.iter().cloned());

    let fc_w = mat_of(store, &format!("{prefix}.fc.w"));
    let fc_b = vec_of(store, &format!("{prefix}.fc.b"));
    let mut mixed = vec![vec![0.0; d]; t];
    for i in 0..t {
        for c in 0..d {
            mixed[i][c] = (0..2 * t).map(|j| fc_w[i][j] * stacked[j][c]).sum::<f64>() + fc_b[i];
        }
    }

    let ln1_g = vec_of(store, &format!("{prefix}.ln1.g"));
    let ln1_b = vec_of(store, &format!("{prefix}.ln1.b"));
    let z: Mat = (0..t)
        .map(|i| {
            let sum: Vec<f64> = (0..d).map(|c| h[i][c] + mixed[i][c]).collect();
            layer_norm_row(&sum, &ln1_g, &ln1_b, 1e-5)
        })
        .collect();

    let w0 = mat_of(store, &format!("{prefix}.ffn.w0"));
    let b0 = vec_of(store, &format!("{prefix}.ffn.b0"));
    let w1 = mat_of(store, &format!("{prefix}.ffn.w1"));
    let b1 = vec_of(store, &format!("{prefix}.ffn.b1"));
    let hidden: Mat = matmul(&z, &w0)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .enumerate()
                .map(|(j, x)| (x + b0[j]).max(0.0))
                .collect()
        })
        .collect();
    let ffn: Mat = matmul(&hidden, &w1)
        .into_iter()
        .map(|row: Vec<f64>| row.into_iter().enumerate().map(|(j, x)| x + b1[j]).collect())
        .collect();

    let ln2_g = vec_of(store, &format!("{prefix}.ln2.g"));
    let ln2_b = vec_of(store, &format!("{prefix}.ln2.b"));
    (0..t)
        .map(|i| {
            let sum: Vec<f64> = (0..d).map(|c| z[i][c] + ffn[i][c]).collect();
            layer_norm_row(&sum, &ln2_g, &ln2_b, 1e-5)
        })
        .collect()
}

pub struct OracleOutput {
    pub y_hat: f64,
    pub gate: [f64; 4],
    pub experts: [f64; 4],
}

/// Recompute one sample's forward pass from the written formulas.
pub fn forward(model: &TljdModel, store: &ParamStore, x: &[f64]) -> OracleOutput {
    let d = model.config.d;
    let k = model.k();
    let n = model.n_train();
    let heads = model.config.heads;

    // Column embeddings: MLP1(v_j) scaled by MLP2(v_j), or all-ones.
    let col: Mat = if model.config.ablation == Ablation::WoCe {
        vec![vec![1.0; d]; k]
    } else {
        let mlp = |prefix: &str, input: &[f64], out_dim: usize| -> Vec<f64> {
            let w0 = mat_of(store, &format!("{prefix}.w0"));
            let b0 = vec_of(store, &format!("{prefix}.b0"));
            let w1 = mat_of(store, &format!("{prefix}.w1"));
            let b1 = vec_of(store, &format!("{prefix}.b1"));
            let hidden: Vec<f64> = (0..d)
                .map(|h| {
                    ((0..n).map(|i| input[i] * w0[i][h]).sum::<f64>() + b0[h]).max(0.0)
                })
                .collect();
            (0..out_dim)
                .map(|o| (0..d).map(|h| hidden[h] * w1[h][o]).sum::<f64>() + b1[o])
                .collect()
        };
        (0..k)
            .map(|j| {
                let v_j: Vec<f64> = (0..n)
                    .map(|i| model.frozen_columns.data()[j * n + i])
                    .collect();
                let m1 = mlp("col.mlp1", &v_j, d);
                let m2 = mlp("col.mlp2", &v_j, 1);
                m1.into_iter().map(|v| v * m2[0]).collect()
            })
            .collect()
    };

    // Fusion: CLS row then per-indicator row ⊙ column embeddings.
    let cls = vec_of(store, "cls");
    let mut h0: Mat = vec![cls];
    for j in 0..k {
        let w = vec_of(store, &format!("row.w.{j}"));
        let b = vec_of(store, &format!("row.b.{j}"));
        h0.push(
            (0..d)
                .map(|c| (w[c] * x[j] + b[c]) * col[j][c])
                .collect(),
        );
    }

    let mut encoded = h0;
    for l in 0..model.config.layers {
        encoded = transformer_layer(&encoded, store, &format!("enc.layer{l}"), heads);
    }

    // Gate on the pre-expert CLS embedding.
    let gate_w = mat_of(store, "gate.w");
    let gate_b = vec_of(store, "gate.b");
    let logits: Vec<f64> = (0..4)
        .map(|t| (0..d).map(|c| encoded[0][c] * gate_w[c][t]).sum::<f64>() + gate_b[t])
        .collect();
    let gate_probs = softmax_row(&logits);

    let mut experts = [0.0; 4];
    for t in 0..4 {
        let label = ["pj", "dj", "je", "jc"][t];
        let prefix = format!("expert.{label}");
        let mut block: Mat = vec![encoded[0].clone()];
        for &j in model.partition.indices(t) {
            block.push(encoded[j + 1].clone());
        }
        let refined = transformer_layer(&block, store, &prefix, heads);
        let g = vec_of(store, &format!("{prefix}.headnorm.g"));
        let b = vec_of(store, &format!("{prefix}.headnorm.b"));
        let normed = layer_norm_row(&refined[0], &g, &b, 1e-5);
        let out_w = mat_of(store, &format!("{prefix}.out.w"));
        let out_b = vec_of(store, &format!("{prefix}.out.b"));
        experts[t] = (0..d).map(|c| normed[c].max(0.0) * out_w[c][0]).sum::<f64>() + out_b[0];
    }

    let y_hat: f64 = (0..4).map(|t| gate_probs[t] * experts[t]).sum();
    OracleOutput {
        y_hat,
        gate: [gate_probs[0], gate_probs[1], gate_probs[2], gate_probs[3]],
        experts,
    }
}

/// Ordinary least squares via Gauss-Jordan on the normal equations;
/// returns the fitted coefficients.
pub fn least_squares(design: &Mat, targets: &[f64]) -> Vec<f64> {
    let p = design[0].len();
    let mut ata = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            ata[i][j] = design.iter().map(|row| row[i] * row[j]).sum();
        }
        // Tiny ridge keeps the system solvable when columns collide.
        ata[i][i] += 1e-9;
        ata[i][p] = design
            .iter()
            .zip(targets)
            .map(|(row, y)| row[i] * y)
            .sum();
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&a, &b| ata[a][col].abs().partial_cmp(&ata[b][col].abs()).unwrap())
            .unwrap();
        ata.swap(col, pivot);
        let pv = ata[col][col];
        for j in col..=p {
            ata[col][j] /= pv;
        }
        for row in 0..p {
            if row != col && ata[row][col] != 0.0 {
                let factor = ata[row][col];
                for j in col..=p {
                    ata[row][j] -= factor * ata[col][j];
                }
            }
        }
    }
    (0..p).map(|i| ata[i][p]).collect()
}
