//! End-to-end gradient verification: the joint loss through encoders,
//! transformer stack, experts, and gate on the tiny configuration
//! (K=8 indicators, d=4, M=2, L=1, batch 4) must match central finite
//! differences at 1e-4 relative tolerance.

use tljd_core::dataset::{ColumnScaler, IndicatorType, SchemaColumn};
use tljd_core::model::{Ablation, ModelConfig, TargetTransform, TljdModel};
use tljd_core::{grad_check, Tensor};

fn tiny_schema() -> Vec<SchemaColumn> {
    let mut schema = Vec::new();
    for t in IndicatorType::ALL {
        for i in 0..2 {
            schema.push(SchemaColumn {
                name: format!("{}_{i}", t.as_str().to_lowercase()),
                itype: t,
            });
        }
    }
    schema
}

fn tiny_model(ablation: Ablation) -> TljdModel {
    let schema = tiny_schema();
    let k = schema.len();
    let n_train = 6;
    // Deterministic quasi-random frozen columns in [0,1].
    let frozen: Vec<f64> = (0..k * n_train)
        .map(|i| ((i * 37 + 11) % 23) as f64 / 23.0)
        .collect();
    TljdModel::new(
        ModelConfig {
            d: 4,
            layers: 1,
            heads: 2,
            ablation,
            target_transform: TargetTransform::None,
        },
        schema,
        ColumnScaler::from_bounds(vec![0.0; k], vec![1.0; k]),
        Tensor::matrix(k, n_train, frozen).unwrap(),
    )
    .unwrap()
}

fn batch(k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    // Strictly inside (0,1): inputs at exactly 0 would park the
    // multiplicative operator's relu on its kink and exclude everything.
    let xs: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            (0..k)
                .map(|j| (((i * 19 + j * 7 + 3) % 13) + 1) as f64 / 15.0)
                .collect()
        })
        .collect();
    let ys = vec![0.8, -0.3, 1.4, 0.1];
    (xs, ys)
}

fn check(ablation: Ablation, seed: u64) {
    let model = tiny_model(ablation);
    let mut params = model.init_params(seed).unwrap();
    let (xs, ys) = batch(model.k());
    let report = grad_check(&mut params, |tape, binding| {
        model.loss_graph(tape, binding, &xs, &ys, 0.5)
    })
    .unwrap();
    assert!(
        report.passes(1e-4),
        "{} gradients disagree with finite differences:\n{report}",
        ablation.label()
    );
    // A handful of kink exclusions is acceptable; wholesale exclusion is not.
    assert!(
        report.checked_total > report.excluded_total * 10,
        "too many excluded coordinates: {report}"
    );
}

#[test]
fn full_model_joint_loss_passes_grad_check() {
    check(Ablation::Full, 31);
}

#[test]
fn wo_moe_variant_passes_grad_check() {
    check(Ablation::WoMoe, 31);
}

#[test]
fn wo_ce_variant_passes_grad_check() {
    check(Ablation::WoCe, 31);
}
