use criterion::{criterion_group, criterion_main, Criterion};
use tljd_core::adam::{adam_step, AdamState};
use tljd_core::dataset::{generate_synthetic, make_split, Protocol, SynthConfig};
use tljd_core::model::{Ablation, ModelConfig, TargetTransform, TljdModel};
use tljd_core::{forward_backward, ParamStore};

fn medium_setup() -> (TljdModel, ParamStore, Vec<Vec<f64>>, Vec<f64>) {
    let synth = SynthConfig {
        cities: 50,
        years: vec![2016, 2017, 2018, 2019],
        per_type: [10, 10, 10, 10],
        sigma: 0.1,
        seed: 1,
        linear_only: false,
        force_region: None,
    };
    let (table, _) = generate_synthetic(&synth).unwrap();
    let split = make_split(&table, Protocol::CcpMixedYear, 1).unwrap();
    let model = TljdModel::from_table(
        ModelConfig {
            d: 32,
            layers: 2,
            heads: 4,
            ablation: Ablation::Full,
            target_transform: TargetTransform::None,
        },
        &table,
        &split.train,
    )
    .unwrap();
    let params = model.init_params(1).unwrap();
    let xs = model.scaler.scale_rows(&table, &split.train[..32]);
    let ys: Vec<f64> = split.train[..32]
        .iter()
        .map(|&i| table.rows()[i].fdi)
        .collect();
    (model, params, xs, ys)
}

fn bench_forward_backward(c: &mut Criterion) {
    let (model, mut params, xs, ys) = medium_setup();
    c.bench_function("batch32_forward_backward_k40_d32_l2", |b| {
        b.iter(|| {
            forward_backward(&mut params, |tape, binding| {
                model.loss_graph(tape, binding, &xs, &ys, 0.4)
            })
            .unwrap()
        })
    });
}

fn bench_inference(c: &mut Criterion) {
    let (model, params, xs, _) = medium_setup();
    c.bench_function("batch32_predict_k40_d32_l2", |b| {
        b.iter(|| model.predict_scaled(&params, &xs).unwrap())
    });
}

fn bench_adam(c: &mut Criterion) {
    let (model, mut params, xs, ys) = medium_setup();
    forward_backward(&mut params, |tape, binding| {
        model.loss_graph(tape, binding, &xs, &ys, 0.4)
    })
    .unwrap();
    let mut state = AdamState::new(&params, 1e-3);
    c.bench_function("adam_step_full_model", |b| {
        b.iter(|| adam_step(&mut params, &mut state).unwrap())
    });
}

fn bench_generate(c: &mut Criterion) {
    let synth = SynthConfig {
        cities: 200,
        years: vec![2016, 2017, 2018, 2019],
        per_type: [10, 10, 10, 10],
        sigma: 0.1,
        seed: 1,
        linear_only: false,
        force_region: None,
    };
    c.bench_function("generate_synthetic_800x40", |b| {
        b.iter(|| generate_synthetic(&synth).unwrap())
    });
}

criterion_group!(
    benches,
    bench_forward_backward,
    bench_inference,
    bench_adam,
    bench_generate
);
criterion_main!(benches);
