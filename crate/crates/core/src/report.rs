//! Per-sample prediction and expert-weight exports.

use crate::dataset::IndicatorTable;
use crate::error::{Error, Result};
use crate::model::TljdModel;
use crate::params::ParamStore;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// One exported prediction, on the original target scale.
#[derive(Debug, Clone)]
pub struct SamplePrediction {
    pub city_id: String,
    pub year: i32,
    pub y_true: f64,
    pub y_hat: f64,
    pub gate: Option<[f64; 4]>,
    pub experts: Option<[f64; 4]>,
}

/// Predict the given table rows and map everything back through the
/// inverse target transform.
pub fn predictions_for(
    model: &TljdModel,
    params: &ParamStore,
    table: &IndicatorTable,
    indices: &[usize],
) -> Result<Vec<SamplePrediction>> {
    let raw = model.predict_table(params, table, indices)?;
    let transform = model.config.target_transform;
    Ok(indices
        .iter()
        .zip(raw)
        .map(|(&i, p)| {
            let row = &table.rows()[i];
            SamplePrediction {
                city_id: row.city_id.clone(),
                year: row.year,
                y_true: row.fdi,
                y_hat: transform.invert(p.y_hat),
                gate: p.gate,
                experts: p.experts.map(|e| e.map(|v| transform.invert(v))),
            }
        })
        .collect())
}

/// Write `city_id,year,y_true,y_hat` rows.
pub fn write_predictions_csv(path: &Path, preds: &[SamplePrediction]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "city_id,year,y_true,y_hat")?;
    for p in preds {
        writeln!(w, "{},{},{},{}", p.city_id, p.year, p.y_true, p.y_hat)?;
    }
    w.flush()?;
    Ok(())
}

/// Group sample indices by FDI quartile: rank descending by `y_true`
/// (ties by city_id, then year), then return [group 1, .., group 4] where
/// group 1 holds the lowest-FDI quarter and group 4 the highest.
pub fn fdi_quartile_groups(preds: &[SamplePrediction]) -> [Vec<usize>; 4] {
    let mut ranked: Vec<usize> = (0..preds.len()).collect();
    ranked.sort_by(|&a, &b| {
        preds[b]
            .y_true
            .partial_cmp(&preds[a].y_true)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| preds[a].city_id.cmp(&preds[b].city_id))
            .then_with(|| preds[a].year.cmp(&preds[b].year))
    });
    let n = ranked.len();
    let boundary = |i: usize| ((n * i) as f64 / 4.0).round() as usize;
    let (q1, q2, q3) = (boundary(1), boundary(2), boundary(3));
    [
        ranked[q3..].to_vec(), // group 1: last 25% (lowest FDI)
        ranked[q2..q3].to_vec(),
        ranked[q1..q2].to_vec(),
        ranked[..q1].to_vec(), // group 4: top 25%
    ]
}

/// Write the expert-weight CSV with the quartile summary appended.
///
/// Row format: `city_id,year,a_pj,a_dj,a_je,a_jc,y_hat,y_hat_pj,y_hat_dj,
/// y_hat_je,y_hat_jc`. Four `group_{1..4}` rows with the per-group means
/// follow the samples.
pub fn write_weights_csv(path: &Path, preds: &[SamplePrediction]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "city_id,year,a_pj,a_dj,a_je,a_jc,y_hat,y_hat_pj,y_hat_dj,y_hat_je,y_hat_jc"
    )?;
    for p in preds {
        let gate = p
            .gate
            .ok_or_else(|| Error::Config("expert weights unavailable for this model variant".into()))?;
        let experts = p.experts.expect("experts present when gate is");
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.city_id,
            p.year,
            gate[0],
            gate[1],
            gate[2],
            gate[3],
            p.y_hat,
            experts[0],
            experts[1],
            experts[2],
            experts[3]
        )?;
    }
    let groups = fdi_quartile_groups(preds);
    for (g, members) in groups.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let mut mean_gate = [0.0; 4];
        let mut mean_experts = [0.0; 4];
        let mut mean_yhat = 0.0;
        for &i in members {
            let gate = preds[i].gate.expect("validated above");
            let experts = preds[i].experts.expect("validated above");
            for t in 0..4 {
                mean_gate[t] += gate[t] / n;
                mean_experts[t] += experts[t] / n;
            }
            mean_yhat += preds[i].y_hat / n;
        }
        writeln!(
            w,
            "group_{},,{},{},{},{},{},{},{},{},{}",
            g + 1,
            mean_gate[0],
            mean_gate[1],
            mean_gate[2],
            mean_gate[3],
            mean_yhat,
            mean_experts[0],
            mean_experts[1],
            mean_experts[2],
            mean_experts[3]
        )?;
    }
    w.flush()?;
    Ok(())
}
