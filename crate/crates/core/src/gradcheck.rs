//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{forward_backward, forward_only, ParamBinding, Tape, ValueId};
use std::fmt;

/// Central difference step.
pub const FD_STEP: f64 = 1e-5;

/// Per-parameter comparison of analytic and numeric derivatives.
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub excluded: usize,
}

/// Outcome of a full gradient check.
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub checked_total: usize,
    pub excluded_total: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{}: max_rel_err {:.3e} (checked {}, excluded {})",
                p.name, p.max_rel_err, p.checked, p.excluded
            )?;
        }
        write!(
            f,
            "overall max_rel_err {:.3e} over {} coordinates ({} excluded near kinks)",
            self.max_rel_err, self.checked_total, self.excluded_total
        )
    }
}

/// Compare the reverse-mode gradient of `graph` against central finite
/// differences, coordinate by coordinate.
///
/// The relative error is |analytic − numeric| / max(1, |numeric|).
/// Coordinates whose base or perturbed evaluation crossed within
/// [`crate::tape::KINK_TOL`] of a relu kink are excluded rather than failed.
/// A graph whose two base evaluations disagree bit-for-bit is rejected as
/// non-deterministic.
pub fn grad_check<F>(store: &mut ParamStore, graph: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamBinding) -> Result<ValueId>,
{
    let (f0, base_kink) = forward_only(store, &graph)?;
    let (f1, _) = forward_only(store, &graph)?;
    if f0.to_bits() != f1.to_bits() {
        return Err(Error::NonDeterministic {
            first: f0,
            second: f1,
        });
    }

    forward_backward(store, &graph)?;
    let analytic: Vec<(String, Vec<f64>)> = store
        .iter_grads()
        .map(|(name, g)| (name.to_string(), g.data().to_vec()))
        .collect();

    let mut params = Vec::new();
    let mut max_rel_err: f64 = 0.0;
    let mut checked_total = 0;
    let mut excluded_total = 0;

    for (name, grads) in &analytic {
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            checked: 0,
            excluded: 0,
        };
        for (idx, &a) in grads.iter().enumerate() {
            let original = store.value(name)?.data()[idx];

            store.value_mut(name)?.data_mut()[idx] = original + FD_STEP;
            let (f_plus, kink_plus) = forward_only(store, &graph)?;
            store.value_mut(name)?.data_mut()[idx] = original - FD_STEP;
            let (f_minus, kink_minus) = forward_only(store, &graph)?;
            store.value_mut(name)?.data_mut()[idx] = original;

            if base_kink || kink_plus || kink_minus {
                check.excluded += 1;
                continue;
            }

            let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_index = idx;
            }
            check.checked += 1;
        }
        max_rel_err = max_rel_err.max(check.max_rel_err);
        checked_total += check.checked;
        excluded_total += check.excluded;
        params.push(check);
    }

    Ok(GradCheckReport {
        params,
        max_rel_err,
        checked_total,
        excluded_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_model_is_exact() {
        // loss = sum(W·x), x constant
        let mut store = ParamStore::new(0);
        store
            .register("w", Tensor::matrix(2, 2, vec![0.3, -1.2, 0.7, 2.0]).unwrap())
            .unwrap();
        let report = grad_check(&mut store, |tape, binding| {
            let w = binding.id("w")?;
            let x = tape.constant(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
            let y = tape.matmul(w, x)?;
            Ok(tape.sum_all(y))
        })
        .unwrap();
        assert!(report.passes(1e-9), "{report}");
        assert_eq!(report.excluded_total, 0);
    }

    #[test]
    fn relu_at_exactly_zero_is_excluded_not_failed() {
        let mut store = ParamStore::new(0);
        store.register("w", Tensor::scalar(0.0)).unwrap();
        let report = grad_check(&mut store, |tape, binding| {
            let w = binding.id("w")?;
            let r = tape.relu(w);
            Ok(tape.sum_all(r))
        })
        .unwrap();
        assert_eq!(report.excluded_total, 1);
        assert_eq!(report.checked_total, 0);
    }

    #[test]
    fn mixed_nonlinear_graph_matches_finite_differences() {
        // Five parameters through relu/exp/log/softmax into a scalar.
        let mut store = ParamStore::new(0);
        store
            .register("a", Tensor::vector(vec![0.4, -0.8, 1.3]))
            .unwrap();
        store.register("b", Tensor::vector(vec![0.9, 2.1])).unwrap();
        let report = grad_check(&mut store, |tape, binding| {
            let a = binding.id("a")?;
            let b = binding.id("b")?;
            let sa = tape.softmax(a);
            let ra = tape.relu(sa);
            let shifted = tape.add_scalar(ra, 1.0);
            let la = tape.log(shifted)?;
            let ea = tape.exp(la)?;
            let sum_a = tape.sum_all(ea);
            let eb = tape.exp(b)?;
            let sum_b = tape.mean_all(eb);
            let prod = tape.mul(sum_a, sum_b)?;
            Ok(tape.sum_all(prod))
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report}");
    }

    #[test]
    fn nondeterministic_graph_detected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0_f64);
        let mut store = ParamStore::new(0);
        store.register("w", Tensor::scalar(1.0)).unwrap();
        let err = grad_check(&mut store, |tape, binding| {
            calls.set(calls.get() + 1.0);
            let w = binding.id("w")?;
            let noise = tape.constant(Tensor::scalar(calls.get()));
            let y = tape.mul(w, noise)?;
            Ok(tape.sum_all(y))
        });
        assert!(matches!(err, Err(Error::NonDeterministic { .. })));
    }
}
