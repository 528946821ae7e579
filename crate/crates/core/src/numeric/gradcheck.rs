//! Finite-difference verification of reverse-mode gradients.
//!
//! The checker rebuilds the taped computation at perturbed parameter values
//! and compares central differences against the gradients produced by
//! `Tape::backward`. Central differences use step `FD_STEP`; disagreement is
//! measured as `|a-b| / max(|a|, |b|, 1e-8)`.

use crate::error::{Error, Result};
use crate::numeric::matrix::DenseMatrix;
use crate::numeric::tape::{NodeId, Tape};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Parameter shapes handed to the builder, flattened in declaration order.
pub type ParamShapes = [(usize, usize)];

/// One scalar parameter entry's comparison.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    /// Index of the parameter matrix.
    pub param: usize,
    /// Flat index within that matrix.
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// Entries whose relative error exceeds the tolerance.
    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries
            .iter()
            .filter(move |e| e.rel_error > self.tolerance)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare reverse-mode gradients of a taped scalar function against central
/// differences at `theta`.
///
/// `build` must construct the scalar output node from parameter leaves that
/// match `shapes`; it is invoked once per function evaluation, so it has to
/// be deterministic in its inputs.
pub fn grad_check<F>(
    build: F,
    shapes: &ParamShapes,
    theta: &[f64],
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let total: usize = shapes.iter().map(|&(r, c)| r * c).sum();
    if theta.len() != total {
        return Err(Error::shape(
            "grad_check",
            format!("{} parameter values for shapes totalling {}", theta.len(), total),
        ));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let ids = register_params(&mut tape, shapes, theta);
    let out = build(&mut tape, &ids)?;
    let value = tape.value(out).as_slice()[0];
    if !value.is_finite() {
        return Err(Error::numeric(format!(
            "grad_check: objective is non-finite ({}) at the base point",
            value
        )));
    }
    let grads = tape.backward(out, 1.0)?;
    let mut analytic = Vec::with_capacity(total);
    for &id in &ids {
        analytic.extend_from_slice(grads.get(id).as_slice());
    }

    // Central differences, one flat coordinate at a time.
    let eval = |theta: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, shapes, theta);
        let out = build(&mut tape, &ids)?;
        Ok(tape.value(out).as_slice()[0])
    };

    let mut perturbed = theta.to_vec();
    let mut entries = Vec::with_capacity(total);
    let mut max_rel_error: f64 = 0.0;
    let mut flat = 0usize;
    for (param, &(r, c)) in shapes.iter().enumerate() {
        for offset in 0..r * c {
            let base = perturbed[flat];
            perturbed[flat] = base + FD_STEP;
            let plus = eval(&perturbed)?;
            perturbed[flat] = base - FD_STEP;
            let minus = eval(&perturbed)?;
            perturbed[flat] = base;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::numeric(format!(
                    "grad_check: non-finite evaluation perturbing parameter {} offset {}",
                    param, offset
                )));
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let rel_error = relative_error(analytic[flat], numeric);
            max_rel_error = max_rel_error.max(rel_error);
            entries.push(GradCheckEntry {
                param,
                offset,
                analytic: analytic[flat],
                numeric,
                rel_error,
            });
            flat += 1;
        }
    }

    Ok(GradCheckReport {
        entries,
        max_rel_error,
        tolerance: tol,
        passed: max_rel_error <= tol,
    })
}

fn register_params(tape: &mut Tape, shapes: &ParamShapes, theta: &[f64]) -> Vec<NodeId> {
    let mut ids = Vec::with_capacity(shapes.len());
    let mut flat = 0usize;
    for &(r, c) in shapes {
        let values = theta[flat..flat + r * c].to_vec();
        flat += r * c;
        ids.push(tape.leaf(DenseMatrix::new_unchecked(r, c, values)));
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_passes_and_matches_known_gradient() {
        // f(x) = xᵀ A x; the analytic gradient is (A + Aᵀ)x.
        let a_vals = [2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 4.0];
        let a = DenseMatrix::from_values(3, 3, a_vals.to_vec()).unwrap();
        let x = [0.7, -1.1, 0.4];
        let report = grad_check(
            move |tape, ids| {
                let a = tape.leaf(a.clone());
                let ax = tape.matmul(a, ids[0])?;
                tape.dot(ids[0], ax)
            },
            &[(3, 1)],
            &x,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
        for i in 0..3 {
            let mut expected = 0.0;
            for j in 0..3 {
                expected += (a_vals[i * 3 + j] + a_vals[j * 3 + i]) * x[j];
            }
            assert!(
                (report.entries[i].analytic - expected).abs() < 1e-12,
                "component {}: {} vs {}",
                i,
                report.entries[i].analytic,
                expected
            );
        }
    }

    #[test]
    fn abs_at_zero_flagged_as_failure() {
        let report = grad_check(
            |tape, ids| {
                let y = tape.abs(ids[0]);
                Ok(tape.sum(y))
            },
            &[(1, 1)],
            &[0.0],
            1e-4,
        )
        .unwrap();
        assert!(!report.passed);
        assert_eq!(report.failures().count(), 1);
    }

    #[test]
    fn zero_function_passes_with_zero_error() {
        let report = grad_check(
            |tape, ids| {
                let z = tape.affine_scalar(ids[0], 0.0, 0.0);
                Ok(tape.sum(z))
            },
            &[(2, 1)],
            &[1.0, -2.0],
            1e-4,
        )
        .unwrap();
        assert!(report.passed);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_evaluation_reports_parameter_index() {
        // exp sits just below the f64 overflow threshold at the base point
        // and blows up once the second parameter is nudged by +FD_STEP.
        let gain = 30000.0;
        let base = 709.7 / gain;
        let err = grad_check(
            move |tape, ids| {
                let scaled = tape.affine_scalar(ids[1], gain, 0.0);
                let e = tape.exp(scaled);
                let both = tape.concat_rows(ids[0], e)?;
                Ok(tape.sum(both))
            },
            &[(1, 1), (1, 1)],
            &[0.0, base],
            1e-4,
        )
        .unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("parameter 1"), "{}", msg),
            other => panic!("expected numeric error, got {:?}", other),
        }
    }

    #[test]
    fn tanh_composite_matches_finite_differences() {
        // tanh(Wx + b) summed, gradients w.r.t. W, b, and x.
        let report = grad_check(
            |tape, ids| {
                let wx = tape.matmul(ids[0], ids[2])?;
                let z = tape.add(wx, ids[1])?;
                let y = tape.tanh(z);
                Ok(tape.sum(y))
            },
            &[(2, 3), (2, 1), (3, 1)],
            &[0.3, -0.2, 0.8, 1.1, -0.6, 0.1, 0.05, -0.4, 0.9, 0.2, -0.7],
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }
}
