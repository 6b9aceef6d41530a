//! Central finite-difference checks for anything built on a [`Tape`].

use super::{Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Norm-relative error `|a - n| / (|a| + |n|)` per input.
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of the scalar produced by `build` with
/// central differences of step `step` on every input entry.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, build: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = build(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].values()[i];
            probe[k].values_mut()[i] = orig + step;
            let plus = eval(&probe)?;
            probe[k].values_mut()[i] = orig - step;
            let minus = eval(&probe)?;
            probe[k].values_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
            + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        relative_errors.push(if scale == 0.0 { 0.0 } else { diff / scale });
    }
    Ok(GradCheck { relative_errors })
}
