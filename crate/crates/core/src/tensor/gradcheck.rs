//! Central finite-difference gradient checking.

use crate::error::Result;

use super::{Tape, Tensor, Var};

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|b| b * b).sum::<f64>().sqrt());
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Builds the graph `f(inputs)` (which must end in a scalar), differentiates it,
/// and compares every input gradient against central differences with step
/// `eps`. Returns one relative error per input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut errors = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * eps));
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}
