//! Finite-difference verification of the analytic gradients.

use super::model::{Grads, Mlp, Workspace};
use crate::error::Result;

pub const GRADCHECK_STEP: f64 = 1e-5;

/// Denominator floor for the relative error; differences of gradients
/// smaller than this are compared in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Parameter with the largest relative error.
    pub worst: String,
    pub checked: usize,
    /// Coordinates whose every step size crossed a ReLU kink.
    pub skipped: usize,
}

fn batch_loss(model: &Mlp<f64>, x: &[f64], labels: &[u8], ws: &mut Workspace<f64>) -> Result<(f64, Vec<bool>)> {
    model.forward(x, labels.len(), ws)?;
    Ok((model.loss(ws, labels), ws.relu_mask()))
}

/// Analytic gradient of the mean training-mode cross-entropy.
pub fn analytic_gradients(model: &Mlp<f64>, x: &[f64], labels: &[u8]) -> Result<Grads<f64>> {
    let mut m = model.clone();
    m.set_training(true);
    let mut ws = Workspace::new();
    m.forward(x, labels.len(), &mut ws)?;
    let mut grads = Grads::zeros_like(&m);
    m.backward(&mut ws, labels, 1.0 / labels.len() as f64, &mut grads);
    Ok(grads)
}

/// Compares analytic and central-difference gradients for every trainable
/// parameter. Coordinates where a step flips a ReLU are retried with smaller
/// steps.
pub fn gradient_check(model: &Mlp<f64>, x: &[f64], labels: &[u8]) -> Result<GradCheckReport> {
    let grads = analytic_gradients(model, x, labels)?;
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let names = model.param_names();

    let mut m = model.clone();
    m.set_training(true);
    let mut ws = Workspace::new();
    let (_, base_mask) = batch_loss(&m, x, labels, &mut ws)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst: String::new(),
        checked: 0,
        skipped: 0,
    };
    for (s, a_slice) in analytic.iter().enumerate() {
        for (e, &a) in a_slice.iter().enumerate() {
            let mut h = GRADCHECK_STEP;
            let mut fd = None;
            while h >= 1e-9 {
                let orig = m.param_slices_mut()[s][e];
                m.param_slices_mut()[s][e] = orig + h;
                let (plus, mask_p) = batch_loss(&m, x, labels, &mut ws)?;
                m.param_slices_mut()[s][e] = orig - h;
                let (minus, mask_m) = batch_loss(&m, x, labels, &mut ws)?;
                m.param_slices_mut()[s][e] = orig;
                if mask_p == base_mask && mask_m == base_mask {
                    fd = Some((plus - minus) / (2.0 * h));
                    break;
                }
                h /= 10.0;
            }
            let Some(f) = fd else {
                report.skipped += 1;
                continue;
            };
            let abs = (a - f).abs();
            let rel = abs / a.abs().max(f.abs()).max(GRADCHECK_FLOOR);
            report.checked += 1;
            report.max_absolute_error = report.max_absolute_error.max(abs);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = format!("{}[{e}]", names[s]);
            }
        }
    }
    Ok(report)
}
