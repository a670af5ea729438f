use serde::{Deserialize, Serialize};

use super::labels::RouterLabel;
use crate::error::{invalid, shape, Result};
use crate::math::{log_sigmoid, sigmoid};
use crate::vision::{decide_rate, RouterParams};

/// Pooled tile feature with its router target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterExample {
    pub features: Vec<f64>,
    pub label: RouterLabel,
}

fn check_dataset(data: &[RouterExample]) -> Result<usize> {
    let first = data.first().ok_or_else(|| invalid("router dataset is empty"))?;
    let dim = first.features.len();
    if dim == 0 {
        return Err(shape("router features are empty"));
    }
    if let Some(bad) = data.iter().find(|e| e.features.len() != dim) {
        return Err(shape(format!(
            "router feature width {} differs from {dim}",
            bad.features.len()
        )));
    }
    Ok(dim)
}

/// Mean binary cross-entropy and its gradient (bias last).
pub fn logistic_loss_and_grad(params: &RouterParams, data: &[RouterExample]) -> Result<(f64, Vec<f64>)> {
    let dim = check_dataset(data)?;
    if params.dim() != dim {
        return Err(shape(format!("router dim {} vs feature width {dim}", params.dim())));
    }
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; dim + 1];
    for ex in data {
        let z = params.logit(&ex.features)?;
        let y = ex.label.as_f64();
        loss -= y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z);
        let err = (sigmoid(z) - y) / n;
        for (g, x) in grad.iter_mut().zip(&ex.features) {
            *g += err * x;
        }
        grad[dim] += err;
    }
    Ok((loss / n, grad))
}

/// Full-batch gradient descent from zero weights. Returns the parameters and
/// the loss recorded before each epoch plus the final loss.
pub fn train_router_with_history(
    data: &[RouterExample],
    epochs: usize,
    lr: f64,
) -> Result<(RouterParams, Vec<f64>)> {
    let dim = check_dataset(data)?;
    let mut params = RouterParams::zeros(dim);
    let mut history = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let (loss, grad) = logistic_loss_and_grad(&params, data)?;
        history.push(loss);
        let next: Vec<f64> = params.weights().iter().zip(&grad).map(|(w, g)| w - lr * g).collect();
        params = RouterParams::new(next)?;
    }
    history.push(logistic_loss_and_grad(&params, data)?.0);
    Ok((params, history))
}

pub fn train_router(data: &[RouterExample], epochs: usize, lr: f64) -> Result<RouterParams> {
    Ok(train_router_with_history(data, epochs, lr)?.0)
}

/// Fraction of examples whose routed rate matches the label at `threshold`.
pub fn router_accuracy(params: &RouterParams, data: &[RouterExample], threshold: f64) -> Result<f64> {
    check_dataset(data)?;
    let mut hits = 0usize;
    for ex in data {
        if decide_rate(params.score(&ex.features)?, threshold) == ex.label.rate() {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
