use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Binary cross-entropy, averaged over elements. Predictions must lie in (0, 1).
    Bce,
    /// Mean of `(p - t)^2` over elements.
    Mse,
}

/// Loss value and its gradient with respect to `prediction`.
pub fn loss_and_gradient(
    prediction: &[f64],
    target: &[f64],
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    if prediction.len() != target.len() {
        return Err(Error::rejected(format!(
            "prediction has {} values, target {}",
            prediction.len(),
            target.len()
        )));
    }
    if prediction.is_empty() {
        return Err(Error::rejected("empty prediction"));
    }
    let n = prediction.len() as f64;
    match kind {
        LossKind::Mse => {
            let mut loss = 0.0;
            let grad = prediction
                .iter()
                .zip(target)
                .map(|(p, t)| {
                    let d = p - t;
                    loss += d * d;
                    2.0 * d / n
                })
                .collect();
            Ok((loss / n, grad))
        }
        LossKind::Bce => {
            if let Some(p) = prediction.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
                return Err(Error::Domain(format!(
                    "binary cross-entropy needs predictions in (0, 1), got {p}"
                )));
            }
            let mut loss = 0.0;
            let grad = prediction
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
                    (p - t) / (p * (1.0 - p) * n)
                })
                .collect();
            Ok((loss / n, grad))
        }
    }
}

/// `lambda/2 * |params|^2` added to a loss contributes `lambda * params` to its gradient.
pub fn add_l2_gradient(parameters: &[f64], lambda: f64, gradient: &mut [f64]) {
    for (g, p) in gradient.iter_mut().zip(parameters) {
        *g += lambda * p;
    }
}
