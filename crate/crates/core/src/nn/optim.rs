use serde::{Deserialize, Serialize};

use super::model::NetworkModel;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        }
    }
}

/// Plain SGD or bias-corrected Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_size: f64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn sgd(step_size: f64) -> Result<Self> {
        check_step(step_size)?;
        Ok(OptimizerState {
            kind: OptimizerKind::Sgd,
            step_size,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            step_count: 0,
        })
    }

    /// Adam with beta1 0.9, beta2 0.999, epsilon 1e-8 over `parameter_count` parameters.
    pub fn adam(step_size: f64, parameter_count: usize) -> Result<Self> {
        check_step(step_size)?;
        Ok(OptimizerState {
            kind: OptimizerKind::Adam,
            step_size,
            first_moment: vec![0.0; parameter_count],
            second_moment: vec![0.0; parameter_count],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
        })
    }

    pub fn step(
        &mut self,
        model: &mut NetworkModel,
        gradient: &[f64],
        direction: Direction,
    ) -> Result<()> {
        self.apply(model.parameters_mut(), gradient, direction)
    }

    pub fn apply(
        &mut self,
        parameters: &mut [f64],
        gradient: &[f64],
        direction: Direction,
    ) -> Result<()> {
        if gradient.len() != parameters.len() {
            return Err(Error::rejected(format!(
                "gradient has {} entries for {} parameters",
                gradient.len(),
                parameters.len()
            )));
        }
        let sign = direction.sign();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in parameters.iter_mut().zip(gradient) {
                    *p += sign * self.step_size * g;
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.len() != parameters.len() {
                    return Err(Error::rejected(format!(
                        "optimizer tracks {} parameters, model has {}",
                        self.first_moment.len(),
                        parameters.len()
                    )));
                }
                let t = (self.step_count + 1) as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (((p, g), m), v) in parameters
                    .iter_mut()
                    .zip(gradient)
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p += sign * self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            }
        }
        self.step_count += 1;
        Ok(())
    }
}

fn check_step(step_size: f64) -> Result<()> {
    if step_size > 0.0 && step_size.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "step size must be positive, got {step_size}"
        )))
    }
}
