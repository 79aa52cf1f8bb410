use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use crate::error::{Error, Result};

/// A real tensor with an explicit shape. Data is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::rejected(format!(
                "shape {shape:?} holds {len} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// A feed-forward stack of layers over one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    layers: Vec<LayerSpec>,
    parameters: Vec<f64>,
    offsets: Vec<usize>,
}

impl NetworkModel {
    /// Builds a model with all parameters at zero.
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::rejected("a network needs at least one layer"));
        }
        for layer in &layers {
            layer.validate()?;
        }
        for pair in layers.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            let chained = if next.input_shape.len() == 1 {
                prev.output_len() == next.input_len()
            } else {
                prev.output_shape == next.input_shape
            };
            if !chained {
                return Err(Error::rejected(format!(
                    "layer output {:?} does not feed layer input {:?}",
                    prev.output_shape, next.input_shape
                )));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut total = 0;
        for layer in &layers {
            offsets.push(total);
            total += layer.parameter_count();
        }
        offsets.push(total);
        Ok(NetworkModel {
            layers,
            parameters: vec![0.0; total],
            offsets,
        })
    }

    /// Builds a model with every parameter drawn uniformly from `[-scale, scale]`.
    pub fn with_uniform_init<R: Rng + ?Sized>(
        layers: Vec<LayerSpec>,
        rng: &mut R,
        scale: f64,
    ) -> Result<Self> {
        let mut model = NetworkModel::new(layers)?;
        for p in &mut model.parameters {
            *p = rng.gen_range(-scale..=scale);
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn parameters(&self) -> &[f64] {
        &self.parameters
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.parameters
    }

    pub fn set_parameters(&mut self, parameters: Vec<f64>) -> Result<()> {
        if parameters.len() != self.parameters.len() {
            return Err(Error::rejected(format!(
                "expected {} parameters, got {}",
                self.parameters.len(),
                parameters.len()
            )));
        }
        self.parameters = parameters;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters.len()
    }

    /// Start offset of each layer's parameters, plus the total as the last entry.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.layers[0].input_shape
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input_len()
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.layers[self.layers.len() - 1].output_shape
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].output_len()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input_shape(input.shape())?;
        let out = self.forward_slice(input.data())?;
        Tensor::new(self.output_shape().to_vec(), out)
    }

    /// Forward pass over a flat input of the right length.
    pub fn forward_slice(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input_len(input.len())?;
        let mut acts = self.trace(input);
        Ok(acts.pop().unwrap_or_default())
    }

    /// Gradient of `output · output_gradient` with respect to the parameters.
    pub fn backward(&self, input: &Tensor, output_gradient: &Tensor) -> Result<Vec<f64>> {
        self.check_input_shape(input.shape())?;
        if output_gradient.shape() != self.output_shape() {
            return Err(Error::rejected(format!(
                "output gradient shape {:?} does not match output {:?}",
                output_gradient.shape(),
                self.output_shape()
            )));
        }
        let mut grad = vec![0.0; self.parameter_count()];
        self.backward_into(input.data(), output_gradient.data(), &mut grad)?;
        Ok(grad)
    }

    /// Adds the parameter gradient of `output · output_gradient` to `accumulator` and returns
    /// the gradient with respect to the input.
    pub fn backward_into(
        &self,
        input: &[f64],
        output_gradient: &[f64],
        accumulator: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check_input_len(input.len())?;
        if output_gradient.len() != self.output_len() {
            return Err(Error::rejected(format!(
                "output gradient has {} values, network emits {}",
                output_gradient.len(),
                self.output_len()
            )));
        }
        if accumulator.len() != self.parameter_count() {
            return Err(Error::rejected("gradient accumulator has the wrong length"));
        }
        let acts = self.trace(input);
        let mut grad = output_gradient.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&acts[i + 1], &mut grad);
            let params = &self.parameters[self.offsets[i]..self.offsets[i + 1]];
            let param_grad = &mut accumulator[self.offsets[i]..self.offsets[i + 1]];
            let mut input_grad = vec![0.0; layer.input_len()];
            layer.linear_backward(params, &acts[i], &grad, param_grad, Some(&mut input_grad));
            grad = input_grad;
        }
        Ok(grad)
    }

    // acts[0] is the input, acts[i + 1] the post-activation output of layer i.
    fn trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let params = &self.parameters[self.offsets[i]..self.offsets[i + 1]];
            let mut out = vec![0.0; layer.output_len()];
            layer.linear_forward(params, &acts[i], &mut out);
            layer.activation.apply(&mut out);
            acts.push(out);
        }
        acts
    }

    fn check_input_shape(&self, shape: &[usize]) -> Result<()> {
        let first = &self.layers[0];
        let ok = if first.input_shape.len() == 1 {
            shape.iter().product::<usize>() == first.input_len()
        } else {
            shape == first.input_shape.as_slice()
        };
        if ok {
            Ok(())
        } else {
            Err(Error::rejected(format!(
                "input shape {shape:?} does not match {:?}",
                first.input_shape
            )))
        }
    }

    fn check_input_len(&self, len: usize) -> Result<()> {
        if len == self.input_len() {
            Ok(())
        } else {
            Err(Error::rejected(format!(
                "input has {len} values, network expects {}",
                self.input_len()
            )))
        }
    }
}
