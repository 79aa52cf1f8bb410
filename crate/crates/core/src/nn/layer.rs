use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    /// Normalised over every output of the layer.
    Softmax,
}

impl Activation {
    pub(crate) fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Linear => {}
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Softmax => softmax_in_place(z),
        }
    }

    /// Turns dL/dy into dL/dz in place, given the post-activation output `y`.
    pub(crate) fn backprop(self, y: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Linear => {}
            Activation::Relu => grad.iter_mut().zip(y).for_each(|(g, &y)| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Sigmoid => grad
                .iter_mut()
                .zip(y)
                .for_each(|(g, &y)| *g *= y * (1.0 - y)),
            Activation::Softmax => {
                let dot: f64 = grad.iter().zip(y).map(|(g, y)| g * y).sum();
                grad.iter_mut()
                    .zip(y)
                    .for_each(|(g, &y)| *g = y * (*g - dot));
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding: each spatial side shrinks by `kernel - 1`.
    Valid,
    /// Zero padding that preserves the spatial size (odd kernels only).
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense { bias: bool },
    Conv2d { kernel: usize, padding: Padding },
}

/// One layer of a [`NetworkModel`](super::NetworkModel).
///
/// Convolution shapes are `[height, width, channels]` in row-major HWC order; dense layers
/// flatten whatever they receive and have `input_shape = [n]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { bias: true },
            input_shape: vec![inputs],
            output_shape: vec![outputs],
            activation,
        }
    }

    /// A dense layer without bias. Fed one-hot inputs it is a lookup table.
    pub fn table(inputs: usize, outputs: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { bias: false },
            input_shape: vec![inputs],
            output_shape: vec![outputs],
            activation,
        }
    }

    pub fn conv2d(
        input_shape: [usize; 3],
        filters: usize,
        kernel: usize,
        padding: Padding,
        activation: Activation,
    ) -> Result<Self> {
        let [h, w, c] = input_shape;
        if kernel == 0 || filters == 0 || c == 0 {
            return Err(Error::rejected(
                "conv2d needs a positive kernel, filters and channels",
            ));
        }
        let (oh, ow) = match padding {
            Padding::Valid => {
                if kernel > h || kernel > w {
                    return Err(Error::rejected(format!(
                        "kernel {kernel} does not fit a {h}x{w} input without padding"
                    )));
                }
                (h - kernel + 1, w - kernel + 1)
            }
            Padding::Same => {
                if kernel.is_multiple_of(2) {
                    return Err(Error::rejected("same padding needs an odd kernel"));
                }
                (h, w)
            }
        };
        Ok(LayerSpec {
            kind: LayerKind::Conv2d { kernel, padding },
            input_shape: input_shape.to_vec(),
            output_shape: vec![oh, ow, filters],
            activation,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn parameter_count(&self) -> usize {
        match self.kind {
            LayerKind::Dense { bias } => {
                self.input_len() * self.output_len() + if bias { self.output_len() } else { 0 }
            }
            LayerKind::Conv2d { kernel, .. } => {
                let c_in = self.input_shape[2];
                let c_out = self.output_shape[2];
                kernel * kernel * c_in * c_out + c_out
            }
        }
    }

    /// Checks that the declared output shape follows from kind, kernel and input shape.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LayerKind::Dense { .. } => {
                if self.input_shape.len() != 1 || self.output_shape.len() != 1 {
                    return Err(Error::rejected("dense layers use one-dimensional shapes"));
                }
                if self.input_len() == 0 || self.output_len() == 0 {
                    return Err(Error::rejected("dense layer with an empty side"));
                }
                Ok(())
            }
            LayerKind::Conv2d { kernel, padding } => {
                let shape: [usize; 3] = self
                    .input_shape
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::rejected("conv2d input must be [h, w, c]"))?;
                let filters = self.output_shape.get(2).copied().unwrap_or(0);
                let expected = LayerSpec::conv2d(shape, filters, kernel, padding, self.activation)?;
                if expected.output_shape != self.output_shape {
                    return Err(Error::rejected(format!(
                        "conv2d output shape {:?} inconsistent with input {:?}",
                        self.output_shape, self.input_shape
                    )));
                }
                Ok(())
            }
        }
    }

    /// Pre-activation output for `input`, written to `out`.
    pub(crate) fn linear_forward(&self, params: &[f64], input: &[f64], out: &mut [f64]) {
        match self.kind {
            LayerKind::Dense { bias } => {
                let n_in = self.input_len();
                let n_out = self.output_len();
                let (weights, rest) = params.split_at(n_in * n_out);
                for (o, z) in out.iter_mut().enumerate() {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let mut acc = if bias { rest[o] } else { 0.0 };
                    for (w, x) in row.iter().zip(input) {
                        acc += w * x;
                    }
                    *z = acc;
                }
            }
            LayerKind::Conv2d { kernel, padding } => {
                let geo = ConvGeometry::new(self, kernel, padding);
                let (weights, bias) = params.split_at(geo.weight_len());
                for oy in 0..geo.out_h {
                    for ox in 0..geo.out_w {
                        for f in 0..geo.c_out {
                            let mut acc = bias[f];
                            geo.for_each_tap(oy, ox, |iy, ix, ky, kx| {
                                let x = &input[(iy * geo.in_w + ix) * geo.c_in..][..geo.c_in];
                                let w = &weights[geo.weight_index(f, ky, kx)..][..geo.c_in];
                                for (w, x) in w.iter().zip(x) {
                                    acc += w * x;
                                }
                            });
                            out[(oy * geo.out_w + ox) * geo.c_out + f] = acc;
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients into `param_grad` and, if asked, writes the input
    /// gradient. `grad_z` is the gradient with respect to the pre-activation output.
    pub(crate) fn linear_backward(
        &self,
        params: &[f64],
        input: &[f64],
        grad_z: &[f64],
        param_grad: &mut [f64],
        input_grad: Option<&mut [f64]>,
    ) {
        match self.kind {
            LayerKind::Dense { bias } => {
                let n_in = self.input_len();
                let n_out = self.output_len();
                let (gw, gb) = param_grad.split_at_mut(n_in * n_out);
                for (o, &g) in grad_z.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for (gw, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *gw += g * x;
                    }
                    if bias {
                        gb[o] += g;
                    }
                }
                if let Some(gi) = input_grad {
                    gi.iter_mut().for_each(|v| *v = 0.0);
                    for (o, &g) in grad_z.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        for (gi, w) in gi.iter_mut().zip(&params[o * n_in..(o + 1) * n_in]) {
                            *gi += g * w;
                        }
                    }
                }
            }
            LayerKind::Conv2d { kernel, padding } => {
                let geo = ConvGeometry::new(self, kernel, padding);
                let w_len = geo.weight_len();
                let (gw, gb) = param_grad.split_at_mut(w_len);
                let weights = &params[..w_len];
                let mut gi = input_grad;
                if let Some(gi) = gi.as_deref_mut() {
                    gi.iter_mut().for_each(|v| *v = 0.0);
                }
                for oy in 0..geo.out_h {
                    for ox in 0..geo.out_w {
                        for f in 0..geo.c_out {
                            let g = grad_z[(oy * geo.out_w + ox) * geo.c_out + f];
                            if g == 0.0 {
                                continue;
                            }
                            gb[f] += g;
                            geo.for_each_tap(oy, ox, |iy, ix, ky, kx| {
                                let base_in = (iy * geo.in_w + ix) * geo.c_in;
                                let base_w = geo.weight_index(f, ky, kx);
                                for c in 0..geo.c_in {
                                    gw[base_w + c] += g * input[base_in + c];
                                }
                                if let Some(gi) = gi.as_deref_mut() {
                                    for c in 0..geo.c_in {
                                        gi[base_in + c] += g * weights[base_w + c];
                                    }
                                }
                            });
                        }
                    }
                }
            }
        }
    }
}

struct ConvGeometry {
    kernel: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
    c_in: usize,
    out_h: usize,
    out_w: usize,
    c_out: usize,
}

impl ConvGeometry {
    fn new(spec: &LayerSpec, kernel: usize, padding: Padding) -> Self {
        ConvGeometry {
            kernel,
            pad: match padding {
                Padding::Valid => 0,
                Padding::Same => kernel / 2,
            },
            in_h: spec.input_shape[0],
            in_w: spec.input_shape[1],
            c_in: spec.input_shape[2],
            out_h: spec.output_shape[0],
            out_w: spec.output_shape[1],
            c_out: spec.output_shape[2],
        }
    }

    fn weight_len(&self) -> usize {
        self.c_out * self.kernel * self.kernel * self.c_in
    }

    // weights are laid out [filter][ky][kx][c_in]
    fn weight_index(&self, f: usize, ky: usize, kx: usize) -> usize {
        ((f * self.kernel + ky) * self.kernel + kx) * self.c_in
    }

    fn for_each_tap(
        &self,
        oy: usize,
        ox: usize,
        mut visit: impl FnMut(usize, usize, usize, usize),
    ) {
        for ky in 0..self.kernel {
            let iy = (oy + ky) as isize - self.pad as isize;
            if iy < 0 || iy >= self.in_h as isize {
                continue;
            }
            for kx in 0..self.kernel {
                let ix = (ox + kx) as isize - self.pad as isize;
                if ix < 0 || ix >= self.in_w as isize {
                    continue;
                }
                visit(iy as usize, ix as usize, ky, kx);
            }
        }
    }
}
