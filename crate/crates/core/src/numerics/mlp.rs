//! Multi-layer perceptrons with a recorded tape for reverse-mode gradients.
//!
//! `forward` records every layer input and post-activation so that a later
//! `backward` can push an upstream gradient through the same computation.
//! `infer` is the side-effect-free variant used by frozen models.

use super::matrix::Matrix;
use super::rng::RngStream;
use super::NumericsError;

/// Learnable tensor with an accumulated gradient of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    shape: Vec<usize>,
    pub values: Vec<f32>,
    pub grad: Vec<f32>,
}

impl ParamTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f32>) -> Result<Self, NumericsError> {
        let n: usize = shape.iter().product();
        if n != values.len() || shape.iter().any(|&d| d == 0) {
            return Err(NumericsError::Shape(format!(
                "{} values do not fill shape {:?}",
                values.len(),
                shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f32) -> f32 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f32) -> f32 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weight stored as `[fan_in, fan_out]`, so a batch computes `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Linear {
    fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug)]
struct Tape {
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Post-activation output of each layer.
    outputs: Vec<Matrix>,
}

#[derive(Clone, Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Linear>,
    hidden: Activation,
    output: Activation,
    tape: Option<Tape>,
}

impl PartialEq for Mlp {
    /// Architecture and parameter equality; the tape is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.widths == other.widths
            && self.hidden == other.hidden
            && self.output == other.output
            && self.layers == other.layers
    }
}

impl Mlp {
    /// Randomly initialized network (uniform Glorot scale for tanh/sigmoid/
    /// identity, He scale for relu). Biases start at zero.
    pub fn new(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut RngStream,
    ) -> Result<Self, NumericsError> {
        let mut net = Self::zeros(widths, hidden, output)?;
        for layer in &mut net.layers {
            let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
            let limit = match hidden {
                Activation::Relu => (6.0 / fan_in as f32).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f32).sqrt(),
            };
            for w in &mut layer.weight.values {
                *w = rng.uniform(-limit, limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Result<Self, NumericsError> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(NumericsError::Config(format!(
                "an MLP needs at least two positive layer widths, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| Linear {
                weight: ParamTensor::zeros(&[w[0], w[1]]),
                bias: ParamTensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
            hidden,
            output,
            tape: None,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Parameter tensors with stable names `{prefix}.{layer}.weight|bias`.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, &ParamTensor)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), &l.weight));
            out.push((format!("{prefix}.{i}.bias"), &l.bias));
        }
        out
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, input: &Matrix) -> Result<(), NumericsError> {
        if input.cols() != self.input_dim() {
            return Err(NumericsError::Shape(format!(
                "network expects input width {}, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, i: usize, x: &Matrix) -> Matrix {
        let layer = &self.layers[i];
        let mut y = x.matmul_raw(&layer.weight.values, layer.fan_in(), layer.fan_out());
        let act = self.activation_for(i);
        let bias = &layer.bias.values;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(bias) {
                *v = act.apply(*v + b);
            }
        }
        y
    }

    /// Batched forward pass that records the tape for `backward`.
    pub fn forward(&mut self, input: &Matrix) -> Result<Matrix, NumericsError> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            let y = self.layer_forward(i, &x);
            inputs.push(x);
            outputs.push(y.clone());
            x = y;
        }
        self.tape = Some(Tape { inputs, outputs });
        Ok(x)
    }

    /// Forward pass without recording; a pure function of parameters and input.
    pub fn infer(&self, input: &Matrix) -> Result<Matrix, NumericsError> {
        self.check_input(input)?;
        let mut x = self.layer_forward(0, input);
        for i in 1..self.layers.len() {
            x = self.layer_forward(i, &x);
        }
        Ok(x)
    }

    pub fn infer_vec(&self, input: &[f32]) -> Result<Vec<f32>, NumericsError> {
        Ok(self.infer(&Matrix::row_vector(input))?.into_vec())
    }

    /// Pushes `upstream` (∂loss/∂output, one row per recorded sample) back
    /// through the recorded forward pass. Parameter gradients are
    /// accumulated; the gradient with respect to the input is returned.
    /// Consumes the tape.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<Matrix, NumericsError> {
        let tape = self.tape.take().ok_or(NumericsError::NoTape)?;
        let batch = tape.inputs[0].rows();
        if upstream.rows() != batch || upstream.cols() != self.output_dim() {
            return Err(NumericsError::Shape(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                batch,
                self.output_dim()
            )));
        }
        let mut grad = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let act = self.activation_for(i);
            let out = &tape.outputs[i];
            for (g, &y) in grad.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *g *= act.derivative_from_output(y);
            }
            let layer = &mut self.layers[i];
            tape.inputs[i].matmul_tn_acc(&grad, &mut layer.weight.grad);
            grad.column_sums_acc(&mut layer.bias.grad);
            grad = grad.matmul_nt_raw(&layer.weight.values, layer.fan_in(), layer.fan_out());
        }
        Ok(grad)
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    pub fn clear_tape(&mut self) {
        self.tape = None;
    }

    /// `self ← rate·self + (1 − rate)·source`, parameter by parameter.
    pub fn polyak_from(&mut self, source: &Mlp, rate: f32) {
        assert_eq!(self.widths, source.widths, "polyak between different architectures");
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            for (d, &s) in dst.values.iter_mut().zip(&src.values) {
                *d = rate * *d + (1.0 - rate) * s;
            }
        }
    }

    /// Euclidean distance between the flattened parameter vectors.
    pub fn parameter_distance(&self, other: &Mlp) -> f64 {
        self.params()
            .iter()
            .zip(other.params())
            .flat_map(|(a, b)| a.values.iter().zip(&b.values))
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}
