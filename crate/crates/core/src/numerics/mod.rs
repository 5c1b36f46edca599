//! Dense tensor math, tape-based MLP gradients, Adam, counter-based RNG and
//! the binary checkpoint format. Every learned component is built on this.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;
mod rng;

pub use adam::{Adam, AdamConfig, StepOutcome};
pub use checkpoint::{Checkpoint, NamedTensor, MAGIC};
pub use matrix::Matrix;
pub use mlp::{sigmoid, softplus, Activation, Linear, Mlp, ParamTensor};
pub use rng::RngStream;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("backward called without a recorded forward pass")]
    NoTape,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Network shape and optimizer settings shared by every learned component.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub adam: AdamConfig,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_width: 256,
            hidden_layers: 2,
            activation: Activation::Tanh,
            adam: AdamConfig::default(),
        }
    }
}

impl NetConfig {
    /// Layer widths `input, hidden × layers, output`.
    pub fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        w.push(output);
        w
    }

    pub fn build(
        &self,
        input: usize,
        output: usize,
        output_activation: Activation,
        rng: &mut RngStream,
    ) -> Result<Mlp, NumericsError> {
        Mlp::new(&self.widths(input, output), self.activation, output_activation, rng)
    }
}

/// Result of one optimizer step on a loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateOutcome {
    pub loss: f32,
    /// The loss or its gradient was non-finite and no update was applied.
    pub skipped: bool,
}
