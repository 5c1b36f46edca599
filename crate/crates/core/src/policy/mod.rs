//! Goal-conditioned action generators: the advantage-weighted conditional
//! GAN, the likelihood baselines it is compared against, and the
//! mode-separation metrics of the line-bandit study.

mod baseline;
mod gan;

pub use baseline::{
    fit_baseline, fit_gan, mode_separation_metrics, BaselineGenerator, BaselineKind, FitConfig,
    GaussianPolicy, MeanAction, ModeSeparation,
};
pub use gan::{GanConfig, GanPolicy, GeneratorLoss};

use thiserror::Error;

use crate::numerics::{Matrix, NumericsError, RngStream};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("baseline kind `{0}` is not implemented")]
    NotImplemented(String),
    #[error("unknown baseline kind `{0}`")]
    UnknownKind(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Anything that proposes actions for a batch of (state, goal) rows.
pub trait Policy: Sync {
    fn action_dim(&self) -> usize;

    fn sample_actions(
        &self,
        states: &Matrix,
        goals: &Matrix,
        rng: &mut RngStream,
    ) -> Result<Matrix, NumericsError>;

    fn act(&self, state: &[f32], goal: &[f32], rng: &mut RngStream) -> Result<Vec<f32>, NumericsError> {
        Ok(self
            .sample_actions(&Matrix::row_vector(state), &Matrix::row_vector(goal), rng)?
            .into_vec())
    }
}
