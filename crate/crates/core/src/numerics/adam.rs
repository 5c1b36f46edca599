use super::mlp::{Mlp, ParamTensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated on the first
/// step and matched to parameters by position.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    steps: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was NaN or infinite; nothing was updated.
    SkippedNonFinite,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
            skipped: 0,
        }
    }

    /// Number of steps skipped because of non-finite gradients.
    pub fn skipped_steps(&self) -> usize {
        self.skipped
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// Applies one update to `params` and clears their gradients.
    pub fn step(&mut self, mut params: Vec<&mut ParamTensor>) -> StepOutcome {
        let finite = params.iter().all(|p| p.grad.iter().all(|g| g.is_finite()));
        if !finite {
            self.skipped += 1;
            log::warn!("adam: non-finite gradient, step skipped ({} so far)", self.skipped);
            params.iter_mut().for_each(|p| p.zero_grad());
            return StepOutcome::SkippedNonFinite;
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter set changed between steps");

        self.steps += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - (beta1 as f64).powi(t);
        let c2 = 1.0 - (beta2 as f64).powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] as f64 / c1;
                let v_hat = v[i] as f64 / c2;
                let delta = (lr as f64 * m_hat / (v_hat.sqrt() + eps as f64)) as f32;
                let updated = p.values[i] - delta;
                if updated.is_finite() {
                    p.values[i] = updated;
                }
            }
            p.zero_grad();
        }
        StepOutcome::Applied
    }

    pub fn step_mlp(&mut self, net: &mut Mlp) -> StepOutcome {
        self.step(net.params_mut())
    }
}
