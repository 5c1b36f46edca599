//! Independent f64 reference implementations shared by the integration
//! tests. Nothing here calls into the library's math; networks are copied
//! out of `Mlp` parameter tensors and re-evaluated from scratch.
#![allow(dead_code)]

use goplan::numerics::{Activation, Mlp, RngStream};

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Identity => x,
        Activation::Tanh => x.tanh(),
        Activation::Relu => x.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// f64 copy of an MLP. Tensor `2k` is layer k's weight (`[in, out]`
/// row-major) and `2k + 1` its bias, matching `Mlp::params` order.
#[derive(Clone, Debug)]
pub struct Net64 {
    dims: Vec<(usize, usize)>,
    pub tensors: Vec<Vec<f64>>,
    hidden: Activation,
    output: Activation,
}

impl Net64 {
    pub fn from_mlp(m: &Mlp) -> Self {
        let w = m.widths();
        Self {
            dims: w.windows(2).map(|p| (p[0], p[1])).collect(),
            tensors: m
                .params()
                .iter()
                .map(|t| t.values.iter().map(|&v| v as f64).collect())
                .collect(),
            hidden: m.hidden_activation(),
            output: m.output_activation(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.dims.len() - 1;
        for (k, &(fan_in, fan_out)) in self.dims.iter().enumerate() {
            assert_eq!(h.len(), fan_in);
            let (w, b) = (&self.tensors[2 * k], &self.tensors[2 * k + 1]);
            let a = if k == last { self.output } else { self.hidden };
            h = (0..fan_out)
                .map(|j| {
                    let s: f64 = b[j] + (0..fan_in).map(|i| h[i] * w[i * fan_out + j]).sum::<f64>();
                    act(a, s)
                })
                .collect();
        }
        h
    }
}

/// `[s, g, g − s[..|g|]]`.
pub fn goal_features(s: &[f64], g: &[f64]) -> Vec<f64> {
    let mut f = s.to_vec();
    f.extend_from_slice(g);
    f.extend(g.iter().zip(s).map(|(gi, si)| gi - si));
    f
}

pub fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// `|a − b| ≤ 1e-4·max(|a|, |b|) + 1e-6`.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()) + 1e-6
}

pub struct ProbeReport {
    pub probes: usize,
    pub failures: Vec<String>,
}

/// Central differences (step 1e-3) of `loss` with respect to randomly chosen
/// entries of `net`, compared against `analytic[tensor][index]`.
pub fn probe_gradients(
    net: &Net64,
    analytic: &[Vec<f32>],
    probes: usize,
    seed: u64,
    loss: impl Fn(&Net64) -> f64,
) -> ProbeReport {
    let h = 1e-3;
    let sizes: Vec<usize> = net.tensors.iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = RngStream::new(seed);
    let mut failures = Vec::new();
    for _ in 0..probes {
        let mut flat = rng.below(total);
        let mut t = 0;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        let mut plus = net.clone();
        plus.tensors[t][flat] += h;
        let mut minus = net.clone();
        minus.tensors[t][flat] -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let a = analytic[t][flat] as f64;
        if !grad_close(a, numeric) {
            failures.push(format!("tensor {t} entry {flat}: analytic {a:e} numeric {numeric:e}"));
        }
    }
    ProbeReport { probes, failures }
}

/// Value iteration for a deterministic chain; `next[s]` and `reward[s]`
/// describe the single transition out of `s`, `terminal[s]` stops bootstrapping.
pub fn chain_values(next: &[usize], reward: &[f64], terminal: &[bool], gamma: f64) -> Vec<f64> {
    let mut v = vec![0.0; next.len()];
    for _ in 0..10_000 {
        let nv: Vec<f64> = (0..next.len())
            .map(|s| reward[s] + if terminal[s] { 0.0 } else { gamma * v[next[s]] })
            .collect();
        let delta = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = nv;
        if delta < 1e-12 {
            break;
        }
    }
    v
}

pub mod scenarios;
pub mod cli;
