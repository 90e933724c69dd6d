use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::params::{LayerParams, Network};
use crate::real::Real;

/// Adam hyperparameters and the step-decay schedule of the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs at which the learning rate is divided by 10.
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_milestones: Vec::new(),
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr / 10f64.powi(passed as i32)
    }
}

/// First and second moment estimates, one flat buffer per parameter field.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

pub(crate) fn fields_mut<F: Real>(l: &mut LayerParams<F>) -> Vec<&mut [F]> {
    let mut out: Vec<&mut [F]> = vec![&mut l.beta, &mut l.p, &mut l.d, &mut l.b];
    out.push(l.w_ff.as_slice_mut().expect("standard layout"));
    if let Some(w) = l.w_rec.as_mut() {
        out.push(w.as_slice_mut().expect("standard layout"));
    }
    out
}

pub(crate) fn fields<F: Real>(l: &LayerParams<F>) -> Vec<&[F]> {
    let mut out: Vec<&[F]> = vec![&l.beta, &l.p, &l.d, &l.b];
    out.push(l.w_ff.as_slice().expect("standard layout"));
    if let Some(w) = l.w_rec.as_ref() {
        out.push(w.as_slice().expect("standard layout"));
    }
    out
}

/// One bias-corrected Adam update followed by clamping of `beta` and `p`.
pub fn adam_step<F: Real>(
    params: &mut Network<F>,
    grads: &Network<F>,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return invalid_arg(format!("learning rate must be positive, got {lr}"));
    }
    let mut dst: Vec<&mut [F]> = params.all_layers_mut().flat_map(fields_mut).collect();
    let src: Vec<&[F]> = grads.all_layers().flat_map(fields).collect();
    if dst.len() != src.len() || dst.iter().zip(&src).any(|(a, b)| a.len() != b.len()) {
        return invalid_arg("gradient shapes do not match parameters");
    }
    if state.m.is_empty() {
        state.m = src.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in dst.iter_mut().zip(&src).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..g.len() {
            let gi = g[i].as_f64();
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            p[i] = F::of(p[i].as_f64() - update);
        }
    }
    drop(dst);
    params.clamp();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::NetConfig;

    fn net() -> Network<f64> {
        Network::init(NetConfig::new(3, vec![2], 2, 1.0, 2), 1).unwrap()
    }

    fn filled(net: &Network<f64>, x: f64) -> Network<f64> {
        let mut g = net.clone();
        for l in g.all_layers_mut() {
            for f in fields_mut(l) {
                f.iter_mut().for_each(|v| *v = x);
            }
        }
        g
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = net();
        let before = p.clone();
        let g = filled(&p, 0.0);
        adam_step(&mut p, &g, &mut AdamState::default(), &AdamConfig::default(), 1e-3).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = net();
        let before = p.clone();
        let g = filled(&p, 1.0);
        adam_step(&mut p, &g, &mut AdamState::default(), &AdamConfig::default(), 1e-3).unwrap();
        let delta = before.layers[0].b[0] - p.layers[0].b[0];
        assert!((delta - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn clamps_after_step() {
        let mut p = net();
        p.layers[0].beta[0] = 0.99;
        let g = filled(&p, -1.0);
        adam_step(&mut p, &g, &mut AdamState::default(), &AdamConfig::default(), 0.5).unwrap();
        assert_eq!(p.layers[0].beta[0], 0.99);
        assert!(p.layers[0].p.iter().all(|&x| x <= 0.999));
    }

    #[test]
    fn milestones_divide_by_ten() {
        let cfg = AdamConfig {
            lr_milestones: vec![15, 30],
            ..AdamConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert!((cfg.lr_at(15) - 1e-4).abs() < 1e-18);
        assert!((cfg.lr_at(31) - 1e-5).abs() < 1e-18);
    }
}
