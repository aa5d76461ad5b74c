//! AdamW with decoupled weight decay and the warmup-plus-cosine learning
//! rate schedule.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimHyper {
    pub lr_peak: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Default for OptimHyper {
    fn default() -> Self {
        Self {
            lr_peak: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            eps: 1e-8,
            warmup_steps: 500,
            total_steps: 5000,
        }
    }
}

/// Linear warmup from zero to the peak, then cosine annealing to zero.
/// Steps beyond the schedule clamp to the final value.
pub fn lr_at(step: usize, sched: &OptimHyper) -> f64 {
    let warmup = sched.warmup_steps.min(sched.total_steps);
    if step >= sched.total_steps {
        return 0.0;
    }
    if warmup > 0 && step <= warmup {
        return sched.lr_peak * step as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (sched.total_steps - warmup) as f64;
    sched.lr_peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Per-parameter first/second moment accumulators plus the step count.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub hyper: OptimHyper,
}

impl OptimState {
    pub fn new(params: &ParamStore, hyper: OptimHyper) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            hyper,
        }
    }
}

/// One AdamW update: bias-corrected moments drive the adaptive term, the
/// decoupled decay w -= lr * wd * w applies separately from it (both read
/// the pre-update weights).
pub fn adamw_step(params: &mut ParamStore, grads: &[Vec<f64>], state: &mut OptimState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    for (i, grad) in grads.iter().enumerate() {
        let entry = params.entry_mut(i);
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (j, g) in grad.iter().enumerate() {
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            let w = entry.data[j];
            entry.data[j] = w - lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * w);
        }
    }
}

/// Scale all gradients so the global L2 norm does not exceed `cap`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], cap: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > cap && norm > 0.0 {
        let scale = cap / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(warmup: usize, total: usize) -> OptimHyper {
        OptimHyper {
            warmup_steps: warmup,
            total_steps: total,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_endpoints() {
        let s = sched(100, 1000);
        assert_eq!(lr_at(0, &s), 0.0);
        assert_eq!(lr_at(100, &s), 1e-3);
        assert_eq!(lr_at(1000, &s), 0.0);
        assert_eq!(lr_at(5000, &s), 0.0, "beyond the schedule clamps to 0");
    }

    #[test]
    fn schedule_is_continuous_at_the_junction() {
        let s = sched(100, 1000);
        let before = lr_at(100, &s);
        let after = lr_at(101, &s);
        assert!((before - after).abs() < 1e-5 * s.lr_peak * 10.0);
        // Cosine at progress 0 equals the peak.
        assert!((before - s.lr_peak).abs() < 1e-15);
    }

    fn one_param(w: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", vec![1], vec![w]);
        p
    }

    #[test]
    fn zero_grad_zero_decay_is_a_fixed_point() {
        let mut params = one_param(0.7);
        let hyper = OptimHyper {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut state = OptimState::new(&params, hyper);
        adamw_step(&mut params, &[vec![0.0]], &mut state, 1e-3);
        assert_eq!(params.entry(0).data[0], 0.7);
    }

    #[test]
    fn zero_grad_decay_shrinks_weights_decoupled() {
        let mut params = one_param(1.0);
        let hyper = OptimHyper::default(); // wd = 0.01
        let mut state = OptimState::new(&params, hyper);
        adamw_step(&mut params, &[vec![0.0]], &mut state, 1e-3);
        assert!((params.entry(0).data[0] - (1.0 - 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_approximately_minus_lr_times_sign() {
        let mut params = one_param(0.0);
        let hyper = OptimHyper {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut state = OptimState::new(&params, hyper);
        adamw_step(&mut params, &[vec![0.5]], &mut state, 1e-3);
        // m_hat = g, v_hat = g^2: delta = -lr * g / (|g| + eps) ~ -lr.
        assert!((params.entry(0).data[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn clipping_never_increases_the_norm() {
        let mut grads = vec![vec![3.0, 4.0], vec![12.0]];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 13.0).abs() < 1e-12);
        let after: f64 = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((after - 1.0).abs() < 1e-12);

        let mut small = vec![vec![0.1, 0.2]];
        let norm = clip_global_norm(&mut small, 1.0);
        assert!(norm < 1.0);
        assert_eq!(small[0], vec![0.1, 0.2], "below the cap stays untouched");
    }
}
