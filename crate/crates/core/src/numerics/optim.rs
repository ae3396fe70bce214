use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every entry, then zeroes the grads.
///
/// Gradients are validated before anything is written, so a non-finite
/// gradient leaves the store untouched.
pub fn adam_step(
    params: &mut ParamStore,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::InvalidArgument("adam step counts from 1".into()));
    }
    if let Some((name, _)) = params.iter().find(|(_, e)| !e.grad.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for (_, entry) in params.iter_mut() {
        let n = entry.value.len();
        let value = entry.value.data_mut();
        let grad = entry.grad.data();
        let m = entry.moment1.data_mut();
        for i in 0..n {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        }
        let v = entry.moment2.data_mut();
        for i in 0..n {
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        }
        let m = entry.moment1.data();
        let v = entry.moment2.data();
        for i in 0..n {
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.zero_grads();
    Ok(())
}

pub fn adam_step_with(params: &mut ParamStore, cfg: &AdamConfig, step: u64) -> Result<()> {
    adam_step(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, step)
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm {
        let k = max_norm / norm;
        for (_, e) in params.iter_mut() {
            e.grad.scale_in_place(k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Array2;

    fn scalar_store(value: f64, grad: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Array2::column(&[value])).unwrap();
        p.get_mut("w").unwrap().grad = Array2::column(&[grad]);
        p
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = scalar_store(0.25, 0.0);
        adam_step(&mut p, 1e-4, 0.9, 0.999, 1e-8, 1).unwrap();
        assert_eq!(p.value("w").data(), &[0.25]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m = 0.1, v = 0.001; bias correction gives m̂ = 1, v̂ = 1, so the
        // step is lr / (1 + eps).
        let mut p = scalar_store(1.0, 1.0);
        adam_step(&mut p, 1e-4, 0.9, 0.999, 1e-8, 1).unwrap();
        let expected = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((p.value("w")[(0, 0)] - expected).abs() < 1e-15);
        assert_eq!(p.get("w").unwrap().grad[(0, 0)], 0.0);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut p = ParamStore::new();
        for name in ["a", "b"] {
            p.insert(name, Array2::column(&[0.5, -0.5])).unwrap();
            p.get_mut(name).unwrap().grad = Array2::column(&[0.3, 2.0]);
        }
        adam_step(&mut p, 1e-3, 0.9, 0.999, 1e-8, 1).unwrap();
        assert_eq!(p.value("a"), p.value("b"));
    }

    #[test]
    fn lr_zero_keeps_values() {
        let mut p = scalar_store(3.0, -2.0);
        adam_step(&mut p, 0.0, 0.9, 0.999, 1e-8, 4).unwrap();
        assert_eq!(p.value("w").data(), &[3.0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_store(1.0, f64::NAN);
        let err = adam_step(&mut p, 1e-4, 0.9, 0.999, 1e-8, 1).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(p.value("w").data(), &[1.0]);
    }

    #[test]
    fn clip_leaves_small_norms() {
        let mut p = scalar_store(0.0, 1.0);
        assert_eq!(clip_grad_norm(&mut p, 3.0), 1.0);
        assert_eq!(p.get("w").unwrap().grad.data(), &[1.0]);
    }

    #[test]
    fn clip_scales_large_norms() {
        let mut p = ParamStore::new();
        p.insert("g", Array2::zeros(2, 1)).unwrap();
        p.get_mut("g").unwrap().grad = Array2::column(&[3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut p, 3.0), 5.0);
        let g = p.get("g").unwrap().grad.data();
        assert!((g[0] - 1.8).abs() < 1e-12 && (g[1] - 2.4).abs() < 1e-12);
    }

    #[test]
    fn clip_zero_grads() {
        let mut p = scalar_store(1.0, 0.0);
        assert_eq!(clip_grad_norm(&mut p, 3.0), 0.0);
        assert_eq!(p.get("w").unwrap().grad.data(), &[0.0]);
    }
}
