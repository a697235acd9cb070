use indexmap::IndexMap;

use crate::error::{GenexError, Result};
use crate::model::ModelParams;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// First and second moment buffers keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ModelParams<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(n, p)| (n.to_string(), Tensor::zeros(p.shape())))
                .collect()
        };
        AdamState {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update. Every trainable parameter must carry
    /// a gradient; otherwise nothing is modified and an error is returned.
    pub fn step(&mut self, params: &mut ModelParams<T>) -> Result<()> {
        for (name, p) in params.iter() {
            if p.requires_grad() && p.grad().is_none() {
                return Err(GenexError::InvalidInput(format!("parameter {name} has no gradient")));
            }
            let shape_ok = self.m.get(name).is_some_and(|m| m.shape() == p.shape());
            if !shape_ok {
                return Err(GenexError::Shape {
                    op: "adam",
                    left: p.shape().to_vec(),
                    right: self.m.get(name).map(|m| m.shape().to_vec()).unwrap_or_default(),
                });
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps, one) = (T::of(c.lr), T::of(c.eps), T::one());
        for (name, p) in params.iter_mut() {
            if !p.requires_grad() {
                continue;
            }
            let g = p.grad().expect("checked above").to_vec();
            let m = self.m.get_mut(name).expect("checked above").data_mut();
            let v = self.v.get_mut(name).expect("checked above").data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};

    fn setup() -> (ModelParams<f64>, AdamState<f64>) {
        let cfg = ModelConfig::tiny(Variant::Orig, 16);
        let p = ModelParams::init(&cfg, 0).unwrap();
        let s = AdamState::new(AdamConfig::default(), &p);
        (p, s)
    }

    fn set_grads(p: &mut ModelParams<f64>, g: f64) {
        for (_, t) in p.iter_mut() {
            let n = t.numel();
            t.set_grad(Some(vec![g; n]));
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut p, mut s) = setup();
        let before = p.clone();
        set_grads(&mut p, 0.5);
        s.step(&mut p).unwrap();
        for ((_, a), (_, b)) in p.iter().zip(before.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                let d = x - y;
                assert!((d + 1e-5).abs() < 1e-12, "{d}");
            }
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut p, mut s) = setup();
        let before = p.clone();
        set_grads(&mut p, 0.0);
        s.step(&mut p).unwrap();
        for ((_, a), (_, b)) in p.iter().zip(before.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn constant_gradient_steps_stay_near_lr() {
        let (mut p, mut s) = setup();
        for _ in 0..3 {
            let before = p.get("out.b").unwrap().data().to_vec();
            set_grads(&mut p, 0.3);
            s.step(&mut p).unwrap();
            let after = p.get("out.b").unwrap().data();
            let d = (after[0] - before[0]).abs();
            assert!((d - 1e-5).abs() < 1e-7, "{d}");
        }
    }

    #[test]
    fn missing_gradient_is_refused() {
        let (mut p, mut s) = setup();
        let before = p.clone();
        set_grads(&mut p, 0.1);
        p.get_mut("tok_emb").unwrap().zero_grad();
        assert!(s.step(&mut p).is_err());
        assert_eq!(s.t, 0);
        for ((_, a), (_, b)) in p.iter().zip(before.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }
}
