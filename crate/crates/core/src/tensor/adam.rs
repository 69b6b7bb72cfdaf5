//! Bias-corrected Adam with optional global-norm gradient clipping.

use super::param::{Param, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::sync::Arc;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Clip gradients to this global L2 norm before the update; 0 disables.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 0.0,
        }
    }
}

pub struct Adam<S: Scalar> {
    cfg: AdamConfig,
    params: Vec<Arc<Param<S>>>,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &ParamSet<S>, cfg: AdamConfig) -> Self {
        let params: Vec<_> = params.iter().cloned().collect();
        let m = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
        let v = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
        Adam {
            cfg,
            params,
            m,
            v,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// One update; `grads` must align with the parameter set. Returns the
    /// global gradient norm before clipping.
    pub fn step(&mut self, grads: &[Vec<S>]) -> Result<f64> {
        self.step_with_lr(grads, self.cfg.lr)
    }

    /// Like [`Adam::step`] but with an explicit learning rate (for warmup
    /// schedules).
    pub fn step_with_lr(&mut self, grads: &[Vec<S>], lr: f64) -> Result<f64> {
        if grads.len() != self.params.len() {
            return Err(Error::invalid_input(format!(
                "gradient count {} does not match parameter count {}",
                grads.len(),
                self.params.len()
            )));
        }
        let mut sq_norm = 0.0f64;
        for (p, g) in self.params.iter().zip(grads) {
            if g.len() != p.numel() {
                return Err(Error::invalid_input(format!(
                    "gradient shape mismatch for {}",
                    p.name()
                )));
            }
            for &gv in g {
                let gf = gv.as_f64();
                if !gf.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite gradient for {}",
                        p.name()
                    )));
                }
                sq_norm += gf * gf;
            }
        }
        let norm = sq_norm.sqrt();
        let clip_scale = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };

        self.step += 1;
        let t = self.step as i32;
        let b1 = S::of_f64(self.cfg.beta1);
        let b2 = S::of_f64(self.cfg.beta2);
        let eps = S::of_f64(self.cfg.eps);
        let corr1 = S::of_f64(1.0 - self.cfg.beta1.powi(t));
        let corr2 = S::of_f64(1.0 - self.cfg.beta2.powi(t));
        let lr = S::of_f64(lr);
        let clip = S::of_f64(clip_scale);

        for ((p, g), (m, v)) in self
            .params
            .iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let mut value = p.value().as_ref().clone();
            for i in 0..value.len() {
                let gi = g[i] * clip;
                m[i] = b1 * m[i] + (S::one() - b1) * gi;
                v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.set_value(value);
        }
        Ok(norm)
    }

    /// Optimizer state as named checkpoint entries.
    pub fn state_entries(&self) -> Vec<(String, [usize; 2], Vec<S>)> {
        let mut out = vec![(
            "adam.step".to_string(),
            [1, 1],
            vec![S::of_f64(self.step as f64)],
        )];
        for ((p, m), v) in self.params.iter().zip(&self.m).zip(&self.v) {
            out.push((format!("adam.m.{}", p.name()), p.shape(), m.clone()));
            out.push((format!("adam.v.{}", p.name()), p.shape(), v.clone()));
        }
        out
    }

    /// Restore optimizer state previously produced by [`Adam::state_entries`].
    pub fn restore_state(
        &mut self,
        mut lookup: impl FnMut(&str) -> Option<Vec<S>>,
    ) -> Result<()> {
        let step = lookup("adam.step")
            .ok_or_else(|| Error::invalid_input("checkpoint missing adam.step"))?;
        self.step = step[0].as_f64() as u64;
        for (i, p) in self.params.iter().enumerate() {
            let m = lookup(&format!("adam.m.{}", p.name()))
                .ok_or_else(|| Error::invalid_input(format!("missing adam.m.{}", p.name())))?;
            let v = lookup(&format!("adam.v.{}", p.name()))
                .ok_or_else(|| Error::invalid_input(format!("missing adam.v.{}", p.name())))?;
            if m.len() != p.numel() || v.len() != p.numel() {
                return Err(Error::invalid_input(format!(
                    "adam state shape mismatch for {}",
                    p.name()
                )));
            }
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(vals: Vec<f64>) -> (ParamSet<f64>, Arc<Param<f64>>) {
        let mut set = ParamSet::new();
        let p = set.register("w", 1, vals.len(), vals);
        (set, p)
    }

    #[test]
    fn first_step_moves_by_about_lr_for_large_gradients() {
        // one step with constant gradient g: m_hat = g, v_hat = g^2,
        // update = lr * g / (|g| + eps) which is lr * sign(g) for |g| >> eps
        let (set, p) = one_param(vec![1.0, -2.0, 3.0]);
        let mut opt = Adam::new(&set, AdamConfig::default());
        let g = vec![vec![0.5, -4.0, 10.0]];
        opt.step(&g).unwrap();
        let v = p.value();
        let expect = [1.0 - 0.002, -2.0 + 0.002, 3.0 - 0.002];
        for (got, want) in v.iter().zip(expect) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (set, p) = one_param(vec![0.7, -0.1]);
        let mut opt = Adam::new(&set, AdamConfig::default());
        opt.step(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p.value().as_ref(), &vec![0.7, -0.1]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn quadratic_descends_from_one() {
        // f(w) = w^2, grad = 2w, lr = 0.002
        let (set, p) = one_param(vec![1.0]);
        let mut opt = Adam::new(&set, AdamConfig::default());
        let mut prev = 1.0f64;
        for _ in 0..2 {
            let w = p.value()[0];
            opt.step(&[vec![2.0 * w]]).unwrap();
            let now = p.value()[0];
            assert!(now < prev, "w must strictly decrease: {now} vs {prev}");
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_is_a_numeric_error() {
        let (set, _p) = one_param(vec![1.0]);
        let mut opt = Adam::new(&set, AdamConfig::default());
        match opt.step(&[vec![f64::NAN]]) {
            Err(Error::Numeric(_)) => {}
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn clipping_caps_the_applied_norm() {
        let (set, p) = one_param(vec![0.0, 0.0]);
        let cfg = AdamConfig {
            clip_norm: 1.0,
            ..Default::default()
        };
        let mut opt = Adam::new(&set, cfg);
        let raw_norm = opt.step(&[vec![30.0, 40.0]]).unwrap();
        assert!((raw_norm - 50.0).abs() < 1e-12);
        // after clipping, both coordinates still move (direction preserved)
        let v = p.value();
        assert!(v[0] < 0.0 && v[1] < 0.0);
    }
}
