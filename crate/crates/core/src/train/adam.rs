use crate::error::{Error, Result};
use crate::params::ModelParams;

use super::AdamConfig;

/// Adam with bias correction and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ModelParams) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Adam {
            cfg,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn first_moment(&self, param: usize) -> &[f64] {
        &self.m[param]
    }

    pub fn second_moment(&self, param: usize) -> &[f64] {
        &self.v[param]
    }

    /// One update. `grads[i]` belongs to the `i`-th parameter of `params`.
    /// Non-finite gradients abort before anything is modified.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>]) -> Result<()> {
        for (p, g) in params.iter().zip(grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("gradient of `{}`", p.name),
                });
            }
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let decay = 1.0 - lr * weight_decay;
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for (j, theta) in p.value.data_mut().iter_mut().enumerate() {
                *theta *= decay;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *theta -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor4;

    fn scalar_params(x: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.insert("theta", Tensor4::scalar(x)).unwrap();
        p
    }

    fn value(p: &ModelParams) -> f64 {
        p.value("theta").unwrap().data()[0]
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = scalar_params(1.0);
        let mut opt = Adam::new(cfg, &p);
        opt.step(&mut p, &[vec![-3.0]]).unwrap();
        assert!((value(&p) - 1.01).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_a_no_op_without_decay() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = scalar_params(0.7);
        let mut opt = Adam::new(cfg, &p);
        opt.step(&mut p, &[vec![0.0]]).unwrap();
        assert_eq!(value(&p), 0.7);
        assert_eq!(opt.first_moment(0), &[0.0]);
        assert_eq!(opt.second_moment(0), &[0.0]);
    }

    #[test]
    fn zero_gradient_applies_exact_decay() {
        let cfg = AdamConfig {
            lr: 1e-3,
            weight_decay: 0.25,
            ..AdamConfig::default()
        };
        let mut p = scalar_params(-2.5);
        let mut opt = Adam::new(cfg, &p);
        opt.step(&mut p, &[vec![0.0]]).unwrap();
        assert_eq!(value(&p), -2.5 * (1.0 - 1e-3 * 0.25));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_params(1.0);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let err = opt.step(&mut p, &[vec![f64::NAN]]).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(value(&p), 1.0);
    }

    #[test]
    fn five_steps_on_a_parabola() {
        // hand-stepped reference trajectory for f = theta^2 from theta = 1
        let expected = [
            0.9000000005,
            0.8004122286917928,
            0.7015862729460303,
            0.603939060573746,
            0.507963659264342,
        ];
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = scalar_params(1.0);
        let mut opt = Adam::new(cfg, &p);
        for want in expected {
            let g = 2.0 * value(&p);
            opt.step(&mut p, &[vec![g]]).unwrap();
            assert!((value(&p) - want).abs() < 1e-12, "{} vs {want}", value(&p));
        }
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn decay_multiplies_every_parameter() {
        let mut p = ModelParams::new();
        p.insert(
            "a",
            Tensor4::new(crate::tensor::Shape::new(1, 1, 1, 3), vec![1.0, -2.0, 0.5]).unwrap(),
        )
        .unwrap();
        p.insert("b", Tensor4::scalar(7.0)).unwrap();
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(cfg, &p);
        opt.step(&mut p, &[vec![0.0; 3], vec![0.0]]).unwrap();
        let k = 1.0 - 0.01 * 0.1;
        assert_eq!(p.value("a").unwrap().data(), &[k, -2.0 * k, 0.5 * k]);
        assert_eq!(p.value("b").unwrap().data(), &[7.0 * k]);
    }
}
