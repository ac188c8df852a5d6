use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.001,
            momentum: 0.0,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum: `v <- m*v + g`, `p <- p - lr*v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sgd {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// Updates every parameter in place. `names` label parameters in errors.
    /// All gradients are checked before any parameter moves.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        names: &[String],
    ) -> Result<()> {
        check(params, grads, names)?;
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        let lr = self.config.learning_rate;
        let m = self.config.momentum;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if m == 0.0 {
                for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv -= lr * gv;
                }
                continue;
            }
            let v = self.velocity[i].get_or_insert_with(|| vec![0.0; g.len()]);
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vv = m * *vv + gv;
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}

fn check(params: &[&mut Tensor], grads: &[&Tensor], names: &[String]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} params but {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape(label(names, i), p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(label(names, i)));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    t: i32,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let ok = config.learning_rate > 0.0
            && config.learning_rate.is_finite()
            && (0.0..1.0).contains(&config.beta1)
            && (0.0..1.0).contains(&config.beta2)
            && config.epsilon > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid Adam config {config:?}"
            )));
        }
        Ok(Adam {
            config,
            t: 0,
            moments: Vec::new(),
        })
    }

    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        names: &[String],
    ) -> Result<()> {
        check(params, grads, names)?;
        if self.moments.len() < params.len() {
            self.moments.resize(params.len(), None);
        }
        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) =
                self.moments[i].get_or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn label(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| format!("#{i}"))
}

/// One stateless step (no momentum history).
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[&Tensor], config: &SgdConfig) -> Result<()> {
    Sgd::new(SgdConfig {
        momentum: 0.0,
        ..*config
    })?
    .step(params, grads, &[])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn plain_step_arithmetic() {
        let mut p = t(1.0);
        sgd_step(&mut [&mut p], &[&t(0.5)], &SgdConfig::default()).unwrap();
        assert!((p.data()[0] - 0.9995).abs() < 1e-15);
        let mut q = t(1.0);
        sgd_step(&mut [&mut q], &[&t(0.0)], &SgdConfig::default()).unwrap();
        assert_eq!(q.data()[0], 1.0);
    }

    #[test]
    fn momentum_recurrence() {
        let mut opt = Sgd::new(SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 0,
        })
        .unwrap();
        let mut p = t(0.0);
        opt.step(&mut [&mut p], &[&t(1.0)], &[]).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-15);
        opt.step(&mut [&mut p], &[&t(1.0)], &[]).unwrap();
        assert!((p.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut opt = Sgd::new(SgdConfig::default()).unwrap();
        let mut p = t(1.0);
        let err = opt
            .step(
                &mut [&mut p],
                &[&t(f64::NAN)],
                &["conv1.weight".to_string()],
            )
            .unwrap_err();
        assert!(err.to_string().contains("conv1.weight"));
        assert_eq!(p.data()[0], 1.0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let mut p = t(1.0);
        opt.step(&mut [&mut p], &[&t(250.0)], &[]).unwrap();
        assert!((p.data()[0] - (1.0 - 0.001 * 250.0 / (250.0 + 1e-8))).abs() < 1e-15);
        let mut q = t(1.0);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        for _ in 0..3 {
            opt.step(&mut [&mut q], &[&t(-1e-3)], &[]).unwrap();
        }
        assert!(q.data()[0] > 1.0029 && q.data()[0] < 1.003);
    }

    #[test]
    fn rejects_bad_learning_rate() {
        assert!(Sgd::new(SgdConfig {
            learning_rate: 0.0,
            ..SgdConfig::default()
        })
        .is_err());
    }
}
