use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    /// `m ← μ·m + g + wd·p`, `p ← p − lr·m`.
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    /// Bias-corrected Adam without weight decay.
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerConfig::Sgd {
            lr,
            momentum,
            weight_decay,
        }
    }

    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd {
                lr,
                momentum,
                weight_decay,
            } => lr >= 0.0 && (0.0..1.0).contains(&momentum) && weight_decay >= 0.0,
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                lr >= 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// Optimizer hyperparameters plus per-parameter accumulators.
///
/// Accumulators are allocated on the first step, shaped like the model.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    config: OptimizerConfig,
    step: u64,
    /// SGD momentum buffer, or Adam first moment.
    first: Option<Gradients<T>>,
    /// Adam second moment.
    second: Option<Gradients<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first: None,
            second: None,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. A non-finite gradient aborts the step before
    /// anything is modified.
    pub fn step(&mut self, model: &mut Mlp<T>, grads: &Gradients<T>) -> Result<()> {
        let layers = model.layers();
        let shapes_match = layers.len() == grads.layers.len()
            && layers
                .iter()
                .zip(&grads.layers)
                .all(|(l, g)| l.weight.shape() == g.weight.shape() && l.bias.len() == g.bias.len());
        if !shapes_match {
            return Err(Error::shape(
                "optimizer_step",
                format!("{} parameter tensors matching the model", 2 * layers.len()),
                format!("{} gradient tensors", 2 * grads.layers.len()),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("optimizer gradient".into()));
        }

        let first = self
            .first
            .get_or_insert_with(|| Gradients::zeros_like(model));
        self.step += 1;

        match self.config {
            OptimizerConfig::Sgd {
                lr,
                momentum,
                weight_decay,
            } => {
                let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
                for ((layer, g), m) in model
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut first.layers)
                {
                    let params = [layer.weight.as_mut_slice(), layer.bias.as_mut_slice()];
                    for ((p, g), m) in params.into_iter().zip(g.slices()).zip(m.slices_mut()) {
                        for ((p, &g), m) in p.iter_mut().zip(g).zip(m.iter_mut()) {
                            *m = mu * *m + g + wd * *p;
                            *p -= lr * *m;
                        }
                    }
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let second = self
                    .second
                    .get_or_insert_with(|| Gradients::zeros_like(model));
                let t = self.step as i32;
                let c1 = T::of(1.0 - beta1.powi(t));
                let c2 = T::of(1.0 - beta2.powi(t));
                let (lr, b1, b2, eps) = (T::of(lr), T::of(beta1), T::of(beta2), T::of(eps));
                for (((layer, g), m), v) in model
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut first.layers)
                    .zip(&mut second.layers)
                {
                    let params = [layer.weight.as_mut_slice(), layer.bias.as_mut_slice()];
                    for (((p, g), m), v) in params
                        .into_iter()
                        .zip(g.slices())
                        .zip(m.slices_mut())
                        .zip(v.slices_mut())
                    {
                        for (((p, &g), m), v) in
                            p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                        {
                            *m = b1 * *m + (T::one() - b1) * g;
                            *v = b2 * *v + (T::one() - b2) * g * g;
                            let m_hat = *m / c1;
                            let v_hat = *v / c2;
                            *p -= lr * m_hat / (v_hat.sqrt() + eps);
                        }
                    }
                }
            }
        }
        let finite = model
            .layers()
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()));
        if !finite {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        Ok(())
    }
}
