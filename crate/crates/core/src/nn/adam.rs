use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Anything Adam can update: an ordered list of parameter tensors.
pub trait ParamSet {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_name(&self, index: usize) -> String {
        format!("param{index}")
    }
}

impl ParamSet for Vec<Tensor> {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        // beta1 = 0.5 is the usual choice for adversarial training.
        Self {
            lr: 3e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// One bias-corrected Adam update. Moments are allocated lazily (as
    /// zeros) on the first call. A non-finite gradient aborts before any
    /// parameter is touched.
    pub fn step<P: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &[Tensor]) -> Result<()> {
        for (i, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient {
                    name: params.param_name(i),
                });
            }
        }
        let names: Vec<String> = (0..grads.len()).map(|i| params.param_name(i)).collect();
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                tensors.len()
            )));
        }
        for (i, (p, g)) in tensors.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::invalid(format!(
                    "gradient for `{}` has shape {:?}, parameter has {:?}",
                    names[i],
                    g.shape(),
                    p.shape()
                )));
            }
        }
        if self.first.is_empty() {
            self.first = tensors
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect();
            self.second = self.first.clone();
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in tensors
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for j in 0..pd.len() {
                let gj = g.data()[j];
                md[j] = beta1 * md[j] + (1.0 - beta1) * gj;
                vd[j] = beta2 * vd[j] + (1.0 - beta2) * gj * gj;
                let mhat = md[j] / c1;
                let vhat = vd[j] / c2;
                pd[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
