//! Adam over the flat parameter vector with per-entry learning rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ParamGroup, ParamLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Mean learning rate at the first iteration, decayed exponentially to `mean_final`.
    pub mean: f64,
    pub mean_final: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub normal: f64,
    /// Diffuse, specular and roughness logits.
    pub brdf: f64,
    pub encoding: f64,
    pub classifier: f64,
    pub environment: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1.6e-4,
            mean_final: 1.6e-6,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            normal: 2.5e-3,
            brdf: 2.5e-3,
            encoding: 2.5e-3,
            classifier: 2.5e-3,
            environment: 1e-2,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mean,
            self.mean_final,
            self.log_scale,
            self.rotation,
            self.opacity,
            self.normal,
            self.brdf,
            self.encoding,
            self.classifier,
            self.environment,
        ];
        if all.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config(
                "learning rates must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    /// Mean rate at `iteration` of `total`, log-linear between the two endpoints.
    pub fn mean_at(&self, iteration: usize, total: usize) -> f64 {
        let t = if total == 0 {
            0.0
        } else {
            (iteration as f64 / total as f64).clamp(0.0, 1.0)
        };
        (self.mean.ln() * (1.0 - t) + self.mean_final.ln() * t).exp()
    }

    pub fn for_group(&self, group: ParamGroup, iteration: usize, total: usize) -> f64 {
        match group {
            ParamGroup::Mean => self.mean_at(iteration, total),
            ParamGroup::LogScale => self.log_scale,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::NormalPerturbation => self.normal,
            ParamGroup::Diffuse(_) | ParamGroup::Specular(_) | ParamGroup::Roughness(_) => {
                self.brdf
            }
            ParamGroup::Encoding(_) => self.encoding,
            ParamGroup::ClassifierWeight(_) | ParamGroup::ClassifierBias(_) => self.classifier,
            ParamGroup::Environment(_) => self.environment,
        }
    }

    /// One rate per flat parameter; groups rejected by `trainable` get 0.
    pub fn per_param(
        &self,
        layout: &ParamLayout,
        iteration: usize,
        total: usize,
        trainable: impl Fn(ParamGroup) -> bool,
    ) -> Vec<f64> {
        let mut out = vec![0.0; layout.len()];
        for (group, range) in layout.groups() {
            if trainable(*group) {
                let lr = self.for_group(*group, iteration, total);
                out[range.clone()].iter_mut().for_each(|v| *v = lr);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lrs: &[f64]) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), params.len());
        assert_eq!(lrs.len(), params.len());
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            params[i] -= lrs[i] * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Moments for a new layout: entry `k` of `new` takes the moments of
    /// `source(k)` in `old`, or zeros.
    pub fn remap(&self, len: usize, source: impl Fn(usize) -> Option<usize>) -> Self {
        let mut out = Self::new(len);
        out.beta1 = self.beta1;
        out.beta2 = self.beta2;
        out.eps = self.eps;
        out.steps = self.steps;
        for k in 0..len {
            if let Some(s) = source(k) {
                out.first[k] = self.first[s];
                out.second[k] = self.second[s];
            }
        }
        out
    }
}
