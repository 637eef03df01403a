//! Adam with named parameter groups and checkpointable moments.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::config::AdamConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Linear ramp `min(step / warmup_iters, 1)`; no warmup when
/// `warmup_iters == 0`.
pub fn warmup_scale(step: usize, warmup_iters: usize) -> f64 {
    if warmup_iters == 0 {
        return 1.0;
    }
    (step as f64 / warmup_iters as f64).min(1.0)
}

struct Slot {
    name: String,
    var: Var,
    lr_scale: f64,
    m: Option<Tensor>,
    v: Option<Tensor>,
}

pub struct Adam {
    cfg: AdamConfig,
    slots: Vec<Slot>,
    steps: u64,
}

impl Adam {
    /// Every parameter of `store`. A parameter whose name starts with one of
    /// the `scaled` prefixes trains at `lr * scale`.
    pub fn new(store: &ParamStore, cfg: AdamConfig, scaled: &[(&str, f64)]) -> Self {
        let slots = store
            .iter()
            .map(|(name, var)| Slot {
                name: name.clone(),
                var: var.clone(),
                lr_scale: scaled
                    .iter()
                    .find(|(p, _)| name.starts_with(p))
                    .map(|(_, s)| *s)
                    .unwrap_or(1.0),
                m: None,
                v: None,
            })
            .collect();
        Self { cfg, slots, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    /// Effective rate of the named parameter.
    pub fn lr_of(&self, name: &str) -> Option<f64> {
        self.slots.iter().find(|s| s.name == name).map(|s| self.cfg.lr * s.lr_scale)
    }

    /// One update. Parameters without a gradient in `grads` are left alone,
    /// moments included.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for s in &mut self.slots {
            let Some(g) = grads.get(s.var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let m = match &s.m {
                Some(m) => ((m * b1)? + (&g * (1.0 - b1))?)?,
                None => (&g * (1.0 - b1))?,
            };
            let v = match &s.v {
                Some(v) => ((v * b2)? + (g.sqr()? * (1.0 - b2))?)?,
                None => (g.sqr()? * (1.0 - b2))?,
            };
            let lr = self.cfg.lr * s.lr_scale;
            let denom = ((&v / c2)?.sqrt()? + self.cfg.eps)?;
            let update = ((&m / c1)? / denom)?;
            let next = (s.var.as_tensor().detach() - (update * lr)?)?;
            s.var.set(&next)?;
            s.m = Some(m);
            s.v = Some(v);
        }
        Ok(())
    }

    /// Moments as `m.<name>` / `v.<name>` tensors.
    pub fn state_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for s in &self.slots {
            if let (Some(m), Some(v)) = (&s.m, &s.v) {
                out.insert(format!("m.{}", s.name), m.clone());
                out.insert(format!("v.{}", s.name), v.clone());
            }
        }
        out
    }

    pub fn load_state(&mut self, tensors: &BTreeMap<String, Tensor>, steps: u64) -> Result<()> {
        for s in &mut self.slots {
            let m = tensors.get(&format!("m.{}", s.name));
            let v = tensors.get(&format!("v.{}", s.name));
            match (m, v) {
                (Some(m), Some(v)) => {
                    if m.dims() != s.var.dims() || v.dims() != s.var.dims() {
                        return Err(Error::validation(format!("optimizer state for `{}` has the wrong shape", s.name)));
                    }
                    let dt = s.var.dtype();
                    s.m = Some(m.to_dtype(dt)?);
                    s.v = Some(v.to_dtype(dt)?);
                }
                (None, None) => {
                    s.m = None;
                    s.v = None;
                }
                _ => return Err(Error::validation(format!("incomplete optimizer state for `{}`", s.name))),
            }
        }
        self.steps = steps;
        Ok(())
    }
}
