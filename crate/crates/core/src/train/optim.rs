//! Adaptive-moment optimizer with decoupled weight decay.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{mvst, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    moments: Vec<String>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter that received a gradient. `grads` is in
    /// parameter order, as returned by `Bound::collect`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.m.resize(params.len(), None);
        self.v.resize(params.len(), None);
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.params_mut().iter_mut().zip(grads).enumerate() {
            let (Some(g), true) = (g, p.trainable) else { continue };
            if g.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw",
                    lhs: p.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let decay = 1.0 - self.lr * self.weight_decay;
            for (((w, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *w = *w * decay - self.lr * update;
            }
        }
        Ok(())
    }

    /// Writes `state.json` plus first/second moments as MVST files.
    pub fn save(&self, dir: &Path, params: &ParamStore) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut moments = Vec::new();
        for (i, p) in params.params().iter().enumerate() {
            if let (Some(Some(m)), Some(Some(v))) = (self.m.get(i), self.v.get(i)) {
                mvst::write_tensor(&dir.join(format!("m.{}.mvst", p.name)), m)?;
                mvst::write_tensor(&dir.join(format!("v.{}.mvst", p.name)), v)?;
                moments.push(p.name.clone());
            }
        }
        let state = StateFile {
            step: self.step,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            moments,
        };
        let path = dir.join("state.json");
        fs::write(&path, serde_json::to_string_pretty(&state)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, params: &ParamStore) -> Result<Self> {
        let path = dir.join("state.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let s: StateFile = serde_json::from_str(&text)?;
        let mut opt = Self {
            lr: s.lr,
            beta1: s.beta1,
            beta2: s.beta2,
            eps: s.eps,
            weight_decay: s.weight_decay,
            step: s.step,
            m: vec![None; params.len()],
            v: vec![None; params.len()],
        };
        for name in &s.moments {
            let i = params.index_of(name)?;
            opt.m[i] = Some(mvst::read_tensor(&dir.join(format!("m.{name}.mvst")))?);
            opt.v[i] = Some(mvst::read_tensor(&dir.join(format!("v.{name}.mvst")))?);
        }
        Ok(opt)
    }
}
