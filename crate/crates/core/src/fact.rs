//! Factor-tuning: weight increments `ΔW = U · Σ · Vᵀ` with factors `U`, `V`
//! shared across layers and a small `r × r` core `Σ` per layer and projection.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::ParamStore;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Query,
    Value,
}

impl Projection {
    pub fn as_str(self) -> &'static str {
        match self {
            Projection::Query => "query",
            Projection::Value => "value",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacTFactors {
    pub u: Tensor,
    pub v: Tensor,
    /// Separate `(U, V)` for the value projection when factors are not shared.
    pub value_pair: Option<(Tensor, Tensor)>,
    pub sigmas: BTreeMap<(usize, Projection), Tensor>,
    pub rank: usize,
}

impl FacTFactors {
    /// Gaussian `U`, `V` with std `1/√d` and zero cores for `layers` layers.
    pub fn init<R: Rng + ?Sized>(d: usize, rank: usize, layers: usize, shared: bool, rng: &mut R) -> Result<Self> {
        if rank == 0 || rank > d {
            return Err(Error::invalid(format!("rank {rank} must be in 1..={d}")));
        }
        let std = 1.0 / (d as f64).sqrt();
        let u = Tensor::randn(&[d, rank], std, rng);
        let v = Tensor::randn(&[d, rank], std, rng);
        let value_pair = (!shared).then(|| (Tensor::randn(&[d, rank], std, rng), Tensor::randn(&[d, rank], std, rng)));
        let sigmas = (0..layers)
            .flat_map(|l| [Projection::Query, Projection::Value].map(|p| ((l, p), Tensor::zeros(&[rank, rank]))))
            .collect();
        Ok(Self {
            u,
            v,
            value_pair,
            sigmas,
            rank,
        })
    }

    pub fn dim(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn factors(&self, proj: Projection) -> (&Tensor, &Tensor) {
        match (proj, &self.value_pair) {
            (Projection::Value, Some((u, v))) => (u, v),
            _ => (&self.u, &self.v),
        }
    }

    pub fn sigma(&self, layer: usize, proj: Projection) -> Result<&Tensor> {
        self.sigmas
            .get(&(layer, proj))
            .ok_or_else(|| Error::MissingParameter(format!("sigma[{layer}, {}]", proj.as_str())))
    }
}

/// `ΔW = U · Σ · Vᵀ` for one layer and projection.
pub fn fact_delta(f: &FacTFactors, layer: usize, proj: Projection) -> Result<Tensor> {
    let sigma = f.sigma(layer, proj)?;
    let (u, v) = f.factors(proj);
    u.matmul(sigma)?.matmul(&v.transpose2()?)
}

/// `W₀ + ΔW`; `w0` is left untouched.
pub fn fact_apply(w0: &Tensor, f: &FacTFactors, layer: usize, proj: Projection) -> Result<Tensor> {
    let d = f.dim();
    if w0.shape() != [d, d] {
        return Err(Error::ShapeMismatch {
            op: "fact_apply",
            lhs: w0.shape().to_vec(),
            rhs: vec![d, d],
        });
    }
    let delta = fact_delta(f, layer, proj)?;
    w0.zip_map(&delta, |a, b| a + b)
}

impl Tape {
    /// Differentiable `W₀ + U · Σ · Vᵀ`.
    pub fn fact_apply(&self, w0: Var, u: Var, sigma: Var, v: Var) -> Result<Var> {
        let (sw, su, ss, sv) = (self.shape(w0), self.shape(u), self.shape(sigma), self.shape(v));
        let ok = sw.len() == 2
            && sw[0] == sw[1]
            && su.len() == 2
            && su == sv
            && su[0] == sw[0]
            && ss == [su[1], su[1]];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "fact_apply",
                lhs: sw,
                rhs: su,
            });
        }
        let us = self.matmul(u, sigma)?;
        let delta = self.bmm(us, v, false, true)?;
        self.add(w0, delta)
    }
}

/// Share of parameter entries marked trainable.
pub fn trainable_fraction(params: &ParamStore) -> f64 {
    let total = params.total_count();
    if total == 0 {
        return 0.0;
    }
    params.trainable_count() as f64 / total as f64
}
