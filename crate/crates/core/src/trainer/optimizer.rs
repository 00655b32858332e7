//! Adam with one learning rate per parameter group.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::Remap;
use crate::gaussians::{GaussianGrads, GaussianSet, ParamGroup};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("{group}: expected {expected} values, got {actual}")]
    ShapeMismatch { group: &'static str, expected: usize, actual: usize },
}

/// Learning rate of each parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub centers: f64,
    pub rotations: f64,
    pub log_scales: f64,
    pub opacity: f64,
    pub sh: f64,
}

impl GroupRates {
    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Centers => self.centers,
            ParamGroup::Rotations => self.rotations,
            ParamGroup::LogScales => self.log_scales,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Sh => self.sh,
        }
    }

    pub fn all(&self) -> [f64; 5] {
        ParamGroup::ALL.map(|g| self.get(g))
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: GaussianSet,
    pub v: GaussianSet,
    /// Completed steps, shared by all rows.
    pub step: u64,
}

impl Adam {
    pub fn new(params: &GaussianSet) -> Self {
        Self { m: GaussianSet::zeros_like(params), v: GaussianSet::zeros_like(params), step: 0 }
    }

    fn check(&self, params: &GaussianSet, grads: &GaussianGrads) -> Result<(), OptimizerError> {
        for g in ParamGroup::ALL {
            let expected = params.group(g).len();
            for actual in [grads.group(g).len(), self.m.group(g).len(), self.v.group(g).len()] {
                if actual != expected {
                    return Err(OptimizerError::ShapeMismatch { group: g.name(), expected, actual });
                }
            }
        }
        Ok(())
    }

    /// One bias-corrected update; quaternions are renormalized afterwards.
    pub fn step(&mut self, params: &mut GaussianSet, grads: &GaussianGrads, lr: &GroupRates) -> Result<(), OptimizerError> {
        self.check(params, grads)?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for g in ParamGroup::ALL {
            let rate = lr.get(g);
            let grad = grads.group(g);
            let m = self.m.group_mut(g);
            let v = self.v.group_mut(g);
            let p = params.group_mut(g);
            for k in 0..p.len() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * grad[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * grad[k] * grad[k];
                p[k] -= rate * (m[k] / c1) / ((v[k] / c2).sqrt() + EPSILON);
            }
        }
        params.normalize_rotations();
        Ok(())
    }

    /// Carries moments through a density event; new rows start at zero.
    pub fn apply_remap(&mut self, remap: &Remap) {
        let deg = self.m.sh_degree;
        for g in ParamGroup::ALL {
            let stride = g.stride(deg);
            for buf in [&mut self.m, &mut self.v] {
                let data = remap.apply(buf.group(g), stride);
                *buf.group_mut(g) = data;
            }
        }
    }
}
