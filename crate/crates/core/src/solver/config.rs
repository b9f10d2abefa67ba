use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Augmented Lagrangian / Gauss-Newton settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SolverConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    pub mu_init: f64,
    pub mu_growth: f64,
    /// Inner loop stops once the Gauss-Newton step has an infinity norm below this.
    pub tol_step: f64,
    pub tol_constraint: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub min_step_length: f64,
    pub hessian_reg: f64,
    pub max_hessian_reg: f64,
    /// An inequality counts as active when `g >= -active_eps` ...
    pub active_eps: f64,
    /// ... and its dual exceeds this.
    pub active_dual_min: f64,
    /// Keep per-iteration trace records.
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer: 30,
            max_inner: 100,
            mu_init: 1.0,
            mu_growth: 5.0,
            tol_step: 1e-7,
            tol_constraint: 1e-7,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            min_step_length: 1e-12,
            hessian_reg: 1e-8,
            max_hessian_reg: 1e2,
            active_eps: 1e-6,
            active_dual_min: 1e-8,
            trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tolStep", self.tol_step),
            ("tolConstraint", self.tol_constraint),
            ("muInit", self.mu_init),
            ("armijoC", self.armijo_c),
            ("minStepLength", self.min_step_length),
            ("hessianReg", self.hessian_reg),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("solver.{name} must be positive")));
        }
        if !(self.mu_growth > 1.0) {
            return Err(Error::Config("solver.muGrowth must exceed 1".into()));
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return Err(Error::Config("solver.armijoShrink must lie in (0, 1)".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Config("solver iteration limits must be positive".into()));
        }
        Ok(())
    }
}
