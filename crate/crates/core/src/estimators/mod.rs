//! Point estimation of δ and the parametric-bootstrap bias / variance of δ̂.

mod bootstrap;
mod fh_ml;
mod logit_ml;
mod lognormal_ee;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::params::{AreaDataset, ParameterVector};

pub use bootstrap::{
    bias_variance_from, bootstrap_bias_variance, bootstrap_refits, BiasVariance, BootstrapRefits, Refit,
};
pub use fh_ml::FhMaximumLikelihood;
pub use logit_ml::{logit_normal_loglik, LogitNormalMaximumLikelihood};
pub use lognormal_ee::{lognormal_ee_residual, LognormalEstimatingEquations};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub delta_hat: ParameterVector,
    pub converged: bool,
    pub iterations: usize,
    /// Log-likelihood for likelihood fitters, residual norm for estimating
    /// equations.
    pub objective: f64,
}

/// A re-entrant estimator of δ.
pub trait Fitter: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn fit(&self, data: &AreaDataset) -> Result<FitResult>;
}

pub type FitterRef = Arc<dyn Fitter>;

fn check_size(data: &AreaDataset, k: usize) -> Result<()> {
    if data.m() < k + 1 {
        return Err(SaeError::InvalidData(format!(
            "{} areas cannot identify {k} parameters (need m ≥ k + 1)",
            data.m()
        )));
    }
    Ok(())
}

/// Options shared by the built-in fitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub var_floor: f64,
    /// Floor on fitted means for the normal-lognormal estimating equations.
    pub mean_floor: f64,
    pub quad_points: usize,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            var_floor: crate::params::DEFAULT_VAR_FLOOR,
            mean_floor: LognormalEstimatingEquations::DEFAULT_MEAN_FLOOR,
            quad_points: 15,
            max_iter: 2000,
        }
    }
}

type FitterBuilder = Arc<dyn Fn(&FitOptions) -> FitterRef + Send + Sync>;

/// Name → fitter constructor, plus the default fitter of each built-in model.
#[derive(Clone)]
pub struct FitterRegistry {
    builders: BTreeMap<String, FitterBuilder>,
    defaults: BTreeMap<String, String>,
}

impl fmt::Debug for FitterRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.builders.keys()).finish()
    }
}

impl Default for FitterRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl FitterRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self {
            builders: BTreeMap::new(),
            defaults: BTreeMap::new(),
        };
        r.register(FhMaximumLikelihood::NAME, |o| {
            Arc::new(FhMaximumLikelihood::new(o.var_floor))
        });
        r.register(LogitNormalMaximumLikelihood::NAME, |o| {
            Arc::new(LogitNormalMaximumLikelihood::new(o.quad_points, o.var_floor))
        });
        r.register(LognormalEstimatingEquations::NAME, |o| {
            Arc::new(LognormalEstimatingEquations::new(o.var_floor).with_mean_floor(o.mean_floor))
        });
        r.set_default("fay-herriot", FhMaximumLikelihood::NAME);
        r.set_default("logit-normal", LogitNormalMaximumLikelihood::NAME);
        r.set_default("normal-lognormal", LognormalEstimatingEquations::NAME);
        r
    }

    pub fn register(&mut self, name: &str, builder: impl Fn(&FitOptions) -> FitterRef + Send + Sync + 'static) {
        self.builders.insert(name.to_string(), Arc::new(builder));
    }

    pub fn set_default(&mut self, model: &str, fitter: &str) {
        self.defaults.insert(model.to_string(), fitter.to_string());
    }

    pub fn build(&self, name: &str, options: &FitOptions) -> Result<FitterRef> {
        self.builders
            .get(name)
            .map(|b| b(options))
            .ok_or_else(|| SaeError::UnknownName {
                kind: "fitter",
                name: name.to_string(),
            })
    }

    pub fn default_for(&self, model: &str, options: &FitOptions) -> Result<FitterRef> {
        let name = self.defaults.get(model).ok_or_else(|| SaeError::UnknownName {
            kind: "default fitter for model",
            name: model.to_string(),
        })?;
        self.build(name, options)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }
}
