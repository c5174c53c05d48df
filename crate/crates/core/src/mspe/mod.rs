//! MSPE of the EBP: bootstrap M1*, stencil derivatives, perturbed
//! ("tilted") parameters, M2*, and the comparison estimators.
//!
//! Every estimator is an [`MspeMethod`] looked up by name in an
//! [`MspeRegistry`]. Methods run against a shared [`MspeContext`] so that
//! several of them can reuse one fit and one set of bootstrap refits.

mod fh;
mod m1;
mod m2;
mod methods;
mod stencil;
mod tilt;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError, StageExt};
use crate::estimators::{bias_variance_from, bootstrap_refits, BiasVariance, BootstrapRefits, FitResult, Fitter};
use crate::models::{FayHerriot, TwoLevelModel};
use crate::params::{AreaDataset, ParameterVector};
use crate::predictor::XiStrategy;
use crate::rng::StreamFactory;
use crate::target::TargetFunction;

pub use fh::FhAnalytics;
pub use m1::{m1_star, AreaM1, FINAL_DRAWS};
pub use m2::{m2_from_refits, m2_star};
pub use methods::{mspe_jk, mspe_lm1, mspe_naive, mspe_new, mspe_prdl, Jackknife, Lm, Naive, NewEstimator, PrDl};
pub use stencil::{d1_star, d2_star, DerivativeEstimates, M1Function, Order, Stencil, StencilConfig};
pub use tilt::{bias_term, cap_tilt, gate_bound, tilt, TiltMode, TiltOutcome};

pub const MIN_N0: usize = 100;

pub(crate) fn check_n0(n0: usize) -> Result<()> {
    if n0 < MIN_N0 {
        return Err(SaeError::InvalidParameter(format!(
            "resample size N₀ = {n0}; at least {MIN_N0} required"
        )));
    }
    Ok(())
}

/// Resample sizes and stencil settings of the bootstrap MSPE estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MspeConfig {
    /// Stencil step; m^(-5/4) when absent.
    pub z: Option<f64>,
    pub n0_first: usize,
    pub n0_second: usize,
    /// Bootstrap refits shared by b*, V* and M2*.
    pub n0_boot: usize,
    /// Draws for the final M1* at δ̌ (and at δ̂ for the naive estimator);
    /// `n0_second` when absent.
    pub n0_final: Option<usize>,
    /// Evaluate every stencil point with the same underlying random numbers.
    pub common_random_numbers: bool,
    /// When set, a tilt moving any coordinate by more than this many
    /// bootstrap standard deviations falls back to δ̂.
    pub tilt_cap: Option<f64>,
}

impl Default for MspeConfig {
    fn default() -> Self {
        Self {
            z: None,
            n0_first: 2000,
            n0_second: 10_000,
            n0_boot: 1000,
            n0_final: None,
            common_random_numbers: true,
            tilt_cap: None,
        }
    }
}

impl MspeConfig {
    pub fn stencil(&self, m: usize) -> Result<StencilConfig> {
        StencilConfig::new(
            self.z.unwrap_or_else(|| StencilConfig::default_z(m)),
            self.n0_first,
            self.n0_second,
        )
    }

    pub fn n0_final(&self) -> usize {
        self.n0_final.unwrap_or(self.n0_second)
    }

    pub fn check(&self, m: usize) -> Result<()> {
        self.stencil(m)?;
        if let Some(cap) = self.tilt_cap {
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(SaeError::InvalidParameter(format!(
                    "tilt cap must be positive and finite, got {cap}"
                )));
            }
        }
        check_n0(self.n0_boot)?;
        check_n0(self.n0_final())
    }
}

/// MSPE estimate and its parts for one area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaMspe {
    pub m1: f64,
    pub m2: f64,
    pub mspe: f64,
    /// Set when the estimate is below zero (possible for jk and prdl only).
    pub negative: bool,
    pub tilt: Option<TiltOutcome>,
    pub stencil_shrunk: bool,
}

impl AreaMspe {
    fn plain(m1: f64, m2: f64) -> Self {
        let mspe = m1 + m2;
        Self {
            m1,
            m2,
            mspe,
            negative: mspe < 0.0,
            tilt: None,
            stencil_shrunk: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MspeDiagnostics {
    pub bootstrap_dropped: usize,
    pub tilts_accepted: usize,
    pub stencil_shrinks: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MspeReport {
    pub method: String,
    pub areas: Vec<AreaMspe>,
    pub diagnostics: MspeDiagnostics,
}

impl MspeReport {
    fn new(method: &str, areas: Vec<AreaMspe>, bootstrap_dropped: usize) -> Self {
        let diagnostics = MspeDiagnostics {
            bootstrap_dropped,
            tilts_accepted: areas
                .iter()
                .filter(|a| a.tilt.as_ref().is_some_and(|t| t.accepted))
                .count(),
            stencil_shrinks: areas.iter().filter(|a| a.stencil_shrunk).count(),
            negative: areas.iter().filter(|a| a.negative).count(),
        };
        Self {
            method: method.to_string(),
            areas,
            diagnostics,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.areas.iter().map(|a| a.mspe).collect()
    }
}

/// One dataset, its fit, and lazily computed bootstrap pieces shared by
/// every method run on it.
pub struct MspeContext<'a> {
    pub data: &'a AreaDataset,
    pub model: &'a dyn TwoLevelModel,
    pub fitter: &'a dyn Fitter,
    pub h: &'a TargetFunction,
    pub xi: &'a dyn XiStrategy,
    pub config: &'a MspeConfig,
    pub streams: &'a StreamFactory,
    pub replication: u64,
    pub fit: FitResult,
    refits: OnceLock<Result<Arc<BootstrapRefits>>>,
    bias_variance: OnceLock<Result<BiasVariance>>,
    m2: OnceLock<Result<Vec<f64>>>,
}

impl fmt::Debug for MspeContext<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MspeContext")
            .field("model", &self.model.name())
            .field("fitter", &self.fitter.name())
            .field("replication", &self.replication)
            .field("fit", &self.fit)
            .finish_non_exhaustive()
    }
}

impl<'a> MspeContext<'a> {
    /// Fits δ̂; a failed or non-converged fit is an error tagged `fit`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        data: &'a AreaDataset,
        model: &'a dyn TwoLevelModel,
        fitter: &'a dyn Fitter,
        h: &'a TargetFunction,
        xi: &'a dyn XiStrategy,
        config: &'a MspeConfig,
        streams: &'a StreamFactory,
        replication: u64,
    ) -> Result<Self> {
        config.check(data.m())?;
        xi.supports(model, h)?;
        let fit = fitter.fit(data).stage("fit")?;
        if !fit.converged {
            return Err(SaeError::InvalidData(format!("fitter `{}` did not converge", fitter.name())).at("fit"));
        }
        Ok(Self::with_fit(
            data,
            model,
            fitter,
            h,
            xi,
            config,
            streams,
            replication,
            fit,
        ))
    }

    /// Context around an already computed fit.
    #[allow(clippy::too_many_arguments)]
    pub fn with_fit(
        data: &'a AreaDataset,
        model: &'a dyn TwoLevelModel,
        fitter: &'a dyn Fitter,
        h: &'a TargetFunction,
        xi: &'a dyn XiStrategy,
        config: &'a MspeConfig,
        streams: &'a StreamFactory,
        replication: u64,
        fit: FitResult,
    ) -> Self {
        Self {
            data,
            model,
            fitter,
            h,
            xi,
            config,
            streams,
            replication,
            fit,
            refits: OnceLock::new(),
            bias_variance: OnceLock::new(),
            m2: OnceLock::new(),
        }
    }

    pub fn delta_hat(&self) -> &ParameterVector {
        &self.fit.delta_hat
    }

    pub fn m(&self) -> usize {
        self.data.m()
    }

    pub fn refits(&self) -> Result<Arc<BootstrapRefits>> {
        self.refits
            .get_or_init(|| {
                bootstrap_refits(
                    self.model,
                    self.fitter,
                    self.delta_hat(),
                    &self.data.designs,
                    self.config.n0_boot,
                    self.streams,
                    self.replication,
                )
                .map(Arc::new)
                .stage("bootstrap")
            })
            .clone()
    }

    pub fn bias_variance(&self) -> Result<BiasVariance> {
        self.bias_variance
            .get_or_init(|| Ok(bias_variance_from(&*self.refits()?, self.delta_hat())))
            .clone()
    }

    /// M2* per area from the shared refits.
    pub fn m2(&self) -> Result<Vec<f64>> {
        self.m2
            .get_or_init(|| {
                m2_from_refits(
                    &*self.refits()?,
                    self.delta_hat(),
                    self.model,
                    &self.data.designs,
                    self.h,
                    self.xi,
                    self.streams,
                    self.replication,
                )
                .stage("m2")
            })
            .clone()
    }

    pub fn area_m1(&self, area: usize) -> AreaM1<'_> {
        AreaM1 {
            model: self.model,
            design: &self.data.designs[area],
            h: self.h,
            xi: self.xi,
            streams: self.streams,
            replication: self.replication,
            area,
        }
    }

    /// Closed-form FH pieces at δ̂; only for the FH model with h = identity.
    pub fn fh_analytics(&self) -> Result<FhAnalytics> {
        if !self.is_fh_identity() {
            return Err(SaeError::Unsupported(format!(
                "analytic MSPE terms exist only for the Fay-Herriot model with h = identity (model `{}`, h = {})",
                self.model.name(),
                self.h.label()
            )));
        }
        FhAnalytics::new(self.data, self.delta_hat())
    }

    pub fn is_fh_identity(&self) -> bool {
        self.model.name() == FayHerriot::NAME && matches!(self.h, TargetFunction::Identity)
    }
}

/// An MSPE estimator selectable by name.
pub trait MspeMethod: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn estimate(&self, ctx: &MspeContext<'_>) -> Result<MspeReport>;
}

pub type MspeRef = Arc<dyn MspeMethod>;

#[derive(Clone)]
pub struct MspeRegistry {
    methods: BTreeMap<String, MspeRef>,
}

impl Default for MspeRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl fmt::Debug for MspeRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.methods.keys()).finish()
    }
}

impl MspeRegistry {
    pub fn empty() -> Self {
        Self {
            methods: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(NewEstimator::new(TiltMode::Single)));
        r.register(Arc::new(NewEstimator::new(TiltMode::Multi)));
        r.register(Arc::new(Naive));
        r.register(Arc::new(Lm::new(TiltMode::Single)));
        r.register(Arc::new(Lm::new(TiltMode::Multi)));
        r.register(Arc::new(Jackknife));
        r.register(Arc::new(PrDl));
        r
    }

    pub fn register(&mut self, method: MspeRef) {
        self.methods.insert(method.name().to_string(), method);
    }

    pub fn get(&self, name: &str) -> Result<MspeRef> {
        self.methods.get(name).cloned().ok_or_else(|| SaeError::UnknownName {
            kind: "MSPE method",
            name: name.to_string(),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.methods.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests;
