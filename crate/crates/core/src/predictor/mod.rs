//! Best and empirical best predictors ξ_i(y_i; δ) = E_δ[h(θ_i) | y_i].
//!
//! A [`XiStrategy`] turns (model, δ, area design, h) into a [`PreparedXi`]
//! that can be evaluated at many y values. Preparation is where Monte Carlo
//! strategies draw their J-sample, so repeated evaluations at one δ (as in
//! the bootstrap M1*) pay for the sample once.

mod kernel;
mod strategies;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::models::{LogitNormal, TwoLevelModel};
use crate::params::{AreaDataset, AreaDesign, ParameterVector};
use crate::rng::{Purpose, Stream, StreamFactory};
use crate::target::TargetFunction;

pub use crate::models::bp_fh_closed;
pub use kernel::KernelShape;
pub use strategies::{ClosedForm, Indicator, KernelSmoother, Quadrature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XiMethod {
    Closed,
    Quadrature,
    Kernel,
    Indicator,
}

impl XiMethod {
    pub fn tag(self) -> &'static str {
        match self {
            XiMethod::Closed => "closed",
            XiMethod::Quadrature => "quadrature",
            XiMethod::Kernel => "kernel",
            XiMethod::Indicator => "indicator",
        }
    }
}

/// One evaluation of ξ. `tail` is set when the kernel smoother fell back to
/// the nearest resample because every weight underflowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiValue {
    pub value: f64,
    pub tail: bool,
}

impl XiValue {
    fn exact(value: f64) -> Self {
        Self { value, tail: false }
    }
}

/// ξ_i(·; δ) for one area at one δ.
pub trait PreparedXi: Send + Sync {
    fn predict(&self, y: f64) -> Result<XiValue>;
}

pub trait XiStrategy: Send + Sync + fmt::Debug {
    fn method(&self) -> XiMethod;

    /// Resample size J, or 0 for deterministic strategies.
    fn j_resamples(&self) -> usize {
        0
    }

    /// Bandwidth b, or 0 when unused.
    fn bandwidth(&self) -> f64 {
        0.0
    }

    /// Fails with an unsupported-operation error when `model` lacks what the
    /// strategy needs.
    fn supports(&self, model: &dyn TwoLevelModel, h: &TargetFunction) -> Result<()>;

    /// `rng` is consumed only by Monte Carlo strategies.
    fn prepare<'a>(
        &'a self,
        model: &'a dyn TwoLevelModel,
        delta: &'a ParameterVector,
        design: &'a AreaDesign,
        h: &'a TargetFunction,
        rng: &mut Stream,
    ) -> Result<Box<dyn PreparedXi + 'a>>;
}

pub type XiRef = Arc<dyn XiStrategy>;

/// Settings from which a strategy is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XiConfig {
    pub strategy: String,
    pub quad_points: usize,
    pub j_resamples: usize,
    /// Kernel bandwidth; J^(-1/5) when absent.
    pub bandwidth: Option<f64>,
    pub kernel: KernelShape,
}

impl Default for XiConfig {
    fn default() -> Self {
        Self {
            strategy: "closed".into(),
            quad_points: 15,
            j_resamples: 10_000,
            bandwidth: None,
            kernel: KernelShape::Gaussian,
        }
    }
}

impl XiConfig {
    pub fn named(strategy: &str) -> Self {
        Self {
            strategy: strategy.into(),
            ..Self::default()
        }
    }
}

type Builder = Arc<dyn Fn(&XiConfig) -> Result<XiRef> + Send + Sync>;

/// Name → ξ strategy constructor.
#[derive(Clone)]
pub struct XiRegistry {
    builders: BTreeMap<String, Builder>,
}

impl Default for XiRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl fmt::Debug for XiRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.builders.keys()).finish()
    }
}

impl XiRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("closed", |_| Ok(Arc::new(ClosedForm)));
        r.register("quadrature", |c| Ok(Arc::new(Quadrature::new(c.quad_points)?)));
        r.register("kernel", |c| {
            Ok(Arc::new(KernelSmoother::new(c.j_resamples, c.bandwidth, c.kernel)?))
        });
        r.register("indicator", |c| Ok(Arc::new(Indicator::new(c.j_resamples)?)));
        r
    }

    pub fn register(&mut self, name: &str, build: impl Fn(&XiConfig) -> Result<XiRef> + Send + Sync + 'static) {
        self.builders.insert(name.to_string(), Arc::new(build));
    }

    pub fn build(&self, config: &XiConfig) -> Result<XiRef> {
        let b = self
            .builders
            .get(&config.strategy)
            .ok_or_else(|| SaeError::UnknownName {
                kind: "xi strategy",
                name: config.strategy.clone(),
            })?;
        b(config)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }
}

/// Single evaluation of ξ_i(y_i; δ) through `strategy`.
pub fn xi(
    y: f64,
    delta: &ParameterVector,
    model: &dyn TwoLevelModel,
    design: &AreaDesign,
    h: &TargetFunction,
    strategy: &dyn XiStrategy,
    rng: &mut Stream,
) -> Result<XiValue> {
    strategy.supports(model, h)?;
    model.space().check(delta)?;
    strategy.prepare(model, delta, design, h, rng)?.predict(y)
}

/// ξ for the logit-normal model by Gauss-Hermite quadrature on the latent
/// normal.
pub fn ebp_quadrature_logit(
    y: u32,
    delta: &ParameterVector,
    design: &AreaDesign,
    quad_points: usize,
    h: &TargetFunction,
) -> Result<f64> {
    let model = LogitNormal::new(design.x.len());
    let strategy = Quadrature::new(quad_points)?;
    let mut unused = StreamFactory::new(0).get(0, 0, Purpose::XiSample, 0);
    Ok(xi(y as f64, delta, &model, design, h, &strategy, &mut unused)?.value)
}

/// Nadaraya-Watson approximation to ξ from J model draws at δ.
#[allow(clippy::too_many_arguments)]
pub fn ebp_kernel_continuous(
    y: f64,
    delta: &ParameterVector,
    model: &dyn TwoLevelModel,
    design: &AreaDesign,
    j_resamples: usize,
    bandwidth: Option<f64>,
    h: &TargetFunction,
    rng: &mut Stream,
) -> Result<XiValue> {
    let strategy = KernelSmoother::new(j_resamples, bandwidth, KernelShape::Gaussian)?;
    xi(y, delta, model, design, h, &strategy, rng)
}

/// Ratio of h(θ*) sums over draws with y* = y, for discrete responses.
pub fn ebp_indicator_discrete(
    y: f64,
    delta: &ParameterVector,
    model: &dyn TwoLevelModel,
    design: &AreaDesign,
    j_resamples: usize,
    h: &TargetFunction,
    rng: &mut Stream,
) -> Result<f64> {
    let strategy = Indicator::new(j_resamples)?;
    Ok(xi(y, delta, model, design, h, &strategy, rng)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbpResult {
    pub beta_hat: Vec<f64>,
    pub method: Vec<XiMethod>,
    pub j_resamples: usize,
    pub bandwidth: f64,
    /// Areas whose kernel prediction used the nearest-neighbour fallback.
    pub tail_fallback: Vec<bool>,
}

/// Stream for the ξ resample of one area. The same stream is used at every
/// δ, so Monte Carlo ξ is a smooth function of δ for fixed seed.
pub fn xi_stream(streams: &StreamFactory, replication: u64, area: usize) -> Stream {
    streams.get(replication, area as u64, Purpose::XiSample, 0)
}

/// β̂_i = ξ_i(y_i; δ̂) for every area.
pub fn ebp(
    data: &AreaDataset,
    model: &dyn TwoLevelModel,
    delta_hat: &ParameterVector,
    h: &TargetFunction,
    strategy: &dyn XiStrategy,
    streams: &StreamFactory,
    replication: u64,
) -> Result<EbpResult> {
    strategy.supports(model, h)?;
    model.space().check(delta_hat)?;
    let values: Vec<XiValue> = (0..data.m())
        .into_par_iter()
        .map(|i| {
            let mut rng = xi_stream(streams, replication, i);
            strategy
                .prepare(model, delta_hat, &data.designs[i], h, &mut rng)?
                .predict(data.y[i])
        })
        .collect::<Result<_>>()?;
    Ok(EbpResult {
        beta_hat: values.iter().map(|v| v.value).collect(),
        method: vec![strategy.method(); data.m()],
        j_resamples: strategy.j_resamples(),
        bandwidth: strategy.bandwidth(),
        tail_fallback: values.iter().map(|v| v.tail).collect(),
    })
}

#[cfg(test)]
mod tests;
