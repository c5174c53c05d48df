//! Two-level models y_i | θ_i ~ F₁(·; θ_i), θ_i ~ F₂(·; x_i, λ, ψ).
//!
//! Each model is a [`TwoLevelModel`] trait object. Built-in models are
//! selected by name through [`ModelRegistry`]; user models are assembled from a
//! [`ModelDefinition`] with [`register_model`].

mod custom;
mod fay_herriot;
mod logit_normal;
mod lognormal;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::params::{AreaDesign, ParameterSpace, ParameterVector};
use crate::rng::Stream;
use crate::target::TargetFunction;

pub use custom::{register_model, ModelDefinition};
pub use fay_herriot::{bp_fh_closed, FayHerriot};
pub use logit_normal::LogitNormal;
pub use lognormal::NormalLognormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseKind {
    Continuous,
    /// Integer-valued y with finite support per area.
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub has_closed_bp: bool,
    pub has_joint_density: bool,
    /// θ = g(x'λ + σ_v z) with z ~ N(0,1); enables Gauss-Hermite evaluation.
    pub has_latent_normal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDraw {
    pub theta: f64,
    pub y: f64,
}

/// Normal latent variable underlying θ: u = mean + sd·z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentNormal {
    pub mean: f64,
    pub sd: f64,
}

pub trait TwoLevelModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Number of regression coefficients.
    fn p(&self) -> usize;

    /// Number of variance-type parameters.
    fn q(&self) -> usize;

    fn kind(&self) -> ResponseKind;

    fn space(&self) -> &ParameterSpace;

    fn capabilities(&self) -> Capabilities;

    /// One draw of (θ_i, y_i) at δ. Callers are responsible for δ ∈ Δ; use
    /// [`sample_joint`] for the checked version.
    fn draw(&self, delta: &ParameterVector, design: &AreaDesign, rng: &mut Stream) -> JointDraw;

    /// f₁(y; θ) · f₂(θ; x, λ, ψ).
    fn joint_density(&self, _y: f64, _t: f64, _delta: &ParameterVector, _design: &AreaDesign) -> Result<f64> {
        Err(SaeError::Unsupported(format!(
            "model `{}` has no joint density",
            self.name()
        )))
    }

    /// Closed-form E[h(θ_i) | y_i], if this model provides one for `h`.
    fn closed_bp(
        &self,
        _y: f64,
        _delta: &ParameterVector,
        _design: &AreaDesign,
        _h: &TargetFunction,
    ) -> Option<Result<f64>> {
        None
    }

    /// Latent normal behind θ_i, for models with that structure.
    fn latent(&self, _delta: &ParameterVector, _design: &AreaDesign) -> Option<LatentNormal> {
        None
    }

    /// Maps the latent normal value to θ.
    fn theta_of_latent(&self, u: f64) -> f64 {
        u
    }

    /// log f₁(y; θ). Required when `has_latent_normal` is set.
    fn log_obs_density(&self, _y: f64, _theta: f64, _design: &AreaDesign) -> f64 {
        f64::NAN
    }
}

pub type ModelRef = Arc<dyn TwoLevelModel>;

/// Checked single draw of (θ_i, y_i).
pub fn sample_joint(
    model: &dyn TwoLevelModel,
    delta: &ParameterVector,
    design: &AreaDesign,
    rng: &mut Stream,
) -> Result<JointDraw> {
    model.space().check(delta)?;
    Ok(model.draw(delta, design, rng))
}

/// Checked joint density evaluation.
pub fn joint_density(
    model: &dyn TwoLevelModel,
    y: f64,
    t: f64,
    delta: &ParameterVector,
    design: &AreaDesign,
) -> Result<f64> {
    if !model.capabilities().has_joint_density {
        return Err(SaeError::Unsupported(format!(
            "model `{}` has no joint density",
            model.name()
        )));
    }
    model.space().check(delta)?;
    model.joint_density(y, t, delta, design)
}

/// Draws (θ_i, y_i) for every area from one stream.
pub fn sample_areas(
    model: &dyn TwoLevelModel,
    delta: &ParameterVector,
    designs: &[AreaDesign],
    rng: &mut Stream,
) -> (Vec<f64>, Vec<f64>) {
    designs
        .iter()
        .map(|d| {
            let draw = model.draw(delta, d, rng);
            (draw.theta, draw.y)
        })
        .unzip()
}

type Builder = Arc<dyn Fn(usize) -> ModelRef + Send + Sync>;

/// Name → model constructor. Built-in constructors take the number of
/// covariates p.
#[derive(Clone)]
pub struct ModelRegistry {
    builders: BTreeMap<String, Builder>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.builders.keys()).finish()
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register_builder(FayHerriot::NAME, |p| Arc::new(FayHerriot::new(p)));
        r.register_builder(LogitNormal::NAME, |p| Arc::new(LogitNormal::new(p)));
        r.register_builder(NormalLognormal::NAME, |p| Arc::new(NormalLognormal::new(p)));
        r
    }

    pub fn register_builder(&mut self, name: &str, builder: impl Fn(usize) -> ModelRef + Send + Sync + 'static) {
        self.builders.insert(name.to_string(), Arc::new(builder));
    }

    /// Makes an already-built model selectable by its name.
    pub fn register(&mut self, model: ModelRef) {
        let name = model.name().to_string();
        self.builders.insert(name, Arc::new(move |_| model.clone()));
    }

    pub fn build(&self, name: &str, p: usize) -> Result<ModelRef> {
        self.builders
            .get(name)
            .map(|b| b(p))
            .ok_or_else(|| SaeError::UnknownName {
                kind: "model",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }
}
