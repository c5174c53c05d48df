use std::fmt;
use std::sync::Arc;

use super::{Capabilities, JointDraw, ModelRef, ResponseKind, TwoLevelModel};
use crate::error::{Result, SaeError};
use crate::params::{AreaDesign, Bound, ParameterSpace, ParameterVector};
use crate::rng::Stream;
use crate::target::TargetFunction;

pub type Sampler = Arc<dyn Fn(&ParameterVector, &AreaDesign, &mut Stream) -> JointDraw + Send + Sync>;
pub type Density = Arc<dyn Fn(f64, f64, &ParameterVector, &AreaDesign) -> f64 + Send + Sync>;
pub type ClosedBp = Arc<dyn Fn(f64, &ParameterVector, &AreaDesign, &TargetFunction) -> Option<f64> + Send + Sync>;

/// Ingredients of a user-supplied model. Only the sampler is mandatory.
#[derive(Clone)]
pub struct ModelDefinition {
    pub name: String,
    pub p: usize,
    pub q: usize,
    pub kind: ResponseKind,
    pub lambda_bounds: Vec<Bound>,
    pub psi_bounds: Vec<Bound>,
    pub sampler: Option<Sampler>,
    pub joint_density: Option<Density>,
    pub closed_bp: Option<ClosedBp>,
}

impl ModelDefinition {
    /// Definition with unrestricted λ and open-positive ψ bounds.
    pub fn new(name: impl Into<String>, p: usize, q: usize, kind: ResponseKind) -> Self {
        Self {
            name: name.into(),
            p,
            q,
            kind,
            lambda_bounds: vec![Bound::real_line(); p],
            psi_bounds: vec![Bound::positive(); q],
            sampler: None,
            joint_density: None,
            closed_bp: None,
        }
    }

    pub fn sampler(
        mut self,
        f: impl Fn(&ParameterVector, &AreaDesign, &mut Stream) -> JointDraw + Send + Sync + 'static,
    ) -> Self {
        self.sampler = Some(Arc::new(f));
        self
    }

    pub fn density(
        mut self,
        f: impl Fn(f64, f64, &ParameterVector, &AreaDesign) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.joint_density = Some(Arc::new(f));
        self
    }

    pub fn closed_bp(
        mut self,
        f: impl Fn(f64, &ParameterVector, &AreaDesign, &TargetFunction) -> Option<f64> + Send + Sync + 'static,
    ) -> Self {
        self.closed_bp = Some(Arc::new(f));
        self
    }
}

/// Validates a definition and turns it into a model; capability flags follow
/// from which optional pieces were supplied.
pub fn register_model(def: ModelDefinition) -> Result<ModelRef> {
    let sampler = def
        .sampler
        .clone()
        .ok_or_else(|| SaeError::InvalidDefinition(format!("model `{}` has no sampler", def.name)))?;
    if def.lambda_bounds.len() != def.p {
        return Err(SaeError::InvalidDefinition(format!(
            "p = {} but {} λ bounds were given",
            def.p,
            def.lambda_bounds.len()
        )));
    }
    if def.psi_bounds.len() != def.q {
        return Err(SaeError::InvalidDefinition(format!(
            "q = {} but {} ψ bounds were given",
            def.q,
            def.psi_bounds.len()
        )));
    }
    let space = ParameterSpace::new(def.lambda_bounds.iter().chain(&def.psi_bounds).copied().collect())?;
    Ok(Arc::new(CustomModel {
        name: def.name,
        p: def.p,
        q: def.q,
        kind: def.kind,
        space,
        sampler,
        density: def.joint_density,
        closed_bp: def.closed_bp,
    }))
}

struct CustomModel {
    name: String,
    p: usize,
    q: usize,
    kind: ResponseKind,
    space: ParameterSpace,
    sampler: Sampler,
    density: Option<Density>,
    closed_bp: Option<ClosedBp>,
}

impl fmt::Debug for CustomModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomModel")
            .field("name", &self.name)
            .field("p", &self.p)
            .field("q", &self.q)
            .field("capabilities", &self.capabilities())
            .finish()
    }
}

impl TwoLevelModel for CustomModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn p(&self) -> usize {
        self.p
    }

    fn q(&self) -> usize {
        self.q
    }

    fn kind(&self) -> ResponseKind {
        self.kind
    }

    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_closed_bp: self.closed_bp.is_some(),
            has_joint_density: self.density.is_some(),
            has_latent_normal: false,
        }
    }

    fn draw(&self, delta: &ParameterVector, design: &AreaDesign, rng: &mut Stream) -> JointDraw {
        (self.sampler)(delta, design, rng)
    }

    fn joint_density(&self, y: f64, t: f64, delta: &ParameterVector, design: &AreaDesign) -> Result<f64> {
        match &self.density {
            Some(f) => Ok(f(y, t, delta, design)),
            None => Err(SaeError::Unsupported(format!(
                "model `{}` has no joint density",
                self.name
            ))),
        }
    }

    fn closed_bp(
        &self,
        y: f64,
        delta: &ParameterVector,
        design: &AreaDesign,
        h: &TargetFunction,
    ) -> Option<Result<f64>> {
        self.closed_bp.as_ref().and_then(|f| f(y, delta, design, h)).map(Ok)
    }
}
