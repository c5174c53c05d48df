use rand_distr::{Distribution, StandardNormal};

use super::{Capabilities, JointDraw, LatentNormal, ResponseKind, TwoLevelModel};
use crate::error::{Result, SaeError};
use crate::numerics::normal_pdf_var;
use crate::params::{AreaDesign, ParameterSpace, ParameterVector};
use crate::rng::Stream;
use crate::target::TargetFunction;

/// Normal-normal area-level model: θ_i = x_i'λ + v_i, y_i = θ_i + e_i with
/// v_i ~ N(0, σ_v²) and e_i ~ N(0, s_i). δ = (λ, σ_v²).
#[derive(Debug, Clone)]
pub struct FayHerriot {
    p: usize,
    space: ParameterSpace,
}

impl FayHerriot {
    pub const NAME: &'static str = "fay-herriot";

    pub fn new(p: usize) -> Self {
        Self {
            p,
            space: ParameterSpace::regression_with_variances(p, 1),
        }
    }

    fn mean(&self, delta: &ParameterVector, design: &AreaDesign) -> f64 {
        delta.linear_predictor(&design.x)
    }
}

/// Best predictor of θ_i: x'λ + σ_v²/(σ_v² + s_i)·(y_i − x'λ).
pub fn bp_fh_closed(y: f64, delta: &ParameterVector, design: &AreaDesign) -> Result<f64> {
    let sigma2 = delta.psi[0];
    let tau = sigma2 + design.known;
    if !(tau > 0.0) {
        return Err(SaeError::InvalidParameter(format!(
            "σ_v² + s_i = {tau} must be positive"
        )));
    }
    let mu = delta.linear_predictor(&design.x);
    if design.known == 0.0 {
        return Ok(y);
    }
    Ok(mu + sigma2 / tau * (y - mu))
}

impl TwoLevelModel for FayHerriot {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn p(&self) -> usize {
        self.p
    }

    fn q(&self) -> usize {
        1
    }

    fn kind(&self) -> ResponseKind {
        ResponseKind::Continuous
    }

    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_closed_bp: true,
            has_joint_density: true,
            has_latent_normal: true,
        }
    }

    fn draw(&self, delta: &ParameterVector, design: &AreaDesign, rng: &mut Stream) -> JointDraw {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let theta = self.mean(delta, design) + delta.psi[0].sqrt() * z1;
        JointDraw {
            theta,
            y: theta + design.known.sqrt() * z2,
        }
    }

    fn joint_density(&self, y: f64, t: f64, delta: &ParameterVector, design: &AreaDesign) -> Result<f64> {
        Ok(normal_pdf_var(y, t, design.known) * normal_pdf_var(t, self.mean(delta, design), delta.psi[0]))
    }

    fn closed_bp(
        &self,
        y: f64,
        delta: &ParameterVector,
        design: &AreaDesign,
        h: &TargetFunction,
    ) -> Option<Result<f64>> {
        match h {
            TargetFunction::Identity => Some(bp_fh_closed(y, delta, design)),
            TargetFunction::Constant(c) => Some(Ok(*c)),
            TargetFunction::Exp => Some(bp_fh_closed(y, delta, design).map(|m| {
                let sigma2 = delta.psi[0];
                let post_var = sigma2 * design.known / (sigma2 + design.known);
                (m + 0.5 * post_var).exp()
            })),
            _ => None,
        }
    }

    fn latent(&self, delta: &ParameterVector, design: &AreaDesign) -> Option<LatentNormal> {
        Some(LatentNormal {
            mean: self.mean(delta, design),
            sd: delta.psi[0].sqrt(),
        })
    }

    fn log_obs_density(&self, y: f64, theta: f64, design: &AreaDesign) -> f64 {
        let r = y - theta;
        -0.5 * r * r / design.known - 0.5 * (2.0 * std::f64::consts::PI * design.known).ln()
    }
}
