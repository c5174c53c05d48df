use rand_distr::{Distribution, StandardNormal};

use super::{Capabilities, JointDraw, LatentNormal, ResponseKind, TwoLevelModel};
use crate::error::Result;
use crate::numerics::normal_pdf_var;
use crate::params::{AreaDesign, ParameterSpace, ParameterVector};
use crate::rng::Stream;

/// Unmatched normal-lognormal model: θ_i = exp(x_i'λ + v_i), y_i = θ_i + e_i,
/// v_i ~ N(0, σ_v²), e_i ~ N(0, s_i). δ = (λ, σ_v²).
#[derive(Debug, Clone)]
pub struct NormalLognormal {
    p: usize,
    space: ParameterSpace,
}

impl NormalLognormal {
    pub const NAME: &'static str = "normal-lognormal";

    pub fn new(p: usize) -> Self {
        Self {
            p,
            space: ParameterSpace::regression_with_variances(p, 1),
        }
    }
}

impl TwoLevelModel for NormalLognormal {
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
            has_closed_bp: false,
            has_joint_density: true,
            has_latent_normal: true,
        }
    }

    fn draw(&self, delta: &ParameterVector, design: &AreaDesign, rng: &mut Stream) -> JointDraw {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let theta = (delta.linear_predictor(&design.x) + delta.psi[0].sqrt() * z1).exp();
        JointDraw {
            theta,
            y: theta + design.known.sqrt() * z2,
        }
    }

    fn joint_density(&self, y: f64, t: f64, delta: &ParameterVector, design: &AreaDesign) -> Result<f64> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        let f2 = normal_pdf_var(t.ln(), delta.linear_predictor(&design.x), delta.psi[0]) / t;
        Ok(normal_pdf_var(y, t, design.known) * f2)
    }

    fn latent(&self, delta: &ParameterVector, design: &AreaDesign) -> Option<LatentNormal> {
        Some(LatentNormal {
            mean: delta.linear_predictor(&design.x),
            sd: delta.psi[0].sqrt(),
        })
    }

    fn theta_of_latent(&self, u: f64) -> f64 {
        u.exp()
    }

    fn log_obs_density(&self, y: f64, theta: f64, design: &AreaDesign) -> f64 {
        let r = y - theta;
        -0.5 * r * r / design.known - 0.5 * (2.0 * std::f64::consts::PI * design.known).ln()
    }
}
