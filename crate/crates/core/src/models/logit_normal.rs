use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Capabilities, JointDraw, LatentNormal, ResponseKind, TwoLevelModel};
use crate::error::Result;
use crate::numerics::{binomial_inverse, binomial_logpmf_logit, logistic, normal_pdf_var};
use crate::params::{AreaDesign, ParameterSpace, ParameterVector};
use crate::rng::Stream;

/// Binomial / logit-normal model: θ_i = x_i'λ + v_i on the logit scale,
/// v_i ~ N(0, σ_v²), y_i ~ Binomial(n_i, logistic(θ_i)). δ = (λ, σ_v²).
#[derive(Debug, Clone)]
pub struct LogitNormal {
    p: usize,
    space: ParameterSpace,
}

impl LogitNormal {
    pub const NAME: &'static str = "logit-normal";

    pub fn new(p: usize) -> Self {
        Self {
            p,
            space: ParameterSpace::regression_with_variances(p, 1),
        }
    }
}

impl TwoLevelModel for LogitNormal {
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
        ResponseKind::Discrete
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
        let z: f64 = StandardNormal.sample(rng);
        let u: f64 = rng.random();
        let theta = delta.linear_predictor(&design.x) + delta.psi[0].sqrt() * z;
        let y = binomial_inverse(design.sample_size(), logistic(theta), u);
        JointDraw { theta, y: y as f64 }
    }

    fn joint_density(&self, y: f64, t: f64, delta: &ParameterVector, design: &AreaDesign) -> Result<f64> {
        let n = design.sample_size();
        if y < 0.0 || y > n as f64 || y.fract() != 0.0 {
            return Ok(0.0);
        }
        Ok(binomial_logpmf_logit(y as u32, n, t).exp()
            * normal_pdf_var(t, delta.linear_predictor(&design.x), delta.psi[0]))
    }

    fn latent(&self, delta: &ParameterVector, design: &AreaDesign) -> Option<LatentNormal> {
        Some(LatentNormal {
            mean: delta.linear_predictor(&design.x),
            sd: delta.psi[0].sqrt(),
        })
    }

    fn log_obs_density(&self, y: f64, theta: f64, design: &AreaDesign) -> f64 {
        binomial_logpmf_logit(y as u32, design.sample_size(), theta)
    }
}
