use std::collections::HashMap;

use super::kernel::{KernelShape, SortedSample};
use super::{PreparedXi, XiMethod, XiStrategy, XiValue};
use crate::error::{Result, SaeError};
use crate::models::{LatentNormal, ResponseKind, TwoLevelModel};
use crate::numerics::NormalRule;
use crate::params::{AreaDesign, ParameterVector};
use crate::rng::Stream;
use crate::target::TargetFunction;

const MIN_RESAMPLES: usize = 100;

fn unsupported(strategy: &str, model: &dyn TwoLevelModel, why: &str) -> SaeError {
    SaeError::Unsupported(format!(
        "{strategy} predictor needs {why}; model `{}` does not provide it",
        model.name()
    ))
}

/// The model's own closed-form conditional mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClosedForm;

struct ClosedPrepared<'a> {
    model: &'a dyn TwoLevelModel,
    delta: &'a ParameterVector,
    design: &'a AreaDesign,
    h: &'a TargetFunction,
}

impl PreparedXi for ClosedPrepared<'_> {
    fn predict(&self, y: f64) -> Result<XiValue> {
        match self.model.closed_bp(y, self.delta, self.design, self.h) {
            Some(v) => v.map(XiValue::exact),
            None => Err(SaeError::Unsupported(format!(
                "model `{}` has no closed-form predictor of h = {}",
                self.model.name(),
                self.h.label()
            ))),
        }
    }
}

impl XiStrategy for ClosedForm {
    fn method(&self) -> XiMethod {
        XiMethod::Closed
    }

    fn supports(&self, model: &dyn TwoLevelModel, _h: &TargetFunction) -> Result<()> {
        if model.capabilities().has_closed_bp {
            Ok(())
        } else {
            Err(unsupported("closed-form", model, "a closed-form best predictor"))
        }
    }

    fn prepare<'a>(
        &'a self,
        model: &'a dyn TwoLevelModel,
        delta: &'a ParameterVector,
        design: &'a AreaDesign,
        h: &'a TargetFunction,
        _rng: &mut Stream,
    ) -> Result<Box<dyn PreparedXi + 'a>> {
        Ok(Box::new(ClosedPrepared {
            model,
            delta,
            design,
            h,
        }))
    }
}

/// Gauss-Hermite quadrature over the latent normal behind θ.
///
/// By default the rule is recentred and rescaled at the posterior mode of
/// the latent variable for each y (adaptive quadrature), which keeps a
/// 15-point rule accurate when the posterior is much narrower than the prior.
#[derive(Debug, Clone)]
pub struct Quadrature {
    rule: NormalRule,
    adaptive: bool,
}

impl Quadrature {
    pub fn new(points: usize) -> Result<Self> {
        if points < 5 {
            return Err(SaeError::InvalidParameter(format!(
                "quadrature needs at least 5 points, got {points}"
            )));
        }
        Ok(Self {
            rule: NormalRule::new(points),
            adaptive: true,
        })
    }

    /// Nodes fixed at the prior instead of the posterior mode.
    pub fn prior_nodes(mut self) -> Self {
        self.adaptive = false;
        self
    }

    pub fn points(&self) -> usize {
        self.rule.len()
    }
}

struct QuadraturePrepared<'a> {
    model: &'a dyn TwoLevelModel,
    design: &'a AreaDesign,
    h: &'a TargetFunction,
    rule: &'a NormalRule,
    latent: LatentNormal,
    adaptive: bool,
}

impl QuadraturePrepared<'_> {
    /// Log posterior of the latent u up to a constant.
    fn log_post(&self, y: f64, u: f64) -> f64 {
        let z = (u - self.latent.mean) / self.latent.sd;
        self.model
            .log_obs_density(y, self.model.theta_of_latent(u), self.design)
            - 0.5 * z * z
    }

    /// Posterior mode and curvature scale of u by safeguarded Newton steps on
    /// finite-difference derivatives. `None` when the search fails.
    fn mode(&self, y: f64) -> Option<(f64, f64)> {
        let sd = self.latent.sd;
        let mut u = self.latent.mean;
        let mut g = self.log_post(y, u);
        if !g.is_finite() {
            return None;
        }
        let derivs = |u: f64| {
            let e = 1e-4 * sd.min(1.0);
            let (lo, mid, hi) = (self.log_post(y, u - e), self.log_post(y, u), self.log_post(y, u + e));
            ((hi - lo) / (2.0 * e), (hi - 2.0 * mid + lo) / (e * e))
        };
        for _ in 0..100 {
            let (d1, d2) = derivs(u);
            let mut step = if d2 < 0.0 { -d1 / d2 } else { d1.signum() * sd };
            let mut improved = false;
            for _ in 0..60 {
                let cand = self.log_post(y, u + step);
                if cand >= g {
                    u += step;
                    g = cand;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved || step.abs() < 1e-10 * (sd + u.abs()) {
                break;
            }
        }
        let (_, d2) = derivs(u);
        (d2 < 0.0 && u.is_finite()).then(|| (u, (-1.0 / d2).sqrt()))
    }

    fn integrate(&self, y: f64, centre: f64, scale: f64) -> Option<f64> {
        // ∫ h·f₁·φ du over nodes u = centre + scale·z, weights ω_k / φ(z_k).
        let terms: Vec<(f64, f64)> = self
            .rule
            .nodes
            .iter()
            .zip(&self.rule.weights)
            .map(|(&z, w)| {
                let u = centre + scale * z;
                let theta = self.model.theta_of_latent(u);
                (self.log_post(y, u) + 0.5 * z * z + w.ln(), self.h.eval(theta))
            })
            .collect();
        let top = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return None;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (l, h) in &terms {
            let w = (l - top).exp();
            num += w * h;
            den += w;
        }
        Some(num / den)
    }
}

impl PreparedXi for QuadraturePrepared<'_> {
    fn predict(&self, y: f64) -> Result<XiValue> {
        if self.latent.sd == 0.0 {
            return Ok(XiValue::exact(
                self.h.eval(self.model.theta_of_latent(self.latent.mean)),
            ));
        }
        let adapted = if self.adaptive { self.mode(y) } else { None };
        let (centre, scale) = adapted.unwrap_or((self.latent.mean, self.latent.sd));
        self.integrate(y, centre, scale).map(XiValue::exact).ok_or_else(|| {
            SaeError::DegeneratePosterior(format!("y = {y} has zero likelihood at every quadrature node"))
        })
    }
}

impl XiStrategy for Quadrature {
    fn method(&self) -> XiMethod {
        XiMethod::Quadrature
    }

    fn supports(&self, model: &dyn TwoLevelModel, _h: &TargetFunction) -> Result<()> {
        if model.capabilities().has_latent_normal {
            Ok(())
        } else {
            Err(unsupported("quadrature", model, "a latent normal random effect"))
        }
    }

    fn prepare<'a>(
        &'a self,
        model: &'a dyn TwoLevelModel,
        delta: &'a ParameterVector,
        design: &'a AreaDesign,
        h: &'a TargetFunction,
        _rng: &mut Stream,
    ) -> Result<Box<dyn PreparedXi + 'a>> {
        let latent = model
            .latent(delta, design)
            .ok_or_else(|| unsupported("quadrature", model, "a latent normal random effect"))?;
        Ok(Box::new(QuadraturePrepared {
            model,
            design,
            h,
            rule: &self.rule,
            latent,
            adaptive: self.adaptive,
        }))
    }
}

fn check_resamples(j: usize) -> Result<()> {
    if j < MIN_RESAMPLES {
        return Err(SaeError::InvalidParameter(format!(
            "J = {j} resamples; at least {MIN_RESAMPLES} required"
        )));
    }
    Ok(())
}

fn draw_pairs(
    model: &dyn TwoLevelModel,
    delta: &ParameterVector,
    design: &AreaDesign,
    h: &TargetFunction,
    j: usize,
    rng: &mut Stream,
) -> Vec<(f64, f64)> {
    (0..j)
        .map(|_| {
            let d = model.draw(delta, design, rng);
            (d.y, h.eval(d.theta))
        })
        .collect()
}

/// Nadaraya-Watson smoother over J joint draws at δ.
#[derive(Debug, Clone, Copy)]
pub struct KernelSmoother {
    j: usize,
    b: f64,
    shape: KernelShape,
}

impl KernelSmoother {
    /// `bandwidth` defaults to J^(-1/5).
    pub fn new(j: usize, bandwidth: Option<f64>, shape: KernelShape) -> Result<Self> {
        check_resamples(j)?;
        let b = bandwidth.unwrap_or((j as f64).powf(-0.2));
        if !(b > 0.0 && b.is_finite()) {
            return Err(SaeError::InvalidParameter(format!(
                "kernel bandwidth must be positive, got {b}"
            )));
        }
        Ok(Self { j, b, shape })
    }
}

struct KernelPrepared {
    sample: SortedSample,
    b: f64,
    shape: KernelShape,
}

impl PreparedXi for KernelPrepared {
    fn predict(&self, y: f64) -> Result<XiValue> {
        Ok(self.sample.smooth(y, self.b, self.shape))
    }
}

impl XiStrategy for KernelSmoother {
    fn method(&self) -> XiMethod {
        XiMethod::Kernel
    }

    fn j_resamples(&self) -> usize {
        self.j
    }

    fn bandwidth(&self) -> f64 {
        self.b
    }

    fn supports(&self, model: &dyn TwoLevelModel, _h: &TargetFunction) -> Result<()> {
        match model.kind() {
            ResponseKind::Continuous => Ok(()),
            ResponseKind::Discrete => Err(unsupported("kernel", model, "a continuous response")),
        }
    }

    fn prepare<'a>(
        &'a self,
        model: &'a dyn TwoLevelModel,
        delta: &'a ParameterVector,
        design: &'a AreaDesign,
        h: &'a TargetFunction,
        rng: &mut Stream,
    ) -> Result<Box<dyn PreparedXi + 'a>> {
        Ok(Box::new(KernelPrepared {
            sample: SortedSample::new(draw_pairs(model, delta, design, h, self.j, rng)),
            b: self.b,
            shape: self.shape,
        }))
    }
}

/// Exact-match averaging over J joint draws, for integer responses.
#[derive(Debug, Clone, Copy)]
pub struct Indicator {
    j: usize,
}

impl Indicator {
    pub fn new(j: usize) -> Result<Self> {
        check_resamples(j)?;
        Ok(Self { j })
    }
}

struct IndicatorPrepared {
    /// y* → (Σ h(θ*), count)
    cells: HashMap<i64, (f64, usize)>,
    j: usize,
}

impl PreparedXi for IndicatorPrepared {
    fn predict(&self, y: f64) -> Result<XiValue> {
        if y.fract() != 0.0 || !y.is_finite() {
            return Err(SaeError::InvalidData(format!(
                "discrete response {y} is not an integer"
            )));
        }
        match self.cells.get(&(y as i64)) {
            Some(&(sum, n)) => Ok(XiValue::exact(sum / n as f64)),
            None => Err(SaeError::ResampleExhausted { y, j: self.j }),
        }
    }
}

impl XiStrategy for Indicator {
    fn method(&self) -> XiMethod {
        XiMethod::Indicator
    }

    fn j_resamples(&self) -> usize {
        self.j
    }

    fn supports(&self, model: &dyn TwoLevelModel, _h: &TargetFunction) -> Result<()> {
        match model.kind() {
            ResponseKind::Discrete => Ok(()),
            ResponseKind::Continuous => Err(unsupported("indicator", model, "a discrete response")),
        }
    }

    fn prepare<'a>(
        &'a self,
        model: &'a dyn TwoLevelModel,
        delta: &'a ParameterVector,
        design: &'a AreaDesign,
        h: &'a TargetFunction,
        rng: &mut Stream,
    ) -> Result<Box<dyn PreparedXi + 'a>> {
        let mut cells: HashMap<i64, (f64, usize)> = HashMap::new();
        // Sums accumulate in draw order, so results do not depend on
        // hash iteration order.
        for (y, h) in draw_pairs(model, delta, design, h, self.j, rng) {
            let c = cells.entry(y as i64).or_insert((0.0, 0));
            c.0 += h;
            c.1 += 1;
        }
        Ok(Box::new(IndicatorPrepared { cells, j: self.j }))
    }
}
