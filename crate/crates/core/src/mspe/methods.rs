use rayon::prelude::*;

use super::fh::FhAnalytics;
use super::m1::FINAL_DRAWS;
use super::stencil::{M1Function, Order, Stencil};
use super::tilt::{cap_tilt, tilt, TiltMode};
use super::{AreaMspe, MspeContext, MspeMethod, MspeReport};
use crate::error::{Result, SaeError, StageExt};
use crate::params::ParameterVector;
use crate::predictor::xi_stream;

/// M1*(δ̌*_i) + M2*(δ̂) with bootstrap stencils and tilting.
pub fn mspe_new(ctx: &MspeContext<'_>, mode: TiltMode) -> Result<MspeReport> {
    let m = ctx.m();
    let stencil_cfg = ctx.config.stencil(m)?;
    let bv = ctx.bias_variance()?;
    let m2 = ctx.m2()?;
    let space = ctx.model.space();
    let delta_hat = ctx.delta_hat();
    let crn = ctx.config.common_random_numbers;
    let n0_final = ctx.config.n0_final();
    let areas = (0..m)
        .into_par_iter()
        .map(|i| {
            let area = ctx.area_m1(i);
            let f = |delta: &ParameterVector, order: Order, point: u64| {
                let n0 = match order {
                    Order::First => stencil_cfg.n0_first,
                    Order::Second => stencil_cfg.n0_second,
                };
                area.eval(delta, n0, if crn { 0 } else { FINAL_DRAWS + 1 + point })
            };
            let stencil = Stencil::new(&f as &dyn M1Function, delta_hat, space, stencil_cfg);
            let deriv = stencil.all(i).stage("stencil")?;
            let mut outcome = tilt(delta_hat, &deriv.grad, &deriv.hess, &bv, space, m, mode);
            if let Some(cap) = ctx.config.tilt_cap {
                outcome = cap_tilt(outcome, delta_hat, &bv, cap);
            }
            let m1 = area.eval(&outcome.delta_check, n0_final, FINAL_DRAWS).stage("m1")?;
            Ok(AreaMspe {
                tilt: Some(outcome),
                stencil_shrunk: deriv.shrunk,
                ..AreaMspe::plain(m1, m2[i])
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let name = match mode {
        TiltMode::Single => "new",
        TiltMode::Multi => "new-alt",
    };
    Ok(MspeReport::new(name, areas, bv.dropped))
}

/// M1*(δ̂) + M2*(δ̂), drawing M1* from the same stream as the final step of
/// [`mspe_new`].
pub fn mspe_naive(ctx: &MspeContext<'_>) -> Result<MspeReport> {
    let m2 = ctx.m2()?;
    let n0 = ctx.config.n0_final();
    let areas = (0..ctx.m())
        .into_par_iter()
        .map(|i| {
            let m1 = ctx.area_m1(i).eval(ctx.delta_hat(), n0, FINAL_DRAWS).stage("m1")?;
            Ok(AreaMspe::plain(m1, m2[i]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MspeReport::new("naive", areas, ctx.refits()?.dropped))
}

/// Analytic g1 at a tilted σ², plus g2 + g3 at δ̂, for the Fay-Herriot model.
/// The bias and variance of δ̂ come from the parametric bootstrap.
pub fn mspe_lm1(ctx: &MspeContext<'_>, mode: TiltMode) -> Result<MspeReport> {
    let a = ctx.fh_analytics()?;
    let bv = ctx.bias_variance()?;
    let delta_hat = ctx.delta_hat();
    let k = delta_hat.len();
    let var = delta_hat.p();
    let m = ctx.m();
    let areas = (0..m)
        .map(|i| {
            let mut grad = vec![0.0; k];
            grad[var] = a.dg1[i];
            let mut hess = vec![vec![0.0; k]; k];
            hess[var][var] = a.d2g1[i];
            let mut outcome = tilt(delta_hat, &grad, &hess, &bv, ctx.model.space(), m, mode);
            if let Some(cap) = ctx.config.tilt_cap {
                outcome = cap_tilt(outcome, delta_hat, &bv, cap);
            }
            let m1 = FhAnalytics::g1_at(outcome.delta_check.psi[0], ctx.data.designs[i].known);
            AreaMspe {
                tilt: Some(outcome),
                ..AreaMspe::plain(m1, a.g2[i] + a.g3[i])
            }
        })
        .collect();
    let name = match mode {
        TiltMode::Single => "lm1",
        TiltMode::Multi => "lm1-alt",
    };
    Ok(MspeReport::new(name, areas, bv.dropped))
}

/// Delete-one-area jackknife. M1 is analytic for FH with h = identity and
/// the bootstrap M1* otherwise; estimates can be negative.
pub fn mspe_jk(ctx: &MspeContext<'_>) -> Result<MspeReport> {
    let m = ctx.m();
    if m < 3 {
        return Err(SaeError::InvalidData(format!("jackknife needs m ≥ 3, got {m}")));
    }
    let loo: Vec<ParameterVector> = (0..m)
        .into_par_iter()
        .map(|u| {
            let fit = ctx.fitter.fit(&ctx.data.without(u))?;
            if !fit.converged {
                return Err(SaeError::InvalidData(format!(
                    "leave-one-out fit without area {u} did not converge"
                )));
            }
            Ok(fit.delta_hat)
        })
        .collect::<Result<_>>()
        .stage("jackknife")?;
    let analytic = ctx.is_fh_identity();
    let n0 = ctx.config.n0_final();
    let factor = (m as f64 - 1.0) / m as f64;
    let areas = (0..m)
        .into_par_iter()
        .map(|i| {
            let design = &ctx.data.designs[i];
            let area = ctx.area_m1(i);
            let m1_at = |delta: &ParameterVector| -> Result<f64> {
                if analytic {
                    Ok(FhAnalytics::g1_at(delta.psi[0], design.known))
                } else {
                    area.eval(delta, n0, FINAL_DRAWS)
                }
            };
            let xi_at = |delta: &ParameterVector| -> Result<f64> {
                let mut rng = xi_stream(ctx.streams, ctx.replication, i);
                Ok(ctx
                    .xi
                    .prepare(ctx.model, delta, design, ctx.h, &mut rng)?
                    .predict(ctx.data.y[i])?
                    .value)
            };
            let m1_hat = m1_at(ctx.delta_hat())?;
            let xi_hat = xi_at(ctx.delta_hat())?;
            let mut m1_shift = 0.0;
            let mut m2 = 0.0;
            for d in &loo {
                m1_shift += m1_at(d)? - m1_hat;
                m2 += (xi_at(d)? - xi_hat).powi(2);
            }
            Ok(AreaMspe::plain(m1_hat - factor * m1_shift, factor * m2))
        })
        .collect::<Result<Vec<_>>>()
        .stage("jackknife")?;
    Ok(MspeReport::new("jk", areas, 0))
}

/// g1 + g2 + 2 g3 at the ML fit, with the second-order ML bias correction
/// −b_ML·∂g1/∂σ² when covariates are present.
pub fn mspe_prdl(ctx: &MspeContext<'_>) -> Result<MspeReport> {
    let a = ctx.fh_analytics()?;
    let areas = (0..ctx.m())
        .map(|i| {
            let m1 = a.g1[i] - a.ml_bias * a.dg1[i];
            AreaMspe::plain(m1, a.g2[i] + 2.0 * a.g3[i])
        })
        .collect();
    Ok(MspeReport::new("prdl", areas, 0))
}

#[derive(Debug, Clone, Copy)]
pub struct NewEstimator {
    mode: TiltMode,
}

impl NewEstimator {
    pub fn new(mode: TiltMode) -> Self {
        Self { mode }
    }
}

impl MspeMethod for NewEstimator {
    fn name(&self) -> &str {
        match self.mode {
            TiltMode::Single => "new",
            TiltMode::Multi => "new-alt",
        }
    }

    fn estimate(&self, ctx: &MspeContext<'_>) -> Result<MspeReport> {
        mspe_new(ctx, self.mode)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Naive;

impl MspeMethod for Naive {
    fn name(&self) -> &str {
        "naive"
    }

    fn estimate(&self, ctx: &MspeContext<'_>) -> Result<MspeReport> {
        mspe_naive(ctx)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Lm {
    mode: TiltMode,
}

impl Lm {
    pub fn new(mode: TiltMode) -> Self {
        Self { mode }
    }
}

impl MspeMethod for Lm {
    fn name(&self) -> &str {
        match self.mode {
            TiltMode::Single => "lm1",
            TiltMode::Multi => "lm1-alt",
        }
    }

    fn estimate(&self, ctx: &MspeContext<'_>) -> Result<MspeReport> {
        mspe_lm1(ctx, self.mode)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Jackknife;

impl MspeMethod for Jackknife {
    fn name(&self) -> &str {
        "jk"
    }

    fn estimate(&self, ctx: &MspeContext<'_>) -> Result<MspeReport> {
        mspe_jk(ctx)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PrDl;

impl MspeMethod for PrDl {
    fn name(&self) -> &str {
        "prdl"
    }

    fn estimate(&self, ctx: &MspeContext<'_>) -> Result<MspeReport> {
        mspe_prdl(ctx)
    }
}
