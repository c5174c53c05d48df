use std::sync::Arc;

use rayon::prelude::*;

use crate::error::Result;
use crate::estimators::{bootstrap_refits, BootstrapRefits, Fitter};
use crate::models::TwoLevelModel;
use crate::params::{AreaDesign, ParameterVector};
use crate::predictor::{xi_stream, XiStrategy};
use crate::rng::StreamFactory;
use crate::target::TargetFunction;

/// M2*_i = mean over refits of {ξ_i(y_i*ˡ; δ*ˡ) − ξ_i(y_i*ˡ; δ̂)}², one value
/// per area. Monte Carlo predictors reuse the area's resample stream at
/// every δ.
#[allow(clippy::too_many_arguments)]
pub fn m2_from_refits(
    refits: &BootstrapRefits,
    delta_hat: &ParameterVector,
    model: &dyn TwoLevelModel,
    designs: &[AreaDesign],
    h: &TargetFunction,
    xi: &dyn XiStrategy,
    streams: &StreamFactory,
    replication: u64,
) -> Result<Vec<f64>> {
    (0..designs.len())
        .into_par_iter()
        .map(|i| {
            let design = &designs[i];
            let at_hat = xi.prepare(model, delta_hat, design, h, &mut xi_stream(streams, replication, i))?;
            let mut sum = 0.0;
            for r in &refits.refits {
                let y = r.y[i];
                let at_star = xi.prepare(model, &r.delta, design, h, &mut xi_stream(streams, replication, i))?;
                let d = at_star.predict(y)?.value - at_hat.predict(y)?.value;
                sum += d * d;
            }
            Ok(if refits.refits.is_empty() {
                0.0
            } else {
                sum / refits.refits.len() as f64
            })
        })
        .collect()
}

/// Draws N₀ bootstrap datasets at δ̂, refits, and returns M2* per area.
#[allow(clippy::too_many_arguments)]
pub fn m2_star(
    delta_hat: &ParameterVector,
    model: &dyn TwoLevelModel,
    fitter: &dyn Fitter,
    h: &TargetFunction,
    xi: &dyn XiStrategy,
    designs: &Arc<[AreaDesign]>,
    n0: usize,
    streams: &StreamFactory,
    replication: u64,
) -> Result<Vec<f64>> {
    super::check_n0(n0)?;
    let refits = bootstrap_refits(model, fitter, delta_hat, designs, n0, streams, replication)?;
    m2_from_refits(&refits, delta_hat, model, designs, h, xi, streams, replication)
}
