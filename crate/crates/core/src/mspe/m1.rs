use crate::error::Result;
use crate::models::TwoLevelModel;
use crate::params::{AreaDesign, ParameterVector};
use crate::predictor::{xi_stream, XiStrategy};
use crate::rng::{Purpose, Stream, StreamFactory};
use crate::target::TargetFunction;

use super::check_n0;

/// Bootstrap M1*(δ₀) = N₀⁻¹ Σ {ξ(y*ˡ; δ₀) − h(θ*ˡ)}² over N₀ joint draws at
/// δ₀. `draws` feeds the (θ*, y*) pairs, `xi_rng` the predictor's own
/// resample.
#[allow(clippy::too_many_arguments)]
pub fn m1_star(
    delta0: &ParameterVector,
    model: &dyn TwoLevelModel,
    design: &AreaDesign,
    h: &TargetFunction,
    xi: &dyn XiStrategy,
    n0: usize,
    draws: &mut Stream,
    xi_rng: &mut Stream,
) -> Result<f64> {
    check_n0(n0)?;
    model.space().check(delta0)?;
    let prepared = xi.prepare(model, delta0, design, h, xi_rng)?;
    let mut sum = 0.0;
    for _ in 0..n0 {
        let d = model.draw(delta0, design, draws);
        let e = prepared.predict(d.y)?.value - h.eval(d.theta);
        sum += e * e;
    }
    Ok(sum / n0 as f64)
}

/// Stream index reserved for the final M1* evaluation (at δ̌ or δ̂).
pub const FINAL_DRAWS: u64 = 1;

/// M1* for one area with streams keyed by (replication, area). Every δ
/// evaluated with the same `draw_index` sees the same underlying random
/// numbers.
#[derive(Debug, Clone, Copy)]
pub struct AreaM1<'a> {
    pub model: &'a dyn TwoLevelModel,
    pub design: &'a AreaDesign,
    pub h: &'a TargetFunction,
    pub xi: &'a dyn XiStrategy,
    pub streams: &'a StreamFactory,
    pub replication: u64,
    pub area: usize,
}

impl AreaM1<'_> {
    pub fn eval(&self, delta: &ParameterVector, n0: usize, draw_index: u64) -> Result<f64> {
        let mut draws = self
            .streams
            .get(self.replication, self.area as u64, Purpose::M1, draw_index);
        let mut xi_rng = xi_stream(self.streams, self.replication, self.area);
        m1_star(
            delta,
            self.model,
            self.design,
            self.h,
            self.xi,
            n0,
            &mut draws,
            &mut xi_rng,
        )
    }
}
