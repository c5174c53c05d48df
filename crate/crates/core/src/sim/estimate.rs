use serde::{Deserialize, Serialize};

use crate::error::{Result, StageExt};
use crate::estimators::FitResult;
use crate::estimators::Fitter;
use crate::models::TwoLevelModel;
use crate::mspe::{MspeConfig, MspeContext, MspeMethod, MspeReport};
use crate::params::AreaDataset;
use crate::predictor::{ebp, EbpResult, XiStrategy};
use crate::rng::StreamFactory;
use crate::target::TargetFunction;

/// EBPs and MSPE estimates for one observed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub fit: FitResult,
    pub ebp: EbpResult,
    pub reports: Vec<MspeReport>,
}

/// Fits, predicts, and runs each MSPE method on real data. Streams use
/// replication index 0.
#[allow(clippy::too_many_arguments)]
pub fn estimate_dataset(
    data: &AreaDataset,
    model: &dyn TwoLevelModel,
    fitter: &dyn Fitter,
    h: &TargetFunction,
    xi: &dyn XiStrategy,
    config: &MspeConfig,
    methods: &[&dyn MspeMethod],
    seed: u64,
) -> Result<EstimateOutput> {
    let streams = StreamFactory::new(seed);
    let ctx = MspeContext::new(data, model, fitter, h, xi, config, &streams, 0)?;
    let ebp = ebp(data, model, ctx.delta_hat(), h, xi, &streams, 0).stage("predict")?;
    let reports = methods
        .iter()
        .map(|m| m.estimate(&ctx).stage("mspe"))
        .collect::<Result<_>>()?;
    Ok(EstimateOutput {
        fit: ctx.fit.clone(),
        ebp,
        reports,
    })
}
