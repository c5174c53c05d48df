use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Fitter;
use crate::error::{Result, SaeError};
use crate::models::{sample_areas, TwoLevelModel};
use crate::params::{AreaDataset, AreaDesign, ParameterVector};
use crate::rng::{Purpose, StreamFactory};

/// Bootstrap bias b* and variance V* of δ̂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    pub b_star: Vec<f64>,
    pub v_star: Vec<Vec<f64>>,
    /// Resamples actually used (after dropping failed refits).
    pub n0: usize,
    pub dropped: usize,
}

impl BiasVariance {
    pub fn zero(k: usize) -> Self {
        Self {
            b_star: vec![0.0; k],
            v_star: vec![vec![0.0; k]; k],
            n0: 0,
            dropped: 0,
        }
    }
}

/// One bootstrap dataset drawn at δ̂ and its refit δ*ˡ.
#[derive(Debug, Clone, PartialEq)]
pub struct Refit {
    pub index: usize,
    pub y: Vec<f64>,
    pub delta: ParameterVector,
}

/// Successful refits in resample order, plus the number dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapRefits {
    pub refits: Vec<Refit>,
    pub requested: usize,
    pub dropped: usize,
}

/// Draws `n0` datasets from the model at δ̂ and refits each. Dataset l uses
/// the stream (replication, 0, Bootstrap, l). Non-converged or failed refits
/// are dropped; more than 10% drops is an error.
pub fn bootstrap_refits(
    model: &dyn TwoLevelModel,
    fitter: &dyn Fitter,
    delta_hat: &ParameterVector,
    designs: &Arc<[AreaDesign]>,
    n0: usize,
    streams: &StreamFactory,
    replication: u64,
) -> Result<BootstrapRefits> {
    if n0 < 2 {
        return Err(SaeError::InvalidParameter(format!("bootstrap needs N₀ ≥ 2, got {n0}")));
    }
    model.space().check(delta_hat)?;
    let results: Vec<Option<Refit>> = (0..n0)
        .into_par_iter()
        .map(|l| {
            let mut rng = streams.get(replication, 0, Purpose::Bootstrap, l as u64);
            let (_, y) = sample_areas(model, delta_hat, designs, &mut rng);
            let data = AreaDataset {
                designs: designs.clone(),
                y,
            };
            match fitter.fit(&data) {
                Ok(fit) if fit.converged => Some(Refit {
                    index: l,
                    y: data.y,
                    delta: fit.delta_hat,
                }),
                _ => None,
            }
        })
        .collect();
    let dropped = results.iter().filter(|r| r.is_none()).count();
    if dropped * 10 > n0 {
        return Err(SaeError::UnstableBootstrap {
            failed: dropped,
            total: n0,
        });
    }
    Ok(BootstrapRefits {
        refits: results.into_iter().flatten().collect(),
        requested: n0,
        dropped,
    })
}

/// b* = mean(δ*ˡ) − δ̂ and V* = mean(δ*ˡ δ*ˡ') − mean(δ*ˡ) mean(δ*ˡ)'.
pub fn bias_variance_from(refits: &BootstrapRefits, delta_hat: &ParameterVector) -> BiasVariance {
    let k = delta_hat.len();
    let n = refits.refits.len();
    if n == 0 {
        return BiasVariance {
            dropped: refits.dropped,
            ..BiasVariance::zero(k)
        };
    }
    // Moments of the deviations δ*ˡ − δ̂ give the same b* and V* without
    // the cancellation of raw second moments.
    let centre = delta_hat.to_flat();
    let mut sum = vec![0.0; k];
    let mut cross = vec![vec![0.0; k]; k];
    for r in &refits.refits {
        let v = r.delta.to_flat();
        let d: Vec<f64> = v.iter().zip(&centre).map(|(a, c)| a - c).collect();
        for a in 0..k {
            sum[a] += d[a];
            for b in 0..k {
                cross[a][b] += d[a] * d[b];
            }
        }
    }
    let nf = n as f64;
    let b_star: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let mut v_star = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            v_star[a][b] = cross[a][b] / nf - b_star[a] * b_star[b];
        }
    }
    for a in 0..k {
        // Cancellation can leave a tiny negative diagonal or asymmetry.
        v_star[a][a] = v_star[a][a].max(0.0);
        for b in 0..a {
            let s = 0.5 * (v_star[a][b] + v_star[b][a]);
            v_star[a][b] = s;
            v_star[b][a] = s;
        }
    }
    BiasVariance {
        b_star,
        v_star,
        n0: n,
        dropped: refits.dropped,
    }
}

/// Parametric-bootstrap bias and variance of δ̂ from `n0` refits.
pub fn bootstrap_bias_variance(
    model: &dyn TwoLevelModel,
    fitter: &dyn Fitter,
    delta_hat: &ParameterVector,
    designs: &Arc<[AreaDesign]>,
    n0: usize,
    streams: &StreamFactory,
    replication: u64,
) -> Result<BiasVariance> {
    let refits = bootstrap_refits(model, fitter, delta_hat, designs, n0, streams, replication)?;
    Ok(bias_variance_from(&refits, delta_hat))
}
