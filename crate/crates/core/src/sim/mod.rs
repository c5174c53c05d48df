//! Monte Carlo evaluation of EBPs and MSPE estimators: presets, the
//! replication engine, and the T1–T4 summaries.

mod config;
mod estimate;
mod float;
mod measures;
mod validate;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::estimators::{FitResult, FitterRef, FitterRegistry};
use crate::models::{sample_areas, ModelRef, ModelRegistry};
use crate::mspe::{MspeContext, MspeRef, MspeRegistry};
use crate::params::{AreaDataset, AreaDesign};
use crate::predictor::{ebp, XiRef, XiRegistry};
use crate::rng::{Purpose, StreamFactory};
use crate::target::TargetFunction;

pub use config::{CovariateRule, GroupSpec, Preset, StudyConfig};
pub use estimate::{estimate_dataset, EstimateOutput};
pub use measures::{
    aggregate, measure_t1_t2, measure_t3_t4, AreaT12, AreaT34, GroupRow, MethodTable, StudyTables, Summary,
};
pub use validate::{validate_methods, validate_mspe, validate_study, Issue};

/// Name-keyed strategy registries used to resolve a configuration.
#[derive(Debug, Clone, Default)]
pub struct Registries {
    pub models: ModelRegistry,
    pub fitters: FitterRegistry,
    pub xi: XiRegistry,
    pub mspe: MspeRegistry,
}

/// Per-method outcome inside one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    /// Per-area MSPE estimates; empty when the method failed.
    pub mspe: Vec<f64>,
    pub error: Option<String>,
    pub tilts_accepted: usize,
    pub stencil_shrinks: usize,
    pub negative: usize,
    pub bootstrap_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: u64,
    /// True small-area targets h(θ_i).
    pub beta_true: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub fit: Option<FitResult>,
    /// Set when the replication is excluded (fit or prediction failure).
    pub flagged: Option<String>,
    pub tail_fallbacks: usize,
    pub methods: BTreeMap<String, MethodRecord>,
}

/// A configuration resolved against the registries, ready to run.
#[derive(Debug, Clone)]
pub struct Study {
    pub config: StudyConfig,
    model: ModelRef,
    fitter: FitterRef,
    xi: XiRef,
    h: TargetFunction,
    methods: Vec<MspeRef>,
    streams: StreamFactory,
}

impl Study {
    pub fn new(config: StudyConfig, registries: &Registries) -> Result<Self> {
        let issues = validate_study(&config, registries);
        if let Some(first) = issues.first() {
            return Err(SaeError::InvalidParameter(format!(
                "{}: {} ({} issue(s) in total)",
                first.field,
                first.message,
                issues.len()
            )));
        }
        let model = registries.models.build(&config.model, config.p())?;
        let fitter = match &config.fitter {
            Some(name) => registries.fitters.build(name, &config.fit)?,
            None => registries.fitters.default_for(&config.model, &config.fit)?,
        };
        let xi = registries.xi.build(&config.xi)?;
        let h = TargetFunction::from_name(&config.target).ok_or_else(|| SaeError::UnknownName {
            kind: "target",
            name: config.target.clone(),
        })?;
        let methods = config
            .methods
            .iter()
            .map(|n| registries.mspe.get(n))
            .collect::<Result<_>>()?;
        let streams = StreamFactory::new(config.seed);
        Ok(Self {
            config,
            model,
            fitter,
            xi,
            h,
            methods,
            streams,
        })
    }

    pub fn method_names(&self) -> Vec<String> {
        self.methods.iter().map(|m| m.name().to_string()).collect()
    }

    /// Area designs for replication r.
    pub fn designs(&self, r: u64) -> Arc<[AreaDesign]> {
        match self.config.covariates {
            CovariateRule::Fixed => self.config.designs.clone().into(),
            CovariateRule::NormalUniform {
                normal_var,
                uniform_low,
                uniform_high,
            } => {
                let mut rng = self.streams.get(r, 0, Purpose::Design, 0);
                let normal = Normal::new(0.0, normal_var.sqrt()).expect("validated variance");
                self.config
                    .designs
                    .iter()
                    .map(|d| {
                        let x1 = normal.sample(&mut rng);
                        let x2 = rng.random_range(uniform_low..uniform_high);
                        AreaDesign::unchecked(vec![1.0, x1, x2], d.known)
                    })
                    .collect::<Vec<_>>()
                    .into()
            }
        }
    }

    /// Simulates replication r, fits, predicts and runs every method. All
    /// randomness comes from streams keyed by (seed, r).
    pub fn run_replication(&self, r: u64) -> ReplicationRecord {
        let designs = self.designs(r);
        let mut rng = self.streams.get(r, 0, Purpose::Truth, 0);
        let (theta, y) = sample_areas(self.model.as_ref(), &self.config.truth, &designs, &mut rng);
        let beta_true: Vec<f64> = theta.iter().map(|&t| self.h.eval(t)).collect();
        let mut record = ReplicationRecord {
            replication: r,
            beta_true,
            beta_hat: Vec::new(),
            fit: None,
            flagged: None,
            tail_fallbacks: 0,
            methods: BTreeMap::new(),
        };
        let data = AreaDataset { designs, y };
        let ctx = match MspeContext::new(
            &data,
            self.model.as_ref(),
            self.fitter.as_ref(),
            &self.h,
            self.xi.as_ref(),
            &self.config.mspe,
            &self.streams,
            r,
        ) {
            Ok(ctx) => ctx,
            Err(e) => {
                record.flagged = Some(format!("{}: {e}", e.kind()));
                return record;
            }
        };
        record.fit = Some(ctx.fit.clone());
        match ebp(
            &data,
            self.model.as_ref(),
            ctx.delta_hat(),
            &self.h,
            self.xi.as_ref(),
            &self.streams,
            r,
        ) {
            Ok(pred) => {
                record.tail_fallbacks = pred.tail_fallback.iter().filter(|t| **t).count();
                record.beta_hat = pred.beta_hat;
            }
            Err(e) => {
                record.flagged = Some(format!("{}: {e}", e.kind()));
                return record;
            }
        }
        for method in &self.methods {
            let entry = match method.estimate(&ctx) {
                Ok(report) => MethodRecord {
                    mspe: report.values(),
                    error: None,
                    tilts_accepted: report.diagnostics.tilts_accepted,
                    stencil_shrinks: report.diagnostics.stencil_shrinks,
                    negative: report.diagnostics.negative,
                    bootstrap_dropped: report.diagnostics.bootstrap_dropped,
                },
                Err(e) => MethodRecord {
                    mspe: Vec::new(),
                    error: Some(format!("{}: {e}", e.kind())),
                    tilts_accepted: 0,
                    stencil_shrinks: 0,
                    negative: 0,
                    bootstrap_dropped: 0,
                },
            };
            record.methods.insert(method.name().to_string(), entry);
        }
        record
    }

    /// Runs replications 0..R in parallel; records come back in order.
    pub fn run(&self) -> Vec<ReplicationRecord> {
        self.run_range(0..self.config.replications as u64)
    }

    pub fn run_range(&self, reps: std::ops::Range<u64>) -> Vec<ReplicationRecord> {
        reps.into_par_iter().map(|r| self.run_replication(r)).collect()
    }

    /// T1–T4 tables for a finished run.
    pub fn tables(&self, records: &[ReplicationRecord]) -> StudyTables {
        aggregate(records, &self.method_names(), &self.config.groups, self.config.m())
    }
}
