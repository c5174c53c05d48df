use serde::{Deserialize, Serialize};

use super::config::{CovariateRule, StudyConfig};
use super::Registries;
use crate::mspe::{MspeConfig, MIN_N0};
use crate::target::TargetFunction;

/// One problem found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub field: String,
    pub message: String,
}

impl Issue {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Every schema and cross-field problem in `config`; empty when it can run.
pub fn validate_study(config: &StudyConfig, registries: &Registries) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut push = |f: &str, m: String| issues.push(Issue::new(f, m));
    let m = config.m();
    let p = config.p();

    if config.replications == 0 {
        push("replications", "must be at least 1".into());
    }
    if m == 0 {
        push("designs", "at least one area is required".into());
    }
    for (i, d) in config.designs.iter().enumerate() {
        if !(d.known > 0.0 && d.known.is_finite()) {
            push(
                &format!("designs[{i}].known"),
                format!("must be positive and finite, got {}", d.known),
            );
        }
        if d.x.len() != p {
            push(
                &format!("designs[{i}].x"),
                format!("has {} covariates but truth.lambda has {p}", d.x.len()),
            );
        }
        if d.x.iter().any(|v| !v.is_finite()) {
            push(&format!("designs[{i}].x"), "covariates must be finite".into());
        }
    }
    if let CovariateRule::NormalUniform {
        normal_var,
        uniform_low,
        uniform_high,
    } = config.covariates
    {
        if p != 3 {
            push(
                "covariates",
                format!("normal-uniform covariates need 3 coefficients, truth has {p}"),
            );
        }
        if !(normal_var > 0.0) {
            push("covariates.normal_var", "must be positive".into());
        }
        if !(uniform_low < uniform_high) {
            push("covariates.uniform_low", "must be below uniform_high".into());
        }
    }
    for g in &config.groups {
        if g.areas.is_empty() {
            push(&format!("groups.{}", g.label), "group has no areas".into());
        }
        if let Some(bad) = g.areas.iter().find(|&&a| a >= m) {
            push(
                &format!("groups.{}", g.label),
                format!("area {bad} is out of range for m = {m}"),
            );
        }
    }

    let model = match registries.models.build(&config.model, p) {
        Ok(model) => Some(model),
        Err(e) => {
            push("model", e.to_string());
            None
        }
    };
    if let Some(model) = &model {
        if let Err(e) = model.space().check(&config.truth) {
            push("truth", e.to_string());
        }
        let k = config.truth.len();
        if m > 0 && m < k + 1 {
            push("designs", format!("m = {m} areas cannot identify {k} parameters"));
        }
    }
    let h = TargetFunction::from_name(&config.target);
    if h.is_none() {
        push(
            "target",
            format!("unknown target `{}` (identity, exp, logistic)", config.target),
        );
    }

    let fitter = match &config.fitter {
        Some(name) => registries.fitters.build(name, &config.fit),
        None => registries.fitters.default_for(&config.model, &config.fit),
    };
    if let Err(e) = fitter {
        push("fitter", e.to_string());
    }
    if !(config.fit.var_floor > 0.0) {
        push("fit.var_floor", "must be positive".into());
    }
    if !(config.fit.mean_floor > 0.0 && config.fit.mean_floor.is_finite()) {
        push("fit.mean_floor", "must be positive and finite".into());
    }

    match registries.xi.build(&config.xi) {
        Ok(xi) => {
            if let (Some(model), Some(h)) = (&model, &h) {
                if let Err(e) = xi.supports(model.as_ref(), h) {
                    push("xi.strategy", e.to_string());
                }
            }
        }
        Err(e) => push("xi", e.to_string()),
    }

    issues.extend(validate_mspe(&config.mspe));
    issues.extend(validate_methods(
        &config.methods,
        &config.model,
        &config.target,
        registries,
    ));
    issues
}

/// Resample sizes, stencil step and tilt cap, with fields under `mspe.`.
pub fn validate_mspe(mspe: &MspeConfig) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut push = |f: &str, m: String| issues.push(Issue::new(format!("mspe.{f}"), m));
    if let Some(z) = mspe.z {
        if !(z > 0.0 && z.is_finite()) {
            push("z", format!("must be positive, got {z}"));
        }
    }
    for (field, n0) in [
        ("n0_first", mspe.n0_first),
        ("n0_second", mspe.n0_second),
        ("n0_boot", mspe.n0_boot),
        ("n0_final", mspe.n0_final()),
    ] {
        if n0 < MIN_N0 {
            push(field, format!("must be at least {MIN_N0}, got {n0}"));
        }
    }
    if mspe.n0_second < mspe.n0_first {
        push("n0_second", "must be at least n0_first".into());
    }
    if let Some(cap) = mspe.tilt_cap {
        if !(cap > 0.0 && cap.is_finite()) {
            push("tilt_cap", format!("must be positive and finite, got {cap}"));
        }
    }
    issues
}

/// Method names exist and fit the model: lm1, lm1-alt and prdl need the
/// Fay-Herriot model with h = identity.
pub fn validate_methods(methods: &[String], model: &str, target: &str, registries: &Registries) -> Vec<Issue> {
    let fh_identity = model == "fay-herriot" && target == "identity";
    let mut issues = Vec::new();
    for name in methods {
        if registries.mspe.get(name).is_err() {
            issues.push(Issue::new("methods", format!("unknown MSPE method `{name}`")));
        } else if matches!(name.as_str(), "lm1" | "lm1-alt" | "prdl") && !fh_identity {
            issues.push(Issue::new(
                "methods",
                format!("`{name}` needs the Fay-Herriot model with target identity"),
            ));
        }
    }
    issues
}
