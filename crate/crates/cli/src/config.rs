use std::path::{Path, PathBuf};

use sae_core::estimators::FitOptions;
use sae_core::mspe::MspeConfig;
use sae_core::params::AreaDesign;
use sae_core::predictor::XiConfig;
use sae_core::sim::{validate_methods, validate_mspe, validate_study, Issue, Preset, Registries, StudyConfig};
use sae_core::target::TargetFunction;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

/// Settings for estimate mode: one observed dataset read from CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub model: String,
    /// CSV with header `area,y,s[,x1..xp]` or `area,y,n[,x1..xp]`. Relative
    /// paths are resolved against the config file's directory.
    pub input: PathBuf,
    #[serde(default = "default_target")]
    pub target: String,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub fitter: Option<String>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub xi: XiConfig,
    #[serde(default)]
    pub mspe: MspeConfig,
}

fn default_target() -> String {
    "identity".into()
}

fn default_methods() -> Vec<String> {
    vec!["new".into()]
}

/// The file given to `sae run --config`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub output_dir: PathBuf,
    pub formats: Vec<Format>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub study: Option<StudyConfig>,
    /// `study.m` when given; checked against the number of designs.
    pub declared_m: Option<usize>,
    /// Whether the designs came from the `study.known` shorthand.
    pub known_shorthand: bool,
    pub estimate: Option<EstimateConfig>,
}

/// Top-level keys as written; `study` stays untyped so it can be layered on
/// a preset.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Mode,
    output_dir: PathBuf,
    #[serde(default = "default_formats")]
    formats: Vec<Format>,
    threads: Option<usize>,
    seed: Option<u64>,
    study: Option<toml::Table>,
    estimate: Option<EstimateConfig>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

/// Recursively overlays `top` on `base`; arrays and scalars are replaced.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// A parsed `[study]` table plus the shorthand keys that are not part of
/// [`StudyConfig`].
struct StudyTable {
    config: StudyConfig,
    declared_m: Option<usize>,
    known_shorthand: bool,
}

fn take_count(table: &mut toml::Table, key: &str) -> Result<Option<usize>, String> {
    match table.remove(key) {
        None => Ok(None),
        Some(toml::Value::Integer(v)) if v >= 0 => Ok(Some(v as usize)),
        Some(v) => Err(format!("study.{key}: expected a non-negative integer, got {v}")),
    }
}

/// A study table: `preset = "model-N"` starts from that preset and overrides
/// the given keys; `preset = "custom"` must spell out every field. Two
/// shorthand keys are accepted: `m`, the intended number of areas, and
/// `known`, a list of s_i (or n_i) that replaces the designs while keeping
/// the first design's covariates.
fn study_from_table(mut table: toml::Table) -> Result<StudyTable, String> {
    let preset: Preset = match table.get("preset") {
        Some(v) => v.clone().try_into().map_err(|e| format!("study.preset: {e}"))?,
        None => return Err("study.preset: missing (model-1, model-2, model-3 or custom)".into()),
    };
    let declared_m = take_count(&mut table, "m")?;
    let known = match table.remove("known") {
        None => None,
        Some(v) => Some(Vec::<f64>::deserialize(v).map_err(|e| format!("study.known: {}", e.message()))?),
    };
    // Negative counts would otherwise surface as an anonymous integer error.
    if let Some(toml::Value::Integer(v)) = table.get("replications") {
        if *v < 0 {
            return Err(format!("study.replications: must be a positive integer, got {v}"));
        }
    }
    let full = if preset == Preset::Custom {
        table
    } else {
        let mut base = toml::Table::try_from(StudyConfig::preset(preset)).map_err(|e| e.to_string())?;
        merge(&mut base, table);
        base
    };
    let mut config: StudyConfig = toml::Value::Table(full)
        .try_into()
        .map_err(|e: toml::de::Error| format!("study: {}", e.message()))?;
    if let Some(known) = &known {
        let x = config.designs.first().map(|d| d.x.clone()).unwrap_or_default();
        config.designs = known.iter().map(|&k| AreaDesign::unchecked(x.clone(), k)).collect();
    }
    Ok(StudyTable {
        config,
        declared_m,
        known_shorthand: known.is_some(),
    })
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        let (study, declared_m, known_shorthand) = match raw.study {
            Some(t) => {
                let t = study_from_table(t).map_err(CliError::Parse)?;
                (Some(t.config), t.declared_m, t.known_shorthand)
            }
            None => (None, None, false),
        };
        let estimate = raw.estimate.map(|mut e| {
            if e.input.is_relative() {
                e.input = base_dir.join(&e.input);
            }
            e
        });
        let output_dir = if raw.output_dir.is_relative() {
            base_dir.join(&raw.output_dir)
        } else {
            raw.output_dir
        };
        Ok(Self {
            mode: raw.mode,
            output_dir,
            formats: raw.formats,
            threads: raw.threads,
            seed: raw.seed,
            study,
            declared_m,
            known_shorthand,
            estimate,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Seed after the `SAE_SEED` override: env, then the top-level `seed`,
    /// then the study's own seed.
    pub fn effective_seed(&self, env: Option<&str>) -> Result<u64, CliError> {
        if let Some(v) = env {
            return v.trim().parse().map_err(|_| {
                CliError::Invalid(vec![Issue::new(
                    "SAE_SEED",
                    format!("`{v}` is not an unsigned integer"),
                )])
            });
        }
        Ok(self.seed.or(self.study.as_ref().map(|s| s.seed)).unwrap_or(0))
    }

    /// Every problem with the configuration, without running anything.
    pub fn validate(&self, registries: &Registries) -> Vec<Issue> {
        let mut issues = Vec::new();
        if self.formats.is_empty() {
            issues.push(Issue::new("formats", "list at least one of csv, json"));
        }
        if self.threads == Some(0) {
            issues.push(Issue::new("threads", "must be at least 1"));
        }
        if self.output_dir.as_os_str().is_empty() {
            issues.push(Issue::new("output_dir", "must not be empty"));
        }
        match self.mode {
            Mode::Simulate => {
                if self.estimate.is_some() {
                    issues.push(Issue::new("estimate", "not used in simulate mode"));
                }
                match &self.study {
                    None => issues.push(Issue::new("study", "simulate mode needs a [study] table")),
                    Some(study) => {
                        if let Some(m) = self.declared_m.filter(|&m| m != study.m()) {
                            let field = if self.known_shorthand {
                                "study.known"
                            } else {
                                "study.designs"
                            };
                            issues.push(Issue::new(field, format!("{} values for m = {m}", study.m())));
                        }
                        issues.extend(validate_study(study, registries).into_iter().map(|i| Issue {
                            field: format!("study.{}", i.field),
                            message: i.message,
                        }))
                    }
                }
            }
            Mode::Estimate => {
                if self.study.is_some() {
                    issues.push(Issue::new("study", "not used in estimate mode"));
                }
                match &self.estimate {
                    None => issues.push(Issue::new("estimate", "estimate mode needs an [estimate] table")),
                    Some(e) => issues.extend(validate_estimate(e, registries)),
                }
            }
        }
        issues
    }
}

fn validate_estimate(e: &EstimateConfig, registries: &Registries) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut push = |f: &str, m: String| issues.push(Issue::new(format!("estimate.{f}"), m));
    if !e.input.is_file() {
        push("input", format!("{} is not a readable file", e.input.display()));
    }
    // p is only known once the input is read; build with p = 0 to check the name.
    let model = registries.models.build(&e.model, 0);
    if let Err(err) = &model {
        push("model", err.to_string());
    }
    let h = TargetFunction::from_name(&e.target);
    if h.is_none() {
        push(
            "target",
            format!("unknown target `{}` (identity, exp, logistic)", e.target),
        );
    }
    let fitter = match &e.fitter {
        Some(name) => registries.fitters.build(name, &e.fit),
        None => registries.fitters.default_for(&e.model, &e.fit),
    };
    if let Err(err) = fitter {
        push("fitter", err.to_string());
    }
    match registries.xi.build(&e.xi) {
        Ok(xi) => {
            if let (Ok(model), Some(h)) = (&model, &h) {
                if let Err(err) = xi.supports(model.as_ref(), h) {
                    push("xi.strategy", err.to_string());
                }
            }
        }
        Err(err) => push("xi", err.to_string()),
    }
    let prefixed = |i: Issue| Issue {
        field: format!("estimate.{}", i.field),
        message: i.message,
    };
    issues.extend(validate_mspe(&e.mspe).into_iter().map(prefixed));
    issues.extend(
        validate_methods(&e.methods, &e.model, &e.target, registries)
            .into_iter()
            .map(prefixed),
    );
    issues
}
