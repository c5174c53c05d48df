use serde::{Deserialize, Serialize};

use crate::estimators::FitOptions;
use crate::mspe::MspeConfig;
use crate::params::{AreaDesign, ParameterVector};
use crate::predictor::XiConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Fay-Herriot, m = 15, s_i ∈ {.7, .5, .3}, σ² = 1, no covariates.
    #[serde(rename = "model-1")]
    Model1,
    /// Logit-normal, m = 8 binomial areas, μ = 0, σ² = 1, target p_i.
    #[serde(rename = "model-2")]
    Model2,
    /// Normal-lognormal, m = 15, three covariates redrawn per replication.
    #[serde(rename = "model-3")]
    Model3,
    Custom,
}

/// How area covariates are produced in each replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovariateRule {
    /// Use the covariates in `designs` unchanged.
    Fixed,
    /// x = (1, N(0, normal_var), U(uniform_low, uniform_high)), drawn afresh
    /// for every replication.
    NormalUniform {
        normal_var: f64,
        uniform_low: f64,
        uniform_high: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    /// 0-based area indices.
    pub areas: Vec<usize>,
}

/// Everything that defines a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub preset: Preset,
    pub model: String,
    pub designs: Vec<AreaDesign>,
    pub covariates: CovariateRule,
    pub truth: ParameterVector,
    /// Name of h: identity, exp or logistic.
    pub target: String,
    pub replications: usize,
    /// MSPE estimators to run, by registry name.
    pub methods: Vec<String>,
    /// Fitter name; the model's default when absent.
    pub fitter: Option<String>,
    pub fit: FitOptions,
    pub xi: XiConfig,
    pub mspe: MspeConfig,
    pub seed: u64,
    pub groups: Vec<GroupSpec>,
}

const S_GROUPS: [f64; 3] = [0.7, 0.5, 0.3];
const MODEL2_SIZES: [f64; 8] = [36.0, 20.0, 19.0, 16.0, 17.0, 11.0, 5.0, 6.0];

fn s_group_designs(x: Vec<f64>) -> Vec<AreaDesign> {
    S_GROUPS
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s, 5))
        .map(|s| AreaDesign::unchecked(x.clone(), s))
        .collect()
}

fn s_groups() -> Vec<GroupSpec> {
    (0..3)
        .map(|g| GroupSpec {
            label: format!("G{}", g + 1),
            areas: (5 * g..5 * g + 5).collect(),
        })
        .collect()
}

impl StudyConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Model1 => Self {
                preset,
                model: "fay-herriot".into(),
                designs: s_group_designs(vec![]),
                covariates: CovariateRule::Fixed,
                truth: ParameterVector::new(vec![], vec![1.0]),
                target: "identity".into(),
                replications: 1000,
                methods: ["prdl", "jk", "lm1", "new"].map(String::from).to_vec(),
                fitter: None,
                fit: FitOptions::default(),
                xi: XiConfig::named("closed"),
                mspe: MspeConfig::default(),
                seed: 20_070_101,
                groups: s_groups(),
            },
            Preset::Model2 => Self {
                preset,
                model: "logit-normal".into(),
                designs: MODEL2_SIZES
                    .iter()
                    .map(|&n| AreaDesign::unchecked(vec![1.0], n))
                    .collect(),
                covariates: CovariateRule::Fixed,
                truth: ParameterVector::new(vec![0.0], vec![1.0]),
                target: "logistic".into(),
                replications: 1000,
                methods: vec!["new".into()],
                fitter: None,
                fit: FitOptions::default(),
                xi: XiConfig::named("quadrature"),
                mspe: MspeConfig::default(),
                seed: 20_070_102,
                // Representative areas n_i = 6, 16, 36.
                groups: [("G1", 7), ("G2", 3), ("G3", 0)]
                    .iter()
                    .map(|&(label, area)| GroupSpec {
                        label: label.into(),
                        areas: vec![area],
                    })
                    .collect(),
            },
            Preset::Model3 => Self {
                preset,
                model: "normal-lognormal".into(),
                designs: s_group_designs(vec![1.0, 0.0, 0.75]),
                covariates: CovariateRule::NormalUniform {
                    normal_var: 0.5,
                    uniform_low: 0.5,
                    uniform_high: 1.0,
                },
                truth: ParameterVector::new(vec![0.0, 0.5, -1.5], vec![0.5]),
                target: "identity".into(),
                replications: 200,
                methods: vec!["naive".into(), "new".into()],
                fitter: None,
                fit: FitOptions::default(),
                xi: XiConfig {
                    quad_points: 20,
                    ..XiConfig::named("quadrature")
                },
                // Bootstrap variances of λ̂ are large here (the intercept and
                // the uniform covariate are close to collinear), so
                // unrestricted tilts can land where M1 explodes.
                mspe: MspeConfig {
                    tilt_cap: Some(3.0),
                    ..MspeConfig::default()
                },
                seed: 20_070_103,
                groups: s_groups(),
            },
            Preset::Custom => Self {
                preset,
                model: "fay-herriot".into(),
                designs: Vec::new(),
                covariates: CovariateRule::Fixed,
                truth: ParameterVector::new(vec![], vec![1.0]),
                target: "identity".into(),
                replications: 100,
                methods: vec!["new".into()],
                fitter: None,
                fit: FitOptions::default(),
                xi: XiConfig::named("closed"),
                mspe: MspeConfig::default(),
                seed: 1,
                groups: Vec::new(),
            },
        }
    }

    pub fn m(&self) -> usize {
        self.designs.len()
    }

    pub fn p(&self) -> usize {
        self.truth.p()
    }
}
