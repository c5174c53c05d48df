use std::fmt;
use std::sync::Arc;

use crate::numerics::logistic;

/// The small-area quantity β_i = h(θ_i) being predicted.
#[derive(Clone)]
pub enum TargetFunction {
    Identity,
    Exp,
    /// Success probability for logit-scale θ.
    Logistic,
    Constant(f64),
    Custom {
        label: String,
        h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl TargetFunction {
    pub fn custom(label: impl Into<String>, h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        TargetFunction::Custom {
            label: label.into(),
            h: Arc::new(h),
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TargetFunction::Identity => t,
            TargetFunction::Exp => t.exp(),
            TargetFunction::Logistic => logistic(t),
            TargetFunction::Constant(c) => *c,
            TargetFunction::Custom { h, .. } => h(t),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            TargetFunction::Identity => "identity",
            TargetFunction::Exp => "exp",
            TargetFunction::Logistic => "logistic",
            TargetFunction::Constant(_) => "constant",
            TargetFunction::Custom { label, .. } => label,
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" | "id" => Some(TargetFunction::Identity),
            "exp" => Some(TargetFunction::Exp),
            "logistic" | "p" => Some(TargetFunction::Logistic),
            _ => None,
        }
    }
}

impl fmt::Debug for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetFunction::Constant(c) => write!(f, "Constant({c})"),
            other => f.write_str(other.label()),
        }
    }
}
