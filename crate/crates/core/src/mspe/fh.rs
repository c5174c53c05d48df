use crate::error::{Result, SaeError};
use crate::numerics::solve_dense;
use crate::params::{AreaDataset, ParameterVector};

/// Closed-form MSPE ingredients of the Fay-Herriot EBP of θ_i at δ:
/// g1 = σ²s/τ, g2 = x'(Σ xx'/τ)⁻¹x (s/τ)², g3 = (s²/τ³)·2(Σ τ⁻²)⁻¹.
#[derive(Debug, Clone, PartialEq)]
pub struct FhAnalytics {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
    /// ∂g1/∂σ² = s²/τ².
    pub dg1: Vec<f64>,
    /// ∂²g1/∂(σ²)² = −2s²/τ³.
    pub d2g1: Vec<f64>,
    /// Second-order bias of the ML estimate of σ²:
    /// tr[(Σ xx'/τ)⁻¹ Σ xx'/τ²] / (Σ τ⁻²). Zero without covariates.
    pub ml_bias: f64,
}

impl FhAnalytics {
    pub fn new(data: &AreaDataset, delta: &ParameterVector) -> Result<Self> {
        let p = data.p();
        if delta.p() != p || delta.q() != 1 {
            return Err(SaeError::InvalidParameter(format!(
                "Fay-Herriot analytics need δ = (λ ∈ R^{p}, σ²), got {} + {} components",
                delta.p(),
                delta.q()
            )));
        }
        let sigma2 = delta.psi[0];
        let tau: Vec<f64> = data.designs.iter().map(|d| sigma2 + d.known).collect();
        if tau.iter().any(|t| !(*t > 0.0)) {
            return Err(SaeError::InvalidParameter("σ² + s_i must be positive".into()));
        }
        let inv2: f64 = tau.iter().map(|t| t.powi(-2)).sum();
        let mut info = vec![vec![0.0; p]; p];
        let mut info2 = vec![vec![0.0; p]; p];
        for (d, t) in data.designs.iter().zip(&tau) {
            for a in 0..p {
                for b in 0..p {
                    info[a][b] += d.x[a] * d.x[b] / t;
                    info2[a][b] += d.x[a] * d.x[b] / (t * t);
                }
            }
        }
        // Columns of (Σ xx'/τ)⁻¹ via unit solves.
        let inverse: Vec<Vec<f64>> = (0..p)
            .map(|c| {
                let mut e = vec![0.0; p];
                e[c] = 1.0;
                solve_dense(info.clone(), e).ok_or_else(|| SaeError::InvalidData("covariate matrix is singular".into()))
            })
            .collect::<Result<_>>()?;
        let quad = |x: &[f64]| -> f64 {
            (0..p)
                .map(|a| (0..p).map(|b| x[a] * inverse[b][a] * x[b]).sum::<f64>())
                .sum()
        };
        let trace: f64 = (0..p)
            .map(|a| (0..p).map(|b| inverse[b][a] * info2[b][a]).sum::<f64>())
            .sum();
        let mut out = Self {
            g1: Vec::new(),
            g2: Vec::new(),
            g3: Vec::new(),
            dg1: Vec::new(),
            d2g1: Vec::new(),
            ml_bias: if p == 0 { 0.0 } else { trace / inv2 },
        };
        for (d, &t) in data.designs.iter().zip(&tau) {
            let s = d.known;
            out.g1.push(sigma2 * s / t);
            out.g2.push(if p == 0 { 0.0 } else { quad(&d.x) * (s / t).powi(2) });
            out.g3.push(s * s / t.powi(3) * 2.0 / inv2);
            out.dg1.push(s * s / (t * t));
            out.d2g1.push(-2.0 * s * s / t.powi(3));
        }
        Ok(out)
    }

    /// g1 for an area with sampling variance s at variance σ².
    pub fn g1_at(sigma2: f64, s: f64) -> f64 {
        sigma2 * s / (sigma2 + s)
    }
}
