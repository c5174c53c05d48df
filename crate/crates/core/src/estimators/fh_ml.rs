use super::{check_size, FitResult, Fitter};
use crate::error::{Result, SaeError};
use crate::numerics::solve_dense;
use crate::params::{AreaDataset, ParameterVector};

/// Maximum likelihood for the Fay-Herriot model by profiling out λ.
///
/// For fixed σ_v², λ̂(σ_v²) is weighted least squares with weights
/// 1/(σ_v² + s_i). The profiled log-likelihood is scanned on a grid over
/// [0, U] and the maximiser refined by bisection on the profile score.
#[derive(Debug, Clone)]
pub struct FhMaximumLikelihood {
    var_floor: f64,
}

struct Profile {
    lambda: Vec<f64>,
    loglik: f64,
    score: f64,
}

impl FhMaximumLikelihood {
    pub const NAME: &'static str = "fh-ml";

    pub fn new(var_floor: f64) -> Self {
        Self { var_floor }
    }

    fn profile(data: &AreaDataset, sigma2: f64) -> Result<Profile> {
        let p = data.p();
        let lambda = if p == 0 {
            Vec::new()
        } else {
            let mut xtx = vec![vec![0.0; p]; p];
            let mut xty = vec![0.0; p];
            for (d, &y) in data.designs.iter().zip(&data.y) {
                let w = 1.0 / (sigma2 + d.known);
                for a in 0..p {
                    xty[a] += w * d.x[a] * y;
                    for b in 0..p {
                        xtx[a][b] += w * d.x[a] * d.x[b];
                    }
                }
            }
            solve_dense(xtx, xty).ok_or_else(|| SaeError::InvalidData("covariate matrix is rank deficient".into()))?
        };
        let mut loglik = 0.0;
        let mut score = 0.0;
        for (d, &y) in data.designs.iter().zip(&data.y) {
            let tau = sigma2 + d.known;
            let mu: f64 = d.x.iter().zip(&lambda).map(|(a, b)| a * b).sum();
            let r = y - mu;
            loglik -= 0.5 * (tau.ln() + r * r / tau);
            score += 0.5 * (r * r / (tau * tau) - 1.0 / tau);
        }
        Ok(Profile { lambda, loglik, score })
    }
}

impl Fitter for FhMaximumLikelihood {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn fit(&self, data: &AreaDataset) -> Result<FitResult> {
        data.check_finite()?;
        check_size(data, data.p() + 1)?;
        if let Some(i) = data.designs.iter().position(|d| !(d.known > 0.0)) {
            return Err(SaeError::InvalidData(format!(
                "area {i}: sampling variance must be positive"
            )));
        }

        let mean = data.y.iter().sum::<f64>() / data.m() as f64;
        let spread: f64 = data.y.iter().map(|y| (y - mean).powi(2)).sum();
        let upper = 4.0 * spread + 1.0;
        const GRID: usize = 120;
        let grid: Vec<f64> = (0..=GRID).map(|g| upper * (g as f64 / GRID as f64).powi(2)).collect();
        let mut best = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for (g, &s2) in grid.iter().enumerate() {
            let ll = Self::profile(data, s2)?.loglik;
            if ll > best_ll {
                best_ll = ll;
                best = g;
            }
        }

        let mut iterations = GRID + 1;
        let at_zero = Self::profile(data, 0.0)?;
        let sigma2 = if best == 0 && at_zero.score <= 0.0 {
            0.0
        } else {
            let mut lo = grid[best.saturating_sub(1)];
            let mut hi = grid[(best + 1).min(GRID)];
            if Self::profile(data, lo)?.score <= 0.0 {
                lo = 0.0;
            }
            if Self::profile(data, hi)?.score >= 0.0 {
                // Maximum beyond the grid: expand until the score turns.
                let mut h = hi.max(1.0);
                while Self::profile(data, h)?.score >= 0.0 {
                    h *= 2.0;
                    if h > 1e300 {
                        return Ok(FitResult {
                            delta_hat: ParameterVector::new(at_zero.lambda, vec![h]),
                            converged: false,
                            iterations,
                            objective: f64::NAN,
                        });
                    }
                }
                hi = h;
            }
            for _ in 0..200 {
                iterations += 1;
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if Self::profile(data, mid)?.score > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };

        let sigma2 = sigma2.max(self.var_floor);
        let prof = Self::profile(data, sigma2)?;
        Ok(FitResult {
            delta_hat: ParameterVector::new(prof.lambda, vec![sigma2]),
            converged: prof.loglik.is_finite(),
            iterations,
            objective: prof.loglik,
        })
    }
}
