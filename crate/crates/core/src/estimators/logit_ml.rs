use super::{check_size, FitResult, Fitter};
use crate::error::{Result, SaeError};
use crate::numerics::{binomial_logpmf_logit, nelder_mead, NormalRule};
use crate::params::{AreaDataset, ParameterVector};

/// Marginal log-likelihood Σ_i log ∫ Binom(y_i; n_i, logistic(x_i'λ + σ z)) φ(z) dz
/// under a Gauss-Hermite rule.
pub fn logit_normal_loglik(data: &AreaDataset, lambda: &[f64], sigma: f64, rule: &NormalRule) -> f64 {
    let mut total = 0.0;
    let mut logs = vec![0.0; rule.len()];
    for (d, &y) in data.designs.iter().zip(&data.y) {
        let eta: f64 = d.x.iter().zip(lambda).map(|(a, b)| a * b).sum();
        let n = d.sample_size();
        let y = y as u32;
        let mut max = f64::NEG_INFINITY;
        for (slot, (z, w)) in logs.iter_mut().zip(rule.nodes.iter().zip(&rule.weights)) {
            *slot = w.ln() + binomial_logpmf_logit(y, n, eta + sigma * z);
            max = max.max(*slot);
        }
        total += max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    }
    total
}

/// Maximum likelihood for the logit-normal model over (λ, log σ_v) by
/// Nelder-Mead; σ_v is bounded below by √floor.
#[derive(Debug, Clone)]
pub struct LogitNormalMaximumLikelihood {
    rule: NormalRule,
    var_floor: f64,
    fix_sigma_zero: bool,
}

impl LogitNormalMaximumLikelihood {
    pub const NAME: &'static str = "logit-normal-ml";

    pub fn new(quad_points: usize, var_floor: f64) -> Self {
        Self {
            rule: NormalRule::new(quad_points),
            var_floor,
            fix_sigma_zero: false,
        }
    }

    /// Ordinary logistic regression (σ_v ≡ 0).
    pub fn without_random_effect() -> Self {
        Self {
            rule: NormalRule::new(1),
            var_floor: 0.0,
            fix_sigma_zero: true,
        }
    }

    pub fn quad_points(&self) -> usize {
        self.rule.len()
    }
}

impl Fitter for LogitNormalMaximumLikelihood {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn fit(&self, data: &AreaDataset) -> Result<FitResult> {
        data.check_binomial()?;
        if !self.fix_sigma_zero && self.rule.len() < 5 {
            return Err(SaeError::InvalidParameter(format!(
                "{} quadrature points; at least 5 are required",
                self.rule.len()
            )));
        }
        let p = data.p();
        let k = if self.fix_sigma_zero { p } else { p + 1 };
        check_size(data, k)?;

        let successes: f64 = data.y.iter().sum();
        let trials: f64 = data.designs.iter().map(|d| d.known).sum();
        let boundary = successes == 0.0 || data.designs.iter().zip(&data.y).all(|(d, &y)| y == d.known);

        let pooled = ((successes + 0.5) / (trials + 1.0)).clamp(1e-6, 1.0 - 1e-6);
        let intercept = (pooled / (1.0 - pooled)).ln();
        let intercept_col = (0..p).find(|&a| data.designs.iter().all(|d| d.x[a] == 1.0));
        let mut start = vec![0.0; k];
        if let Some(c) = intercept_col {
            start[c] = intercept;
        }
        let log_sigma_min = 0.5 * self.var_floor.max(1e-300).ln();
        if !self.fix_sigma_zero {
            start[p] = (0.5f64).ln();
        }

        let objective = |v: &[f64]| -> f64 {
            if self.fix_sigma_zero {
                -logit_normal_loglik(data, v, 0.0, &self.rule)
            } else {
                let sigma = v[p].max(log_sigma_min).exp();
                -logit_normal_loglik(data, &v[..p], sigma, &self.rule)
            }
        };
        let steps = vec![0.5; k];
        let mut best = nelder_mead(objective, &start, &steps, 1e-15, 20_000);
        // Restart once from the optimum to escape premature collapse.
        let again = nelder_mead(objective, &best.x, &steps, 1e-15, 20_000);
        let iterations = best.iterations + again.iterations;
        if again.value <= best.value {
            best = again;
        }

        let (lambda, sigma2) = if self.fix_sigma_zero {
            (best.x.clone(), 0.0)
        } else {
            let s = best.x[p].max(log_sigma_min).exp();
            (best.x[..p].to_vec(), (s * s).max(self.var_floor))
        };
        let psi = if self.fix_sigma_zero { vec![] } else { vec![sigma2] };
        Ok(FitResult {
            delta_hat: ParameterVector::new(lambda, psi),
            converged: best.converged && !boundary && best.value.is_finite(),
            iterations,
            objective: -best.value,
        })
    }
}
