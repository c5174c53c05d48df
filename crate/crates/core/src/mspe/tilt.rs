use serde::{Deserialize, Serialize};

use crate::estimators::BiasVariance;
use crate::params::{ParameterSpace, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiltMode {
    /// Correct along the coordinate with the steepest estimated slope.
    #[default]
    Single,
    /// Spread the correction over every coordinate with a clearly nonzero
    /// slope.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltOutcome {
    pub delta_check: ParameterVector,
    pub accepted: bool,
    /// Coordinates moved (or that would have been moved).
    pub direction: Vec<usize>,
    /// B*_i = Σ grad·b* + ½ Σ hess·V*.
    pub b_star_i: f64,
    /// Gate statistic compared with (1 + ln m)².
    pub gate: f64,
}

/// Σ_j grad[j] b*(j) + ½ Σ_{j,r} hess[j][r] V*(j,r).
pub fn bias_term(grad: &[f64], hess: &[Vec<f64>], bv: &BiasVariance) -> f64 {
    let first: f64 = grad.iter().zip(&bv.b_star).map(|(g, b)| g * b).sum();
    let second: f64 = hess
        .iter()
        .zip(&bv.v_star)
        .map(|(hr, vr)| hr.iter().zip(vr).map(|(h, v)| h * v).sum::<f64>())
        .sum();
    first + 0.5 * second
}

/// Gate bound (1 + ln m)².
pub fn gate_bound(m: usize) -> f64 {
    (1.0 + (m as f64).ln()).powi(2)
}

/// Perturbed estimate δ̌ for one area. Falls back to δ̂ when the gate fails,
/// the candidate leaves Δ, or (multi mode) no slope clears 1/m.
pub fn tilt(
    delta_hat: &ParameterVector,
    grad: &[f64],
    hess: &[Vec<f64>],
    bv: &BiasVariance,
    space: &ParameterSpace,
    m: usize,
    mode: TiltMode,
) -> TiltOutcome {
    let b = bias_term(grad, hess, bv);
    let direction: Vec<usize> = match mode {
        TiltMode::Single => {
            let mut s = 0;
            for (j, g) in grad.iter().enumerate() {
                if g.abs() > grad[s].abs() {
                    s = j;
                }
            }
            vec![s]
        }
        TiltMode::Multi => {
            let threshold = 1.0 / m as f64;
            (0..grad.len()).filter(|&j| grad[j].abs() > threshold).collect()
        }
    };
    let rejected = |gate| TiltOutcome {
        delta_check: delta_hat.clone(),
        accepted: false,
        direction: direction.clone(),
        b_star_i: b,
        gate,
    };
    if direction.is_empty() {
        return rejected(f64::INFINITY);
    }
    let n = direction.len() as f64;
    let gate = direction.iter().map(|&j| grad[j].abs().recip()).sum::<f64>() / n;
    if !(gate <= gate_bound(m)) {
        return rejected(gate);
    }
    let mut shift = vec![0.0; delta_hat.len()];
    for &j in &direction {
        shift[j] = -(b / grad[j]) / n;
    }
    let candidate = delta_hat.shifted(&shift, 1.0);
    if candidate.to_flat().iter().all(|v| v.is_finite()) && space.contains(&candidate) {
        TiltOutcome {
            delta_check: candidate,
            accepted: true,
            direction,
            b_star_i: b,
            gate,
        }
    } else {
        rejected(gate)
    }
}

/// Rejects an accepted tilt that moves any coordinate by more than `cap`
/// bootstrap standard deviations sqrt(V*_jj). The tilt itself is O(1/m) and
/// the bound O(m^-1/2), so the cap only trips when δ̂ is too unstable for a
/// Taylor correction to be trusted.
pub fn cap_tilt(outcome: TiltOutcome, delta_hat: &ParameterVector, bv: &BiasVariance, cap: f64) -> TiltOutcome {
    if !outcome.accepted {
        return outcome;
    }
    let from = delta_hat.to_flat();
    let to = outcome.delta_check.to_flat();
    let within = (0..from.len()).all(|j| (to[j] - from[j]).abs() <= cap * bv.v_star[j][j].sqrt());
    if within {
        outcome
    } else {
        TiltOutcome {
            delta_check: delta_hat.clone(),
            accepted: false,
            ..outcome
        }
    }
}
