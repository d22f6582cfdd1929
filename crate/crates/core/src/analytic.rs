//! Closed-form prices used as independent oracles. Nothing here touches the
//! lattice sweep.

use crate::error::{Error, Result};

/// Bachelier claim `f = zeta * B_T` under constant demand `theta`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BachelierSpec {
    pub zeta: f64,
    pub theta: f64,
    pub gamma: f64,
    pub horizon: f64,
}

impl BachelierSpec {
    pub fn new(zeta: f64, theta: f64, gamma: f64, horizon: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        if !(zeta.is_finite() && theta.is_finite()) {
            return Err(Error::InvalidParameter("zeta and theta must be finite".into()));
        }
        Ok(Self { zeta, theta, gamma, horizon })
    }

    /// Root price of the same claim on an `n`-step symmetric walk:
    /// `zeta * n * h * tanh(gamma theta zeta h)`, `h = sqrt(T/n)`.
    pub fn lattice_root_price(&self, steps: usize) -> f64 {
        let h = (self.horizon / steps as f64).sqrt();
        self.zeta * steps as f64 * h * (self.gamma * self.theta * self.zeta * h).tanh()
    }
}

/// `zeta b + gamma theta zeta^2 (T - t)`.
pub fn bachelier_price(spec: &BachelierSpec, t: f64, b: f64) -> Result<f64> {
    if !(0.0..=spec.horizon).contains(&t) {
        return Err(Error::TimeOutOfRange { t, horizon: spec.horizon });
    }
    Ok(spec.zeta * b + spec.gamma * spec.theta * spec.zeta * spec.zeta * (spec.horizon - t))
}

/// Price of a two-outcome claim after one step under demand weight
/// `gamma * theta`. Weighted average of the payoffs, computed with the larger
/// exponent factored out.
pub fn two_outcome_price(f_up: f64, f_dn: f64, p: f64, gammatheta: f64) -> f64 {
    let a = gammatheta * f_up;
    let c = gammatheta * f_dn;
    let m = a.max(c);
    let wu = p * (a - m).exp();
    let wd = (1.0 - p) * (c - m).exp();
    (wu * f_up + wd * f_dn) / (wu + wd)
}
