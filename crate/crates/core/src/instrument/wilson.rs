use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normal quantile for 99.99% two-sided confidence.
pub const DEFAULT_Z: f64 = 4.42;

/// Wilson score estimate of a success probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilsonEstimate {
    pub trials: u64,
    pub successes: u64,
    pub z: f64,
    pub p_hat: f64,
    /// `(p + z^2/2N) / (1 + z^2/N)`.
    pub estimate: f64,
    /// `z sqrt(p(1-p)/N + z^2/4N^2) / (1 + z^2/N)`.
    pub half_width: f64,
}

impl WilsonEstimate {
    pub fn lower(&self) -> f64 {
        (self.estimate - self.half_width).max(0.0)
    }

    pub fn upper(&self) -> f64 {
        (self.estimate + self.half_width).min(1.0)
    }
}

pub fn wilson(successes: u64, trials: u64, z: f64) -> Result<WilsonEstimate> {
    if trials == 0 || successes > trials || !(z > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Wilson interval needs 0 <= N1 <= NT, NT >= 1, z > 0 (got N1 = {successes}, NT = {trials}, z = {z})"
        )));
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    Ok(WilsonEstimate {
        trials,
        successes,
        z,
        p_hat: p,
        estimate: (p + z2 / (2.0 * n)) / denom,
        half_width: z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom,
    })
}

/// Smallest `N` with `N^2 / (N + z^2) >= z^2 / (4 eps^2)`.
pub fn trials_needed(eps: f64, z: f64) -> Result<u64> {
    if !(eps > 0.0 && z > 0.0 && eps.is_finite() && z.is_finite()) {
        return Err(Error::InvalidArgument(format!("trials_needed needs eps > 0 and z > 0 (got {eps}, {z})")));
    }
    let z2 = z * z;
    let c = z2 / (4.0 * eps * eps);
    let holds = |n: u64| {
        let n = n as f64;
        n * n / (n + z2) >= c
    };
    let mut n = ((c + (c * c + 4.0 * c * z2).sqrt()) / 2.0).ceil().max(1.0) as u64;
    // the closed form can be off by one in floating point
    while n > 1 && holds(n - 1) {
        n -= 1;
    }
    while !holds(n) {
        n += 1;
    }
    Ok(n)
}
