//! Long-run success rate of the unbuffered channel under PFI with fixed
//! amounts and Poisson demand.
//!
//! A's balance, counted in multiples of the amount, is a birth-death chain on
//! `0..=C̃` with `C̃ = floor(C / v)`: B->A arrivals move it up at rate `λ_B`,
//! A->B arrivals move it down at rate `λ_A`. A-side payments fail in state 0,
//! B-side payments in state `C̃`.

use serde::Serialize;

use crate::channel::Amount;

use super::AnalyticsError;

/// Below this distance from 1 the geometric closed form loses precision.
pub const NEAR_UNIT_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticalModel {
    pub capacity: Amount,
    pub amount: Amount,
    pub reduced_capacity: u64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    /// Stationary law of A's balance level, `stationary[k]` for `k = 0..=C̃`.
    pub stationary: Vec<f64>,
    /// Successful transactions per second.
    pub success_rate: f64,
    /// Rejected transactions per second.
    pub rejection_rate: f64,
}

impl AnalyticalModel {
    /// Fraction of arriving transactions that succeed.
    pub fn success_fraction(&self) -> f64 {
        self.success_rate / (self.lambda_a + self.lambda_b)
    }
}

fn check_rates(lambda_a: f64, lambda_b: f64) -> Result<(), AnalyticsError> {
    let ok = |x: f64| x.is_finite() && x > 0.0;
    if ok(lambda_a) && ok(lambda_b) {
        Ok(())
    } else {
        Err(AnalyticsError::InvalidParameters(format!(
            "arrival rates must be positive, got ({lambda_a}, {lambda_b})"
        )))
    }
}

/// Stationary distribution from the geometric closed form.
pub fn stationary_distribution_closed_form(
    reduced_capacity: u64,
    lambda_a: f64,
    lambda_b: f64,
) -> Result<Vec<f64>, AnalyticsError> {
    check_rates(lambda_a, lambda_b)?;
    let states = reduced_capacity as usize + 1;
    if lambda_a == lambda_b {
        return Ok(vec![1.0 / states as f64; states]);
    }
    let r = lambda_b / lambda_a;
    if (r - 1.0).abs() < NEAR_UNIT_RATIO {
        return stationary_distribution_numeric(reduced_capacity, lambda_a, lambda_b);
    }
    let top =
        i32::try_from(states).map_err(|_| AnalyticsError::InvalidParameters("reduced capacity too large".into()))?;
    let pi0 = (r - 1.0) / (r.powi(top) - 1.0);
    Ok((0..top).map(|k| r.powi(k) * pi0).collect())
}

/// Stationary distribution by running the local balance recursion
/// `λ_B π_k = λ_A π_{k+1}` from an unnormalized `π_0 = 1`, then normalizing.
pub fn stationary_distribution_numeric(
    reduced_capacity: u64,
    lambda_a: f64,
    lambda_b: f64,
) -> Result<Vec<f64>, AnalyticsError> {
    check_rates(lambda_a, lambda_b)?;
    if reduced_capacity == 0 {
        return Err(AnalyticsError::InvalidParameters(
            "reduced capacity must be at least 1".into(),
        ));
    }
    let mut weights = Vec::with_capacity(reduced_capacity as usize + 1);
    weights.push(1.0f64);
    for k in 0..reduced_capacity as usize {
        weights.push(lambda_b * weights[k] / lambda_a);
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Maximum long-run success rate for capacity `capacity`, fixed amount
/// `amount`, and Poisson rates `lambda_a` (A->B) and `lambda_b` (B->A).
pub fn analytical_success_rate(
    capacity: Amount,
    amount: Amount,
    lambda_a: f64,
    lambda_b: f64,
) -> Result<AnalyticalModel, AnalyticsError> {
    if amount == 0 || amount > capacity {
        return Err(AnalyticsError::InvalidParameters(format!(
            "need capacity >= amount >= 1, got capacity {capacity}, amount {amount}"
        )));
    }
    let reduced_capacity = capacity / amount;
    let stationary = stationary_distribution_closed_form(reduced_capacity, lambda_a, lambda_b)?;
    let (empty, full) = (stationary[0], stationary[reduced_capacity as usize]);
    let success_rate = if lambda_a == lambda_b {
        2.0 * lambda_a * reduced_capacity as f64 / (reduced_capacity as f64 + 1.0)
    } else {
        lambda_a * (1.0 - empty) + lambda_b * (1.0 - full)
    };
    let rejection_rate = lambda_a * empty + lambda_b * full;
    Ok(AnalyticalModel {
        capacity,
        amount,
        reduced_capacity,
        lambda_a,
        lambda_b,
        stationary,
        success_rate,
        rejection_rate,
    })
}
