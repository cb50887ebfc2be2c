//! The unbiased pass@k estimator and baseline comparisons.

use serde::{Deserialize, Serialize};

use super::BenchError;

/// Probability that at least one of `k` samples drawn without replacement
/// from `n` generations (of which `c` are correct) is correct:
/// `1 - C(n-c, k) / C(n, k)`, computed as a product to stay stable.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, BenchError> {
    if n == 0 || k == 0 || k > n || c > n {
        return Err(BenchError::Domain(format!(
            "pass@k needs 1 <= k <= n and c <= n (n={n}, c={c}, k={k})"
        )));
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut miss = 1.0f64;
    for i in (n - c + 1)..=n {
        miss *= 1.0 - k as f64 / i as f64;
    }
    Ok(1.0 - miss)
}

/// A framework result next to its baseline. Pass rates are fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_pass: f64,
    pub framework_pass: f64,
    /// `100 * (framework - baseline) / baseline`; undefined for a zero baseline.
    pub relative_improvement_percent: Option<f64>,
    /// Difference in percentage points.
    pub absolute_improvement_pp: f64,
}

impl Comparison {
    pub fn new(baseline_pass: f64, framework_pass: f64) -> Self {
        let relative = (baseline_pass > 0.0).then(|| 100.0 * (framework_pass - baseline_pass) / baseline_pass);
        Self {
            baseline_pass,
            framework_pass,
            relative_improvement_percent: relative,
            absolute_improvement_pp: 100.0 * (framework_pass - baseline_pass),
        }
    }
}
