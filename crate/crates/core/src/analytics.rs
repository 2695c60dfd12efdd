//! Transaction-value models and threshold reports for dispute routing.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::substream;

pub const MARKET_VALUES: &str = "market-values";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("rate must be positive, got {0}")]
    NonpositiveRate(f64),
    #[error("invalid model parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("no values to analyze")]
    EmptyInput,
    #[error("threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpStats {
    pub lambda: f64,
    pub mean: f64,
    pub median: f64,
    pub frac_below_mean: f64,
}

pub fn exp_stats(lambda: f64) -> Result<ExpStats, AnalyticsError> {
    if lambda.is_nan() || lambda <= 0.0 || !lambda.is_finite() {
        return Err(AnalyticsError::NonpositiveRate(lambda));
    }
    Ok(ExpStats {
        lambda,
        mean: 1.0 / lambda,
        median: std::f64::consts::LN_2 / lambda,
        // CDF at the mean: 1 - exp(-lambda / lambda).
        frac_below_mean: -(-1.0f64).exp_m1(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ValueModel {
    Exponential { lambda: f64 },
    Pareto { alpha: f64, xmin: f64 },
}

impl ValueModel {
    pub fn check(&self) -> Result<(), AnalyticsError> {
        match *self {
            ValueModel::Exponential { lambda } => exp_stats(lambda).map(|_| ()),
            ValueModel::Pareto { alpha, xmin } => {
                if alpha.is_nan() || alpha <= 0.0 || !alpha.is_finite() {
                    return Err(AnalyticsError::InvalidParameter { name: "alpha", value: alpha });
                }
                if xmin.is_nan() || xmin <= 0.0 || !xmin.is_finite() {
                    return Err(AnalyticsError::InvalidParameter { name: "xmin", value: xmin });
                }
                Ok(())
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ValueModel::Exponential { lambda } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-lambda * x).exp_m1()
                }
            }
            ValueModel::Pareto { alpha, xmin } => {
                if x <= xmin {
                    0.0
                } else {
                    1.0 - (x / xmin).powf(-alpha)
                }
            }
        }
    }

    /// Inverse CDF for `u` in [0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            ValueModel::Exponential { lambda } => -(-u).ln_1p() / lambda,
            ValueModel::Pareto { alpha, xmin } => xmin * (1.0 - u).powf(-1.0 / alpha),
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// `None` when the mean diverges.
    pub fn mean(&self) -> Option<f64> {
        match *self {
            ValueModel::Exponential { lambda } => Some(1.0 / lambda),
            ValueModel::Pareto { alpha, xmin } => (alpha > 1.0).then(|| alpha * xmin / (alpha - 1.0)),
        }
    }
}

/// Seeded inverse-CDF sampling.
pub fn sample_values(model: &ValueModel, n: usize, seed: u64) -> Result<Vec<f64>, AnalyticsError> {
    model.check()?;
    let mut rng = substream(seed, MARKET_VALUES);
    Ok((0..n).map(|_| model.quantile(rng.gen::<f64>())).collect())
}

/// Kolmogorov-Smirnov distance between the sample and the model CDF.
pub fn ks_statistic(values: &[f64], model: &ValueModel) -> Result<f64, AnalyticsError> {
    if values.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = model.cdf(*x);
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max))
}

/// Asymptotic 1% critical value of the one-sample KS test.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Method-of-moments rate estimate.
pub fn fit_exponential(values: &[f64]) -> Result<f64, AnalyticsError> {
    if values.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if mean.is_nan() || mean <= 0.0 {
        return Err(AnalyticsError::NonpositiveRate(mean));
    }
    Ok(1.0 / mean)
}

/// Per-dispute costs in USD. A misjudged case costs a fraction of its value,
/// so the cheaper internal tier pays off only on small transactions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub dispute_probability: f64,
    pub internal_cost_per_case: f64,
    pub internal_error_rate: f64,
    pub external_fee_per_juror: f64,
    pub external_jurors: u32,
    pub external_error_rate: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            dispute_probability: 0.05,
            internal_cost_per_case: 2.0,
            internal_error_rate: 0.10,
            external_fee_per_juror: 1.0,
            external_jurors: 3,
            external_error_rate: 0.02,
        }
    }
}

impl CostModel {
    pub fn internal_cost(&self, value: f64) -> f64 {
        self.internal_cost_per_case + self.internal_error_rate * value
    }

    pub fn external_cost(&self, value: f64) -> f64 {
        self.external_fee_per_juror * self.external_jurors as f64 + self.external_error_rate * value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub threshold: f64,
    pub expected_cost_per_exchange: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub n: usize,
    pub count_below: usize,
    pub fraction_below: f64,
    /// Expected cost per exchange from disputes routed internally.
    pub expected_internal_cost: f64,
    pub expected_external_cost: f64,
    pub expected_cost_per_exchange: f64,
    pub cost_model: CostModel,
    pub recommendation: Recommendation,
}

impl ThresholdReport {
    pub fn to_text(&self) -> String {
        format!(
            "threshold            {:>12.2}\n\
             values               {:>12}\n\
             at or below          {:>12} ({:.4})\n\
             internal cost/exch   {:>12.4}\n\
             external cost/exch   {:>12.4}\n\
             total cost/exch      {:>12.4}\n\
             recommended          {:>12.2} (cost {:.4}, {} grid points)\n",
            self.threshold,
            self.n,
            self.count_below,
            self.fraction_below,
            self.expected_internal_cost,
            self.expected_external_cost,
            self.expected_cost_per_exchange,
            self.recommendation.threshold,
            self.recommendation.expected_cost_per_exchange,
            self.recommendation.grid_points,
        )
    }
}

fn costs_at(sorted: &[f64], prefix: &[f64], t: f64, cost: &CostModel) -> (usize, f64, f64) {
    let k = sorted.partition_point(|v| *v <= t);
    let n = sorted.len() as f64;
    let below_sum = prefix[k];
    let above_sum = prefix[sorted.len()] - below_sum;
    let above = sorted.len() - k;
    let p = cost.dispute_probability;
    let internal = p * (k as f64 * cost.internal_cost_per_case + cost.internal_error_rate * below_sum) / n;
    let external = p
        * (above as f64 * cost.external_fee_per_juror * cost.external_jurors as f64
            + cost.external_error_rate * above_sum)
        / n;
    (k, internal, external)
}

/// Fraction of values at or below `threshold` and the expected dispute
/// cost, plus the cost-minimizing threshold over a $1 grid up to the 99th
/// percentile.
pub fn threshold_report(values: &[f64], threshold: f64, cost: &CostModel) -> Result<ThresholdReport, AnalyticsError> {
    if values.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    if threshold.is_nan() || threshold < 0.0 {
        return Err(AnalyticsError::NegativeThreshold(threshold));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0.0);
    for v in &sorted {
        prefix.push(prefix.last().unwrap() + v);
    }
    let (k, internal, external) = costs_at(&sorted, &prefix, threshold, cost);

    let p99_index = ((sorted.len() as f64 * 0.99).ceil() as usize).clamp(1, sorted.len()) - 1;
    let top = sorted[p99_index].max(0.0).floor() as u64;
    let mut best = Recommendation {
        threshold: 0.0,
        expected_cost_per_exchange: f64::INFINITY,
        grid_points: 0,
    };
    for step in 0..=top {
        let t = step as f64;
        let (_, i, e) = costs_at(&sorted, &prefix, t, cost);
        best.grid_points += 1;
        if i + e < best.expected_cost_per_exchange {
            best.threshold = t;
            best.expected_cost_per_exchange = i + e;
        }
    }
    Ok(ThresholdReport {
        threshold,
        n: sorted.len(),
        count_below: k,
        fraction_below: k as f64 / sorted.len() as f64,
        expected_internal_cost: internal,
        expected_external_cost: external,
        expected_cost_per_exchange: internal + external,
        cost_model: *cost,
        recommendation: best,
    })
}
