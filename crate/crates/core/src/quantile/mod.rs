//! Federated quantile estimators.

mod fit;
mod loss;
mod yj;

use serde::{Deserialize, Serialize};

pub use fit::{
    center_moments, estimate_quantile_yj_data, estimate_quantile_yj_table, fit_yj_mle,
    fit_yj_table, pool_moment_responses, pool_moments, table_points, yj_loglik, LocalMomentOracle,
    MleMode, MomentOracle, YjFit, YjMethod, YjMoments, MLE_GRID, MLE_LAMBDA_MAX, MLE_LAMBDA_MIN,
    MLE_TOL,
};
pub use loss::{
    center_loss_response, combine_ranges, estimate_quantile_loss, local_range, quantile_loss,
    sum_loss_responses, LocalLossOracle, LossOracle, LossPoint, LossValue, MAX_BISECTION_ROUNDS,
    RELATIVE_WIDTH,
};
pub use yj::{sign_log, yj_inverse, yj_range, yj_transform};

use crate::error::{FedError, Result};
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyFlag {
    KAnonymous,
    AggregateOnly,
    PrivacyViolating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileMethod {
    Loss,
    YjTable,
    YjMle,
    YjMleGrid,
}

impl QuantileMethod {
    pub const ALL: [QuantileMethod; 4] = [
        QuantileMethod::Loss,
        QuantileMethod::YjTable,
        QuantileMethod::YjMle,
        QuantileMethod::YjMleGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuantileMethod::Loss => "loss",
            QuantileMethod::YjTable => "yj-table",
            QuantileMethod::YjMle => "yj-mle",
            QuantileMethod::YjMleGrid => "yj-mle-grid",
        }
    }

    pub fn privacy_flag(self) -> PrivacyFlag {
        match self {
            QuantileMethod::Loss => PrivacyFlag::PrivacyViolating,
            QuantileMethod::YjTable => PrivacyFlag::KAnonymous,
            QuantileMethod::YjMle | QuantileMethod::YjMleGrid => PrivacyFlag::AggregateOnly,
        }
    }
}

impl std::str::FromStr for QuantileMethod {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self> {
        QuantileMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| FedError::InvalidInput(format!("unknown quantile method {s:?}")))
    }
}

impl std::fmt::Display for QuantileMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate<T> {
    pub p: T,
    pub value: T,
    pub method: QuantileMethod,
    #[serde(rename = "rounds")]
    pub communication_rounds: usize,
    pub privacy_flag: PrivacyFlag,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Checks that `probs` is strictly increasing inside `(0, 1)`.
pub fn validate_probs<T: Real>(probs: &[T]) -> Result<()> {
    if probs.is_empty() {
        return Err(FedError::InvalidInput("no probabilities given".into()));
    }
    for (i, &p) in probs.iter().enumerate() {
        if !(p > T::zero() && p < T::one()) {
            return Err(FedError::InvalidInput(format!(
                "probability {p} outside (0, 1)"
            )));
        }
        if i > 0 && !(p > probs[i - 1]) {
            return Err(FedError::InvalidInput(
                "probabilities must be strictly increasing".into(),
            ));
        }
    }
    Ok(())
}

/// Forces estimates to be non-decreasing in `p` (running maximum) and flags
/// any row that had to move.
pub fn enforce_monotone<T: Real>(rows: &mut [QuantileEstimate<T>]) {
    let mut floor = T::neg_infinity();
    for r in rows.iter_mut() {
        if r.value < floor {
            r.value = floor;
            r.flags.push("monotone_adjusted".into());
        }
        floor = r.value;
    }
}

/// Evaluates `estimator` at each probability and returns monotone rows.
pub fn quantile_summary_table<T: Real>(
    probs: &[T],
    mut estimator: impl FnMut(T) -> Result<QuantileEstimate<T>>,
) -> Result<Vec<QuantileEstimate<T>>> {
    validate_probs(probs)?;
    let mut rows = probs
        .iter()
        .map(|&p| estimator(p))
        .collect::<Result<Vec<_>>>()?;
    enforce_monotone(&mut rows);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p: f64, value: f64) -> QuantileEstimate<f64> {
        QuantileEstimate {
            p,
            value,
            method: QuantileMethod::YjTable,
            communication_rounds: 1,
            privacy_flag: PrivacyFlag::KAnonymous,
            flags: Vec::new(),
        }
    }

    #[test]
    fn summary_rows_are_monotone() {
        let fit = YjFit {
            lambda: 0.5,
            location: 1.0,
            scale: 0.4,
            method: YjMethod::Table,
            communication_rounds: 1,
            at_search_boundary: false,
        };
        let rows =
            quantile_summary_table(&[0.25, 0.5, 0.75], |p| estimate_quantile_yj_table(&fit, p))
                .unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.windows(2).all(|w| w[0].value <= w[1].value));
        assert!(rows.iter().all(|r| r.flags.is_empty()));
        let one = quantile_summary_table(&[0.3], |p| estimate_quantile_yj_table(&fit, p)).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn isotonic_pass_flags_adjustments() {
        let mut rows = vec![row(0.1, 1.0), row(0.2, 0.5), row(0.3, 2.0)];
        enforce_monotone(&mut rows);
        assert_eq!(rows[1].value, 1.0);
        assert_eq!(rows[1].flags, vec!["monotone_adjusted".to_string()]);
        assert!(rows[2].flags.is_empty());
    }

    #[test]
    fn probability_validation() {
        assert!(validate_probs(&[0.1, 0.5]).is_ok());
        assert!(validate_probs(&[0.5, 0.5]).is_err());
        assert!(validate_probs(&[0.0, 0.5]).is_err());
        assert!(validate_probs::<f64>(&[]).is_err());
    }

    #[test]
    fn json_row_shape() {
        let json = serde_json::to_string(&row(0.5, 2.0)).unwrap();
        assert_eq!(
            json,
            r#"{"p":0.5,"value":2.0,"method":"yj-table","rounds":1,"privacy_flag":"k_anonymous"}"#
        );
    }
}
