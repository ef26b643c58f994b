use thiserror::Error;

/// Which of the two compared groups a value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    X,
    Y,
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Group::X => write!(f, "x"),
            Group::Y => write!(f, "y"),
        }
    }
}

#[derive(Debug, Error)]
pub enum FedError {
    #[error("center {center}: group {group} has {count} observations, fewer than k = {k}")]
    InsufficientData {
        center: String,
        group: Group,
        count: usize,
        k: u32,
    },
    #[error("center {0} holds no observations")]
    EmptyCenter(String),
    #[error("a compared group is empty")]
    EmptyGroup,
    #[error("cannot redistribute a positive total with all-zero weights")]
    DegenerateWeights,
    #[error("all pooled values are tied; the null variance is zero")]
    ZeroVariance,
    #[error("every center has zero null variance")]
    AllZeroVariance,
    #[error("table has {usable} usable interior limits; at least 3 are required")]
    TooFewBins { usable: usize },
    #[error("value {z} lies outside the range of the inverse transform for lambda = {lambda}")]
    OutOfRange { z: f64, lambda: f64 },
    #[error("transformed values have zero variance")]
    DegenerateVariance,
    #[error("value {value} lies outside the natural domain [{low}, {high}]")]
    OutsideDomain { value: f64, low: f64, high: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("refusing privacy-violating method {0}")]
    PrivacyViolatingForbidden(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FedError {
    /// True for errors caused by a center failing the K-anonymity preconditions.
    pub fn is_privacy_precondition(&self) -> bool {
        matches!(
            self,
            FedError::InsufficientData { .. } | FedError::EmptyCenter(_)
        )
    }
}

pub type Result<T, E = FedError> = std::result::Result<T, E>;
