use thiserror::Error;

/// Errors raised while building, solving, certifying or simulating a network.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("physical network disconnected")]
    PhysicalDisconnected,

    #[error("communication graph disconnected")]
    CommunicationDisconnected,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("equilibrium on boundary of the security region (edge {edge}, |angle| = {angle})")]
    OnBoundary { edge: usize, angle: f64 },

    #[error("c1 nonpositive ({0:e}): epsilons too large")]
    C1Nonpositive(f64),

    #[error("K matrix not positive definite over the security region (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("no feasible epsilons on the search grid")]
    NoFeasibleEpsilons,

    #[error("malformed DoS schedule: {0}")]
    MalformedSchedule(String),

    #[error("schedule violates DoS budget at t={t}")]
    BudgetViolated { t: f64 },

    #[error("state left the security region at t={t} (edge {edge}, angle {angle})")]
    SecurityExit { t: f64, edge: usize, angle: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
