use thiserror::Error;

/// Errors shared by all workbench operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// An exhaustive enumeration was asked for more agents than the
    /// configured bound allows.
    #[error("instance with {n} agents exceeds the exhaustive bound of {bound}")]
    InstanceTooLarge { n: usize, bound: usize },

    /// A grid scan would enumerate more cases than the configured budget.
    #[error(
        "scan of {required} cases exceeds the budget of {budget} (raise --budget or CAPFAC_BUDGET)"
    )]
    BudgetExceeded { required: u128, budget: u64 },

    /// A mechanism was evaluated on a report profile of the wrong length.
    #[error("mechanism expects {expected} reports, got {got}")]
    ArityMismatch { expected: usize, got: usize },

    /// Parameters outside the range an operation is defined for.
    #[error("{0}")]
    DomainError(String),

    /// An allocation table does not cover a profile the scan needs.
    #[error("allocation table is missing profile {0}")]
    DomainIncomplete(String),

    /// A location outside [0,1] or an unparseable rational.
    #[error("invalid location '{0}': must be a rational in [0,1]")]
    InvalidLocation(String),

    /// Instance-level validation failure (empty profile, capacity range).
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}
