use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("band diagonalization not converged: weight {weight:.3e} on the outermost plane waves of band {band} (cutoff {cutoff})")]
    BandsNotConverged { band: usize, cutoff: usize, weight: f64 },

    #[error("lattice at depth {depth} E_r binds {bound} band(s); two bound bands need depth above {threshold:.3} E_r")]
    TooFewBoundBands { depth: f64, bound: usize, threshold: f64 },

    #[error("analysis angle {theta} rad is singular (sinθ·cosθ = 0)")]
    SingularBasis { theta: f64 },

    #[error("target trace must be positive, got {0}")]
    NonPositiveTrace(f64),

    #[error("not a density matrix: {0}")]
    NotPhysical(String),

    #[error("map is not completely positive: minimum Choi eigenvalue {min_eigenvalue:.3e}")]
    NotCompletelyPositive { min_eigenvalue: f64 },

    #[error("input states are linearly dependent: Gram condition number {condition:.3e}")]
    IllConditioned { condition: f64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("drive propagator not converged: step halving changed it by {change:.3e} at {steps} steps/period")]
    DriveNotConverged { steps: usize, change: f64 },

    #[error("invalid pulse sequence: {0}")]
    InvalidSequence(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
