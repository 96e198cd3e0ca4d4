use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "basis dimension {dimension} exceeds the memory budget of {budget} states \
         (per-mode cap {per_mode_cap}, total cap {total_cap}, {modes} modes, {levels} levels)"
    )]
    MemoryBudget {
        dimension: u128,
        budget: usize,
        levels: usize,
        modes: usize,
        per_mode_cap: u32,
        total_cap: u32,
    },

    #[error("propagation failed at t = {time}: {reason}")]
    Propagation { time: f64, reason: String },

    #[error("{flagged} of {total} trajectories diverged (limit {limit_percent}%)")]
    TooManyDivergent {
        flagged: usize,
        total: usize,
        limit_percent: f64,
    },
}
