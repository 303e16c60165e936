use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("initial sleeve placement penetrates the arm (depth {depth:.4} m at particle {particle})")]
    Placement { particle: usize, depth: f64 },
    #[error("simulation diverged at substep {substep}: particle {particle} speed {speed}")]
    Diverged {
        substep: usize,
        particle: usize,
        speed: f64,
    },
    #[error("episode already finished")]
    EpisodeDone,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("trajectory has {len} steps, not more than the {skip} skipped warm-up steps")]
    TrajectoryTooShort { len: usize, skip: usize },
    #[error("all rollouts diverged in iteration {0}")]
    AllRolloutsDiverged(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
