use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("geometry infeasible: no valid drop after {attempts} attempts")]
    GeometryInfeasible { attempts: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("schedule space (2*{users_per_cell})^{n_cells} overflows the index range")]
    ScheduleOverflow {
        n_cells: usize,
        users_per_cell: usize,
    },

    #[error("schedule does not fit topology: {0}")]
    InvalidSchedule(String),

    #[error("power {power} W on link {link} outside [0, {max}] W")]
    PowerOutOfBox { link: usize, power: f64, max: f64 },

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("loss became NaN at epoch {epoch} (batch {batch})")]
    NanLoss { epoch: usize, batch: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("method {0} needs a model that was not provided")]
    MissingModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
