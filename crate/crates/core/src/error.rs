use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate (lon {lon}, lat {lat})")]
    InvalidCoordinate { lon: f64, lat: f64 },

    #[error("point is {delta_deg:.4}° from the projection origin; local projection is limited to 1°")]
    BeyondCityScale { delta_deg: f64 },

    #[error("azimuth is undefined for coincident points")]
    CoincidentPoints,

    #[error("bounding box is degenerate")]
    DegenerateBBox,

    #[error("angle {0} is outside [0, 360)")]
    AngleOutOfRange(f64),

    #[error("invalid build parameters: {0}")]
    InvalidParams(String),

    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("angle bin {bin} is outside [0, {levels})")]
    BinOutOfRange { bin: u16, levels: u16 },

    #[error("signature has {types} class symbols but {bins} angle bins")]
    LengthMismatch { types: usize, bins: usize },

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("duplicate cell id {0}")]
    DuplicateCell(u64),

    #[error("unknown cell id {0}")]
    UnknownCell(u64),

    #[error("object set is empty")]
    NoObjects,

    #[error("database is empty")]
    EmptyDatabase,

    #[error("invalid fusion policy: {0}")]
    InvalidPolicy(String),

    #[error("requested {requested} queries but the database holds {available} records")]
    TooManyQueries { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("database file error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
