use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid coordinate: lat={lat}, lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("bearing undefined between coincident points")]
    DegenerateBearing,

    #[error("zero mean wind vector for county {county_id} in {year}")]
    ZeroWind { county_id: String, year: i32 },

    #[error("no wind record for county {county_id} in {year}")]
    MissingWind { county_id: String, year: i32 },

    #[error("invalid exposure spec: {0}")]
    InvalidSpec(String),

    #[error("invalid plant unit {unit_id}: {reason}")]
    InvalidPlant { unit_id: String, reason: String },

    #[error("temperature {0} degC is outside the Magnus formula domain")]
    OutOfRange(f64),

    #[error("no baseline for county {county_id}, month {month}")]
    MissingBaseline { county_id: String, month: u32 },

    #[error("insufficient baseline for county {county_id}, month {month}: {reason}")]
    InsufficientBaseline {
        county_id: String,
        month: u32,
        reason: String,
    },

    #[error("duplicate key ({county_id}, {year}) in {source_name}")]
    DuplicateKey {
        source_name: String,
        county_id: String,
        year: i32,
    },

    #[error("instrument matrix misaligned with panel: {0}")]
    AlignmentError(String),

    #[error("subsample '{0}' is empty")]
    EmptySubsample(String),

    #[error("alternating projections did not converge after {sweeps} sweeps (delta {delta:e})")]
    DemeanConvergence { sweeps: usize, delta: f64 },

    #[error("coordinate descent did not converge after {iterations} sweeps")]
    LassoConvergence {
        iterations: usize,
        objective_trace: Vec<f64>,
    },

    #[error("lasso selected no instruments")]
    EmptySelection,

    #[error("under-identified: {0}")]
    UnderIdentified(String),

    #[error("rank deficient design; dependent columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("correlation undefined: {0}")]
    DegenerateCorrelation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("monte carlo harness: {0}")]
    Harness(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}, line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidCoordinate { .. } => "invalid_coordinate",
            Error::InvalidPolygon(_) => "invalid_polygon",
            Error::DegenerateBearing => "degenerate_bearing",
            Error::ZeroWind { .. } => "zero_wind",
            Error::MissingWind { .. } => "missing_wind",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidPlant { .. } => "invalid_plant",
            Error::OutOfRange(_) => "out_of_range",
            Error::MissingBaseline { .. } => "missing_baseline",
            Error::InsufficientBaseline { .. } => "insufficient_baseline",
            Error::DuplicateKey { .. } => "duplicate_key",
            Error::AlignmentError(_) => "alignment_error",
            Error::EmptySubsample(_) => "empty_subsample",
            Error::DemeanConvergence { .. } => "demean_convergence",
            Error::LassoConvergence { .. } => "lasso_convergence",
            Error::EmptySelection => "empty_selection",
            Error::UnderIdentified(_) => "under_identified",
            Error::RankDeficient(_) => "rank_deficient",
            Error::DegenerateCorrelation(_) => "degenerate_correlation",
            Error::InvalidInput(_) => "invalid_input",
            Error::Harness(_) => "harness",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
        }
    }
}
