//! Error type shared by every stage of the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- ingestion ----
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("timestamps not strictly increasing at hourly steps (line {line}: {detail})")]
    NonMonotoneTimestamps { line: usize, detail: String },
    #[error("gap of {hours} hours ending at line {line} exceeds the interpolation limit of {limit}")]
    GapTooLarge { line: usize, hours: usize, limit: usize },
    #[error("input file contains no records")]
    EmptyFile,
    #[error("panel does not cover whole calendar years: {0}")]
    PartialYear(String),
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    // ---- regression ----
    #[error("exogenous regressor required by the model but not supplied")]
    ExogenousMissing,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("too few observations: {got} for {needed} coefficients")]
    TooFewObservations { got: usize, needed: usize },
    #[error("degenerate design for quantile regression")]
    DegenerateDesign,
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    // ---- extremes ----
    #[error("panel must contain at least {needed} whole years, got {got}")]
    IncompleteYears { got: usize, needed: usize },
    #[error("too few exceedances for a GPD fit: {got} (< {needed})")]
    TooFewExceedances { got: usize, needed: usize },
    #[error("numerical optimisation did not converge: {0}")]
    NonConvergence(String),
    #[error("GPD endpoint requested but shape xi = {0} is not negative")]
    PositiveShapeEndpointRequested(f64),
    #[error("estimated GPD shape xi = {xi} is not negative ({stage}); the bound is unbounded")]
    ShapeNotNegative { stage: &'static str, xi: f64 },
    #[error("logit domain violated at d={d}, h={h}: ratio {ratio}")]
    LogitDomain { d: usize, h: usize, ratio: f64 },

    // ---- marginals ----
    #[error("{frac:.3} of observations for hour {hour} sit on the clipping boundary")]
    BoundaryMass { hour: usize, frac: f64 },
    #[error("value {0} outside the open unit interval")]
    DomainError(f64),

    // ---- copulas ----
    #[error("root finder failed to converge in {0} iterations")]
    ConvergenceFailure(usize),
    #[error("tail coefficients out of range: lambda_l = {lambda_l}, lambda_u = {lambda_u}")]
    TailOutOfRange { lambda_l: f64, lambda_u: f64 },
    #[error("invalid copula parameter: {0}")]
    InvalidParameter(String),

    // ---- scenarios ----
    #[error("scenario {scenario}, day {day}, hour {hour}: {source}")]
    Simulation {
        scenario: usize,
        day: usize,
        hour: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("daily total {total} exceeds the envelope sum {envelope} on day {day}")]
    TotalExceedsEnvelope { day: usize, total: f64, envelope: f64 },
    #[error("incomplete model bundle: {0}")]
    IncompleteBundle(String),

    // ---- daily baseline ----
    #[error("link domain violated on day {day}: value {value} outside ({lo}, {hi})")]
    LinkDomain { day: usize, value: f64, lo: f64, hi: f64 },
    #[error("ARMA fit is not stationary/invertible (phi = {phi}, theta = {theta})")]
    NonStationaryFit { phi: f64, theta: f64 },

    // ---- scoring ----
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("series too short: {got} < {needed}")]
    SeriesTooShort { got: usize, needed: usize },
    #[error("forecast horizon mismatch: {0}")]
    HorizonMismatch(String),

    // ---- artifacts ----
    #[error("artifact `{kind}` has format version {found}, expected {expected}")]
    ArtifactVersionMismatch { kind: String, found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Broad class used by front ends to pick an exit status.
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            MissingColumn(_) | NonMonotoneTimestamps { .. } | GapTooLarge { .. } | EmptyFile
            | PartialYear(_) | Parse { .. } | IncompleteYears { .. } | Io(_) | Csv(_)
            | Json(_) | ArtifactVersionMismatch { .. } | HorizonMismatch(_)
            | DimensionMismatch { .. } | IncompleteBundle(_) => ErrorClass::Data,
            _ => ErrorClass::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numerical,
}
