use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),

    #[error("AP undefined for class {class_id}: no ground truth instances")]
    UndefinedAp { class_id: u32 },

    #[error("mAP needs at least one class")]
    EmptyClassMap,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid camera intrinsics: {0}")]
    InvalidCamera(String),

    #[error("quality {quality} outside the valid range for {codec}")]
    QualityOutOfRange { codec: String, quality: i64 },

    #[error("quality {quality} outside sampled span [{min}, {max}]; refusing to extrapolate")]
    Extrapolation { quality: u32, min: u32, max: u32 },

    #[error("curve mismatch: expected {expected}, found {found}")]
    CurveMismatch { expected: String, found: String },

    #[error("a codec curve needs at least two distinct quality levels, got {0}")]
    InsufficientQualityLevels(usize),

    #[error("codec curve is flat: every quality level maps to {0} bytes")]
    DegenerateCurve(f64),

    #[error("invalid codec curve: {0}")]
    InvalidCurve(String),

    #[error("invalid channel parameters: {0}")]
    InvalidChannel(String),

    #[error("calibration needs at least two observations with distinct sizes, got {0}")]
    TooFewObservations(usize),

    #[error("calibration design is rank deficient (sizes and packet counts are proportional)")]
    RankDeficient,

    #[error(
        "calibration produced non-physical parameters (throughput {throughput_mbps:.3} Mbit/s, \
         overhead {overhead_ms:.4} ms/packet); pin the throughput instead"
    )]
    NonPhysicalFit {
        throughput_mbps: f64,
        overhead_ms: f64,
    },

    #[error("stochastic sampling requested but the channel has no jitter model; use uplink_delay")]
    JitterNotConfigured,

    #[error("no codec curve for {codec} at {resolution}")]
    MissingCurve { codec: String, resolution: String },

    #[error("compression resolution {compression} does not match platform input {platform}")]
    ResolutionMismatch {
        compression: String,
        platform: String,
    },

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("invalid platform profile: {0}")]
    InvalidPlatform(String),

    #[error("inconsistent measurement: non-network terms exceed the total by {excess_ms:.3} ms")]
    InconsistentMeasurement { excess_ms: f64 },

    #[error("strategy {0} has neither detections nor a fixture mAP")]
    MissingMapSource(String),

    #[error("invalid trade-off point: {0}")]
    InvalidPoint(String),

    #[error("unknown report format {0:?}")]
    UnknownFormat(String),

    #[error("report needs at least one point")]
    EmptyPoints,

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
