use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// No mask pixel carried a valid depth sample.
    EmptyProjection,
    /// DBSCAN labeled every point as noise.
    AllNoise,
    /// A mask (pooled, raycast, ...) covered nothing.
    EmptyMask,
    /// Every best-view candidate produced an empty raycast.
    NoVisibleView { object_id: u64 },
    /// Two inputs that must agree in size did not.
    LengthMismatch { expected: usize, found: usize },
    /// Image, grid or descriptor dimensions are inconsistent.
    DimensionMismatch(&'static str),
    /// A configuration value is outside its documented range.
    InvalidConfig(&'static str),
    /// An input violates a type invariant.
    InvalidInput(&'static str),
    /// No ground-truth labels to evaluate against.
    EmptyGt,
    /// A run-length encoding did not sum to the mask size.
    BadRle { expected: usize, found: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyProjection => f.write_str("no mask pixel has valid depth"),
            Error::AllNoise => f.write_str("every point was labeled noise"),
            Error::EmptyMask => f.write_str("mask is empty"),
            Error::NoVisibleView { object_id } => {
                write!(f, "object {object_id} is not visible from any candidate view")
            }
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::DimensionMismatch(what) => write!(f, "dimension mismatch: {what}"),
            Error::InvalidConfig(what) => write!(f, "invalid configuration: {what}"),
            Error::InvalidInput(what) => write!(f, "invalid input: {what}"),
            Error::EmptyGt => f.write_str("ground truth is empty"),
            Error::BadRle { expected, found } => {
                write!(f, "run lengths sum to {found}, mask has {expected} pixels")
            }
        }
    }
}

impl core::error::Error for Error {}
