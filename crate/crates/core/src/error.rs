use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Degenerate,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Degenerate => 3,
            ErrorClass::Io => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} must be positive (got {value})")]
    NonPositive { what: &'static str, value: f64 },

    #[error("{what} must be finite")]
    NonFiniteInput { what: &'static str },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("{kind} geometry cannot hold {count} elements: {reason}")]
    IncompatibleCount {
        kind: &'static str,
        count: usize,
        reason: &'static str,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("elements {first} and {second} both snap to grid point {point}")]
    DuplicateSnap {
        first: usize,
        second: usize,
        point: usize,
    },

    #[error("element {element} is {distance:.4} m from the nearest grid point (limit {limit:.4} m)")]
    SnapTooFar {
        element: usize,
        distance: f64,
        limit: f64,
    },

    #[error("duplicate {what} index {index}")]
    DuplicateIndex { what: &'static str, index: usize },

    #[error("coincident geometry: {0}")]
    CoincidentGeometry(String),

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("subcarrier {0} is not present in the grid")]
    MissingSubcarrier(usize),

    #[error("zero channel: {0}")]
    ZeroChannel(String),

    #[error("phase undefined: MR entry (antenna {antenna}, user {user}) is zero")]
    ZeroEntry { antenna: usize, user: usize },

    #[error("zero-forcing needs M != N (got M = N = {0}); the sqrt(M-N) scaling vanishes")]
    SquareZeroForcing(usize),

    #[error("Gram matrix condition number {0:.3e} exceeds 1e12")]
    IllConditioned(f64),

    #[error("SINR is infinite for users {users:?} with zero noise; set noise_power > 0")]
    InfiniteSinr { users: Vec<usize> },

    #[error("degenerate SINR for user {0}: zero signal and zero interference-plus-noise")]
    DegenerateSinr(usize),

    #[error("no grid points lie outside the exclusion radius {0} m")]
    NoInterferencePoints(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("grid data has {found} rows, metadata implies {expected}")]
    RowCountMismatch { expected: usize, found: usize },

    #[error("unsupported grid format version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed grid file: {0}")]
    Format(String),

    #[error("non-finite value on data row {0}")]
    NonFiniteValue(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            NonPositive { .. }
            | NonFiniteInput { .. }
            | IndexOutOfRange { .. }
            | IncompatibleCount { .. }
            | Infeasible(_)
            | DuplicateSnap { .. }
            | SnapTooFar { .. }
            | DuplicateIndex { .. }
            | DimensionMismatch { .. }
            | MissingSubcarrier(_)
            | Config(_) => ErrorClass::Config,
            CoincidentGeometry(_)
            | ZeroChannel(_)
            | ZeroEntry { .. }
            | SquareZeroForcing(_)
            | IllConditioned(_)
            | InfiniteSinr { .. }
            | DegenerateSinr(_)
            | NoInterferencePoints(_) => ErrorClass::Degenerate,
            RowCountMismatch { .. }
            | UnsupportedVersion(_)
            | Format(_)
            | NonFiniteValue(_)
            | Io(_) => ErrorClass::Io,
        }
    }
}
