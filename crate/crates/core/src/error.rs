use thiserror::Error;

/// Every failure the library reports. Validation-type errors map to CLI exit
/// code 2, numerical ones to 3.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("flip not allowed: arc {0} is the interior edge of a self-folded triangle")]
    FlipNotAllowed(usize),
    #[error("unsupported surface: {0}")]
    UnsupportedSurface(String),
    #[error("triangulation is not regular (puncture {0} has valency {1})")]
    NotRegular(usize, usize),
    #[error("map has a pole at this point ({0})")]
    PoleOfMap(String),
    #[error("zero of multiplicity > 1 near {0}")]
    NonSimpleZero(String),
    #[error("point {0} is not a double pole")]
    NotDoublePole(String),
    #[error("path passes within clearance of a critical point near {0}")]
    SheetAmbiguity(String),
    #[error("trajectory integration stalled at {0}")]
    Stalled(String),
    #[error("could not separate nearby saddles near phase {0}")]
    UnresolvedCrossing(f64),
    #[error("differential is not saddle-free (saddle near phase {0})")]
    NotSaddleFree(f64),
    #[error("unsupported trajectory topology: {0}")]
    UnsupportedTopology(String),
    #[error("differential is not generic: {0}")]
    NotGeneric(String),
    #[error("basis class flagged both closed and non-closed: {0}")]
    ConflictingFlags(usize),
    #[error("sector boundary ray is active (phase {0})")]
    ActiveBoundary(f64),
    #[error("ray at angle {0} is active")]
    ActiveRay(f64),
    #[error("singularity on transport path near {0}")]
    SingularityOnPath(String),
    #[error("apparent singularity at t = {0}")]
    ApparentSingularity(String),
    #[error("subdominant seed unstable: line moved by {0:e}")]
    SeedUnstable(f64),
    #[error("degenerate quadrilateral for arc {0}")]
    DegenerateQuadrilateral(usize),
    #[error("class identification failed: {0}")]
    ClassMatch(String),
}

impl Error {
    /// True for errors produced by numerical procedures rather than bad input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::Invalid(_)
                | Error::FlipNotAllowed(_)
                | Error::UnsupportedSurface(_)
                | Error::NotRegular(..)
                | Error::NotDoublePole(_)
                | Error::ConflictingFlags(_)
                | Error::NonSimpleZero(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
