use thiserror::Error;

use crate::groups::{GroupElement, GroupKind};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("group element {element:?} does not belong to group {kind:?}")]
    GroupMismatch {
        kind: GroupKind,
        element: GroupElement,
    },

    #[error("point at distance {distance} from the manifold exceeds the tubular radius {theta0}")]
    TooFarFromManifold { distance: f64, theta0: f64 },

    #[error("shifted point lies on the singular complex (distance {distance})")]
    OnComplex { distance: f64 },

    #[error("loop sampling too coarse: gap {gap} at sample {index}")]
    Undersampled { index: usize, gap: f64 },

    #[error("segment lies in the plane of the test disk")]
    Degenerate,

    #[error("boundary chain has non-zero total class {0:?}")]
    NonZeroTotalClass(GroupElement),

    #[error("too many points for exact Z/2 matching: {0}")]
    TooManyPoints(usize),

    #[error("invalid datum descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("simplex is not strictly inside the domain")]
    SimplexTouchesBoundary,

    #[error("energy became non-finite at iteration {0}")]
    NonFiniteEnergy(usize),

    #[error("skeleton distance {max_dist} exceeds admissible threshold {threshold}")]
    SkeletonTooClose { max_dist: f64, threshold: f64 },

    #[error("essential component touches the domain boundary")]
    BoundaryTouch,

    #[error("certificate not admissible: {0}")]
    NotAdmissible(String),

    #[error("certified bound {bound} exceeds measured energy {energy}")]
    Unsound { bound: f64, energy: f64 },

    #[error("no Plateau prediction for experiment {0}")]
    UnsupportedPrediction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
