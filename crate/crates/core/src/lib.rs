//! Manifold-valued Ginzburg-Landau energies, their topological singular sets
//! as flat chains with coefficients in the fundamental group of the target,
//! and certified energy lower bounds.

pub mod assignment;
pub mod chains;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod fields;
pub mod groups;
pub mod lowerbound;
pub mod manifolds;
pub mod singular;

pub use error::{Error, Result};
pub use groups::{CoefficientGroup, GroupElement, GroupKind};
pub use manifolds::{ManifoldKind, TargetManifold};
