//! Geometric force estimation, robust force planning and admittance control
//! for multi-finger manipulation with normal-only tactile sensing.
//!
//! The pipeline works on the affine subspace of stacked contact forces that
//! balance gravity (the FE-plane). Noisy normal readings are projected onto
//! it for estimation; planned forces are chosen so that a whole uncertainty
//! ellipsoid around them satisfies linearized friction and minimum-force
//! constraints, which reduces robust planning to a small linear program.

pub mod bench;
pub mod contact;
pub mod error;
pub mod estimation;
pub mod fe_plane;
pub mod planning;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod tactile;

pub use contact::{Contact, ContactKind, ContactSet, ConstraintSet, ObjectModel};
pub use error::{Error, Result};
pub use estimation::MeasurementVector;
pub use fe_plane::FePlane;
pub use planning::{ForcePlan, UncertaintyModel};
