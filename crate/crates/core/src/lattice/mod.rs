//! Finite boxes of `Z^d`, fields on them, the discrete Laplacian and field
//! persistence.

mod domain;
mod field;
mod geometry;
mod snapshot;

pub use domain::{restrict_domain, Domain};
pub use field::Field;
pub use geometry::{BoundaryMode, LatticeBox, MAX_DIM};
pub use snapshot::{decode_field, encode_field, load_field, save_field, SnapshotMeta};
