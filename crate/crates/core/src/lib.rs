//! Tensegrity structural design and simulation.
//!
//! * [`topology`]: bar/string graphs, builders, connectivity matrices
//! * [`statics`]: force-density equilibrium and self-stress states
//! * [`sizing`]: minimum mass under yield and buckling
//! * [`dynamics`]: rigid-bar dynamics with elastic, tension-only strings
//! * [`mission`]: drill → heat → extract → filter cycle with power accounting

pub mod dynamics;
pub mod error;
pub mod mission;
pub mod nnls;
pub mod sizing;
pub mod statics;
pub mod topology;

pub use error::{Error, Result};
