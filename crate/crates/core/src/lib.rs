//! Level-set restricted centroidal Voronoi tessellation of voxel grids, with
//! mergeable per-region statistics and a component-contiguous data layout.

pub mod error;
pub mod grid;
pub mod layout;
pub mod numeric;
pub mod projection;
pub mod seeding;
pub mod stats;
pub mod sitegraph;
pub mod synth;
pub mod tessellation;
pub mod volume;

pub use error::{Error, Result};
