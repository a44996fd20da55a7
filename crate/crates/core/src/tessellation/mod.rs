//! Level-set restricted centroidal Voronoi tessellation.
//!
//! * [`voronoi_classify`] grows restricted geodesic Voronoi regions from the
//!   sites: a line-of-sight phase where only sites are path nodes, then a
//!   phase where every classified voxel may act as a node.
//! * [`centroidal_update`] moves each site towards its geodesically weighted
//!   centroid, where non line-of-sight voxels vote through the first
//!   line-of-sight voxel on their path, and the move is clamped at the
//!   component boundary.
//! * [`lrcvt`] alternates the two until the mean site displacement drops
//!   below tolerance.

mod classify;
mod lloyd;
pub mod oracle;
pub mod raycast;
mod update;
pub mod validate;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

pub use classify::{voronoi_classify, ClassifyReport};
pub use lloyd::{lrcvt, lrcvt_from_sites, LloydParams, LrcvtParams, LrcvtResult};
pub use raycast::raycast_same_component;
pub use update::{centroid_targets, centroidal_update, clamp_move, line_of_sight_anchors, UpdateOutcome, CLAMP_BACKOFF};

use crate::grid::GridGeometry;
use crate::seeding::Site;

/// `src` value of a line-of-sight voxel: its path goes straight to the site.
pub const SRC_SITE: u32 = u32::MAX - 1;

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct VoxelState: u8 {
        /// Straight segment to the site stays inside the component.
        const LOS = 0b001;
        /// Has a current path.
        const ACTIVE = 0b010;
        /// May serve as a path node for other voxels.
        const NODE = 0b100;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tessellation {
    pub geometry: GridGeometry,
    pub sites: Vec<Site>,
    /// Site id per voxel, or [`crate::grid::NONE`].
    pub site_of: Vec<u32>,
    /// Length of the discovered path to the site (world units).
    pub dist: Vec<f64>,
    /// Predecessor on the path: a voxel index, [`SRC_SITE`], or `NONE`.
    pub src: Vec<u32>,
    pub state: Vec<VoxelState>,
    pub report: ClassifyReport,
}

impl Tessellation {
    /// Voxels of every site's region, each in row-major order.
    pub fn regions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sites.len()];
        for (v, &s) in self.site_of.iter().enumerate() {
            if s != crate::grid::NONE {
                out[s as usize].push(v);
            }
        }
        out
    }

    /// Polyline of voxel indices from `v` to its line-of-sight anchor.
    pub fn path(&self, v: usize) -> Vec<usize> {
        let mut out = vec![v];
        let mut cur = v;
        while self.src[cur] != SRC_SITE && self.src[cur] != crate::grid::NONE {
            cur = self.src[cur] as usize;
            out.push(cur);
            if out.len() > self.src.len() {
                break;
            }
        }
        out
    }

    /// Stable byte encoding of the classification, for reproducibility checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.site_of.len() * 17 + self.sites.len() * 28);
        for s in &self.sites {
            for p in s.position {
                out.extend_from_slice(&p.to_le_bytes());
            }
            out.extend_from_slice(&s.component.to_le_bytes());
        }
        for v in 0..self.site_of.len() {
            out.extend_from_slice(&self.site_of[v].to_le_bytes());
            out.extend_from_slice(&self.dist[v].to_le_bytes());
            out.extend_from_slice(&self.src[v].to_le_bytes());
            out.push(self.state[v].bits());
        }
        out
    }
}
