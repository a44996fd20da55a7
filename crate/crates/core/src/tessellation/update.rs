use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::raycast::first_exit;
use super::{Tessellation, SRC_SITE};
use crate::error::{Error, Result};
use crate::grid::{distance, LabelMap, NONE};
use crate::numeric::CompensatedSum;
use crate::seeding::Site;

/// Boundary back-off after a clamped move, in voxel lengths.
pub const CLAMP_BACKOFF: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub sites: Vec<Site>,
    /// Mean site displacement in voxel lengths.
    pub mean_ds: f64,
    /// Per-site displacement in voxel lengths.
    pub displacements: Vec<f64>,
    /// Sites whose region was empty (or massless) and that kept their position.
    pub empty_regions: Vec<u32>,
    /// Sites whose move was shortened at the component boundary.
    pub clamped: Vec<u32>,
}

/// `φ(v)`: the first line-of-sight voxel on each voxel's path (`NONE` when
/// unassigned).
pub fn line_of_sight_anchors(tess: &Tessellation) -> Vec<u32> {
    let n = tess.site_of.len();
    let mut anchor = vec![NONE; n];
    let mut stack = Vec::new();
    for v in 0..n {
        if tess.site_of[v] == NONE || anchor[v] != NONE {
            continue;
        }
        let mut cur = v;
        let found = loop {
            if anchor[cur] != NONE {
                break anchor[cur];
            }
            match tess.src[cur] {
                SRC_SITE => break cur as u32,
                NONE => break NONE,
                u => {
                    stack.push(cur);
                    cur = u as usize;
                    if stack.len() > n {
                        break NONE;
                    }
                }
            }
        };
        anchor[cur] = if tess.src[cur] == SRC_SITE { cur as u32 } else { found };
        for w in stack.drain(..) {
            anchor[w] = found;
        }
    }
    anchor
}

/// Geodesically weighted centroid targets: each voxel's mass is placed at
/// its line-of-sight anchor. `None` for regions without mass.
pub fn centroid_targets(tess: &Tessellation, masses: &[f64]) -> Vec<Option<[f64; 3]>> {
    let anchors = line_of_sight_anchors(tess);
    let regions = tess.regions();
    let geo = tess.geometry;
    regions
        .par_iter()
        .map(|region| {
            let mut m = CompensatedSum::new();
            let mut mx = [CompensatedSum::new(); 3];
            for &v in region {
                let a = anchors[v];
                if a == NONE {
                    continue;
                }
                let w = masses[v];
                let p = geo.position(a as usize);
                m.add(w);
                for k in 0..3 {
                    mx[k].add(w * p[k]);
                }
            }
            let total = m.value();
            (total > 0.0).then(|| [mx[0].value() / total, mx[1].value() / total, mx[2].value() / total])
        })
        .collect()
}

/// Farthest point on `from → to` still inside `component`, backed off from the
/// boundary. Returns the point and whether the move was shortened.
pub fn clamp_move(labels: &LabelMap, tess: &Tessellation, component: u32, from: [f64; 3], to: [f64; 3]) -> ([f64; 3], bool) {
    let geo = tess.geometry;
    let qa = geo.to_index_space(from);
    let qb = geo.to_index_space(to);
    let Some(t_exit) = first_exit(geo.dims, &labels.component, component, qa, qb) else {
        return (to, false);
    };
    let len = distance(from, to);
    let t = t_exit - CLAMP_BACKOFF * geo.voxel_length() / len;
    if !(t > 0.0) {
        return (from, true);
    }
    let p = [
        from[0] + t * (to[0] - from[0]),
        from[1] + t * (to[1] - from[1]),
        from[2] + t * (to[2] - from[2]),
    ];
    match geo.voxel_at(p) {
        Some(v) if labels.component[v] == component => (p, true),
        _ => (from, true),
    }
}

/// Move every site towards its geodesically weighted centroid.
pub fn centroidal_update(tess: &Tessellation, labels: &LabelMap, masses: &[f64]) -> Result<UpdateOutcome> {
    if masses.len() != tess.site_of.len() {
        return Err(Error::InvalidParameter(format!(
            "{} voxel masses for {} voxels",
            masses.len(),
            tess.site_of.len()
        )));
    }
    let targets = centroid_targets(tess, masses);
    let vlen = tess.geometry.voxel_length();
    let moved: Vec<(Site, f64, bool, bool)> = tess
        .sites
        .par_iter()
        .zip(&targets)
        .map(|(site, target)| match target {
            None => (*site, 0.0, true, false),
            Some(t) => {
                let (p, clamped) = clamp_move(labels, tess, site.component, site.position, *t);
                let ds = distance(site.position, p) / vlen;
                (Site { position: p, component: site.component }, ds, false, clamped)
            }
        })
        .collect();

    let mut out = UpdateOutcome {
        sites: Vec::with_capacity(moved.len()),
        mean_ds: 0.0,
        displacements: Vec::with_capacity(moved.len()),
        empty_regions: Vec::new(),
        clamped: Vec::new(),
    };
    for (s, (site, ds, empty, clamped)) in moved.into_iter().enumerate() {
        out.sites.push(site);
        out.displacements.push(ds);
        if empty {
            out.empty_regions.push(s as u32);
        }
        if clamped {
            out.clamped.push(s as u32);
        }
    }
    if !out.empty_regions.is_empty() {
        log::info!("{} sites with empty regions kept their position", out.empty_regions.len());
    }
    if !out.displacements.is_empty() {
        let sum: CompensatedSum = out.displacements.iter().copied().collect();
        out.mean_ds = sum.value() / out.displacements.len() as f64;
    }
    Ok(out)
}
