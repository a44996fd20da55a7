use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::moments::MomentAggregate;
use crate::error::{Error, Result};
use crate::grid::{LabelMap, VoxelGrid, NONE};
use crate::tessellation::Tessellation;

/// Moment aggregates rolled up region → component → layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyMoments {
    pub variables: [String; 2],
    /// One per site.
    pub regions: Vec<MomentAggregate>,
    /// One per component, covering unassigned voxels too.
    pub components: Vec<MomentAggregate>,
    pub layers: Vec<MomentAggregate>,
}

/// Per-region accumulation in parallel, then merges in id order so the
/// result does not depend on the thread count.
pub fn hierarchy_moments(grid: &VoxelGrid, labels: &LabelMap, tess: &Tessellation, x: &str, y: &str) -> Result<HierarchyMoments> {
    if tess.site_of.len() != labels.component.len() || grid.dims().len() != labels.component.len() {
        return Err(Error::InvalidGrid("grid, labels and tessellation sizes differ".into()));
    }
    let (fx, fy) = (grid.field(x)?, grid.field(y)?);
    let acc = |voxels: &[usize]| MomentAggregate::accumulate(x, y, voxels.iter().map(|&v| [fx[v] as f64, fy[v] as f64]));

    let regions: Vec<MomentAggregate> = tess.regions().par_iter().map(|r| acc(r)).collect();
    let mut orphans: Vec<Vec<usize>> = vec![Vec::new(); labels.components.len()];
    for v in 0..tess.site_of.len() {
        let c = labels.component[v];
        if c != NONE && tess.site_of[v] == NONE {
            orphans[c as usize].push(v);
        }
    }
    let mut components: Vec<MomentAggregate> = orphans.par_iter().map(|o| acc(o)).collect();
    for (s, site) in tess.sites.iter().enumerate() {
        let c = &mut components[site.component as usize];
        let merged = regions[s].clone().merged(c)?;
        *c = merged;
    }
    let mut layers = vec![MomentAggregate::new(x, y); labels.layer_count()];
    for (c, info) in labels.components.iter().enumerate() {
        layers[info.layer as usize].merge(&components[c])?;
    }
    Ok(HierarchyMoments { variables: [x.to_string(), y.to_string()], regions, components, layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{classify_isobands, label_components, Dims, IsobandSpec};
    use crate::seeding::{seed_sites, SeedingParams};
    use crate::synth::{default_iso, synth_field, SynthKind};
    use crate::tessellation::voronoi_classify;

    #[test]
    fn roll_up_counts() {
        let g = synth_field(SynthKind::Spiral, Dims::new(40, 40, 1), 0).unwrap();
        let l = label_components(&classify_isobands(&g, &IsobandSpec::new("f", default_iso(SynthKind::Spiral)).unwrap()).unwrap());
        let s = seed_sites(&g, &l, &SeedingParams { alpha: 20.0, ..Default::default() }).unwrap();
        let t = voronoi_classify(&g.geometry(), &l, &s.sites).unwrap();
        let h = hierarchy_moments(&g, &l, &t, "f", "f").unwrap();
        let total: u64 = h.layers.iter().map(|a| a.n()).sum();
        assert_eq!(total as usize, l.in_band_count());
        for (c, info) in l.components.iter().enumerate() {
            assert_eq!(h.components[c].n() as usize, info.voxel_count);
        }
        assert!(hierarchy_moments(&g, &l, &t, "f", "nope").is_err());
    }
}
