use serde::{Deserialize, Serialize};

use super::{centroidal_update, voronoi_classify, Tessellation};
use crate::error::{Error, Result};
use crate::grid::{LabelMap, VoxelGrid};
use crate::seeding::{seed_sites, voxel_masses, Seeding, SeedingParams, Site};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LloydParams {
    pub max_updates: usize,
    /// Stop once the mean site displacement (voxel lengths) drops below this.
    pub ds_tolerance: f64,
}

impl Default for LloydParams {
    fn default() -> Self {
        Self { max_updates: 50, ds_tolerance: 0.25 }
    }
}

impl LloydParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_updates == 0 {
            return Err(Error::InvalidParameter("max_updates must be >= 1".into()));
        }
        if !(self.ds_tolerance.is_finite() && self.ds_tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ds_tolerance must be > 0, got {}",
                self.ds_tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LrcvtParams {
    pub seeding: SeedingParams,
    pub lloyd: LloydParams,
}

#[derive(Debug, Clone)]
pub struct LrcvtResult {
    /// Classification computed after the last update.
    pub tessellation: Tessellation,
    pub initial_sites: Vec<Site>,
    /// Mean displacement per update, in voxel lengths.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub seeding: Seeding,
    /// Per update, the sites whose region was empty.
    pub empty_regions: Vec<Vec<u32>>,
}

/// Seed, then alternate classification and centroidal update.
pub fn lrcvt(grid: &VoxelGrid, labels: &LabelMap, params: &LrcvtParams) -> Result<LrcvtResult> {
    params.lloyd.validate()?;
    let seeding = seed_sites(grid, labels, &params.seeding)?;
    let masses = voxel_masses(grid, labels, &params.seeding)?;
    let mut result = lrcvt_from_sites(grid, labels, &masses, seeding.sites.clone(), &params.lloyd)?;
    result.seeding = seeding;
    Ok(result)
}

/// Lloyd iterations from given initial sites and per-voxel masses.
pub fn lrcvt_from_sites(
    grid: &VoxelGrid,
    labels: &LabelMap,
    masses: &[f64],
    sites: Vec<Site>,
    params: &LloydParams,
) -> Result<LrcvtResult> {
    params.validate()?;
    if sites.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let geometry = grid.geometry();
    let initial_sites = sites.clone();
    let mut sites = sites;
    let mut trace = Vec::new();
    let mut empty_regions = Vec::new();
    let mut converged = false;
    for update in 1..=params.max_updates {
        let tess = voronoi_classify(&geometry, labels, &sites)?;
        let out = centroidal_update(&tess, labels, masses)?;
        log::debug!("update {update}: mean_ds {:.6}", out.mean_ds);
        trace.push(out.mean_ds);
        empty_regions.push(out.empty_regions);
        sites = out.sites;
        if out.mean_ds < params.ds_tolerance {
            converged = true;
            break;
        }
    }
    let tessellation = voronoi_classify(&geometry, labels, &sites)?;
    Ok(LrcvtResult {
        tessellation,
        initial_sites,
        trace,
        converged,
        seeding: Seeding::default(),
        empty_regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{classify_isobands, label_components, Dims, IsobandSpec};
    use crate::synth::{default_iso, synth_field, SynthKind};

    #[test]
    fn one_site_in_a_box_converges_monotonically() {
        let dims = Dims::new(15, 9, 1);
        let g = VoxelGrid::new(dims, [1.0; 3]).unwrap().with_field("f", vec![1.0; dims.len()]).unwrap();
        let l = label_components(&classify_isobands(&g, &IsobandSpec::new("f", vec![0.0, 2.0]).unwrap()).unwrap());
        let sites = vec![Site { position: [0.0, 0.0, 0.0], component: 0 }];
        let params = LloydParams { max_updates: 10, ds_tolerance: 1e-6 };
        let r = lrcvt_from_sites(&g, &l, &vec![1.0; dims.len()], sites, &params).unwrap();
        assert!(r.converged);
        assert!(r.trace.len() <= 3, "{:?}", r.trace);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.tessellation.sites[0].position, [7.0, 4.0, 0.0]);
    }

    #[test]
    fn spiral_settles_quickly() {
        let g = synth_field(SynthKind::Spiral, Dims::new(64, 64, 1), 3).unwrap();
        let l = label_components(
            &classify_isobands(&g, &IsobandSpec::new("f", default_iso(SynthKind::Spiral)).unwrap()).unwrap(),
        );
        let params = LrcvtParams {
            seeding: SeedingParams { alpha: 60.0, seed: 3, ..Default::default() },
            lloyd: LloydParams { max_updates: 10, ds_tolerance: 1e-3 },
        };
        let r = lrcvt(&g, &l, &params).unwrap();
        assert_eq!(r.tessellation.report.unassigned, 0);
        assert!(r.trace.iter().take(10).any(|&d| d < 0.5), "{:?}", r.trace);
    }
}
