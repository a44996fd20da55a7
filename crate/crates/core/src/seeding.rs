//! Stratified, mass-weighted initial site distribution.
//!
//! Each component receives `n_c = max(⌈α·m(C,γ)/m(V,γ)⌉, 1)` sites, where
//! `m(X,γ) = Σ_{v∈X} m_v^γ` and `V` is the whole in-band set, so `α` acts as the
//! total site budget. The sites of a component are apportioned over the
//! axis-aligned blocks it overlaps by largest remainder, then placed at voxel
//! centers sampled without replacement with probability ∝ `m_v^γ`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridGeometry, LabelMap, VoxelGrid, NONE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedingParams {
    pub alpha: f64,
    pub gamma: f64,
    pub weight_field: Option<String>,
    pub block_size: usize,
    pub seed: u64,
}

impl Default for SeedingParams {
    fn default() -> Self {
        Self { alpha: 100.0, gamma: 1.0, weight_field: None, block_size: 16, seed: 0 }
    }
}

impl SeedingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.block_size == 0 {
            return Err(Error::InvalidParameter("block_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    /// World coordinates.
    pub position: [f64; 3],
    pub component: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMass {
    /// Linear index of the stratification block.
    pub block: usize,
    pub mass: f64,
    /// Member voxels in row-major order.
    pub voxels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMass {
    pub mass: f64,
    pub voxel_count: usize,
    /// Blocks in increasing block index.
    pub blocks: Vec<BlockMass>,
}

/// Per-voxel `m_v^γ`; out-of-band voxels get 0.
pub fn voxel_masses(grid: &VoxelGrid, labels: &LabelMap, params: &SeedingParams) -> Result<Vec<f64>> {
    let n = grid.dims().len();
    let weights = match &params.weight_field {
        Some(name) => Some(grid.field(name)?),
        None => None,
    };
    let mut out = vec![0.0; n];
    for i in 0..n {
        if labels.layer[i] == NONE {
            continue;
        }
        let w = weights.map_or(1.0, |w| w[i] as f64);
        if w < 0.0 {
            return Err(Error::NegativeWeight { voxel: i, value: w });
        }
        out[i] = w.powf(params.gamma);
    }
    Ok(out)
}

/// Component masses and their per-block breakdown.
pub fn component_masses(
    grid: &VoxelGrid,
    labels: &LabelMap,
    params: &SeedingParams,
) -> Result<Vec<ComponentMass>> {
    params.validate()?;
    let masses = voxel_masses(grid, labels, params)?;
    Ok(masses_from_voxels(labels, &masses, params.block_size))
}

pub fn masses_from_voxels(labels: &LabelMap, masses: &[f64], block_size: usize) -> Vec<ComponentMass> {
    let dims = labels.dims;
    let bs = block_size.max(1);
    let bdims = [dims.nx.div_ceil(bs), dims.ny.div_ceil(bs), dims.nz.div_ceil(bs)];
    let mut per: Vec<BTreeMap<usize, BlockMass>> = vec![BTreeMap::new(); labels.components.len()];
    for (i, &c) in labels.component.iter().enumerate() {
        if c == NONE {
            continue;
        }
        let p = dims.coords(i);
        let block = p[0] / bs + bdims[0] * (p[1] / bs + bdims[1] * (p[2] / bs));
        let entry = per[c as usize]
            .entry(block)
            .or_insert_with(|| BlockMass { block, mass: 0.0, voxels: Vec::new() });
        entry.mass += masses[i];
        entry.voxels.push(i);
    }
    per.into_iter()
        .map(|blocks| {
            let blocks: Vec<BlockMass> = blocks.into_values().collect();
            let mass = blocks.iter().map(|b| b.mass).sum();
            let voxel_count = blocks.iter().map(|b| b.voxels.len()).sum();
            ComponentMass { mass, voxel_count, blocks }
        })
        .collect()
}

/// `n_c = max(⌈α·m(C,γ)/m(V,γ)⌉, 1)` for every component.
pub fn sites_per_component(component_masses: &[f64], alpha: f64) -> Result<Vec<usize>> {
    let total: f64 = component_masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyDomain);
    }
    Ok(component_masses
        .iter()
        .map(|&m| {
            let x = alpha * m / total;
            let mut n = x.ceil();
            // Absorb rounding noise so exact integers are not bumped up.
            if n >= 1.0 && x - (n - 1.0) <= 1e-9 * x.max(1.0) {
                n -= 1.0;
            }
            (n as usize).max(1)
        })
        .collect())
}

/// Largest-remainder apportionment of `n` over `masses`.
///
/// Each entry gets `⌊n·m_i/Σm⌋`; leftovers go one each to the largest
/// fractional remainders, ties broken by lower index. Zero total mass
/// spreads everything as leftovers from index 0.
pub fn apportion(n: usize, masses: &[f64]) -> Vec<usize> {
    if masses.is_empty() {
        return Vec::new();
    }
    let total: f64 = masses.iter().sum();
    let fair: Vec<f64> = if total > 0.0 {
        masses.iter().map(|m| n as f64 * m / total).collect()
    } else {
        vec![0.0; masses.len()]
    };
    let mut counts: Vec<usize> = fair.iter().map(|f| f.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut leftover = n.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..masses.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (fair[a] - fair[a].floor(), fair[b] - fair[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut k = 0;
    while leftover > 0 {
        counts[order[k % order.len()]] += 1;
        leftover -= 1;
        k += 1;
    }
    counts
}

/// [`apportion`] with per-entry capacities; overflow moves to the most
/// underrepresented entries that still have room.
pub fn apportion_with_capacity(n: usize, masses: &[f64], capacity: &[usize]) -> Vec<usize> {
    let mut counts = apportion(n, masses);
    let total: f64 = masses.iter().sum();
    let mut excess = 0;
    for (c, &cap) in counts.iter_mut().zip(capacity) {
        if *c > cap {
            excess += *c - cap;
            *c = cap;
        }
    }
    while excess > 0 {
        let best = (0..counts.len())
            .filter(|&i| counts[i] < capacity[i])
            .max_by(|&a, &b| {
                let under = |i: usize| {
                    let fair = if total > 0.0 { n as f64 * masses[i] / total } else { 0.0 };
                    fair - counts[i] as f64
                };
                under(a).total_cmp(&under(b)).then(b.cmp(&a))
            });
        match best {
            Some(i) => {
                counts[i] += 1;
                excess -= 1;
            }
            None => break,
        }
    }
    counts
}

fn component_rng(seed: u64, component: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (component as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Weighted sampling of `k` distinct voxels (Efraimidis–Spirakis keys).
fn sample_without_replacement(
    voxels: &[usize],
    masses: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut keyed: Vec<(bool, f64, usize)> = voxels
        .iter()
        .map(|&v| {
            let u: f64 = 1.0 - rng.random::<f64>();
            let w = masses[v];
            if w > 0.0 {
                (true, u.ln() / w, v)
            } else {
                (false, u, v)
            }
        })
        .collect();
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut chosen: Vec<usize> = keyed.into_iter().take(k).map(|e| e.2).collect();
    chosen.sort_unstable();
    chosen
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedSites {
    pub sites: Vec<Site>,
    pub block_counts: Vec<usize>,
    /// Set when `n_c` exceeded the component voxel count.
    pub clamped_from: Option<usize>,
}

/// Place `n_c` sites in one component.
pub fn distribute_sites(
    geometry: &GridGeometry,
    component: u32,
    n_c: usize,
    mass: &ComponentMass,
    voxel_mass: &[f64],
    seed: u64,
) -> DistributedSites {
    let mut clamped_from = None;
    let mut n = n_c.max(1);
    if n > mass.voxel_count {
        clamped_from = Some(n);
        n = mass.voxel_count;
    }
    let block_masses: Vec<f64> = mass.blocks.iter().map(|b| b.mass).collect();
    let capacity: Vec<usize> = mass.blocks.iter().map(|b| b.voxels.len()).collect();
    let block_counts = apportion_with_capacity(n, &block_masses, &capacity);
    let mut rng = component_rng(seed, component);
    let mut sites = Vec::with_capacity(n);
    for (block, &count) in mass.blocks.iter().zip(&block_counts) {
        for v in sample_without_replacement(&block.voxels, voxel_mass, count, &mut rng) {
            sites.push(Site { position: geometry.position(v), component });
        }
    }
    DistributedSites { sites, block_counts, clamped_from }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Seeding {
    pub sites: Vec<Site>,
    /// Sites actually placed per component.
    pub per_component: Vec<usize>,
    /// `(component, requested, granted)` for clamped components.
    pub clamped: Vec<(u32, usize, usize)>,
}

/// Full stratified seeding over all components. Components run in parallel;
/// each has its own generator stream, so the result is order independent.
pub fn seed_sites(grid: &VoxelGrid, labels: &LabelMap, params: &SeedingParams) -> Result<Seeding> {
    params.validate()?;
    let voxel_mass = voxel_masses(grid, labels, params)?;
    let masses = masses_from_voxels(labels, &voxel_mass, params.block_size);
    if masses.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let totals: Vec<f64> = masses.iter().map(|m| m.mass).collect();
    let counts = sites_per_component(&totals, params.alpha)?;
    let geometry = grid.geometry();
    let placed: Vec<DistributedSites> = masses
        .par_iter()
        .enumerate()
        .map(|(c, m)| distribute_sites(&geometry, c as u32, counts[c], m, &voxel_mass, params.seed))
        .collect();
    let mut seeding = Seeding::default();
    for (c, d) in placed.into_iter().enumerate() {
        if let Some(req) = d.clamped_from {
            log::warn!("component {c}: {req} sites requested, clamped to {} voxels", d.sites.len());
            seeding.clamped.push((c as u32, req, d.sites.len()));
        }
        seeding.per_component.push(d.sites.len());
        seeding.sites.extend(d.sites);
    }
    Ok(seeding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{classify_isobands, label_components, Dims, IsobandSpec};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn labels_with(grid: &VoxelGrid, iso: Vec<f64>) -> LabelMap {
        label_components(&classify_isobands(grid, &IsobandSpec::new("f", iso).unwrap()).unwrap())
    }

    #[test]
    fn uniform_mass_is_voxel_count() {
        let g = VoxelGrid::new(Dims::new(40, 1, 1), [1.0; 3]).unwrap().with_field("f", vec![1.0; 40]).unwrap();
        let l = labels_with(&g, vec![0.0, 2.0]);
        let p = SeedingParams { block_size: 7, ..Default::default() };
        let m = component_masses(&g, &l, &p).unwrap();
        assert_eq!(m[0].mass, 40.0);
        assert_eq!(m[0].blocks.iter().map(|b| b.mass).sum::<f64>(), 40.0);
        assert_eq!(m[0].blocks.len(), 6);
    }

    #[test]
    fn gamma_powers() {
        let g = VoxelGrid::new(Dims::new(3, 1, 1), [1.0; 3])
            .unwrap()
            .with_field("f", vec![1.0; 3])
            .unwrap()
            .with_field("m", vec![1.0, 2.0, 3.0])
            .unwrap();
        let l = labels_with(&g, vec![0.0, 2.0]);
        let mut p = SeedingParams { weight_field: Some("m".into()), gamma: 2.0, ..Default::default() };
        assert_eq!(component_masses(&g, &l, &p).unwrap()[0].mass, 14.0);
        p.gamma = 0.0;
        assert_eq!(component_masses(&g, &l, &p).unwrap()[0].mass, 3.0);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let g = VoxelGrid::new(Dims::new(2, 1, 1), [1.0; 3])
            .unwrap()
            .with_field("f", vec![1.0; 2])
            .unwrap()
            .with_field("m", vec![1.0, -2.0])
            .unwrap();
        let l = labels_with(&g, vec![0.0, 2.0]);
        let p = SeedingParams { weight_field: Some("m".into()), ..Default::default() };
        assert!(matches!(component_masses(&g, &l, &p), Err(Error::NegativeWeight { voxel: 1, .. })));
    }

    #[test]
    fn site_counts() {
        assert_eq!(sites_per_component(&[75.0, 25.0], 100.0).unwrap(), vec![75, 25]);
        assert_eq!(sites_per_component(&[1.0, 1e6 - 1.0], 100.0).unwrap()[0], 1);
        assert_eq!(sites_per_component(&[5.0, 5.0, 5.0], 10.0).unwrap(), vec![4, 4, 4]);
        assert!(sites_per_component(&[0.0], 10.0).is_err());
    }

    #[test]
    fn largest_remainder_example() {
        // fair shares 2.6, 1.6, 0.8 for n = 5.
        assert_eq!(apportion(5, &[2.6, 1.6, 0.8]), vec![3, 1, 1]);
        assert_eq!(apportion(7, &[3.0]), vec![7]);
        assert_eq!(apportion(2, &[0.0, 0.0, 0.0]), vec![1, 1, 0]);
    }

    #[test]
    fn capacity_overflow_moves() {
        // Block 0 deserves everything but has a single voxel.
        assert_eq!(apportion_with_capacity(3, &[10.0, 1.0, 1.0], &[1, 5, 5]), vec![1, 1, 1]);
    }

    #[test]
    fn seeding_is_deterministic_and_distinct() {
        let g = crate::synth::synth_field(crate::synth::SynthKind::Rings, Dims::new(48, 48, 1), 3).unwrap();
        let l = labels_with(&g, vec![0.2, 0.4, 0.6, 0.8]);
        let p = SeedingParams { alpha: 60.0, block_size: 8, seed: 11, ..Default::default() };
        let a = seed_sites(&g, &l, &p).unwrap();
        let b = seed_sites(&g, &l, &p).unwrap();
        assert_eq!(a, b);
        let geo = g.geometry();
        let mut seen = HashSet::new();
        for s in &a.sites {
            let v = geo.voxel_at(s.position).unwrap();
            assert_eq!(l.component[v], s.component);
            assert!(seen.insert(v), "two sites share voxel {v}");
        }
        for (c, &n) in a.per_component.iter().enumerate() {
            assert!(n >= 1, "component {c} got no site");
        }
    }

    #[test]
    fn clamps_to_voxel_count() {
        let g = VoxelGrid::new(Dims::new(4, 1, 1), [1.0; 3]).unwrap().with_field("f", vec![1.0; 4]).unwrap();
        let l = labels_with(&g, vec![0.0, 2.0]);
        let p = SeedingParams { alpha: 10.0, ..Default::default() };
        let s = seed_sites(&g, &l, &p).unwrap();
        assert_eq!(s.sites.len(), 4);
        assert_eq!(s.clamped, vec![(0, 10, 4)]);
    }

    proptest! {
        #[test]
        fn apportion_bounds(n in 1usize..200, masses in prop::collection::vec(0.0f64..10.0, 1..12)) {
            prop_assume!(masses.iter().sum::<f64>() > 0.0);
            let counts = apportion(n, &masses);
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            let total: f64 = masses.iter().sum();
            for (c, m) in counts.iter().zip(&masses) {
                prop_assert!((*c as f64 - n as f64 * m / total).abs() < 1.0 + 1e-9);
            }
        }
    }
}
