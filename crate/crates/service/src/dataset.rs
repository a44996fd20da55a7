//! Immutable dataset shared by all sessions: labels, regions, aggregates and
//! the precomputed projections.

use serde::{Deserialize, Serialize};

use lrcvt_core::grid::{LabelMap, VoxelGrid, NONE};
use lrcvt_core::projection::{
    default_moment_recipe, embed, embed_features, featurize_moments, flags, DistanceMatrix, EmbedParams, Embedding2D, Method,
    ProjectedItem,
};
use lrcvt_core::sitegraph::{all_pairs_paths, fold_metric, region_adjacency};
use lrcvt_core::stats::{hierarchy_moments, BandwidthRule, GmmParams, HierarchyMoments, MomentAggregate, PlotSamples, DEFAULT_BINS};
use lrcvt_core::tessellation::Tessellation;
use lrcvt_core::{Error, Result};

use crate::selection::{Level, Nesting, Selection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Components and regions with fewer voxels are flagged gray.
    pub gray_threshold: usize,
    /// Default plot variables; the first two fields when unset.
    pub variables: Option<[String; 2]>,
    pub embed: EmbedParams,
    pub fold_c: f64,
    /// Feed `1 - d` instead of the fold metric `d` to the region embedding.
    pub invert_fold: bool,
    pub gmm: GmmParams,
    pub kde: BandwidthRule,
    pub bins: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            gray_threshold: 30,
            variables: None,
            embed: EmbedParams::default(),
            fold_c: 1.0,
            invert_fold: false,
            gmm: GmmParams::default(),
            kde: BandwidthRule::Scott,
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentNode {
    pub id: u32,
    pub voxel_count: usize,
    pub region_count: usize,
    pub gray: bool,
    pub mean: Option<[f64; 2]>,
    pub covariance: Option<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: u32,
    pub band: [f64; 2],
    pub voxel_count: u64,
    pub components: Vec<ComponentNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyTree {
    pub variables: [String; 2],
    pub layers: Vec<LayerNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub level: Level,
    pub method: Method,
    pub seed: u64,
    pub fallback: bool,
    pub items: Vec<ProjectedItem>,
}

pub struct Dataset {
    pub grid: VoxelGrid,
    pub labels: LabelMap,
    pub tessellation: Tessellation,
    pub config: ServiceConfig,
    pub variables: [String; 2],
    pub moments: HierarchyMoments,
    region_voxels: Vec<Vec<usize>>,
    component_regions: Vec<Vec<u32>>,
    component_voxels: Vec<Vec<usize>>,
    component_projection: Projection,
    region_projection: Projection,
}

fn single_or_embed(n: usize, f: impl FnOnce() -> Result<Embedding2D>, params: &EmbedParams) -> Result<Embedding2D> {
    match n {
        0 => Ok(Embedding2D { method: params.method, seed: params.seed, coords: Vec::new(), fallback: true }),
        1 => Ok(Embedding2D { method: params.method, seed: params.seed, coords: vec![[0.0; 2]], fallback: true }),
        _ => f(),
    }
}

impl Dataset {
    pub fn new(grid: VoxelGrid, labels: LabelMap, tessellation: Tessellation, config: ServiceConfig) -> Result<Self> {
        let variables = match &config.variables {
            Some(v) => v.clone(),
            None => {
                let names = grid.field_names();
                let first = names.first().ok_or_else(|| Error::InvalidGrid("volume has no fields".into()))?;
                [first.to_string(), names.get(1).unwrap_or(first).to_string()]
            }
        };
        let moments = hierarchy_moments(&grid, &labels, &tessellation, &variables[0], &variables[1])?;
        let region_voxels = tessellation.regions();
        let mut component_regions = vec![Vec::new(); labels.components.len()];
        for (s, site) in tessellation.sites.iter().enumerate() {
            component_regions[site.component as usize].push(s as u32);
        }
        let component_voxels = labels.voxels_by_component();

        let mut params = config.embed;
        let nc = labels.components.len();
        params.perplexity = params.perplexity_for(nc);
        let ids: Vec<u64> = (0..nc as u64).collect();
        let comp_embedding = single_or_embed(
            nc,
            || embed_features(&featurize_moments(&moments.components, &default_moment_recipe())?, &ids, &params),
            &params,
        )?;
        let layers: Vec<u32> = labels.components.iter().map(|c| c.layer).collect();
        let gray = |count: usize| if count < config.gray_threshold { flags::GRAY } else { 0 };
        let comp_flags: Vec<u32> = labels.components.iter().map(|c| gray(c.voxel_count)).collect();
        let component_projection = Projection {
            level: Level::Component,
            method: comp_embedding.method,
            seed: comp_embedding.seed,
            fallback: comp_embedding.fallback,
            items: comp_embedding.items(&ids, &layers, &comp_flags)?,
        };

        let ns = tessellation.sites.len();
        let mut params = config.embed;
        params.perplexity = params.perplexity_for(ns);
        let region_ids: Vec<u64> = (0..ns as u64).collect();
        let region_embedding = single_or_embed(
            ns,
            || {
                let graph = region_adjacency(&tessellation, &labels)?;
                let fold = fold_metric(&graph.positions, &all_pairs_paths(&graph)?, config.fold_c)?;
                embed(&DistanceMatrix::new(ns, fold.projection_input(config.invert_fold))?, &region_ids, &params)
            },
            &params,
        )?;
        let region_layers: Vec<u32> = tessellation.sites.iter().map(|s| labels.components[s.component as usize].layer).collect();
        let region_flags: Vec<u32> = region_voxels.iter().map(|r| gray(r.len())).collect();
        let region_projection = Projection {
            level: Level::Region,
            method: region_embedding.method,
            seed: region_embedding.seed,
            fallback: region_embedding.fallback,
            items: region_embedding.items(&region_ids, &region_layers, &region_flags)?,
        };

        Ok(Self {
            grid,
            labels,
            tessellation,
            config,
            variables,
            moments,
            region_voxels,
            component_regions,
            component_voxels,
            component_projection,
            region_projection,
        })
    }

    pub fn hierarchy(&self) -> HierarchyTree {
        let layers = (0..self.labels.layer_count())
            .map(|l| {
                let components = self
                    .labels
                    .components
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.layer == l as u32)
                    .map(|(id, c)| {
                        let agg = &self.moments.components[id];
                        ComponentNode {
                            id: id as u32,
                            voxel_count: c.voxel_count,
                            region_count: self.component_regions[id].len(),
                            gray: c.voxel_count < self.config.gray_threshold,
                            mean: agg.mean().ok(),
                            covariance: agg.covariance().ok(),
                        }
                    })
                    .collect();
                LayerNode {
                    id: l as u32,
                    band: [self.labels.iso_values[l], self.labels.iso_values[l + 1]],
                    voxel_count: self.moments.layers[l].n(),
                    components,
                }
            })
            .collect();
        HierarchyTree { variables: self.variables.clone(), layers }
    }

    pub fn projection(&self, level: Level) -> Option<&Projection> {
        match level {
            Level::Component => Some(&self.component_projection),
            Level::Region => Some(&self.region_projection),
            Level::Voxel => None,
        }
    }

    pub fn region_voxels(&self, region: u32) -> &[usize] {
        &self.region_voxels[region as usize]
    }

    pub fn component_regions(&self, component: u32) -> &[u32] {
        &self.component_regions[component as usize]
    }

    /// Voxels the selection covers at its deepest level; every in-band voxel
    /// when nothing is selected.
    pub fn selected_voxels(&self, sel: &Selection) -> Vec<usize> {
        let mut out: Vec<usize> = match sel.deepest() {
            Some(Level::Voxel) => sel.voxels.iter().map(|&v| v as usize).collect(),
            Some(Level::Region) => sel.regions.iter().flat_map(|&r| self.region_voxels[r as usize].iter().copied()).collect(),
            Some(Level::Component) => sel.components.iter().flat_map(|&c| self.component_voxels[c as usize].iter().copied()).collect(),
            None => (0..self.labels.component.len()).filter(|&v| self.labels.component[v] != NONE).collect(),
        };
        out.sort_unstable();
        out
    }

    /// Moments of the selection, merged from precomputed aggregates when the
    /// variables are the dataset's own.
    pub fn selected_moments(&self, sel: &Selection, x: &str, y: &str) -> Result<MomentAggregate> {
        if [x, y] == [self.variables[0].as_str(), self.variables[1].as_str()] {
            let merge = |parts: &mut dyn Iterator<Item = &MomentAggregate>| -> Result<MomentAggregate> {
                let mut acc = MomentAggregate::new(x, y);
                for p in parts {
                    acc.merge(p)?;
                }
                Ok(acc)
            };
            match sel.deepest() {
                Some(Level::Region) => return merge(&mut sel.regions.iter().map(|&r| &self.moments.regions[r as usize])),
                Some(Level::Component) => return merge(&mut sel.components.iter().map(|&c| &self.moments.components[c as usize])),
                None => return merge(&mut self.moments.layers.iter()),
                Some(Level::Voxel) => {}
            }
        }
        let (fx, fy) = (self.grid.field(x)?, self.grid.field(y)?);
        Ok(MomentAggregate::accumulate(x, y, self.selected_voxels(sel).into_iter().map(|v| [fx[v] as f64, fy[v] as f64])))
    }

    pub fn samples(&self, voxels: &[usize], x: &str, y: Option<&str>, z: Option<&str>) -> Result<PlotSamples> {
        let column = |name: &str| -> Result<Vec<f64>> {
            let f = self.grid.field(name)?;
            Ok(voxels.iter().map(|&v| f[v] as f64).collect())
        };
        Ok(PlotSamples { x: column(x)?, y: y.map(column).transpose()?, z: z.map(column).transpose()? })
    }
}

impl Nesting for Dataset {
    fn component_count(&self) -> usize {
        self.labels.components.len()
    }

    fn region_count(&self) -> usize {
        self.tessellation.sites.len()
    }

    fn voxel_known(&self, voxel: u64) -> bool {
        (voxel as usize) < self.labels.component.len() && self.labels.component[voxel as usize] != NONE
    }

    fn component_of_region(&self, region: u32) -> u32 {
        self.tessellation.sites[region as usize].component
    }

    fn region_of_voxel(&self, voxel: u64) -> Option<u32> {
        let s = *self.tessellation.site_of.get(voxel as usize)?;
        (s != NONE).then_some(s)
    }
}
