//! Nested component → region → voxel selections and their set algebra.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Component,
    Region,
    Voxel,
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "component" => Ok(Level::Component),
            "region" => Ok(Level::Region),
            "voxel" => Ok(Level::Voxel),
            _ => Err(format!("unknown level `{s}`")),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Component => "component",
            Level::Region => "region",
            Level::Voxel => "voxel",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetOp {
    #[default]
    New,
    Union,
    Intersect,
    Difference,
}

/// Parent lookups the selection needs from a dataset.
pub trait Nesting {
    fn component_count(&self) -> usize;
    fn region_count(&self) -> usize;
    /// False for ids outside the volume or outside every band.
    fn voxel_known(&self, voxel: u64) -> bool;
    fn component_of_region(&self, region: u32) -> u32;
    /// Region of an in-band voxel, `None` if no site claimed it.
    fn region_of_voxel(&self, voxel: u64) -> Option<u32>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectionError {
    Unknown { level: Level, ids: Vec<u64> },
    /// Ids whose parent is not selected.
    Nesting { level: Level, ids: Vec<u64> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub components: BTreeSet<u32>,
    pub regions: BTreeSet<u32>,
    pub voxels: BTreeSet<u64>,
}

/// Child ids removed to keep the selection nested.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pruned {
    pub regions: Vec<u32>,
    pub voxels: Vec<u64>,
}

fn combine<T: Ord + Copy>(current: &BTreeSet<T>, ids: &BTreeSet<T>, op: SetOp) -> BTreeSet<T> {
    match op {
        SetOp::New => ids.clone(),
        SetOp::Union => current.union(ids).copied().collect(),
        SetOp::Intersect => current.intersection(ids).copied().collect(),
        SetOp::Difference => current.difference(ids).copied().collect(),
    }
}

impl Selection {
    pub fn is_empty(&self) -> bool {
        self.components.is_empty() && self.regions.is_empty() && self.voxels.is_empty()
    }

    /// Deepest level holding any ids.
    pub fn deepest(&self) -> Option<Level> {
        if !self.voxels.is_empty() {
            Some(Level::Voxel)
        } else if !self.regions.is_empty() {
            Some(Level::Region)
        } else if !self.components.is_empty() {
            Some(Level::Component)
        } else {
            None
        }
    }

    pub fn ids(&self, level: Level) -> Vec<u64> {
        match level {
            Level::Component => self.components.iter().map(|&c| c as u64).collect(),
            Level::Region => self.regions.iter().map(|&r| r as u64).collect(),
            Level::Voxel => self.voxels.iter().copied().collect(),
        }
    }

    /// Validates `ids`, applies `op` at `level` and prunes deeper levels.
    /// `new` and `union` may only add children of selected parents.
    pub fn apply(&mut self, nest: &impl Nesting, level: Level, ids: &[u64], op: SetOp) -> Result<Pruned, SelectionError> {
        let unknown: Vec<u64> = ids
            .iter()
            .copied()
            .filter(|&id| match level {
                Level::Component => id >= nest.component_count() as u64,
                Level::Region => id >= nest.region_count() as u64,
                Level::Voxel => !nest.voxel_known(id),
            })
            .collect();
        if !unknown.is_empty() {
            return Err(SelectionError::Unknown { level, ids: unknown });
        }
        let adds = matches!(op, SetOp::New | SetOp::Union);
        let orphans: Vec<u64> = match level {
            Level::Component => Vec::new(),
            Level::Region => ids.iter().copied().filter(|&r| !self.components.contains(&nest.component_of_region(r as u32))).collect(),
            Level::Voxel => ids
                .iter()
                .copied()
                .filter(|&v| nest.region_of_voxel(v).is_none_or(|r| !self.regions.contains(&r)))
                .collect(),
        };
        if adds && !orphans.is_empty() {
            return Err(SelectionError::Nesting { level, ids: orphans });
        }
        match level {
            Level::Component => {
                let ids: BTreeSet<u32> = ids.iter().map(|&i| i as u32).collect();
                self.components = combine(&self.components, &ids, op);
            }
            Level::Region => {
                let ids: BTreeSet<u32> = ids.iter().map(|&i| i as u32).collect();
                self.regions = combine(&self.regions, &ids, op);
            }
            Level::Voxel => {
                let ids: BTreeSet<u64> = ids.iter().copied().collect();
                self.voxels = combine(&self.voxels, &ids, op);
            }
        }
        Ok(self.prune(nest))
    }

    fn prune(&mut self, nest: &impl Nesting) -> Pruned {
        let regions: Vec<u32> = self.regions.iter().copied().filter(|&r| !self.components.contains(&nest.component_of_region(r))).collect();
        for r in &regions {
            self.regions.remove(r);
        }
        let voxels: Vec<u64> = self
            .voxels
            .iter()
            .copied()
            .filter(|&v| nest.region_of_voxel(v).is_none_or(|r| !self.regions.contains(&r)))
            .collect();
        for v in &voxels {
            self.voxels.remove(v);
        }
        Pruned { regions, voxels }
    }

    pub fn is_nested(&self, nest: &impl Nesting) -> bool {
        self.regions.iter().all(|&r| self.components.contains(&nest.component_of_region(r)))
            && self.voxels.iter().all(|&v| nest.region_of_voxel(v).is_some_and(|r| self.regions.contains(&r)))
    }
}
