//! Site adjacency, restricted all-pairs path lengths and the fold metric.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{distance, LabelMap, NONE};
use crate::seeding::Site;
use crate::tessellation::Tessellation;

/// Sites as nodes; an edge joins two sites whose regions share a voxel face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteGraph {
    pub positions: Vec<[f64; 3]>,
    pub component_of: Vec<u32>,
    /// `(i, j, weight)` with `i < j`, sorted.
    pub edges: Vec<(u32, u32, f64)>,
    /// Neighbor lists sorted by id.
    pub adjacency: Vec<Vec<(u32, f64)>>,
}

impl SiteGraph {
    pub fn from_edges(sites: &[Site], pairs: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let n = sites.len();
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a as usize >= n || b as usize >= n {
                return Err(Error::InvalidParameter(format!("edge ({a}, {b}) out of range")));
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut edges = Vec::with_capacity(set.len());
        for (a, b) in set {
            let w = distance(sites[a as usize].position, sites[b as usize].position);
            edges.push((a, b, w));
            adjacency[a as usize].push((b, w));
            adjacency[b as usize].push((a, w));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|e| e.0);
        }
        Ok(Self {
            positions: sites.iter().map(|s| s.position).collect(),
            component_of: sites.iter().map(|s| s.component).collect(),
            edges,
            adjacency,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Site ids of every component that has sites, ascending.
    pub fn components(&self) -> Vec<(u32, Vec<u32>)> {
        let mut map: std::collections::BTreeMap<u32, Vec<u32>> = Default::default();
        for (s, &c) in self.component_of.iter().enumerate() {
            map.entry(c).or_default().push(s as u32);
        }
        map.into_iter().collect()
    }
}

/// Face adjacency of the Voronoi regions within each component.
pub fn region_adjacency(tess: &Tessellation, labels: &LabelMap) -> Result<SiteGraph> {
    let dims = tess.geometry.dims;
    if labels.component.len() != dims.len() {
        return Err(Error::InvalidGrid("labels and tessellation sizes differ".into()));
    }
    let strides = [1, dims.nx, dims.nx * dims.ny];
    let extents = [dims.nx, dims.ny, dims.nz];
    let pairs: BTreeSet<(u32, u32)> = (0..dims.nz)
        .into_par_iter()
        .map(|z| {
            let mut local = BTreeSet::new();
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let v = dims.index(x, y, z);
                    let s = tess.site_of[v];
                    if s == NONE {
                        continue;
                    }
                    let c = [x, y, z];
                    for a in 0..3 {
                        if c[a] + 1 >= extents[a] {
                            continue;
                        }
                        let w = v + strides[a];
                        let t = tess.site_of[w];
                        if t != NONE && t != s && labels.component[w] == labels.component[v] {
                            local.insert((s.min(t), s.max(t)));
                        }
                    }
                }
            }
            local
        })
        .reduce(BTreeSet::new, |mut a, b| {
            a.extend(b);
            a
        });
    SiteGraph::from_edges(&tess.sites, pairs)
}

/// Dense path-length matrix of one component's sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPaths {
    pub component: u32,
    pub sites: Vec<u32>,
    /// Row-major `sites.len()²`; infinite when unreachable.
    pub dist: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDistances {
    pub site_count: usize,
    pub components: Vec<ComponentPaths>,
    /// `(component slot, local index)` of every site.
    locate: Vec<(u32, u32)>,
}

impl PathDistances {
    /// Path length between two sites; infinite across components.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (ci, li) = self.locate[i];
        let (cj, lj) = self.locate[j];
        if ci != cj {
            return f64::INFINITY;
        }
        let c = &self.components[ci as usize];
        c.dist[li as usize * c.sites.len() + lj as usize]
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.site_count;
        let mut out = vec![f64::INFINITY; n * n];
        for c in &self.components {
            let k = c.sites.len();
            for (a, &i) in c.sites.iter().enumerate() {
                for (b, &j) in c.sites.iter().enumerate() {
                    out[i as usize * n + j as usize] = c.dist[a * k + b];
                }
            }
        }
        out
    }
}

#[derive(PartialEq)]
struct Item(f64, u32);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(graph: &SiteGraph, source: u32, local: &[u32], k: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; k];
    let mut heap = BinaryHeap::new();
    dist[local[source as usize] as usize] = 0.0;
    heap.push(Item(0.0, source));
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[local[u as usize] as usize] {
            continue;
        }
        for &(v, w) in &graph.adjacency[u as usize] {
            let nd = d + w;
            let slot = &mut dist[local[v as usize] as usize];
            if nd < *slot {
                *slot = nd;
                heap.push(Item(nd, v));
            }
        }
    }
    dist
}

/// Shortest path lengths between all site pairs: Dijkstra from every source,
/// parallel over components and sources.
pub fn all_pairs_paths(graph: &SiteGraph) -> Result<PathDistances> {
    for &(a, b, w) in &graph.edges {
        if !(w >= 0.0) || graph.component_of[a as usize] != graph.component_of[b as usize] {
            return Err(Error::InvalidParameter(format!("edge ({a}, {b}) has weight {w} or crosses components")));
        }
    }
    let n = graph.len();
    let groups = graph.components();
    let mut local = vec![0u32; n];
    let mut locate = vec![(0u32, 0u32); n];
    for (slot, (_, sites)) in groups.iter().enumerate() {
        for (i, &s) in sites.iter().enumerate() {
            local[s as usize] = i as u32;
            locate[s as usize] = (slot as u32, i as u32);
        }
    }
    let components = groups
        .par_iter()
        .map(|(c, sites)| {
            let k = sites.len();
            let rows: Vec<Vec<f64>> = sites.par_iter().map(|&s| dijkstra(graph, s, &local, k)).collect();
            ComponentPaths { component: *c, sites: sites.clone(), dist: rows.concat() }
        })
        .collect();
    Ok(PathDistances { site_count: n, components, locate })
}

/// Dense Floyd–Warshall over the whole graph; reference for tests.
pub fn floyd_warshall(graph: &SiteGraph) -> Vec<f64> {
    let n = graph.len();
    let mut d = vec![f64::INFINITY; n * n];
    for i in 0..n {
        d[i * n + i] = 0.0;
    }
    for &(a, b, w) in &graph.edges {
        let (a, b) = (a as usize, b as usize);
        d[a * n + b] = d[a * n + b].min(w);
        d[b * n + a] = d[b * n + a].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            let dik = d[i * n + k];
            if dik == f64::INFINITY {
                continue;
            }
            for j in 0..n {
                let cand = dik + d[k * n + j];
                if cand < d[i * n + j] {
                    d[i * n + j] = cand;
                }
            }
        }
    }
    d
}

/// `d(i, j) = ‖x_i − x_j‖ / gd(i, j)` for connected pairs, `c` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetric {
    pub n: usize,
    pub c: f64,
    /// Row-major `n²`.
    pub values: Vec<f64>,
}

impl FoldMetric {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Matrix handed to the projection: `d` itself, or `1 − d` when inverted.
    pub fn projection_input(&self, invert: bool) -> Vec<f64> {
        if !invert {
            return self.values.clone();
        }
        (0..self.n * self.n)
            .map(|k| if k / self.n == k % self.n { 0.0 } else { 1.0 - self.values[k] })
            .collect()
    }
}

pub fn fold_metric(positions: &[[f64; 3]], paths: &PathDistances, c: f64) -> Result<FoldMetric> {
    if !(c >= 1.0) || !c.is_finite() {
        return Err(Error::InvalidParameter(format!("fold constant c = {c} must be finite and ≥ 1")));
    }
    let n = positions.len();
    if paths.site_count != n {
        return Err(Error::InvalidParameter(format!("{} positions for {} sites", n, paths.site_count)));
    }
    let values = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j {
                return 0.0;
            }
            let gd = paths.get(i, j);
            if !gd.is_finite() {
                c
            } else if gd == 0.0 {
                1.0
            } else {
                distance(positions[i], positions[j]) / gd
            }
        })
        .collect();
    Ok(FoldMetric { n, c, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sites(pos: &[[f64; 3]], comp: &[u32]) -> Vec<Site> {
        pos.iter().zip(comp).map(|(&position, &component)| Site { position, component }).collect()
    }

    #[test]
    fn chain_adds_up() {
        let s = sites(&[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [3.0, 4.0, 0.0]], &[0, 0, 0]);
        let g = SiteGraph::from_edges(&s, [(0, 1), (2, 1)]).unwrap();
        let p = all_pairs_paths(&g).unwrap();
        assert_eq!(p.get(0, 2), 7.0);
        let f = fold_metric(&g.positions, &p, 1.0).unwrap();
        assert!((f.get(0, 2) - 5.0 / 7.0).abs() < 1e-15);
        assert_eq!(f.get(0, 1), 1.0);
        assert_eq!(f.get(1, 1), 0.0);
    }

    #[test]
    fn single_node_and_disconnected() {
        let s = sites(&[[0.0; 3]], &[0]);
        let p = all_pairs_paths(&SiteGraph::from_edges(&s, []).unwrap()).unwrap();
        assert_eq!(p.to_dense(), vec![0.0]);
        let s = sites(&[[0.0; 3], [1.0, 0.0, 0.0]], &[0, 1]);
        let g = SiteGraph::from_edges(&s, []).unwrap();
        let p = all_pairs_paths(&g).unwrap();
        assert_eq!(p.get(0, 1), f64::INFINITY);
        assert_eq!(fold_metric(&g.positions, &p, 2.5).unwrap().get(1, 0), 2.5);
        assert!(fold_metric(&g.positions, &p, 0.5).is_err());
    }

    #[test]
    fn inverted_input() {
        let s = sites(&[[0.0; 3], [1.0, 0.0, 0.0]], &[0, 0]);
        let g = SiteGraph::from_edges(&s, [(0, 1)]).unwrap();
        let f = fold_metric(&g.positions, &all_pairs_paths(&g).unwrap(), 1.0).unwrap();
        assert_eq!(f.projection_input(true), vec![0.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.projection_input(false), vec![0.0, 1.0, 1.0, 0.0]);
    }
}
