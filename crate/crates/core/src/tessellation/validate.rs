//! Checks of a finished tessellation against the reference oracles.

use serde::{Deserialize, Serialize};

use super::oracle::{nearest_site_euclidean, nearest_site_geodesic};
use super::raycast::raycast_same_component;
use super::{Tessellation, SRC_SITE};
use crate::grid::{distance, LabelMap, NONE};

/// Distance slack for the upper bound of the sandwich check.
pub const SANDWICH_EPS: f64 = 1e-6;
/// Distances this close count as a tie when comparing nearest sites.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub assigned: usize,
    /// Assigned voxels whose site lies in another component.
    pub restriction_violations: usize,
    /// In-band voxels of seeded components left unassigned.
    pub unassigned: usize,
    /// Paths that do not end at a line-of-sight voxel of the same site.
    pub broken_paths: usize,
    /// Path segments that leave the component.
    pub blocked_segments: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub structure: StructureReport,
    pub compared: usize,
    /// Voxels whose site matches the oracle (exact ties count as matches).
    pub matches: usize,
    pub agreement: f64,
    /// Voxels with `dist < euclid(v, site)`.
    pub below_euclidean: usize,
    /// Voxels with `dist > graph distance + SANDWICH_EPS` (geodesic only).
    pub above_graph: usize,
    pub max_excess_over_graph: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        let s = &self.structure;
        s.restriction_violations == 0
            && s.unassigned == 0
            && s.broken_paths == 0
            && s.blocked_segments == 0
            && self.below_euclidean == 0
            && self.above_graph == 0
    }
}

/// Restriction and path-validity checks.
pub fn check_structure(tess: &Tessellation, labels: &LabelMap, check_segments: bool) -> StructureReport {
    let geo = tess.geometry;
    let mut seeded = vec![false; labels.components.len()];
    for s in &tess.sites {
        seeded[s.component as usize] = true;
    }
    let mut r = StructureReport::default();
    for v in 0..tess.site_of.len() {
        let c = labels.component[v];
        let s = tess.site_of[v];
        if s == NONE {
            if c != NONE && seeded[c as usize] {
                r.unassigned += 1;
            }
            continue;
        }
        r.assigned += 1;
        if tess.sites[s as usize].component != c {
            r.restriction_violations += 1;
        }
        let path = tess.path(v);
        let last = *path.last().unwrap();
        if tess.src[last] != SRC_SITE || tess.site_of[last] != s || path.len() > labels.components[c as usize].voxel_count {
            r.broken_paths += 1;
        }
        if check_segments {
            // Only the first hop: every voxel checks its own hop once.
            let ok = match tess.src[v] {
                SRC_SITE => raycast_same_component(&geo, &labels.component, geo.position(v), tess.sites[s as usize].position),
                u if u != NONE => raycast_same_component(&geo, &labels.component, geo.position(v), geo.position(u as usize)),
                _ => false,
            };
            if !ok {
                r.blocked_segments += 1;
            }
        }
    }
    r
}

fn compare(tess: &Tessellation, oracle_site: &[u32], oracle_dist: &[f64], report: &mut OracleReport, graph: bool) {
    let geo = tess.geometry;
    for v in 0..tess.site_of.len() {
        let s = tess.site_of[v];
        if s == NONE || oracle_site[v] == NONE {
            continue;
        }
        report.compared += 1;
        let own = distance(geo.position(v), tess.sites[s as usize].position);
        if tess.dist[v] < own - TIE_TOLERANCE {
            report.below_euclidean += 1;
        }
        if graph {
            let excess = tess.dist[v] - oracle_dist[v];
            report.max_excess_over_graph = report.max_excess_over_graph.max(excess);
            if excess > SANDWICH_EPS {
                report.above_graph += 1;
            }
        }
        // In the Euclidean case an equidistant site is an equally valid answer.
        let tie = !graph && (own - oracle_dist[v]).abs() <= TIE_TOLERANCE;
        if s == oracle_site[v] || tie {
            report.matches += 1;
        }
    }
    report.agreement = if report.compared == 0 { 1.0 } else { report.matches as f64 / report.compared as f64 };
}

/// Compare against the 26-neighbor graph oracle: the sandwich
/// `euclid(v, site) ≤ dist(v) ≤ graph(v) + ε` and the nearest-site agreement.
pub fn validate_against_dijkstra(tess: &Tessellation, labels: &LabelMap) -> OracleReport {
    let (site, dist) = nearest_site_geodesic(&tess.geometry, &labels.component, &tess.sites);
    let mut report = OracleReport { structure: check_structure(tess, labels, true), ..Default::default() };
    compare(tess, &site, &dist, &mut report, true);
    report
}

/// Compare against brute-force Euclidean nearest sites; exact on convex
/// components.
pub fn validate_against_euclidean(tess: &Tessellation, labels: &LabelMap) -> OracleReport {
    let (site, dist) = nearest_site_euclidean(&tess.geometry, &labels.component, &tess.sites);
    let mut report = OracleReport { structure: check_structure(tess, labels, true), ..Default::default() };
    compare(tess, &site, &dist, &mut report, false);
    report
}
