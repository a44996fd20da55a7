//! Reference solutions used to validate the classification.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::grid::{distance, GridGeometry, NEIGHBOR26, NONE};
use crate::seeding::Site;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Item {
    dist: f64,
    site: u32,
    voxel: usize,
}

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap.
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.site.cmp(&self.site))
            .then(other.voxel.cmp(&self.voxel))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(geometry: &GridGeometry, component: &[u32], sources: &[(usize, f64, u32)]) -> (Vec<u32>, Vec<f64>) {
    let dims = geometry.dims;
    let n = dims.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut owner = vec![NONE; n];
    let mut heap = BinaryHeap::new();
    for &(v, d, s) in sources {
        if component[v] == NONE {
            continue;
        }
        if d < dist[v] || (d == dist[v] && s < owner[v]) {
            dist[v] = d;
            owner[v] = s;
            heap.push(Item { dist: d, site: s, voxel: v });
        }
    }
    while let Some(Item { dist: d, site: s, voxel: v }) = heap.pop() {
        if d > dist[v] || s != owner[v] {
            continue;
        }
        let c = dims.coords(v);
        let pv = geometry.position(v);
        for off in NEIGHBOR26 {
            let Some(w) = dims.checked_index([c[0] as i64 + off[0], c[1] as i64 + off[1], c[2] as i64 + off[2]])
            else {
                continue;
            };
            if component[w] != component[v] {
                continue;
            }
            let nd = d + distance(pv, geometry.position(w));
            if nd < dist[w] || (nd == dist[w] && s < owner[w]) {
                dist[w] = nd;
                owner[w] = s;
                heap.push(Item { dist: nd, site: s, voxel: w });
            }
        }
    }
    (owner, dist)
}

/// Shortest-path distances from `source` over the 26-neighbor graph with
/// Euclidean edge weights, restricted to edges inside one component.
pub fn geodesic_oracle(geometry: &GridGeometry, component: &[u32], source: usize) -> Vec<f64> {
    dijkstra(geometry, component, &[(source, 0.0, 0)]).1
}

/// Graph distance from an off-center site: the segment to its voxel center,
/// then the 26-neighbor graph.
pub fn site_geodesic(geometry: &GridGeometry, component: &[u32], site: &Site) -> Vec<f64> {
    match geometry.voxel_at(site.position) {
        Some(g) => dijkstra(geometry, component, &[(g, distance(geometry.position(g), site.position), 0)]).1,
        None => vec![f64::INFINITY; geometry.dims.len()],
    }
}

/// Nearest site by graph distance (ties towards the lower id) and that
/// distance, for every voxel.
pub fn nearest_site_geodesic(geometry: &GridGeometry, component: &[u32], sites: &[Site]) -> (Vec<u32>, Vec<f64>) {
    let sources: Vec<(usize, f64, u32)> = sites
        .iter()
        .enumerate()
        .filter_map(|(s, site)| {
            let g = geometry.voxel_at(site.position)?;
            Some((g, distance(geometry.position(g), site.position), s as u32))
        })
        .collect();
    dijkstra(geometry, component, &sources)
}

/// Brute-force nearest site by Euclidean distance among the sites of each
/// voxel's component (ties towards the lower id).
pub fn nearest_site_euclidean(geometry: &GridGeometry, component: &[u32], sites: &[Site]) -> (Vec<u32>, Vec<f64>) {
    (0..geometry.dims.len())
        .into_par_iter()
        .map(|v| {
            let c = component[v];
            if c == NONE {
                return (NONE, f64::INFINITY);
            }
            let p = geometry.position(v);
            let mut best = (NONE, f64::INFINITY);
            for (s, site) in sites.iter().enumerate() {
                if site.component != c {
                    continue;
                }
                let d = distance(p, site.position);
                if d < best.1 {
                    best = (s as u32, d);
                }
            }
            best
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;

    #[test]
    fn corridor_length() {
        let dims = Dims::new(10, 1, 1);
        let geo = GridGeometry { dims, spacing: [0.5, 1.0, 1.0] };
        let d = geodesic_oracle(&geo, &[0; 10], 0);
        assert!((d[9] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn u_tip_to_tip_follows_arms() {
        // Arms of height 10 at x=0 and x=6, base row y=0.
        let dims = Dims::new(7, 11, 1);
        let mut comp = vec![NONE; dims.len()];
        for y in 0..11 {
            comp[dims.index(0, y, 0)] = 0;
            comp[dims.index(6, y, 0)] = 0;
        }
        for x in 0..7 {
            comp[dims.index(x, 0, 0)] = 0;
        }
        let geo = GridGeometry { dims, spacing: [1.0; 3] };
        let d = geodesic_oracle(&geo, &comp, dims.index(0, 10, 0));
        let tip = d[dims.index(6, 10, 0)];
        // Down 9, two diagonals around the corners, across 4, up 9.
        let expected = 9.0 + 2.0 * 2f64.sqrt() + 4.0 + 9.0;
        assert!((tip - expected).abs() < 1e-9, "{tip}");
        assert!(tip > 3.0 * 6.0);
    }

    #[test]
    fn disconnected_is_infinite() {
        let dims = Dims::new(5, 1, 1);
        let comp = vec![0, 0, NONE, 1, 1];
        let geo = GridGeometry { dims, spacing: [1.0; 3] };
        let d = geodesic_oracle(&geo, &comp, 0);
        assert!(d[1].is_finite() && d[3].is_infinite() && d[2].is_infinite());
    }
}
