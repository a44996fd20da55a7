use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::raycast::segment_clear;
use super::{Tessellation, VoxelState, SRC_SITE};
use crate::error::{Error, Result};
use crate::grid::{distance, GridGeometry, LabelMap, Neighborhood, NEIGHBOR26, NONE};
use crate::seeding::Site;

/// Minimum decrease that counts as a better path.
const IMPROVE_EPS: f64 = 1e-9;
/// Distances this close are ties, resolved towards the lower site id.
const TIE_EPS: f64 = 1e-12;
/// A site nearest to a voxel is within two neighbor steps of the owner's
/// distance at each of its neighbors; runner-ups are kept with some slack
/// beyond that.
const RUNNER_MARGIN_STEPS: f64 = 3.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub line_of_sight_rounds: usize,
    pub node_rounds: usize,
    /// Voxel evaluations over both phases.
    pub evaluations: usize,
    /// Components without any site; their voxels stay unassigned.
    pub skipped_components: Vec<u32>,
    /// Sites whose nearest voxel was claimed by a closer site.
    pub shadowed_sites: Vec<u32>,
    pub unassigned: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    site: u32,
    dist: f64,
    src: u32,
    /// Best line-of-sight site other than `site`, passed on to neighbors so
    /// that sites with thin cells still reach all of their voxels.
    runner: u32,
}

impl Entry {
    #[inline]
    fn loses_to(&self, dist: f64, site: u32) -> bool {
        dist < self.dist - IMPROVE_EPS || (site < self.site && (dist - self.dist).abs() <= TIE_EPS)
    }
}

struct Grid<'a> {
    geometry: GridGeometry,
    component: &'a [u32],
    site_world: Vec<[f64; 3]>,
    site_index: Vec<[f64; 3]>,
    neighbors: Neighborhood,
    /// Runner-up sites farther than this beyond the owner are dropped.
    runner_margin: f64,
}

struct State {
    cells: Vec<Entry>,
}

impl State {
    #[inline]
    fn entry(&self, v: usize) -> Entry {
        self.cells[v]
    }
}

/// Small fixed-capacity set of ids whose ray was already found blocked.
struct Blocked {
    ids: [u32; 16],
    len: usize,
}

impl Blocked {
    fn new() -> Self {
        Self { ids: [0; 16], len: 0 }
    }

    #[inline]
    fn contains(&self, id: u32) -> bool {
        self.ids[..self.len].contains(&id)
    }

    #[inline]
    fn insert(&mut self, id: u32) {
        if self.len < self.ids.len() {
            self.ids[self.len] = id;
            self.len += 1;
        }
    }
}

/// The two nearest line-of-sight sites seen so far, ordered by (dist, id).
struct TopTwo {
    best: [(f64, u32); 2],
}

impl TopTwo {
    fn new() -> Self {
        Self { best: [(f64::INFINITY, NONE); 2] }
    }

    #[inline]
    fn contains(&self, s: u32) -> bool {
        self.best[0].1 == s || self.best[1].1 == s
    }

    #[inline]
    fn accepts(&self, d: f64, s: u32) -> bool {
        (d, s) < self.best[1]
    }

    #[inline]
    fn offer(&mut self, d: f64, s: u32) {
        if (d, s) < self.best[0] {
            self.best[1] = self.best[0];
            self.best[0] = (d, s);
        } else if (d, s) < self.best[1] {
            self.best[1] = (d, s);
        }
    }
}

#[inline]
fn index_coords(geometry: &GridGeometry, v: usize) -> [f64; 3] {
    let c = geometry.dims.coords(v);
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

fn evaluate(grid: &Grid, state: &State, v: usize, line_of_sight_only: bool) -> Entry {
    let geo = &grid.geometry;
    let dims = geo.dims;
    let comp = grid.component[v];
    let pv = geo.position(v);
    let qv = index_coords(geo, v);

    let current = state.entry(v);
    let mut best = current;
    let mut visible = TopTwo::new();
    match current.src {
        SRC_SITE => visible.offer(current.dist, current.site),
        u if u != NONE => {
            let u = u as usize;
            best.site = state.cells[u].site;
            best.dist = distance(pv, geo.position(u)) + state.cells[u].dist;
        }
        _ => {}
    }
    if current.runner != NONE {
        visible.offer(distance(pv, grid.site_world[current.runner as usize]), current.runner);
    }

    let mut blocked_sites = Blocked::new();
    let mut blocked_nodes = Blocked::new();
    grid.neighbors.for_each(v, |w, off| {
        if grid.component[w] != comp {
            return;
        }
        let cell = &state.cells[w];
        // Everything this neighbor could offer is already known.
        if line_of_sight_only && cell.site == current.site && cell.runner == current.runner {
            return;
        }
        let sw = cell.src;
        // Path (v, P_w): adjacent voxels of one component need no ray.
        if !line_of_sight_only && cell.site != NONE {
            let cand = off.length + cell.dist;
            if best.loses_to(cand, cell.site) {
                best = Entry { site: cell.site, dist: cand, src: w as u32, runner: NONE };
            }
        }
        // Straight paths to the sites the neighbor sees, validated by a ray.
        let offered = [if sw == SRC_SITE { cell.site } else { NONE }, cell.runner];
        for s in offered {
            if s == NONE || visible.contains(s) || blocked_sites.contains(s) {
                continue;
            }
            let cand = distance(pv, grid.site_world[s as usize]);
            if visible.accepts(cand, s) {
                if segment_clear(dims, grid.component, comp, qv, grid.site_index[s as usize]) {
                    visible.offer(cand, s);
                } else {
                    blocked_sites.insert(s);
                }
            }
        }
        // Path (v, P_src(w)), validated by a ray.
        if !line_of_sight_only && sw < SRC_SITE {
            let u = sw as usize;
            let s = state.cells[u].site;
            let cand = distance(pv, geo.position(u)) + state.cells[u].dist;
            if best.loses_to(cand, s) && !blocked_nodes.contains(sw) {
                if segment_clear(dims, grid.component, comp, qv, index_coords(geo, u)) {
                    best = Entry { site: s, dist: cand, src: sw, runner: NONE };
                } else {
                    blocked_nodes.insert(sw);
                }
            }
        }
    });
    let (d0, s0) = visible.best[0];
    if s0 != NONE && (best.site == NONE || best.loses_to(d0, s0) || (best.src == SRC_SITE && best.site == s0)) {
        best = Entry { site: s0, dist: d0, src: SRC_SITE, runner: NONE };
    }
    best.runner = visible
        .best
        .iter()
        .find(|e| e.1 != best.site && e.0 <= best.dist + grid.runner_margin)
        .map_or(NONE, |e| e.1);
    best
}

/// Run double-buffered rounds until no voxel finds a better path.
fn grow(grid: &Grid, state: &mut State, domain: &[u32], mut dirty: Vec<u32>, line_of_sight_only: bool) -> (usize, usize) {
    let dims = grid.geometry.dims;
    let n = dims.len();
    let cap = domain.len() + 16;
    let mut changed = vec![false; n];
    let mut mark = vec![false; n];
    let (mut rounds, mut evaluations) = (0, 0);
    while !dirty.is_empty() {
        rounds += 1;
        evaluations += dirty.len();
        if rounds > cap {
            log::warn!("region growing stopped after {cap} rounds without converging");
            break;
        }
        let updates: Vec<(u32, Entry, bool)> = {
            let snapshot: &State = state;
            dirty
                .par_iter()
                .filter_map(|&v| {
                    let v = v as usize;
                    let old = snapshot.entry(v);
                    let new = evaluate(grid, snapshot, v, line_of_sight_only);
                    let counted = new.site != old.site
                        || new.src != old.src
                        || new.runner != old.runner
                        || new.dist < old.dist - IMPROVE_EPS;
                    let written = counted || new.dist.to_bits() != old.dist.to_bits();
                    written.then_some((v as u32, new, counted))
                })
                .collect()
        };
        let mut any = false;
        for &(v, e, counted) in &updates {
            let v = v as usize;
            state.cells[v] = e;
            if counted {
                changed[v] = true;
                any = true;
            }
        }
        if !any {
            break;
        }
        let mut next = Vec::new();
        for &(v, e, counted) in &updates {
            if !counted {
                continue;
            }
            let v = v as usize;
            grid.neighbors.for_each(v, |w, _| {
                if grid.component[w] != grid.component[v] || mark[w] {
                    return;
                }
                // Line-of-sight offers are (site, runner); a neighbor that
                // already holds both learns nothing.
                let cell = &state.cells[w];
                if line_of_sight_only && cell.site == e.site && cell.runner == e.runner {
                    return;
                }
                mark[w] = true;
                next.push(w as u32);
            });
        }
        if !line_of_sight_only {
            // Voxels whose path runs through a changed predecessor.
            let snapshot: &State = state;
            let (changed_ref, mark_ref) = (&changed, &mark);
            let dependents: Vec<u32> = domain
                .par_iter()
                .copied()
                .filter(|&v| {
                    let s = snapshot.cells[v as usize].src;
                    !mark_ref[v as usize] && s < SRC_SITE && changed_ref[s as usize]
                })
                .collect();
            next.extend(dependents);
        }
        next.par_sort_unstable();
        for &v in &next {
            mark[v as usize] = false;
        }
        for &(v, _, _) in &updates {
            changed[v as usize] = false;
        }
        dirty = next;
    }
    (rounds, evaluations)
}

/// Restricted geodesic Voronoi classification of every in-band voxel whose
/// component holds at least one site.
pub fn voronoi_classify(geometry: &GridGeometry, labels: &LabelMap, sites: &[Site]) -> Result<Tessellation> {
    let dims = geometry.dims;
    let n = dims.len();
    if labels.dims != dims {
        return Err(Error::InvalidParameter("label map and geometry dims differ".into()));
    }
    let mut generators = Vec::with_capacity(sites.len());
    for (s, site) in sites.iter().enumerate() {
        let g = geometry.voxel_at(site.position).filter(|&g| labels.component[g] == site.component);
        match g {
            Some(g) => generators.push(g),
            None => {
                return Err(Error::InvalidParameter(format!(
                    "site {s} at {:?} is not inside component {}",
                    site.position, site.component
                )))
            }
        }
    }

    let mut has_site = vec![false; labels.components.len()];
    for s in sites {
        has_site[s.component as usize] = true;
    }
    let skipped_components: Vec<u32> = has_site
        .iter()
        .enumerate()
        .filter_map(|(c, &h)| (!h).then_some(c as u32))
        .collect();
    for c in &skipped_components {
        log::warn!("component {c} has no sites; skipped");
    }
    let domain: Vec<u32> = (0..n)
        .filter(|&v| labels.component[v] != NONE && has_site[labels.component[v] as usize])
        .map(|v| v as u32)
        .collect();

    let grid = Grid {
        geometry: *geometry,
        component: &labels.component,
        site_world: sites.iter().map(|s| s.position).collect(),
        site_index: sites.iter().map(|s| geometry.to_index_space(s.position)).collect(),
        neighbors: Neighborhood::new(geometry),
        runner_margin: RUNNER_MARGIN_STEPS * distance(geometry.spacing, [0.0; 3]),
    };
    let mut state = State { cells: vec![Entry { site: NONE, dist: f64::INFINITY, src: NONE, runner: NONE }; n] };

    for (s, &g) in generators.iter().enumerate() {
        let d = distance(geometry.position(g), sites[s].position);
        if state.entry(g).loses_to(d, s as u32) || state.cells[g].site == NONE {
            state.cells[g].site = s as u32;
            state.cells[g].dist = d;
            state.cells[g].src = SRC_SITE;
        }
    }
    let shadowed_sites: Vec<u32> = generators
        .iter()
        .enumerate()
        .filter_map(|(s, &g)| (state.cells[g].site != s as u32).then_some(s as u32))
        .collect();
    // A shadowed site is offered as runner-up around its voxel so that it can
    // still claim the voxels nearest to it.
    for &s in &shadowed_sites {
        let g = generators[s as usize];
        let c = dims.coords(g);
        let comp = labels.component[g];
        let offsets = std::iter::once([0i64; 3]).chain(NEIGHBOR26);
        for off in offsets {
            let Some(w) = dims.checked_index([c[0] as i64 + off[0], c[1] as i64 + off[1], c[2] as i64 + off[2]])
            else {
                continue;
            };
            if labels.component[w] != comp || state.cells[w].site == s {
                continue;
            }
            let pw = geometry.position(w);
            let d = distance(pw, sites[s as usize].position);
            let r = state.cells[w].runner;
            let better = r == NONE || (d, s) < (distance(pw, sites[r as usize].position), r);
            if better
                && segment_clear(dims, &labels.component, comp, index_coords(geometry, w), grid.site_index[s as usize])
            {
                state.cells[w].runner = s;
            }
        }
    }

    let mut seed_mark = vec![false; n];
    for &g in &generators {
        let c = dims.coords(g);
        for off in NEIGHBOR26 {
            if let Some(w) = dims.checked_index([c[0] as i64 + off[0], c[1] as i64 + off[1], c[2] as i64 + off[2]]) {
                if labels.component[w] == labels.component[g] {
                    seed_mark[w] = true;
                }
            }
        }
    }
    let dirty: Vec<u32> = domain.iter().copied().filter(|&v| seed_mark[v as usize]).collect();
    drop(seed_mark);

    let (line_of_sight_rounds, los_evaluations) = grow(&grid, &mut state, &domain, dirty, true);
    // After the line-of-sight phase only voxels on a region frontier (or still
    // unassigned) can find a shorter path.
    let frontier: Vec<u32> = domain
        .par_iter()
        .copied()
        .filter(|&v| {
            let v = v as usize;
            let s = state.cells[v].site;
            if s == NONE {
                return true;
            }
            let c = dims.coords(v);
            NEIGHBOR26.iter().any(|off| {
                dims.checked_index([c[0] as i64 + off[0], c[1] as i64 + off[1], c[2] as i64 + off[2]])
                    .is_some_and(|w| labels.component[w] == labels.component[v] && state.cells[w].site != s)
            })
        })
        .collect();
    let (node_rounds, node_evaluations) = grow(&grid, &mut state, &domain, frontier, false);

    // Recompute exact path lengths along the final src forest; predecessors
    // always have strictly smaller distance, so ascending order suffices.
    let mut order: Vec<u32> = domain.iter().copied().filter(|&v| state.cells[v as usize].site != NONE).collect();
    order.par_sort_by(|&a, &b| state.cells[a as usize].dist.total_cmp(&state.cells[b as usize].dist).then(a.cmp(&b)));
    for &v in &order {
        let v = v as usize;
        let pv = geometry.position(v);
        match state.cells[v].src {
            SRC_SITE => state.cells[v].dist = distance(pv, sites[state.cells[v].site as usize].position),
            u => {
                let u = u as usize;
                state.cells[v].site = state.cells[u].site;
                state.cells[v].dist = distance(pv, geometry.position(u)) + state.cells[u].dist;
            }
        }
    }

    let mut unassigned = 0;
    let mut flags = vec![VoxelState::empty(); n];
    for &v in &domain {
        let v = v as usize;
        if state.cells[v].site == NONE {
            unassigned += 1;
            continue;
        }
        let mut f = VoxelState::ACTIVE | VoxelState::NODE;
        if state.cells[v].src == SRC_SITE {
            f |= VoxelState::LOS;
        }
        flags[v] = f;
    }

    Ok(Tessellation {
        geometry: *geometry,
        sites: sites.to_vec(),
        site_of: state.cells.iter().map(|e| e.site).collect(),
        dist: state.cells.iter().map(|e| e.dist).collect(),
        src: state.cells.iter().map(|e| e.src).collect(),
        state: flags,
        report: ClassifyReport {
            line_of_sight_rounds,
            node_rounds,
            evaluations: los_evaluations + node_evaluations,
            skipped_components,
            shadowed_sites,
            unassigned,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{classify_isobands, label_components, Dims, IsobandSpec, VoxelGrid};
    use crate::tessellation::raycast::raycast_same_component;

    fn mask_labels(dims: Dims, inside: impl Fn(usize, usize, usize) -> bool) -> (VoxelGrid, LabelMap) {
        let mut v = vec![0.0f32; dims.len()];
        for i in 0..dims.len() {
            let c = dims.coords(i);
            if inside(c[0], c[1], c[2]) {
                v[i] = 1.0;
            }
        }
        let g = VoxelGrid::new(dims, [1.0; 3]).unwrap().with_field("f", v).unwrap();
        let l = label_components(&classify_isobands(&g, &IsobandSpec::new("f", vec![0.5, 1.5]).unwrap()).unwrap());
        (g, l)
    }

    #[test]
    fn single_site_convex_is_euclidean() {
        let (g, l) = mask_labels(Dims::new(20, 12, 1), |_, _, _| true);
        let sites = [Site { position: [4.0, 7.0, 0.0], component: 0 }];
        let t = voronoi_classify(&g.geometry(), &l, &sites).unwrap();
        for v in 0..g.dims().len() {
            assert_eq!(t.site_of[v], 0);
            let e = distance(g.geometry().position(v), sites[0].position);
            assert!((t.dist[v] - e).abs() < 1e-12);
            assert!(t.state[v].contains(VoxelState::LOS));
        }
        // Nothing is left for the node phase once every voxel sees its site.
        assert_eq!(t.report.node_rounds, 0);
    }

    #[test]
    fn u_shape_paths_wrap_around() {
        // Arms x in 0..3 and 9..12, base y in 0..3, height 16.
        let (g, l) = mask_labels(Dims::new(12, 16, 1), |x, y, _| x < 3 || x >= 9 || y < 3);
        let sites = [Site { position: [1.0, 15.0, 0.0], component: 0 }];
        let t = voronoi_classify(&g.geometry(), &l, &sites).unwrap();
        let geo = g.geometry();
        let far = geo.dims.index(10, 15, 0);
        assert_eq!(t.site_of[far], 0);
        assert!(!t.state[far].contains(VoxelState::LOS));
        // Must go down one arm and up the other.
        assert!(t.dist[far] > 2.0 * 12.0, "{}", t.dist[far]);
        for v in 0..geo.dims.len() {
            if l.component[v] == NONE {
                assert_eq!(t.site_of[v], NONE);
                continue;
            }
            let path = t.path(v);
            let last = *path.last().unwrap();
            assert!(t.state[last].contains(VoxelState::LOS));
            let mut len = 0.0;
            for w in path.windows(2) {
                let (a, b) = (geo.position(w[0]), geo.position(w[1]));
                assert!(raycast_same_component(&geo, &l.component, a, b));
                len += distance(a, b);
            }
            len += distance(geo.position(last), sites[0].position);
            assert!((len - t.dist[v]).abs() < 1e-9);
        }
    }

    #[test]
    fn skips_components_without_sites() {
        let (g, l) = mask_labels(Dims::new(9, 3, 1), |x, _, _| x != 4);
        assert_eq!(l.components.len(), 2);
        let sites = [Site { position: [1.0, 1.0, 0.0], component: 0 }];
        let t = voronoi_classify(&g.geometry(), &l, &sites).unwrap();
        assert_eq!(t.report.skipped_components, vec![1]);
        assert_eq!(t.site_of[g.dims().index(7, 1, 0)], NONE);
        assert_eq!(t.report.unassigned, 0);
    }

    #[test]
    fn rejects_site_outside_component() {
        let (g, l) = mask_labels(Dims::new(9, 3, 1), |x, _, _| x != 4);
        let sites = [Site { position: [4.0, 1.0, 0.0], component: 0 }];
        assert!(voronoi_classify(&g.geometry(), &l, &sites).is_err());
    }

    #[test]
    fn equidistant_voxels_go_to_lower_site() {
        let (g, l) = mask_labels(Dims::new(5, 1, 1), |_, _, _| true);
        let sites = [
            Site { position: [4.0, 0.0, 0.0], component: 0 },
            Site { position: [0.0, 0.0, 0.0], component: 0 },
        ];
        let t = voronoi_classify(&g.geometry(), &l, &sites).unwrap();
        assert_eq!(t.site_of, vec![1, 1, 0, 0, 0]);
    }
}
