//! Voxel traversal of straight segments.
//!
//! The traversal visits, in order, every voxel whose interior the segment
//! passes through, plus both endpoint voxels. When the segment crosses an edge
//! or corner exactly, all tied axes step at once, so a segment between two
//! 26-adjacent voxel centers visits only its endpoints.

use crate::grid::{Dims, GridGeometry};

const TIE_EPS: f64 = 1e-9;

#[inline]
fn voxel_of(p: [f64; 3]) -> [i64; 3] {
    [(p[0] + 0.5).floor() as i64, (p[1] + 0.5).floor() as i64, (p[2] + 0.5).floor() as i64]
}

/// Walk the segment `from → to` (index-space coordinates), calling
/// `visit(voxel, t_enter)` for each traversed voxel. Stops early and returns
/// `false` as soon as `visit` returns `false`.
pub fn traverse(from: [f64; 3], to: [f64; 3], mut visit: impl FnMut([i64; 3], f64) -> bool) -> bool {
    let mut cur = voxel_of(from);
    let end = voxel_of(to);
    if !visit(cur, 0.0) {
        return false;
    }
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let d = to[a] - from[a];
        if d > 0.0 {
            step[a] = 1;
            t_max[a] = (cur[a] as f64 + 0.5 - from[a]) / d;
            t_delta[a] = 1.0 / d;
        } else if d < 0.0 {
            step[a] = -1;
            t_max[a] = (cur[a] as f64 - 0.5 - from[a]) / d;
            t_delta[a] = -1.0 / d;
        }
    }
    let budget = (0..3).map(|a| (end[a] - cur[a]).unsigned_abs()).sum::<u64>() + 3;
    let mut taken = 0;
    while cur != end && taken < budget {
        let t = t_max[0].min(t_max[1]).min(t_max[2]);
        if t > 1.0 + TIE_EPS {
            break;
        }
        for a in 0..3 {
            if t_max[a] - t <= TIE_EPS {
                cur[a] += step[a];
                t_max[a] += t_delta[a];
            }
        }
        taken += 1;
        if !visit(cur, t) {
            return false;
        }
    }
    if cur != end {
        // Numerical drift near a corner; the endpoint is always included.
        return visit(end, 1.0);
    }
    true
}

/// `true` iff every voxel on the segment lies inside the grid and carries
/// label `id`. Coordinates are in index space.
#[inline]
pub fn segment_clear(dims: Dims, labels: &[u32], id: u32, from: [f64; 3], to: [f64; 3]) -> bool {
    traverse(from, to, |p, _| dims.checked_index(p).is_some_and(|i| labels[i] == id))
}

/// Entry parameter of the first voxel along `from → to` that is outside the
/// grid or not labelled `id`; `None` if the whole segment is clear.
pub fn first_exit(dims: Dims, labels: &[u32], id: u32, from: [f64; 3], to: [f64; 3]) -> Option<f64> {
    let mut hit = None;
    traverse(from, to, |p, t| {
        if dims.checked_index(p).is_some_and(|i| labels[i] == id) {
            true
        } else {
            hit = Some(t);
            false
        }
    });
    hit
}

/// `true` iff every voxel traversed by the world-space segment `a → b` has the
/// same component id as the voxel containing `a`.
pub fn raycast_same_component(geometry: &GridGeometry, component: &[u32], a: [f64; 3], b: [f64; 3]) -> bool {
    let Some(start) = geometry.voxel_at(a) else {
        return false;
    };
    let id = component[start];
    if id == crate::grid::NONE {
        return false;
    }
    segment_clear(geometry.dims, component, id, geometry.to_index_space(a), geometry.to_index_space(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::NONE;

    fn collect(from: [f64; 3], to: [f64; 3]) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        traverse(from, to, |p, _| {
            out.push(p);
            true
        });
        out
    }

    #[test]
    fn axis_aligned() {
        let v = collect([0.0, 0.0, 0.0], [3.0, 0.0, 0.0]);
        assert_eq!(v, vec![[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]);
        let v = collect([3.0, 1.0, 0.0], [1.0, 1.0, 0.0]);
        assert_eq!(v, vec![[3, 1, 0], [2, 1, 0], [1, 1, 0]]);
    }

    #[test]
    fn diagonal_between_centers_skips_corner_voxels() {
        assert_eq!(collect([0.0, 0.0, 0.0], [1.0, 1.0, 0.0]), vec![[0, 0, 0], [1, 1, 0]]);
        assert_eq!(collect([0.0, 0.0, 0.0], [1.0, -1.0, 1.0]), vec![[0, 0, 0], [1, -1, 1]]);
        assert_eq!(collect([0.0, 0.0, 0.0], [3.0, 3.0, 0.0]).len(), 4);
    }

    #[test]
    fn shallow_slope() {
        // Crosses x=0.5 at y=0.25, x=1.5 at y=0.75 (-> y boundary 0.5 at x=1).
        let v = collect([0.0, 0.0, 0.0], [2.0, 1.0, 0.0]);
        assert_eq!(v, vec![[0, 0, 0], [1, 0, 0], [1, 1, 0], [2, 1, 0]]);
    }

    #[test]
    fn same_voxel() {
        assert_eq!(collect([0.1, 0.2, 0.0], [0.3, -0.4, 0.0]), vec![[0, 0, 0]]);
    }

    #[test]
    fn u_gap_blocks() {
        // 5x3: arms at x=0 and x=4 connected by the bottom row; gap in between.
        let dims = Dims::new(5, 3, 1);
        let mut comp = vec![NONE; 15];
        for y in 0..3 {
            comp[dims.index(0, y, 0)] = 0;
            comp[dims.index(4, y, 0)] = 0;
        }
        for x in 0..5 {
            comp[dims.index(x, 0, 0)] = 0;
        }
        let geo = GridGeometry { dims, spacing: [1.0; 3] };
        assert!(raycast_same_component(&geo, &comp, [0.0, 0.0, 0.0], [4.0, 0.0, 0.0]));
        assert!(raycast_same_component(&geo, &comp, [0.0, 2.0, 0.0], [0.0, 0.0, 0.0]));
        assert!(!raycast_same_component(&geo, &comp, [0.0, 2.0, 0.0], [4.0, 2.0, 0.0]));
        assert_eq!(first_exit(dims, &comp, 0, [0.0, 2.0, 0.0], [4.0, 2.0, 0.0]), Some(0.125));
        // Leaving the grid counts as a boundary.
        assert!(!segment_clear(dims, &comp, 0, [0.0, 0.0, 0.0], [-2.0, 0.0, 0.0]));
    }

    #[test]
    fn agrees_with_dense_sampling() {
        use rand::{Rng, SeedableRng};
        let dims = Dims::new(24, 24, 6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let comp: Vec<u32> = (0..dims.len()).map(|_| if rng.random_bool(0.93) { 0 } else { 1 }).collect();
        let geo = GridGeometry { dims, spacing: [1.0; 3] };
        let (mut total, mut disagree) = (0, 0);
        for _ in 0..2000 {
            let mut pt = || {
                [
                    rng.random_range(-0.49..23.49),
                    rng.random_range(-0.49..23.49),
                    rng.random_range(-0.49..5.49),
                ]
            };
            let (a, b) = (pt(), pt());
            if comp[geo.voxel_at(a).unwrap()] != 0 {
                continue;
            }
            total += 1;
            let ray = raycast_same_component(&geo, &comp, a, b);
            let sampled = (0..=1000).all(|k| {
                let t = k as f64 / 1000.0;
                let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])];
                comp[geo.voxel_at(p).unwrap()] == 0
            });
            if ray != sampled {
                // Sampling can only miss voxels clipped over a tiny length.
                assert!(!ray && sampled);
                disagree += 1;
            }
        }
        assert!(total > 500);
        assert!(disagree * 50 <= total, "{disagree}/{total} disagreements");
    }
}
