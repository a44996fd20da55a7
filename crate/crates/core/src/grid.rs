//! Voxel grid data model, isoband classification and connected-component labeling.
//!
//! Voxels are stored row-major with `x` fastest. A voxel with grid index
//! `(i, j, k)` has its center at `(i·sx, j·sy, k·sz)` in world coordinates and
//! owns the half-open cell `[i-½, i+½) × …` in index space. 2D grids use `nz = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel for "no layer / no component / no site".
pub const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.nx;
        let rest = idx / self.nx;
        [x, rest % self.ny, rest / self.ny]
    }

    #[inline]
    pub fn contains(&self, p: [i64; 3]) -> bool {
        p[0] >= 0
            && p[1] >= 0
            && p[2] >= 0
            && (p[0] as usize) < self.nx
            && (p[1] as usize) < self.ny
            && (p[2] as usize) < self.nz
    }

    /// Index of the voxel at signed coordinates, if inside the grid.
    #[inline]
    pub fn checked_index(&self, p: [i64; 3]) -> Option<usize> {
        if self.contains(p) {
            Some(self.index(p[0] as usize, p[1] as usize, p[2] as usize))
        } else {
            None
        }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

/// Offsets of the 6 face neighbours.
pub const FACE_OFFSETS: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Offsets of the 26-neighbourhood (3×3×3 minus the center), in a fixed order.
pub const NEIGHBOR26: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: Dims,
    spacing: [f64; 3],
    fields: Vec<Field>,
}

impl VoxelGrid {
    pub fn new(dims: Dims, spacing: [f64; 3]) -> Result<Self> {
        if dims.nx == 0 || dims.ny == 0 || dims.nz == 0 {
            return Err(Error::InvalidGrid(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing:?}")));
        }
        Ok(Self { dims, spacing, fields: Vec::new() })
    }

    pub fn with_field(mut self, name: impl Into<String>, values: Vec<f32>) -> Result<Self> {
        self.add_field(name, values)?;
        Ok(self)
    }

    pub fn add_field(&mut self, name: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let name = name.into();
        if values.len() != self.dims.len() {
            return Err(Error::InvalidGrid(format!(
                "field `{name}` has {} values, expected {}",
                values.len(),
                self.dims.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("field `{name}` is not finite at voxel {i}")));
        }
        if self.fields.iter().any(|f| f.name == name) {
            return Err(Error::InvalidGrid(format!("duplicate field `{name}`")));
        }
        self.fields.push(Field { name, values });
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn field_names(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn field(&self, name: &str) -> Result<&[f32]> {
        self.fields
            .iter()
            .find(|f| f.name == name)
            .map(|f| f.values.as_slice())
            .ok_or_else(|| Error::UnknownField(name.to_string()))
    }

    pub fn field_index(&self, name: &str) -> Result<usize> {
        self.fields
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownField(name.to_string()))
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry { dims: self.dims, spacing: self.spacing }
    }
}

/// Dims plus spacing: everything the geometric algorithms need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub dims: Dims,
    pub spacing: [f64; 3],
}

impl GridGeometry {
    #[inline]
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let c = self.dims.coords(idx);
        [
            c[0] as f64 * self.spacing[0],
            c[1] as f64 * self.spacing[1],
            c[2] as f64 * self.spacing[2],
        ]
    }

    #[inline]
    pub fn to_index_space(&self, p: [f64; 3]) -> [f64; 3] {
        [p[0] / self.spacing[0], p[1] / self.spacing[1], p[2] / self.spacing[2]]
    }

    /// Voxel whose cell contains `p` (world coordinates), if inside the grid.
    #[inline]
    pub fn voxel_at(&self, p: [f64; 3]) -> Option<usize> {
        let q = self.to_index_space(p);
        let c = [
            (q[0] + 0.5).floor() as i64,
            (q[1] + 0.5).floor() as i64,
            (q[2] + 0.5).floor() as i64,
        ];
        self.dims.checked_index(c)
    }

    /// Edge length used for displacement and back-off units.
    pub fn voxel_length(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborOffset {
    pub delta: [i64; 3],
    pub linear: isize,
    /// World-space length of the step.
    pub length: f64,
}

/// The 26-neighbourhood of a grid with precomputed linear offsets. Offsets
/// along axes of extent 1 are dropped, so 2D grids iterate 8 neighbours.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    dims: Dims,
    active: [bool; 3],
    offsets: Vec<NeighborOffset>,
}

impl Neighborhood {
    pub fn new(geometry: &GridGeometry) -> Self {
        let dims = geometry.dims;
        let extent = [dims.nx, dims.ny, dims.nz];
        let active = [extent[0] > 1, extent[1] > 1, extent[2] > 1];
        let offsets = NEIGHBOR26
            .iter()
            .filter(|d| (0..3).all(|a| active[a] || d[a] == 0))
            .map(|&delta| {
                let linear = delta[0] as isize
                    + dims.nx as isize * (delta[1] as isize + dims.ny as isize * delta[2] as isize);
                let w = [
                    delta[0] as f64 * geometry.spacing[0],
                    delta[1] as f64 * geometry.spacing[1],
                    delta[2] as f64 * geometry.spacing[2],
                ];
                NeighborOffset { delta, linear, length: distance(w, [0.0; 3]) }
            })
            .collect();
        Self { dims, active, offsets }
    }

    pub fn offsets(&self) -> &[NeighborOffset] {
        &self.offsets
    }

    /// Call `f(neighbor, offset)` for every in-grid neighbour of `v`.
    #[inline]
    pub fn for_each(&self, v: usize, mut f: impl FnMut(usize, &NeighborOffset)) {
        let c = self.dims.coords(v);
        let extent = [self.dims.nx, self.dims.ny, self.dims.nz];
        let interior = (0..3).all(|a| !self.active[a] || (c[a] >= 1 && c[a] + 1 < extent[a]));
        if interior {
            for o in &self.offsets {
                f((v as isize + o.linear) as usize, o);
            }
        } else {
            for o in &self.offsets {
                let p = [c[0] as i64 + o.delta[0], c[1] as i64 + o.delta[1], c[2] as i64 + o.delta[2]];
                if self.dims.contains(p) {
                    f((v as isize + o.linear) as usize, o);
                }
            }
        }
    }
}

#[inline]
pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsobandSpec {
    pub field_name: String,
    pub iso_values: Vec<f64>,
}

impl IsobandSpec {
    pub fn new(field_name: impl Into<String>, iso_values: Vec<f64>) -> Result<Self> {
        let spec = Self { field_name: field_name.into(), iso_values };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iso_values.len() < 2
            || self.iso_values.iter().any(|v| !v.is_finite())
            || self.iso_values.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::BadIsoValues);
        }
        Ok(())
    }

    pub fn band_count(&self) -> usize {
        self.iso_values.len() - 1
    }

    /// Band of value `f`, using half-open intervals `(a, b]`.
    pub fn band_of(&self, f: f64) -> Option<u32> {
        let iso = &self.iso_values;
        if f <= iso[0] || f > iso[iso.len() - 1] {
            return None;
        }
        // First iso value >= f closes the band.
        let upper = iso.partition_point(|&b| b < f);
        Some((upper - 1) as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentInfo {
    pub layer: u32,
    pub voxel_count: usize,
    pub bbox_min: [usize; 3],
    pub bbox_max: [usize; 3],
    /// Band interval `(low, high]` of the parent layer.
    pub band: (f64, f64),
    /// Row-major index of the first voxel; defines the component ordering.
    pub first_voxel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub dims: Dims,
    pub iso_values: Vec<f64>,
    pub layer: Vec<u32>,
    pub component: Vec<u32>,
    pub components: Vec<ComponentInfo>,
}

impl LabelMap {
    pub fn layer_count(&self) -> usize {
        self.iso_values.len().saturating_sub(1)
    }

    pub fn in_band_count(&self) -> usize {
        self.layer.iter().filter(|&&l| l != NONE).count()
    }

    /// Voxel indices of a component in row-major order.
    pub fn component_voxels(&self, id: u32) -> Vec<usize> {
        self.component
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c == id).then_some(i))
            .collect()
    }

    /// Voxels of every component, each list in row-major order.
    pub fn voxels_by_component(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self
            .components
            .iter()
            .map(|c| Vec::with_capacity(c.voxel_count))
            .collect();
        for (i, &c) in self.component.iter().enumerate() {
            if c != NONE {
                out[c as usize].push(i);
            }
        }
        out
    }
}

/// Assign each voxel to the isoband containing its value, or `NONE`.
pub fn classify_isobands(grid: &VoxelGrid, spec: &IsobandSpec) -> Result<LabelMap> {
    spec.validate()?;
    let values = grid.field(&spec.field_name)?;
    let layer = values.iter().map(|&v| spec.band_of(v as f64).unwrap_or(NONE)).collect();
    Ok(LabelMap {
        dims: grid.dims(),
        iso_values: spec.iso_values.clone(),
        layer,
        component: vec![NONE; grid.dims().len()],
        components: Vec::new(),
    })
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect() }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let gp = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = gp;
            i = gp;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the smaller root so representatives are first occurrences.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Label maximal face-connected sets of equal layer.
pub fn label_components(labels: &LabelMap) -> LabelMap {
    label_components_in_blocks(labels, [1, 1, 1])
}

/// Like [`label_components`], but voxels in different blocks of a
/// `blocks[0] × blocks[1] × blocks[2]` partition are never connected, so
/// block faces act as additional restrictions.
pub fn label_components_in_blocks(labels: &LabelMap, blocks: [usize; 3]) -> LabelMap {
    let dims = labels.dims;
    let block_of = block_partition(dims, blocks);
    let n = dims.len();
    let mut ds = DisjointSet::new(n);
    let layer = &labels.layer;

    // Two-pass raster scan: union each voxel with its backward face neighbours.
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = dims.index(x, y, z);
                let l = layer[i];
                if l == NONE {
                    continue;
                }
                let bi = block_of.as_ref().map(|b| b(x, y, z));
                let mut join = |j: usize, jx: usize, jy: usize, jz: usize| {
                    if layer[j] == l && block_of.as_ref().map(|b| b(jx, jy, jz)) == bi {
                        ds.union(i as u32, j as u32);
                    }
                };
                if x > 0 {
                    join(i - 1, x - 1, y, z);
                }
                if y > 0 {
                    join(i - dims.nx, x, y - 1, z);
                }
                if z > 0 {
                    join(i - dims.nx * dims.ny, x, y, z - 1);
                }
            }
        }
    }

    // Roots are the first voxel of their set in row-major order.
    let mut roots: Vec<(u32, usize)> = Vec::new();
    let mut root_of = vec![NONE; n];
    for i in 0..n {
        if layer[i] == NONE {
            continue;
        }
        let r = ds.find(i as u32) as usize;
        root_of[i] = r as u32;
        if r == i {
            roots.push((layer[i], i));
        }
    }
    roots.sort_unstable();
    let mut id_of_root = vec![NONE; n];
    let mut components = Vec::with_capacity(roots.len());
    for (id, &(l, r)) in roots.iter().enumerate() {
        id_of_root[r] = id as u32;
        let band = (labels.iso_values[l as usize], labels.iso_values[l as usize + 1]);
        components.push(ComponentInfo {
            layer: l,
            voxel_count: 0,
            bbox_min: [usize::MAX; 3],
            bbox_max: [0; 3],
            band,
            first_voxel: r,
        });
    }

    let mut component = vec![NONE; n];
    for i in 0..n {
        if root_of[i] == NONE {
            continue;
        }
        let id = id_of_root[root_of[i] as usize];
        component[i] = id;
        let info = &mut components[id as usize];
        info.voxel_count += 1;
        let c = dims.coords(i);
        for a in 0..3 {
            info.bbox_min[a] = info.bbox_min[a].min(c[a]);
            info.bbox_max[a] = info.bbox_max[a].max(c[a]);
        }
    }

    LabelMap {
        dims,
        iso_values: labels.iso_values.clone(),
        layer: labels.layer.clone(),
        component,
        components,
    }
}

type BlockFn = Box<dyn Fn(usize, usize, usize) -> usize>;

fn block_partition(dims: Dims, blocks: [usize; 3]) -> Option<BlockFn> {
    if blocks.iter().all(|&b| b <= 1) {
        return None;
    }
    let d = dims.as_array();
    let b = [blocks[0].clamp(1, d[0]), blocks[1].clamp(1, d[1]), blocks[2].clamp(1, d[2])];
    Some(Box::new(move |x, y, z| {
        let bx = x * b[0] / d[0];
        let by = y * b[1] / d[1];
        let bz = z * b[2] / d[2];
        bx + b[0] * (by + b[1] * bz)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, VecDeque};

    fn grid_1d(values: &[f32]) -> VoxelGrid {
        VoxelGrid::new(Dims::new(values.len(), 1, 1), [1.0; 3])
            .unwrap()
            .with_field("f", values.to_vec())
            .unwrap()
    }

    fn mask_grid(dims: Dims, mask: &[bool]) -> LabelMap {
        let v: Vec<f32> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let g = VoxelGrid::new(dims, [1.0; 3]).unwrap().with_field("f", v).unwrap();
        classify_isobands(&g, &IsobandSpec::new("f", vec![0.5, 1.5]).unwrap()).unwrap()
    }

    #[test]
    fn thresholds_half_open() {
        let g = grid_1d(&[0.1, 0.5, 0.9]);
        let l = classify_isobands(&g, &IsobandSpec::new("f", vec![0.25, 0.75]).unwrap()).unwrap();
        assert_eq!(l.layer, vec![NONE, 0, NONE]);
        let l = classify_isobands(&g, &IsobandSpec::new("f", vec![0.0, 0.25, 0.75, 1.0]).unwrap())
            .unwrap();
        assert_eq!(l.layer, vec![0, 1, 2]);
        let g = grid_1d(&[0.5; 4]);
        let l = classify_isobands(&g, &IsobandSpec::new("f", vec![0.6, 0.7]).unwrap()).unwrap();
        assert!(l.layer.iter().all(|&x| x == NONE));
    }

    #[test]
    fn band_edges() {
        let s = IsobandSpec::new("f", vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.band_of(0.0), None);
        assert_eq!(s.band_of(1.0), Some(0));
        assert_eq!(s.band_of(1.0 + 1e-12), Some(1));
        assert_eq!(s.band_of(2.0), Some(1));
        assert_eq!(s.band_of(2.1), None);
    }

    #[test]
    fn rejects_bad_specs() {
        let g = grid_1d(&[0.0]);
        assert!(matches!(IsobandSpec::new("f", vec![1.0, 1.0]), Err(Error::BadIsoValues)));
        assert!(matches!(IsobandSpec::new("f", vec![1.0]), Err(Error::BadIsoValues)));
        let spec = IsobandSpec { field_name: "nope".into(), iso_values: vec![0.0, 1.0] };
        assert!(matches!(classify_isobands(&g, &spec), Err(Error::UnknownField(_))));
    }

    #[test]
    fn diagonal_touch_is_two_components() {
        let dims = Dims::new(2, 2, 1);
        let l = label_components(&mask_grid(dims, &[true, false, false, true]));
        assert_eq!(l.components.len(), 2);
    }

    #[test]
    fn horseshoe_mask_is_one_component() {
        // 5x4 U: arms at x=0 and x=4, base on y=0.
        let dims = Dims::new(5, 4, 1);
        let mut mask = vec![false; 20];
        for y in 0..4 {
            mask[dims.index(0, y, 0)] = true;
            mask[dims.index(4, y, 0)] = true;
        }
        for x in 0..5 {
            mask[dims.index(x, 0, 0)] = true;
        }
        let l = label_components(&mask_grid(dims, &mask));
        assert_eq!(l.components.len(), 1);
        assert_eq!(l.components[0].voxel_count, 11);
        assert_eq!(l.components[0].bbox_max, [4, 3, 0]);
    }

    #[test]
    fn ids_ordered_by_layer_then_first_voxel() {
        // layers: [1, NONE, 0, NONE, 1]
        let g = grid_1d(&[1.5, -1.0, 0.5, -1.0, 1.5]);
        let l = classify_isobands(&g, &IsobandSpec::new("f", vec![0.0, 1.0, 2.0]).unwrap()).unwrap();
        let l = label_components(&l);
        assert_eq!(l.component, vec![1, NONE, 0, NONE, 2]);
        assert_eq!(l.components[0].layer, 0);
        assert_eq!(l.components[1].first_voxel, 0);
    }

    #[test]
    fn blocks_split_components() {
        let dims = Dims::new(8, 1, 1);
        let l = mask_grid(dims, &[true; 8]);
        assert_eq!(label_components(&l).components.len(), 1);
        let split = label_components_in_blocks(&l, [2, 1, 1]);
        assert_eq!(split.components.len(), 2);
        assert_eq!(split.component, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    fn flood_fill_oracle(l: &LabelMap) -> Vec<u32> {
        let dims = l.dims;
        let mut out = vec![NONE; dims.len()];
        let mut next = 0;
        for start in 0..dims.len() {
            if l.layer[start] == NONE || out[start] != NONE {
                continue;
            }
            out[start] = next;
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                let c = dims.coords(i);
                for o in FACE_OFFSETS {
                    let p = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
                    if let Some(j) = dims.checked_index(p) {
                        if out[j] == NONE && l.layer[j] == l.layer[i] {
                            out[j] = next;
                            queue.push_back(j);
                        }
                    }
                }
            }
            next += 1;
        }
        out
    }

    #[test]
    fn matches_flood_fill_on_random_masks() {
        use rand::{Rng, SeedableRng};
        let dims = Dims::new(32, 32, 32);
        for seed in 0..4u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..dims.len()).map(|_| rng.random_range(0.0..3.0)).collect();
            let g = VoxelGrid::new(dims, [1.0; 3]).unwrap().with_field("f", values).unwrap();
            let spec = IsobandSpec::new("f", vec![0.0, 1.0, 2.0, 3.0]).unwrap();
            let l = label_components(&classify_isobands(&g, &spec).unwrap());
            let oracle = flood_fill_oracle(&l);
            // Bijective relabeling check.
            let mut fwd: HashMap<u32, u32> = HashMap::new();
            let mut back: HashMap<u32, u32> = HashMap::new();
            for i in 0..dims.len() {
                let (a, b) = (l.component[i], oracle[i]);
                assert_eq!(a == NONE, b == NONE);
                if a == NONE {
                    continue;
                }
                assert_eq!(*fwd.entry(a).or_insert(b), b);
                assert_eq!(*back.entry(b).or_insert(a), a);
            }
            let total: usize = l.components.iter().map(|c| c.voxel_count).sum();
            assert_eq!(total, l.in_band_count());
        }
    }

    #[test]
    fn relabel_is_idempotent() {
        let dims = Dims::new(6, 5, 1);
        let mask: Vec<bool> = (0..30).map(|i| (i * 7) % 3 != 0).collect();
        let once = label_components(&mask_grid(dims, &mask));
        let twice = label_components(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn neighbor_table_is_complete() {
        assert_eq!(NEIGHBOR26.len(), 26);
        assert!(!NEIGHBOR26.contains(&[0, 0, 0]));
    }
}
