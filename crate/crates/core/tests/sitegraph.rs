use std::collections::BTreeSet;

use lrcvt_core::grid::{classify_isobands, distance, label_components, Dims, IsobandSpec, LabelMap, VoxelGrid, FACE_OFFSETS, NONE};
use lrcvt_core::seeding::{seed_sites, SeedingParams, Site};
use lrcvt_core::sitegraph::{all_pairs_paths, floyd_warshall, fold_metric, region_adjacency, SiteGraph};
use lrcvt_core::synth::{default_iso, synth_field, HorseshoeShape, SynthKind};
use lrcvt_core::tessellation::{lrcvt, voronoi_classify, LloydParams, LrcvtParams, Tessellation};
use proptest::prelude::*;

fn labels_of(grid: &VoxelGrid, iso: Vec<f64>) -> LabelMap {
    label_components(&classify_isobands(grid, &IsobandSpec::new("f", iso).unwrap()).unwrap())
}

fn brute_force_pairs(t: &Tessellation, l: &LabelMap) -> BTreeSet<(u32, u32)> {
    let dims = t.geometry.dims;
    let mut out = BTreeSet::new();
    for v in 0..dims.len() {
        let c = dims.coords(v);
        for off in FACE_OFFSETS {
            let Some(w) = dims.checked_index([c[0] as i64 + off[0], c[1] as i64 + off[1], c[2] as i64 + off[2]]) else {
                continue;
            };
            let (s, u) = (t.site_of[v], t.site_of[w]);
            if s != NONE && u != NONE && s != u && l.component[v] == l.component[w] {
                out.insert((s.min(u), s.max(u)));
            }
        }
    }
    out
}

#[test]
fn corridor_split_has_one_edge() {
    let dims = Dims::new(20, 3, 1);
    let g = VoxelGrid::new(dims, [1.0; 3]).unwrap().with_field("f", vec![1.0; dims.len()]).unwrap();
    let l = labels_of(&g, vec![0.0, 2.0]);
    let sites = vec![Site { position: [3.0, 1.0, 0.0], component: 0 }, Site { position: [15.0, 1.0, 0.0], component: 0 }];
    let t = voronoi_classify(&g.geometry(), &l, &sites).unwrap();
    let graph = region_adjacency(&t, &l).unwrap();
    assert_eq!(graph.edges, vec![(0, 1, 12.0)]);
    let f = fold_metric(&graph.positions, &all_pairs_paths(&graph).unwrap(), 1.0).unwrap();
    assert!((f.get(0, 1) - 1.0).abs() < 1e-12);
}

#[test]
fn separate_components_share_no_edge() {
    let dims = Dims::new(9, 4, 1);
    let v: Vec<f32> = (0..dims.len()).map(|i| if dims.coords(i)[0] == 4 { 0.0 } else { 1.0 }).collect();
    let g = VoxelGrid::new(dims, [1.0; 3]).unwrap().with_field("f", v).unwrap();
    let l = labels_of(&g, vec![0.5, 1.5]);
    assert_eq!(l.components.len(), 2);
    let sites = vec![Site { position: [3.0, 1.0, 0.0], component: 0 }, Site { position: [5.0, 1.0, 0.0], component: 1 }];
    let t = voronoi_classify(&g.geometry(), &l, &sites).unwrap();
    let graph = region_adjacency(&t, &l).unwrap();
    assert!(graph.edges.is_empty());
    let paths = all_pairs_paths(&graph).unwrap();
    assert_eq!(fold_metric(&graph.positions, &paths, 1.0).unwrap().get(0, 1), 1.0);
}

#[test]
fn adjacency_matches_face_scan() {
    for (kind, dims) in [(SynthKind::Spiral, Dims::new(40, 40, 1)), (SynthKind::GaussianMix, Dims::new(24, 24, 12))] {
        let g = synth_field(kind, dims, 1).unwrap();
        let l = labels_of(&g, default_iso(kind));
        let s = seed_sites(&g, &l, &SeedingParams { alpha: 40.0, seed: 3, ..Default::default() }).unwrap();
        let t = voronoi_classify(&g.geometry(), &l, &s.sites).unwrap();
        let graph = region_adjacency(&t, &l).unwrap();
        let got: BTreeSet<(u32, u32)> = graph.edges.iter().map(|e| (e.0, e.1)).collect();
        assert_eq!(got, brute_force_pairs(&t, &l), "{kind:?}");
        for &(a, b, w) in &graph.edges {
            assert!(w > 0.0);
            assert_eq!(graph.component_of[a as usize], graph.component_of[b as usize]);
        }
    }
}

#[test]
fn horseshoe_tips_fold() {
    let dims = Dims::new(128, 128, 1);
    let g = synth_field(SynthKind::Horseshoe, dims, 0).unwrap();
    let l = labels_of(&g, default_iso(SynthKind::Horseshoe));
    let params = LrcvtParams {
        seeding: SeedingParams { alpha: 60.0, seed: 0, ..Default::default() },
        lloyd: LloydParams::default(),
    };
    let t = lrcvt(&g, &l, &params).unwrap().tessellation;
    let graph = region_adjacency(&t, &l).unwrap();
    let paths = all_pairs_paths(&graph).unwrap();
    let f = fold_metric(&graph.positions, &paths, 1.0).unwrap();
    let nearest = |p: [f64; 3]| {
        (0..t.sites.len()).min_by(|&a, &b| distance(t.sites[a].position, p).total_cmp(&distance(t.sites[b].position, p))).unwrap()
    };
    let [left, right] = HorseshoeShape::for_seed(0).tips(dims);
    let value = f.get(nearest(left), nearest(right));
    assert!(value < 0.3, "{value}");
}

#[test]
fn parallel_matches_serial() {
    let g = synth_field(SynthKind::GaussianMix, Dims::new(48, 48, 1), 2).unwrap();
    let l = labels_of(&g, default_iso(SynthKind::GaussianMix));
    let s = seed_sites(&g, &l, &SeedingParams { alpha: 60.0, seed: 1, ..Default::default() }).unwrap();
    let t = voronoi_classify(&g.geometry(), &l, &s.sites).unwrap();
    let graph = region_adjacency(&t, &l).unwrap();
    let par = all_pairs_paths(&graph).unwrap().to_dense();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = pool.install(|| all_pairs_paths(&graph).unwrap().to_dense());
    assert_eq!(par, serial);
}

fn random_graph(n: usize, comps: u32, density: f64, seed: u64) -> SiteGraph {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sites: Vec<Site> = (0..n)
        .map(|_| Site {
            position: [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)],
            component: rng.random_range(0..comps),
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if sites[i].component == sites[j].component && rng.random_bool(density) {
                pairs.push((i as u32, j as u32));
            }
        }
    }
    SiteGraph::from_edges(&sites, pairs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn all_pairs_equal_floyd_warshall(n in 1usize..40, comps in 1u32..4, density in 0.02f64..0.5, seed in 0u64..10_000) {
        let g = random_graph(n, comps, density, seed);
        let fw = floyd_warshall(&g);
        let dense = all_pairs_paths(&g).unwrap().to_dense();
        for k in 0..n * n {
            if fw[k].is_infinite() {
                prop_assert!(dense[k].is_infinite());
            } else {
                prop_assert!((fw[k] - dense[k]).abs() <= 1e-9 * fw[k].max(1.0), "{} vs {}", fw[k], dense[k]);
            }
        }
        // Triangle inequality and the fold-metric bound.
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    prop_assert!(dense[i * n + j] <= dense[i * n + k] + dense[k * n + j] + 1e-9);
                }
            }
        }
        let f = fold_metric(&g.positions, &all_pairs_paths(&g).unwrap(), 1.5).unwrap();
        for i in 0..n {
            for j in 0..n {
                let d = f.get(i, j);
                if i == j {
                    prop_assert_eq!(d, 0.0);
                } else if dense[i * n + j].is_finite() {
                    prop_assert!(d > 0.0 && d <= 1.0 + 1e-9);
                } else {
                    prop_assert_eq!(d, 1.5);
                }
            }
        }
    }
}
