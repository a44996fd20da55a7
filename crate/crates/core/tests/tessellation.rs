use lrcvt_core::grid::{classify_isobands, label_components, Dims, IsobandSpec, LabelMap, VoxelGrid, NONE};
use lrcvt_core::seeding::{seed_sites, SeedingParams, Site};
use lrcvt_core::synth::{default_iso, synth_field, SynthKind};
use lrcvt_core::tessellation::oracle::{geodesic_oracle, site_geodesic};
use lrcvt_core::tessellation::validate::{validate_against_dijkstra, validate_against_euclidean};
use lrcvt_core::tessellation::{lrcvt, voronoi_classify, LloydParams, LrcvtParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn synth_labels(kind: SynthKind, dims: Dims, seed: u64) -> (VoxelGrid, LabelMap) {
    let g = synth_field(kind, dims, seed).unwrap();
    let l = label_components(&classify_isobands(&g, &IsobandSpec::new("f", default_iso(kind)).unwrap()).unwrap());
    (g, l)
}

#[test]
fn horseshoe_matches_graph_oracle() {
    let (g, l) = synth_labels(SynthKind::Horseshoe, Dims::new(96, 96, 1), 0);
    let seeding = seed_sites(&g, &l, &SeedingParams { alpha: 40.0, seed: 1, ..Default::default() }).unwrap();
    let t = voronoi_classify(&g.geometry(), &l, &seeding.sites).unwrap();
    let r = validate_against_dijkstra(&t, &l);
    assert!(r.passed(), "{r:?}");
    assert!(r.agreement >= 0.95, "{r:?}");
}

#[test]
fn per_site_sandwich_on_spiral() {
    let (g, l) = synth_labels(SynthKind::Spiral, Dims::new(64, 64, 1), 4);
    let seeding = seed_sites(&g, &l, &SeedingParams { alpha: 30.0, seed: 9, ..Default::default() }).unwrap();
    let t = voronoi_classify(&g.geometry(), &l, &seeding.sites).unwrap();
    let geo = g.geometry();
    for (s, site) in t.sites.iter().enumerate() {
        let graph = site_geodesic(&geo, &l.component, site);
        for v in 0..t.site_of.len() {
            if t.site_of[v] as usize == s {
                let e = lrcvt_core::grid::distance(geo.position(v), site.position);
                assert!(e <= t.dist[v] + 1e-9 && t.dist[v] <= graph[v] + 1e-6, "voxel {v}");
            }
        }
    }
}

#[test]
fn convex_box_is_euclidean_voronoi() {
    let dims = Dims::new(40, 30, 1);
    let g = VoxelGrid::new(dims, [1.0; 3]).unwrap().with_field("f", vec![1.0; dims.len()]).unwrap();
    let l = label_components(&classify_isobands(&g, &IsobandSpec::new("f", vec![0.0, 2.0]).unwrap()).unwrap());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let sites: Vec<Site> = (0..25)
        .map(|_| Site { position: [rng.random_range(0.0..39.0), rng.random_range(0.0..29.0), 0.0], component: 0 })
        .collect();
    let t = voronoi_classify(&g.geometry(), &l, &sites).unwrap();
    let r = validate_against_euclidean(&t, &l);
    assert!(r.passed(), "{r:?}");
    assert_eq!(r.matches, r.compared);
}

#[test]
fn restriction_holds_in_3d() {
    let (g, l) = synth_labels(SynthKind::Spiral, Dims::new(32, 32, 16), 2);
    let seeding = seed_sites(&g, &l, &SeedingParams { alpha: 80.0, seed: 5, ..Default::default() }).unwrap();
    let t = voronoi_classify(&g.geometry(), &l, &seeding.sites).unwrap();
    for v in 0..t.site_of.len() {
        let s = t.site_of[v];
        if s != NONE {
            assert_eq!(t.sites[s as usize].component, l.component[v]);
        } else {
            assert_eq!(l.component[v], NONE);
        }
    }
}

#[test]
fn corridor_graph_distance() {
    let dims = Dims::new(12, 1, 1);
    let g = VoxelGrid::new(dims, [2.0, 1.0, 1.0]).unwrap().with_field("f", vec![1.0; 12]).unwrap();
    let l = label_components(&classify_isobands(&g, &IsobandSpec::new("f", vec![0.0, 2.0]).unwrap()).unwrap());
    let d = geodesic_oracle(&g.geometry(), &l.component, 0);
    assert!((d[11] - 22.0).abs() < 1e-12);
}

#[test]
fn lloyd_trace_is_recorded() {
    let (g, l) = synth_labels(SynthKind::Horseshoe, Dims::new(64, 64, 1), 0);
    let params = LrcvtParams {
        seeding: SeedingParams { alpha: 20.0, seed: 2, ..Default::default() },
        lloyd: LloydParams { max_updates: 5, ds_tolerance: 1e-9 },
    };
    let r = lrcvt(&g, &l, &params).unwrap();
    assert_eq!(r.trace.len(), 5);
    assert!(!r.converged);
    assert!(validate_against_dijkstra(&r.tessellation, &l).passed());
}

fn random_mask(dims: Dims, fill: f64, seed: u64) -> (VoxelGrid, LabelMap) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v = (0..dims.len()).map(|_| if rng.random_bool(fill) { 1.0 } else { 0.0 }).collect();
    let g = VoxelGrid::new(dims, [1.0; 3]).unwrap().with_field("f", v).unwrap();
    let l = label_components(&classify_isobands(&g, &IsobandSpec::new("f", vec![0.5, 1.5]).unwrap()).unwrap());
    (g, l)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_masks_satisfy_sandwich(seed in 0u64..10_000, fill in 0.55f64..0.9, nz in 1usize..4) {
        let (g, l) = random_mask(Dims::new(14, 12, nz), fill, seed);
        prop_assume!(l.in_band_count() > 0);
        let seeding = seed_sites(&g, &l, &SeedingParams { alpha: 12.0, block_size: 5, seed, ..Default::default() }).unwrap();
        let t = voronoi_classify(&g.geometry(), &l, &seeding.sites).unwrap();
        let r = validate_against_dijkstra(&t, &l);
        prop_assert!(r.passed(), "{:?}", r);
    }
}
