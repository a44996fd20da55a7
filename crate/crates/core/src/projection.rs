//! Feature vectors for components and regions, and 2D embeddings of them.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{Histogram1D, Histogram2D, MomentAggregate};

/// `(1, 0)` and `(0, 1)` are the means; any `p + q ≥ 2` is a central co-moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MomentStat {
    pub p: u8,
    pub q: u8,
}

impl MomentStat {
    pub const MEAN_X: Self = Self { p: 1, q: 0 };
    pub const MEAN_Y: Self = Self { p: 0, q: 1 };

    pub fn new(p: u8, q: u8) -> Result<Self> {
        let order = p + q;
        if order == 0 || order > 4 {
            return Err(Error::InvalidParameter(format!("moment order {p}+{q} outside 1..=4")));
        }
        Ok(Self { p, q })
    }

    pub fn name(&self) -> String {
        match (self.p, self.q) {
            (1, 0) => "mean_x".into(),
            (0, 1) => "mean_y".into(),
            (p, q) => format!("mu_{p}{q}"),
        }
    }

    fn value(&self, agg: &MomentAggregate) -> Result<f64> {
        match (self.p, self.q) {
            (1, 0) => Ok(agg.mean()?[0]),
            (0, 1) => Ok(agg.mean()?[1]),
            (p, q) => agg.comoment(p as usize, q as usize),
        }
    }
}

/// Means, variances and the covariance.
pub fn default_moment_recipe() -> Vec<MomentStat> {
    [(1, 0), (0, 1), (2, 0), (0, 2), (1, 1)].map(|(p, q)| MomentStat { p, q }).to_vec()
}

/// Z-scored feature rows, one per item, with the standardization kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    /// Names of the retained dimensions.
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Dimensions removed for having zero variance across items.
    pub dropped: Vec<String>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Z-scores each column with the population standard deviation.
    pub fn standardize(names: Vec<String>, raw: Vec<Vec<f64>>) -> Result<Self> {
        let d = names.len();
        if let Some(i) = raw.iter().position(|r| r.len() != d) {
            return Err(Error::InvalidParameter(format!("item {i} has {} features, expected {d}", raw[i].len())));
        }
        if let Some(i) = raw.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter(format!("item {i} has a non-finite feature")));
        }
        let n = raw.len() as f64;
        let mut keep = Vec::new();
        let (mut mean, mut scale, mut dropped, mut kept) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, name) in names.into_iter().enumerate() {
            let mu = raw.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = raw.iter().map(|r| (r[k] - mu).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if raw.is_empty() || !(sd > 1e-12 * mu.abs().max(f64::MIN_POSITIVE)) {
                dropped.push(name);
            } else {
                keep.push(k);
                mean.push(mu);
                scale.push(sd);
                kept.push(name);
            }
        }
        let rows = raw
            .iter()
            .map(|r| keep.iter().enumerate().map(|(j, &k)| (r[k] - mean[j]) / scale[j]).collect())
            .collect();
        Ok(Self { names: kept, rows, mean, scale, dropped })
    }
}

pub fn featurize_moments(items: &[MomentAggregate], recipe: &[MomentStat]) -> Result<Features> {
    if recipe.is_empty() {
        return Err(Error::InvalidParameter("empty moment recipe".into()));
    }
    let raw = items
        .iter()
        .enumerate()
        .map(|(i, agg)| {
            recipe
                .iter()
                .map(|s| s.value(agg).map_err(|_| Error::InsufficientSamples(format!("item {i} lacks {}", s.name()))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Features::standardize(recipe.iter().map(MomentStat::name).collect(), raw)
}

/// Histograms that can be flattened into relative bin frequencies.
pub trait BinVector {
    fn frequencies(&self) -> Option<Vec<f64>>;
    fn same_binning(&self, other: &Self) -> bool;
}

impl BinVector for Histogram1D {
    fn frequencies(&self) -> Option<Vec<f64>> {
        let total: u64 = self.counts.iter().sum();
        (total > 0).then(|| self.counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    fn same_binning(&self, other: &Self) -> bool {
        self.axis == other.axis
    }
}

impl BinVector for Histogram2D {
    fn frequencies(&self) -> Option<Vec<f64>> {
        let total = self.inside();
        (total > 0).then(|| self.counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    fn same_binning(&self, other: &Self) -> bool {
        self.x == other.x && self.y == other.y
    }
}

/// One dimension per bin, holding the fraction of in-range samples.
pub fn featurize_histograms<H: BinVector>(items: &[H]) -> Result<Features> {
    let Some(first) = items.first() else {
        return Features::standardize(Vec::new(), Vec::new());
    };
    let mut raw = Vec::with_capacity(items.len());
    for (i, h) in items.iter().enumerate() {
        if !h.same_binning(first) {
            return Err(Error::InvalidParameter(format!("histogram {i} uses different bins")));
        }
        raw.push(h.frequencies().ok_or_else(|| Error::InsufficientSamples(format!("histogram {i} is empty")))?);
    }
    let names = (0..raw[0].len()).map(|b| format!("bin_{b}")).collect();
    Features::standardize(names, raw)
}

/// Dense symmetric matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::InvalidParameter(format!("{} entries for {n} items", values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidParameter(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if !(a.is_finite() && a >= 0.0) || (a - b).abs() > 1e-9 * a.max(b).max(1.0) {
                    return Err(Error::InvalidParameter(format!("entry ({i}, {j}) is negative, non-finite or asymmetric")));
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn euclidean(features: &Features) -> Self {
        let n = features.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let d: f64 = features.rows[i].iter().zip(&features.rows[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Self { n, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Off-diagonal extremes, `None` below two items.
    fn range(&self) -> Option<(f64, f64)> {
        let n = self.n;
        (n >= 2).then(|| {
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for i in 0..n {
                for j in 0..i {
                    lo = lo.min(self.get(i, j));
                    hi = hi.max(self.get(i, j));
                }
            }
            (lo, hi)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Mds,
    Tsne,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mds" => Ok(Self::Mds),
            "tsne" => Ok(Self::Tsne),
            _ => Err(Error::InvalidParameter(format!("unknown embedding method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedParams {
    pub method: Method,
    pub perplexity: f64,
    pub seed: u64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
}

impl Default for EmbedParams {
    fn default() -> Self {
        Self {
            method: Method::Mds,
            perplexity: 30.0,
            seed: 0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
        }
    }
}

impl EmbedParams {
    /// The configured perplexity, lowered so it stays valid for `n` items.
    pub fn perplexity_for(&self, n: usize) -> f64 {
        self.perplexity.min(((n as f64 - 1.0) / 3.0).max(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub method: Method,
    pub seed: u64,
    pub coords: Vec<[f64; 2]>,
    /// Set when the distances carried no layout information.
    pub fallback: bool,
}

pub mod flags {
    /// Too few samples for reliable statistics.
    pub const GRAY: u32 = 1;
}

/// Wire form of one embedded item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedItem {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub layer: u32,
    pub flags: u32,
}

impl Embedding2D {
    pub fn items(&self, ids: &[u64], layers: &[u32], flags: &[u32]) -> Result<Vec<ProjectedItem>> {
        let n = self.coords.len();
        if ids.len() != n || layers.len() != n || flags.len() != n {
            return Err(Error::InvalidParameter("item metadata does not match the embedding".into()));
        }
        Ok((0..n).map(|i| ProjectedItem { id: ids[i], x: self.coords[i][0], y: self.coords[i][1], layer: layers[i], flags: flags[i] }).collect())
    }
}

pub fn embed_features(features: &Features, ids: &[u64], params: &EmbedParams) -> Result<Embedding2D> {
    embed(&DistanceMatrix::euclidean(features), ids, params)
}

/// `ids` name the items; t-SNE derives each item's starting point from its id.
pub fn embed(d: &DistanceMatrix, ids: &[u64], params: &EmbedParams) -> Result<Embedding2D> {
    let n = d.n;
    if n < 2 {
        return Err(Error::InsufficientSamples(format!("embedding needs at least 2 items, got {n}")));
    }
    if ids.len() != n {
        return Err(Error::InvalidParameter(format!("{} ids for {n} items", ids.len())));
    }
    if params.method == Method::Tsne && !(params.perplexity > 0.0 && params.perplexity < n as f64) {
        return Err(Error::InvalidParameter(format!("perplexity {} must lie in (0, {n})", params.perplexity)));
    }
    let (lo, hi) = d.range().expect("n >= 2");
    let degenerate = hi == 0.0 || (n > 3 && hi - lo <= 1e-12 * hi);
    let (coords, fallback) = if degenerate {
        warn!("all {n} pairwise distances equal {hi}; using a grid layout");
        (grid_layout(ids, if hi > 0.0 { hi } else { 1.0 }), true)
    } else {
        let c = match params.method {
            Method::Mds => classical_mds(d),
            Method::Tsne => tsne(d, ids, params),
        };
        (c, false)
    };
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("embedding diverged".into()));
    }
    Ok(Embedding2D { method: params.method, seed: params.seed, coords, fallback })
}

/// Row-major grid in id order, centered on the origin.
fn grid_layout(ids: &[u64], spacing: f64) -> Vec<[f64; 2]> {
    let n = ids.len();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (ids[i], i));
    let mut out = vec![[0.0; 2]; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = [
            ((rank % cols) as f64 - (cols - 1) as f64 / 2.0) * spacing,
            ((rank / cols) as f64 - (rows - 1) as f64 / 2.0) * spacing,
        ];
    }
    out
}

/// Double-centered squared distances, top two eigenpairs.
pub fn classical_mds(d: &DistanceMatrix) -> Vec<[f64; 2]> {
    let n = d.n;
    let sq = DMatrix::from_fn(n, n, |i, j| d.get(i, j).powi(2));
    let row: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let all = row.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row[i] - row[j] + all));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = vec![[0.0; 2]; n];
    for (axis, &k) in order.iter().take(2).enumerate() {
        let scale = eig.eigenvalues[k].max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        let pivot = (0..n).fold(0, |best, i| if v[i].abs() > v[best].abs() + 1e-12 { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[i][axis] = sign * scale * v[i];
        }
    }
    out
}

/// Gaussian conditionals matched to the target perplexity, symmetrized.
fn joint_probabilities(d: &DistanceMatrix, perplexity: f64) -> Vec<f64> {
    let n = d.n;
    let target = perplexity.ln();
    let cond: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sq: Vec<f64> = (0..n).map(|j| d.get(i, j).powi(2)).collect();
            let base = (0..n).filter(|&j| j != i).map(|j| sq[j]).fold(f64::INFINITY, f64::min);
            let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
            let mut p = vec![0.0; n];
            for _ in 0..200 {
                let mut sum = 0.0;
                let mut weighted = 0.0;
                for j in 0..n {
                    p[j] = if j == i { 0.0 } else { (-(sq[j] - base) * beta).exp() };
                    sum += p[j];
                    weighted += p[j] * (sq[j] - base);
                }
                let entropy = sum.ln() + beta * weighted / sum;
                p.iter_mut().for_each(|v| *v /= sum);
                let diff = entropy - target;
                if diff.abs() < 1e-10 {
                    break;
                }
                if diff > 0.0 {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
            }
            p
        })
        .collect();
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    joint
}

/// Runs on items sorted by id, so permuting the input permutes the output bit for bit.
fn tsne(d: &DistanceMatrix, ids: &[u64], params: &EmbedParams) -> Vec<[f64; 2]> {
    let n = d.n;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (ids[i], i));
    let sorted = DistanceMatrix { n, values: (0..n * n).map(|k| d.get(order[k / n], order[k % n])).collect() };
    let sorted_ids: Vec<u64> = order.iter().map(|&i| ids[i]).collect();
    let y = tsne_sorted(&sorted, &sorted_ids, params);
    let mut out = vec![[0.0; 2]; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = y[rank];
    }
    out
}

/// Exact t-SNE with early exaggeration, momentum and per-coordinate gains.
/// Rows are reduced sequentially so the result does not depend on the pool size.
fn tsne_sorted(d: &DistanceMatrix, ids: &[u64], params: &EmbedParams) -> Vec<[f64; 2]> {
    let n = d.n;
    let (_, hi) = d.range().expect("n >= 2");
    let scaled = DistanceMatrix { n, values: d.values.iter().map(|v| v / hi).collect() };
    let p = joint_probabilities(&scaled, params.perplexity);
    let normal = Normal::new(0.0, 1e-4).expect("valid sd");
    let mut y: Vec<[f64; 2]> = ids
        .iter()
        .map(|&id| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            [normal.sample(&mut rng), normal.sample(&mut rng)]
        })
        .collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    for iter in 0..params.iterations {
        let early = iter < params.exaggeration_iterations;
        let exaggeration = if early { params.exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let kernel: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { 0.0 } else { 1.0 / (1.0 + (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2)) })
                    .collect()
            })
            .collect();
        let z: f64 = kernel.iter().map(|r| r.iter().sum::<f64>()).sum();
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let w = (exaggeration * p[i * n + j] - kernel[i][j] / z) * kernel[i][j];
                    g[0] += 4.0 * w * (y[i][0] - y[j][0]);
                    g[1] += 4.0 * w * (y[i][1] - y[j][1]);
                }
                g
            })
            .collect();
        for i in 0..n {
            for k in 0..2 {
                gains[i][k] = if (grad[i][k] > 0.0) != (update[i][k] > 0.0) { gains[i][k] + 0.2 } else { (gains[i][k] * 0.8).max(0.01) };
                update[i][k] = momentum * update[i][k] - params.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        let c = y.iter().fold([0.0; 2], |a, v| [a[0] + v[0], a[1] + v[1]]);
        for v in &mut y {
            v[0] -= c[0] / n as f64;
            v[1] -= c[1] / n as f64;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_zscores_are_unit() {
        let a = MomentAggregate::accumulate("x", "y", [[0.0, 1.0], [0.0, 3.0]]);
        let b = MomentAggregate::accumulate("x", "y", [[2.0, 1.0], [2.0, 3.0]]);
        let f = featurize_moments(&[a, b], &[MomentStat::MEAN_X, MomentStat::MEAN_Y]).unwrap();
        assert_eq!(f.names, vec!["mean_x"]);
        assert_eq!(f.dropped, vec!["mean_y"]);
        assert_eq!(f.rows, vec![vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn empty_item_is_an_error() {
        let a = MomentAggregate::accumulate("x", "y", [[0.0, 1.0]]);
        assert!(featurize_moments(&[a, MomentAggregate::new("x", "y")], &default_moment_recipe()).is_err());
        assert!(MomentStat::new(3, 2).is_err());
    }

    #[test]
    fn equal_distances_fall_back_to_grid() {
        let n = 5;
        let v = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 2.0 }).collect();
        let e = embed(&DistanceMatrix::new(n, v).unwrap(), &[4, 3, 2, 1, 0], &EmbedParams::default()).unwrap();
        assert!(e.fallback);
        assert_eq!(e.coords[4], [-2.0, -1.0]);
        assert!(embed(&DistanceMatrix::new(1, vec![0.0]).unwrap(), &[0], &EmbedParams::default()).is_err());
    }

    #[test]
    fn equilateral_triangle_is_exact() {
        let v = vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let e = embed(&DistanceMatrix::new(3, v).unwrap(), &[0, 1, 2], &EmbedParams::default()).unwrap();
        assert!(!e.fallback);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let (a, b) = (e.coords[i], e.coords[j]);
            assert!(((a[0] - b[0]).hypot(a[1] - b[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, -1.0, -1.0, 0.0]).is_err());
    }
}
