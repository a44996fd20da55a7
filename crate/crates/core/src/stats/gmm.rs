use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::moments::RawMoments;
use crate::error::{Error, Result};

/// Relative covariance floor, as a fraction of the data variance.
pub const REGULARIZATION: f64 = 1e-6;

type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub covariance: Mat2,
}

impl GaussianComponent {
    fn log_density(&self, p: [f64; 2]) -> f64 {
        let c = self.covariance;
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        let dx = p[0] - self.mean[0];
        let dy = p[1] - self.mean[1];
        let q = (c[1][1] * dx * dx - 2.0 * c[0][1] * dx * dy + c[0][0] * dy * dy) / det;
        -0.5 * q - 0.5 * det.ln() - (2.0 * PI).ln()
    }

    /// `E[x^p y^q]` of this Gaussian.
    fn raw_moment(&self, p: usize, q: usize) -> f64 {
        gaussian_raw_moment(self.mean, self.covariance, p, q)
    }
}

/// Zero-mean bivariate Gaussian moments through order 4 (Isserlis).
fn centered_gaussian_moment(c: Mat2, i: usize, j: usize) -> f64 {
    let (sxx, sxy, syy) = (c[0][0], c[0][1], c[1][1]);
    match (i, j) {
        (0, 0) => 1.0,
        (2, 0) => sxx,
        (0, 2) => syy,
        (1, 1) => sxy,
        (4, 0) => 3.0 * sxx * sxx,
        (0, 4) => 3.0 * syy * syy,
        (3, 1) => 3.0 * sxx * sxy,
        (1, 3) => 3.0 * syy * sxy,
        (2, 2) => sxx * syy + 2.0 * sxy * sxy,
        _ => 0.0,
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub(crate) fn gaussian_raw_moment(mean: [f64; 2], c: Mat2, p: usize, q: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..=p {
        for j in 0..=q {
            acc += binomial(p, i)
                * binomial(q, j)
                * mean[0].powi((p - i) as i32)
                * mean[1].powi((q - j) as i32)
                * centered_gaussian_moment(c, i, j);
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub components: Vec<GaussianComponent>,
}

impl GmmModel {
    pub fn log_density(&self, p: [f64; 2]) -> f64 {
        log_sum_exp(self.components.iter().map(|c| c.weight.ln() + c.log_density(p)))
    }

    pub fn density(&self, p: [f64; 2]) -> f64 {
        self.log_density(p).exp()
    }

    /// Mixture moments `Σ w_k E_k[x^p y^q]`.
    pub fn raw_moments(&self) -> RawMoments {
        RawMoments::from_fn(|p, q| self.components.iter().map(|c| c.weight * c.raw_moment(p, q)).sum())
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self { k: 3, seed: 0, max_iter: 200, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean per-sample log-likelihood before each M-step, ending with the
    /// returned model.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    /// Covariance floor `ε` used for regularization.
    pub epsilon: f64,
    /// All samples were identical.
    pub degenerate: bool,
}

fn mean_cov<'a>(samples: impl Iterator<Item = (&'a [f64; 2], f64)> + Clone) -> (f64, [f64; 2], Mat2) {
    let mut w = 0.0;
    let mut m = [0.0; 2];
    for (p, r) in samples.clone() {
        w += r;
        m[0] += r * p[0];
        m[1] += r * p[1];
    }
    if w <= 0.0 {
        return (0.0, [0.0; 2], [[0.0; 2]; 2]);
    }
    m = [m[0] / w, m[1] / w];
    let mut c = [[0.0; 2]; 2];
    for (p, r) in samples {
        let d = [p[0] - m[0], p[1] - m[1]];
        c[0][0] += r * d[0] * d[0];
        c[0][1] += r * d[0] * d[1];
        c[1][1] += r * d[1] * d[1];
    }
    c = [[c[0][0] / w, c[0][1] / w], [c[0][1] / w, c[1][1] / w]];
    (w, m, c)
}

fn min_eigenvalue(c: Mat2) -> f64 {
    let tr = c[0][0] + c[1][1];
    let det = c[0][0] * c[1][1] - c[0][1] * c[0][1];
    let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
    tr / 2.0 - disc
}

/// Adds `εI` only when the covariance is (numerically) not positive definite.
fn regularize(mut c: Mat2, eps: f64) -> Mat2 {
    if min_eigenvalue(c) < eps {
        c[0][0] += eps;
        c[1][1] += eps;
    }
    c
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn kmeans_pp(samples: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut centers = vec![samples[rng.random_range(0..samples.len())]];
    let mut d2: Vec<f64> = samples.iter().map(|&p| sq_dist(p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = samples.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && pick < d {
                chosen = i;
                break;
            }
            pick -= d;
        }
        // Guard against rounding landing on an existing center.
        if d2[chosen] == 0.0 {
            chosen = d2.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        }
        let c = samples[chosen];
        centers.push(c);
        for (i, &p) in samples.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, c));
        }
    }
    centers
}

fn distinct_count(samples: &[[f64; 2]], cap: usize) -> usize {
    let mut keys: Vec<(u64, u64)> = samples.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len().min(cap)
}

/// Expectation maximization for a 2D Gaussian mixture, seeded by k-means++.
pub fn fit_gmm(samples: &[[f64; 2]], params: &GmmParams) -> Result<GmmFit> {
    if params.k == 0 || params.max_iter == 0 || !(params.tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("bad GMM parameters {params:?}")));
    }
    if samples.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidParameter("non-finite sample".into()));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientSamples("GMM fit of an empty sample".into()));
    }
    let all = samples.iter().map(|p| (p, 1.0));
    let (_, _, cov) = mean_cov(all);
    let data_var = 0.5 * (cov[0][0] + cov[1][1]);
    let distinct = distinct_count(samples, params.k.max(2));
    if distinct == 1 {
        let eps = REGULARIZATION * if data_var > 0.0 { data_var } else { 1.0 };
        log::warn!("all {} samples identical; returning a single-point model", samples.len());
        let model = GmmModel {
            components: vec![GaussianComponent { weight: 1.0, mean: samples[0], covariance: [[eps, 0.0], [0.0, eps]] }],
        };
        let ll = samples.iter().map(|&p| model.log_density(p)).sum::<f64>() / samples.len() as f64;
        return Ok(GmmFit { model, log_likelihood: vec![ll], converged: true, epsilon: eps, degenerate: true });
    }
    if distinct < params.k {
        return Err(Error::InsufficientSamples(format!("{} distinct samples for k = {}", distinct, params.k)));
    }
    let eps = REGULARIZATION * data_var;
    let k = params.k;
    let n = samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let centers = kmeans_pp(samples, k, &mut rng);
    let base = regularize(cov, eps);
    let mut model = GmmModel {
        components: centers
            .into_iter()
            .map(|c| GaussianComponent { weight: 1.0 / k as f64, mean: c, covariance: base })
            .collect(),
    };

    let mut resp = vec![0.0; n * k];
    let mut trace = Vec::new();
    let mut converged = false;
    for it in 0..=params.max_iter {
        // E-step.
        let mut ll = 0.0;
        for (i, &p) in samples.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            for (r, c) in row.iter_mut().zip(&model.components) {
                *r = c.weight.ln() + c.log_density(p);
            }
            let lse = log_sum_exp(row.iter().copied());
            ll += lse;
            for r in row.iter_mut() {
                *r = (*r - lse).exp();
            }
        }
        let ll = ll / n as f64;
        let prev = trace.last().copied();
        trace.push(ll);
        if prev.is_some_and(|p: f64| (ll - p).abs() < params.tol) {
            converged = true;
            break;
        }
        if it == params.max_iter {
            break;
        }
        // M-step.
        let mut next = Vec::with_capacity(k);
        for (j, old) in model.components.iter().enumerate() {
            let (w, m, c) = mean_cov(samples.iter().enumerate().map(|(i, p)| (p, resp[i * k + j])));
            if w <= f64::MIN_POSITIVE * n as f64 {
                // Collapsed component: keep its shape with negligible weight.
                next.push(GaussianComponent { weight: f64::MIN_POSITIVE, ..*old });
            } else {
                next.push(GaussianComponent { weight: w / n as f64, mean: m, covariance: regularize(c, eps) });
            }
        }
        let total: f64 = next.iter().map(|c| c.weight).sum();
        for c in &mut next {
            c.weight /= total;
        }
        model.components = next;
    }
    Ok(GmmFit { model, log_likelihood: trace, converged, epsilon: eps, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::MomentAggregate;
    use rand_distr::{Distribution, Normal};

    fn cluster_samples(seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 1.0).unwrap();
        (0..2000)
            .map(|i| {
                let cx = if i % 2 == 0 { -5.0 } else { 5.0 };
                [cx + nd.sample(&mut rng), nd.sample(&mut rng)]
            })
            .collect()
    }

    #[test]
    fn single_component_matches_sample_moments() {
        let s = cluster_samples(1);
        let fit = fit_gmm(&s, &GmmParams { k: 1, ..Default::default() }).unwrap();
        let agg = MomentAggregate::accumulate("x", "y", s.iter().copied());
        let c = &fit.model.components[0];
        let m = agg.mean().unwrap();
        let cov = agg.covariance().unwrap();
        assert!((c.mean[0] - m[0]).abs() < 1e-9 && (c.mean[1] - m[1]).abs() < 1e-9);
        for a in 0..2 {
            for b in 0..2 {
                assert!((c.covariance[a][b] - cov[a][b]).abs() <= 1e-9 * cov[0][0]);
            }
        }
        assert!(fit.converged);
    }

    #[test]
    fn recovers_two_clusters() {
        let s = cluster_samples(2);
        let fit = fit_gmm(&s, &GmmParams { k: 2, seed: 7, ..Default::default() }).unwrap();
        let mut means: Vec<[f64; 2]> = fit.model.components.iter().map(|c| c.mean).collect();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((means[0][0] + 5.0).abs() < 0.2 && means[0][1].abs() < 0.2, "{means:?}");
        assert!((means[1][0] - 5.0).abs() < 0.2 && means[1][1].abs() < 0.2, "{means:?}");
    }

    #[test]
    fn likelihood_is_monotone() {
        let s = cluster_samples(3);
        let fit = fit_gmm(&s, &GmmParams { k: 3, seed: 1, ..Default::default() }).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{:?}", fit.log_likelihood);
        }
    }

    #[test]
    fn identical_points_degenerate() {
        let s = vec![[1.0, 2.0]; 10];
        let fit = fit_gmm(&s, &GmmParams::default()).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.model.components.len(), 1);
        assert_eq!(fit.model.components[0].mean, [1.0, 2.0]);
        assert!(fit_gmm(&[[0.0, 0.0], [1.0, 1.0]], &GmmParams::default()).is_err());
    }

    #[test]
    fn gaussian_moments_match_isserlis() {
        let c = GaussianComponent { weight: 1.0, mean: [1.0, -2.0], covariance: [[2.0, 0.5], [0.5, 1.0]] };
        let m = GmmModel { components: vec![c] }.raw_moments();
        assert!((m.central(2, 0) - 2.0).abs() < 1e-12);
        assert!((m.central(1, 1) - 0.5).abs() < 1e-12);
        assert!((m.central(2, 2) - (2.0 + 0.5)).abs() < 1e-12);
        assert!(m.central(2, 1).abs() < 1e-12);
    }
}
