use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::histogram::Axis;
use super::moments::{MomentAggregate, RawMoments};
use crate::error::{Error, Result};

/// Bandwidth used for an axis without spread, relative to `max(1, |mean|)`.
pub const FALLBACK_BANDWIDTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "bandwidth")]
pub enum BandwidthRule {
    /// `σ n^(-1/6)` per axis.
    Scott,
    /// `0.9 · min(σ, IQR/1.349) · n^(-1/6)` per axis.
    Silverman,
    Fixed([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub samples: Vec<[f64; 2]>,
    pub bandwidth: [f64; 2],
}

/// Evaluation raster: densities at the cell centers of `x × y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub x: Axis,
    pub y: Axis,
}

/// Density values on an [`EvalGrid`], row-major with x fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRaster {
    pub grid: EvalGrid,
    pub values: Vec<f64>,
}

impl DensityRaster {
    /// Midpoint-rule integral over the raster.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.x.width() * self.grid.y.width()
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn spread(values: &mut [f64], robust: bool) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !robust {
        return (mean, sd);
    }
    values.sort_by(f64::total_cmp);
    let iqr = (quantile(values, 0.75) - quantile(values, 0.25)) / 1.349;
    let s = if iqr > 0.0 { sd.min(iqr) } else { sd };
    (mean, 0.9 * s)
}

impl KdeModel {
    pub fn fit(samples: Vec<[f64; 2]>, rule: BandwidthRule) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientSamples("KDE of an empty sample".into()));
        }
        let bandwidth = match rule {
            BandwidthRule::Fixed(h) => {
                if !(h[0] > 0.0 && h[1] > 0.0 && h[0].is_finite() && h[1].is_finite()) {
                    return Err(Error::InvalidParameter(format!("bandwidth {h:?} must be positive")));
                }
                h
            }
            BandwidthRule::Scott | BandwidthRule::Silverman => {
                let factor = (samples.len() as f64).powf(-1.0 / 6.0);
                let robust = rule == BandwidthRule::Silverman;
                let mut h = [0.0; 2];
                for (a, out) in h.iter_mut().enumerate() {
                    let mut v: Vec<f64> = samples.iter().map(|p| p[a]).collect();
                    let (mean, s) = spread(&mut v, robust);
                    *out = if s > 0.0 {
                        s * factor
                    } else {
                        log::warn!("zero spread on axis {a}; using the fallback bandwidth");
                        FALLBACK_BANDWIDTH * mean.abs().max(1.0)
                    };
                }
                h
            }
        };
        Ok(Self { samples, bandwidth })
    }

    pub fn density(&self, p: [f64; 2]) -> f64 {
        let [hx, hy] = self.bandwidth;
        let norm = 1.0 / (2.0 * PI * hx * hy * self.samples.len() as f64);
        self.samples
            .iter()
            .map(|s| {
                let u = (p[0] - s[0]) / hx;
                let v = (p[1] - s[1]) / hy;
                (-0.5 * (u * u + v * v)).exp()
            })
            .sum::<f64>()
            * norm
    }

    pub fn evaluate(&self, grid: EvalGrid) -> DensityRaster {
        let nx = grid.x.bins;
        let values = (0..nx * grid.y.bins)
            .into_par_iter()
            .map(|c| self.density([grid.x.center(c % nx), grid.y.center(c / nx)]))
            .collect();
        DensityRaster { grid, values }
    }

    /// Grid covering the samples with a margin of four bandwidths.
    pub fn covering_grid(&self, bins: usize) -> Result<EvalGrid> {
        let margin = |a: usize| 4.0 * self.bandwidth[a];
        let x = Axis::covering(self.samples.iter().map(|p| p[0]), bins)?;
        let y = Axis::covering(self.samples.iter().map(|p| p[1]), bins)?;
        Ok(EvalGrid {
            x: Axis::new(x.lo - margin(0), x.hi + margin(0), bins)?,
            y: Axis::new(y.lo - margin(1), y.hi + margin(1), bins)?,
        })
    }

    /// Moments of the smoothed density: the sample moments convolved with
    /// the Gaussian kernel.
    pub fn raw_moments(&self) -> RawMoments {
        let agg = MomentAggregate::accumulate("x", "y", self.samples.iter().copied());
        let sample = agg.raw_moments().expect("non-empty");
        let kernel = |h: f64, i: usize| match i {
            0 => 1.0,
            2 => h * h,
            4 => 3.0 * h.powi(4),
            _ => 0.0,
        };
        let binom = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
        RawMoments::from_fn(|p, q| {
            let mut acc = 0.0;
            for i in 0..=p {
                for j in 0..=q {
                    acc += binom(p, i)
                        * binom(q, j)
                        * sample.get(p - i, q - j)
                        * kernel(self.bandwidth[0], i)
                        * kernel(self.bandwidth[1], j);
                }
            }
            acc
        })
    }
}

/// Gaussian product-kernel density of `samples` on `grid`.
pub fn kde_density(samples: &[[f64; 2]], rule: BandwidthRule, grid: EvalGrid) -> Result<DensityRaster> {
    Ok(KdeModel::fit(samples.to_vec(), rule)?.evaluate(grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_bump() {
        let model = KdeModel::fit(vec![[1.0, 2.0]], BandwidthRule::Fixed([0.5, 0.25])).unwrap();
        let peak = model.density([1.0, 2.0]);
        assert!((peak - 1.0 / (2.0 * PI * 0.125)).abs() < 1e-12);
        assert!(model.density([1.5, 2.0]) < peak);
        // Zero spread on both axes falls back to the minimal bandwidth.
        let fallback = KdeModel::fit(vec![[1.0, 2.0]], BandwidthRule::Scott).unwrap();
        assert_eq!(fallback.bandwidth, [FALLBACK_BANDWIDTH, 2.0 * FALLBACK_BANDWIDTH]);
    }

    #[test]
    fn integrates_to_one_and_is_symmetric() {
        let samples: Vec<[f64; 2]> =
            (0..200).map(|i| (i as f64 * 0.37).sin() * 3.0).map(|v| [v, -v * 0.5 + 0.1 * v.abs()]).collect();
        let mut mirrored = samples.clone();
        mirrored.extend(samples.iter().map(|p| [-p[0], p[1]]));
        let model = KdeModel::fit(mirrored, BandwidthRule::Silverman).unwrap();
        let grid = model.covering_grid(81).unwrap();
        let g = EvalGrid { x: Axis::new(-grid.x.hi, grid.x.hi, 81).unwrap(), y: grid.y };
        let r = model.evaluate(g);
        let total = r.integral();
        assert!((0.98..=1.0 + 1e-9).contains(&total), "{total}");
        for j in 0..81 {
            for i in 0..81 {
                let a = r.values[j * 81 + i];
                let b = r.values[j * 81 + 80 - i];
                assert!((a - b).abs() <= 1e-12 * a.max(1e-300), "{a} {b}");
            }
        }
    }

    #[test]
    fn moments_add_kernel_variance() {
        let samples = vec![[0.0, 0.0], [2.0, 1.0], [4.0, -1.0]];
        let model = KdeModel::fit(samples.clone(), BandwidthRule::Fixed([0.5, 0.2])).unwrap();
        let m = model.raw_moments();
        let agg = MomentAggregate::accumulate("x", "y", samples);
        assert!((m.central(2, 0) - (agg.comoment(2, 0).unwrap() + 0.25)).abs() < 1e-12);
        assert!((m.central(1, 1) - agg.comoment(1, 1).unwrap()).abs() < 1e-12);
    }
}
