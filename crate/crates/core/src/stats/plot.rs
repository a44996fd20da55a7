use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::gmm::GmmModel;
use super::histogram::{Axis, Bin, Histogram1D, Histogram2D, DEFAULT_BINS};
use super::kde::{EvalGrid, KdeModel};
use crate::error::{Error, Result};

/// Scatter payloads are thinned to at most this many points.
pub const MAX_SCATTER_POINTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotMode {
    Hist1d,
    Hist2d,
    Cdf,
    Conditional1d,
    Conditional2d,
    Scatter,
}

impl PlotMode {
    pub fn min_samples(self) -> usize {
        match self {
            PlotMode::Conditional1d | PlotMode::Conditional2d => 2,
            _ => 1,
        }
    }

    pub fn needs_y(self) -> bool {
        !matches!(self, PlotMode::Hist1d | PlotMode::Cdf)
    }
}

impl FromStr for PlotMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidParameter(format!("unknown plot mode `{s}`")))
    }
}

/// Column-oriented samples of a selection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotSamples {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    /// Third variable, averaged by `conditional2d`.
    pub z: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotRequest {
    pub mode: PlotMode,
    pub x_range: Option<[f64; 2]>,
    pub y_range: Option<[f64; 2]>,
    pub bins: usize,
}

impl PlotRequest {
    pub fn new(mode: PlotMode) -> Self {
        Self { mode, x_range: None, y_range: None, bins: DEFAULT_BINS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PlotPayload {
    Hist1d {
        x: Axis,
        counts: Vec<u64>,
        underflow: u64,
        overflow: u64,
    },
    Hist2d {
        x: Axis,
        y: Axis,
        /// Row-major, x fastest.
        counts: Vec<u64>,
        outside: u64,
    },
    Cdf {
        x: Axis,
        /// Fraction of samples at or below each bin's upper edge.
        values: Vec<f64>,
    },
    Conditional1d {
        x: Axis,
        y: [f64; 2],
        counts: Vec<u64>,
        mean: Vec<Option<f64>>,
        std: Vec<Option<f64>>,
    },
    Conditional2d {
        x: Axis,
        y: Axis,
        counts: Vec<u64>,
        mean: Vec<Option<f64>>,
    },
    Scatter {
        x: [f64; 2],
        y: [f64; 2],
        points: Vec<[f64; 2]>,
        total: usize,
    },
    /// Model density raster (KDE or GMM layer).
    Density {
        model: String,
        x: Axis,
        y: Axis,
        values: Vec<f64>,
    },
}

impl PlotPayload {
    pub fn mode_name(&self) -> &'static str {
        match self {
            PlotPayload::Hist1d { .. } => "hist1d",
            PlotPayload::Hist2d { .. } => "hist2d",
            PlotPayload::Cdf { .. } => "cdf",
            PlotPayload::Conditional1d { .. } => "conditional1d",
            PlotPayload::Conditional2d { .. } => "conditional2d",
            PlotPayload::Scatter { .. } => "scatter",
            PlotPayload::Density { .. } => "density",
        }
    }
}

fn axis(range: Option<[f64; 2]>, values: &[f64], bins: usize) -> Result<Axis> {
    match range {
        Some([lo, hi]) => Axis::new(lo, hi, bins),
        None => Axis::covering(values.iter().copied(), bins),
    }
}

fn require<'a>(v: &'a Option<Vec<f64>>, name: &str, n: usize) -> Result<&'a [f64]> {
    let v = v.as_deref().ok_or_else(|| Error::InvalidParameter(format!("plot needs a `{name}` variable")))?;
    if v.len() != n {
        return Err(Error::InvalidParameter(format!("`{name}` has {} values, expected {n}", v.len())));
    }
    Ok(v)
}

/// Per-bin mean and population standard deviation of `values`.
fn binned_mean_std(bins: usize, cells: impl Iterator<Item = Option<(usize, f64)>>) -> (Vec<u64>, Vec<Option<f64>>, Vec<Option<f64>>) {
    let mut count = vec![0u64; bins];
    let mut sum = vec![0.0; bins];
    let mut sq = vec![0.0; bins];
    let cells: Vec<(usize, f64)> = cells.flatten().collect();
    for &(b, v) in &cells {
        count[b] += 1;
        sum[b] += v;
    }
    let mean: Vec<Option<f64>> = (0..bins).map(|b| (count[b] > 0).then(|| sum[b] / count[b] as f64)).collect();
    for &(b, v) in &cells {
        let d = v - mean[b].unwrap();
        sq[b] += d * d;
    }
    let std = (0..bins).map(|b| (count[b] > 0).then(|| (sq[b] / count[b] as f64).sqrt())).collect();
    (count, mean, std)
}

/// Plot payload of a selection for one mode.
pub fn plot_data(samples: &PlotSamples, req: &PlotRequest) -> Result<PlotPayload> {
    let n = samples.x.len();
    if n < req.mode.min_samples() {
        return Err(Error::InsufficientSamples(format!("{:?} needs {} samples, got {n}", req.mode, req.mode.min_samples())));
    }
    if req.bins == 0 {
        return Err(Error::InvalidParameter("bin count must be positive".into()));
    }
    let xs = &samples.x;
    let ys = if req.mode.needs_y() { require(&samples.y, "y", n)? } else { &[][..] };
    Ok(match req.mode {
        PlotMode::Hist1d => {
            let h = Histogram1D::from_values(axis(req.x_range, xs, req.bins)?, xs.iter().copied());
            PlotPayload::Hist1d { x: h.axis, counts: h.counts, underflow: h.underflow, overflow: h.overflow }
        }
        PlotMode::Cdf => {
            let h = Histogram1D::from_values(axis(req.x_range, xs, req.bins)?, xs.iter().copied());
            let mut acc = h.underflow;
            let values = h
                .counts
                .iter()
                .map(|&c| {
                    acc += c;
                    acc as f64 / n as f64
                })
                .collect();
            PlotPayload::Cdf { x: h.axis, values }
        }
        PlotMode::Hist2d => {
            let (ax, ay) = (axis(req.x_range, xs, req.bins)?, axis(req.y_range, ys, req.bins)?);
            let h = Histogram2D::from_samples(ax, ay, xs.iter().zip(ys).map(|(&x, &y)| [x, y]));
            PlotPayload::Hist2d { x: h.x, y: h.y, counts: h.counts, outside: h.outside }
        }
        PlotMode::Conditional1d => {
            let ax = axis(req.x_range, xs, req.bins)?;
            let yr = match req.y_range {
                Some(r) => r,
                None => {
                    let a = Axis::covering(ys.iter().copied(), 1)?;
                    [a.lo, a.hi]
                }
            };
            let cells = xs.iter().zip(ys).map(|(&x, &y)| match ax.bin(x) {
                Bin::In(i) => Some((i, y)),
                _ => None,
            });
            let (counts, mean, std) = binned_mean_std(ax.bins, cells);
            PlotPayload::Conditional1d { x: ax, y: yr, counts, mean, std }
        }
        PlotMode::Conditional2d => {
            let zs = require(&samples.z, "z", n)?;
            let (ax, ay) = (axis(req.x_range, xs, req.bins)?, axis(req.y_range, ys, req.bins)?);
            let cells = (0..n).map(|k| match (ax.bin(xs[k]), ay.bin(ys[k])) {
                (Bin::In(i), Bin::In(j)) => Some((j * ax.bins + i, zs[k])),
                _ => None,
            });
            let (counts, mean, _) = binned_mean_std(ax.bins * ay.bins, cells);
            PlotPayload::Conditional2d { x: ax, y: ay, counts, mean }
        }
        PlotMode::Scatter => {
            let (ax, ay) = (axis(req.x_range, xs, 1)?, axis(req.y_range, ys, 1)?);
            let stride = n.div_ceil(MAX_SCATTER_POINTS).max(1);
            let points = (0..n).step_by(stride).map(|k| [xs[k], ys[k]]).collect();
            PlotPayload::Scatter { x: [ax.lo, ax.hi], y: [ay.lo, ay.hi], points, total: n }
        }
    })
}

/// Density raster payload of a fitted model.
pub fn density_payload(model: &DensityModel<'_>, grid: EvalGrid) -> PlotPayload {
    let (name, values) = match model {
        DensityModel::Kde(k) => ("kde", k.evaluate(grid).values),
        DensityModel::Gmm(g) => {
            let nx = grid.x.bins;
            let v = (0..nx * grid.y.bins).map(|c| g.density([grid.x.center(c % nx), grid.y.center(c / nx)])).collect();
            ("gmm", v)
        }
    };
    PlotPayload::Density { model: name.into(), x: grid.x, y: grid.y, values }
}

pub enum DensityModel<'a> {
    Kde(&'a KdeModel),
    Gmm(&'a GmmModel),
}
