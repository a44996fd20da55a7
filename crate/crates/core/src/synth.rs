//! Deterministic synthetic volumes used as fixtures and demo inputs.
//!
//! Every generated grid carries three fields: `f` (the kind-specific scalar
//! used for isobands), `w` (a smooth positive weight) and `q` (a smooth
//! secondary variable partly correlated with `f`).

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Rings,
    Spiral,
    Horseshoe,
    GaussianMix,
    RandomSmooth,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rings" => Self::Rings,
            "spiral" => Self::Spiral,
            "horseshoe" => Self::Horseshoe,
            "gaussian-mix" => Self::GaussianMix,
            "random-smooth" => Self::RandomSmooth,
            other => return Err(Error::InvalidParameter(format!("unknown synth kind `{other}`"))),
        })
    }
}

/// Iso values that give each kind its characteristic bands on `f`.
pub fn default_iso(kind: SynthKind) -> Vec<f64> {
    match kind {
        SynthKind::Rings => vec![0.2, 0.4, 0.6, 0.8],
        SynthKind::Spiral => vec![0.5, 1.0],
        SynthKind::Horseshoe => vec![0.0, 0.5, 1.0],
        SynthKind::GaussianMix => vec![0.3, 0.6, 0.9, 1.5],
        SynthKind::RandomSmooth => vec![0.3, 0.5, 0.7],
    }
}

/// Horseshoe geometry in normalized coordinates (`[-1, 1]` per axis).
#[derive(Debug, Clone, Copy)]
pub struct HorseshoeShape {
    pub half_gap: f64,
    pub base_y: f64,
    pub tip_y: f64,
    pub radius: f64,
}

impl HorseshoeShape {
    pub fn for_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4855_u64);
        Self {
            half_gap: 0.4 + rng.random_range(-0.01..0.01),
            base_y: -0.3,
            tip_y: 0.85 + rng.random_range(-0.02..0.0),
            radius: 0.18,
        }
    }

    /// Distance from a normalized point to the U centreline.
    pub fn centerline_distance(&self, u: [f64; 3]) -> f64 {
        let (x, y, z) = (u[0], u[1], u[2]);
        let planar = if y >= self.base_y {
            let dy = if y > self.tip_y { y - self.tip_y } else { 0.0 };
            let dl = ((x + self.half_gap).powi(2) + dy * dy).sqrt();
            let dr = ((x - self.half_gap).powi(2) + dy * dy).sqrt();
            dl.min(dr)
        } else {
            let r = (x * x + (y - self.base_y).powi(2)).sqrt();
            (r - self.half_gap).abs()
        };
        (planar * planar + z * z).sqrt()
    }

    /// Grid index-space position of the left and right arm tips.
    pub fn tips(&self, dims: Dims) -> [[f64; 3]; 2] {
        let to_index = |v: f64, n: usize| ((v + 1.0) * n as f64 - 1.0) / 2.0;
        let zc = if dims.nz == 1 { 0.0 } else { to_index(0.0, dims.nz) };
        [
            [to_index(-self.half_gap, dims.nx), to_index(self.tip_y, dims.ny), zc],
            [to_index(self.half_gap, dims.nx), to_index(self.tip_y, dims.ny), zc],
        ]
    }
}

fn normalized(dims: Dims, idx: usize) -> [f64; 3] {
    let c = dims.coords(idx);
    let n = dims.as_array();
    let mut u = [0.0; 3];
    for a in 0..3 {
        u[a] = if n[a] == 1 { 0.0 } else { (2.0 * c[a] as f64 + 1.0) / n[a] as f64 - 1.0 };
    }
    u
}

struct FourierModes {
    modes: Vec<([f64; 3], f64, f64)>,
    norm: f64,
}

impl FourierModes {
    fn new(rng: &mut ChaCha8Rng, count: usize, max_k: f64, flat_z: bool) -> Self {
        let modes: Vec<_> = (0..count)
            .map(|_| {
                let k = [
                    rng.random_range(-max_k..max_k),
                    rng.random_range(-max_k..max_k),
                    if flat_z { 0.0 } else { rng.random_range(-max_k..max_k) },
                ];
                (k, rng.random_range(0.3..1.0), rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        let norm = modes.iter().map(|m| m.1).sum::<f64>().max(1e-12);
        Self { modes, norm }
    }

    /// Value in `[0, 1]`.
    fn eval(&self, u: [f64; 3]) -> f64 {
        let s: f64 = self
            .modes
            .iter()
            .map(|(k, a, ph)| a * (PI * (k[0] * u[0] + k[1] * u[1] + k[2] * u[2]) + ph).cos())
            .sum();
        0.5 + 0.5 * s / self.norm
    }
}

/// Build a deterministic synthetic grid with unit spacing.
pub fn synth_field(kind: SynthKind, dims: Dims, seed: u64) -> Result<VoxelGrid> {
    let grid = VoxelGrid::new(dims, [1.0; 3])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = dims.nz == 1;
    let n = dims.len();

    let f: Vec<f32> = match kind {
        SynthKind::Rings => {
            let c = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0];
            (0..n)
                .map(|i| {
                    let u = normalized(dims, i);
                    let d = [u[0] - c[0], u[1] - c[1], u[2] - c[2]];
                    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() as f32
                })
                .collect()
        }
        SynthKind::Spiral => {
            let phase = rng.random_range(0.0..2.0 * PI);
            let wobble = rng.random_range(0.0..2.0 * PI);
            let pitch = 0.3;
            (0..n)
                .map(|i| {
                    let u = normalized(dims, i);
                    let r = (u[0] * u[0] + u[1] * u[1]).sqrt();
                    let theta = u[1].atan2(u[0]) + 0.6 * u[2] * PI;
                    let arg = 2.0 * PI * r / pitch - theta
                        + phase
                        + 0.25 * r * (3.0 * theta + wobble).sin();
                    (0.5 + 0.5 * arg.sin()) as f32
                })
                .collect()
        }
        SynthKind::Horseshoe => {
            let shape = HorseshoeShape::for_seed(seed);
            (0..n)
                .map(|i| {
                    let d = shape.centerline_distance(normalized(dims, i));
                    (1.0 - d / (2.0 * shape.radius)).clamp(0.0, 1.0) as f32
                })
                .collect()
        }
        SynthKind::GaussianMix => {
            let blobs: Vec<([f64; 3], f64, f64)> = (0..6)
                .map(|_| {
                    let c = [
                        rng.random_range(-0.8..0.8),
                        rng.random_range(-0.8..0.8),
                        if flat { 0.0 } else { rng.random_range(-0.8..0.8) },
                    ];
                    (c, rng.random_range(0.15..0.35), rng.random_range(0.5..1.0))
                })
                .collect();
            (0..n)
                .map(|i| {
                    let u = normalized(dims, i);
                    blobs
                        .iter()
                        .map(|(c, s, a)| {
                            let d2 = (u[0] - c[0]).powi(2) + (u[1] - c[1]).powi(2) + (u[2] - c[2]).powi(2);
                            a * (-d2 / (2.0 * s * s)).exp()
                        })
                        .sum::<f64>() as f32
                })
                .collect()
        }
        SynthKind::RandomSmooth => {
            let modes = FourierModes::new(&mut rng, 8, 3.0, flat);
            (0..n).map(|i| modes.eval(normalized(dims, i)) as f32).collect()
        }
    };

    let weight_modes = FourierModes::new(&mut rng, 4, 1.5, flat);
    let w: Vec<f32> = (0..n)
        .map(|i| (0.2 + 0.8 * weight_modes.eval(normalized(dims, i))) as f32)
        .collect();
    let q_modes = FourierModes::new(&mut rng, 6, 2.5, flat);
    let q: Vec<f32> = (0..n)
        .map(|i| (0.5 * f[i] as f64 + 0.5 * q_modes.eval(normalized(dims, i))) as f32)
        .collect();

    grid.with_field("f", f)?.with_field("w", w)?.with_field("q", q)
}
