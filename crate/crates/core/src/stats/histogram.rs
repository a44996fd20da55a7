use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bin count per axis.
pub const DEFAULT_BINS: usize = 64;

/// Uniform binning of `[lo, hi]`; the upper edge belongs to the last bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

/// Where a value falls relative to an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bin {
    Under,
    In(usize),
    Over,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || bins == 0 {
            return Err(Error::InvalidParameter(format!("bad axis [{lo}, {hi}] with {bins} bins")));
        }
        Ok(Self { lo, hi, bins })
    }

    /// Axis spanning the data; a constant sample gets a unit-wide range.
    pub fn covering(values: impl IntoIterator<Item = f64>, bins: usize) -> Result<Self> {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() {
            return Err(Error::InsufficientSamples("axis range of an empty sample".into()));
        }
        if lo == hi {
            Self::new(lo - 0.5, hi + 0.5, bins)
        } else {
            Self::new(lo, hi, bins)
        }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn upper_edge(&self, i: usize) -> f64 {
        if i + 1 == self.bins {
            self.hi
        } else {
            self.lo + (i + 1) as f64 * self.width()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.center(i)).collect()
    }

    pub fn bin(&self, v: f64) -> Bin {
        if v < self.lo {
            Bin::Under
        } else if v > self.hi {
            Bin::Over
        } else {
            let i = ((v - self.lo) / (self.hi - self.lo) * self.bins as f64) as usize;
            Bin::In(i.min(self.bins - 1))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram1D {
    pub axis: Axis,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram1D {
    pub fn new(axis: Axis) -> Self {
        Self { axis, counts: vec![0; axis.bins], underflow: 0, overflow: 0 }
    }

    pub fn from_values(axis: Axis, values: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Self::new(axis);
        for v in values {
            h.push(v);
        }
        h
    }

    pub fn push(&mut self, v: f64) {
        match self.axis.bin(v) {
            Bin::Under => self.underflow += 1,
            Bin::Over => self.overflow += 1,
            Bin::In(i) => self.counts[i] += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    pub fn merge(&mut self, other: &Histogram1D) -> Result<()> {
        if self.axis != other.axis {
            return Err(Error::InvalidParameter("cannot merge histograms with different axes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        Ok(())
    }
}

/// Joint histogram; `counts` is row-major with x fastest. A sample outside
/// either axis is tallied once in `outside`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub x: Axis,
    pub y: Axis,
    pub counts: Vec<u64>,
    pub outside: u64,
}

impl Histogram2D {
    pub fn new(x: Axis, y: Axis) -> Self {
        Self { x, y, counts: vec![0; x.bins * y.bins], outside: 0 }
    }

    pub fn from_samples(x: Axis, y: Axis, samples: impl IntoIterator<Item = [f64; 2]>) -> Self {
        let mut h = Self::new(x, y);
        for s in samples {
            h.push(s[0], s[1]);
        }
        h
    }

    pub fn push(&mut self, x: f64, y: f64) {
        match (self.x.bin(x), self.y.bin(y)) {
            (Bin::In(i), Bin::In(j)) => self.counts[j * self.x.bins + i] += 1,
            _ => self.outside += 1,
        }
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[j * self.x.bins + i]
    }

    pub fn inside(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.inside() + self.outside
    }

    pub fn merge(&mut self, other: &Histogram2D) -> Result<()> {
        if self.x != other.x || self.y != other.y {
            return Err(Error::InvalidParameter("cannot merge histograms with different axes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.outside += other.outside;
        Ok(())
    }
}
