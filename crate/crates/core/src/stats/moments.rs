use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Highest total order `p + q` of the tracked power sums.
pub const MAX_ORDER: usize = 4;
const SLOTS: usize = 15;

/// Slot of `S_pq` in the packed triangular layout.
#[inline]
pub(crate) fn slot(p: usize, q: usize) -> usize {
    debug_assert!(p + q <= MAX_ORDER);
    // Rows of constant p hold MAX_ORDER + 1 - p entries.
    p * (2 * MAX_ORDER + 3 - p) / 2 + q
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Normalized raw moments `E[x^p y^q]` for `p + q ≤ 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawMoments {
    values: [f64; SLOTS],
}

impl RawMoments {
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = [0.0; SLOTS];
        for p in 0..=MAX_ORDER {
            for q in 0..=MAX_ORDER - p {
                values[slot(p, q)] = f(p, q);
            }
        }
        Self { values }
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.values[slot(p, q)]
    }

    pub fn mean(&self) -> [f64; 2] {
        [self.get(1, 0), self.get(0, 1)]
    }

    /// Central co-moment `E[(x − μx)^p (y − μy)^q]` by binomial expansion.
    pub fn central(&self, p: usize, q: usize) -> f64 {
        let [mx, my] = self.mean();
        let mut acc = 0.0;
        for i in 0..=p {
            for j in 0..=q {
                let coef = binomial(p, i) * binomial(q, j) * (-mx).powi((p - i) as i32) * (-my).powi((q - j) as i32);
                acc += coef * self.get(i, j);
            }
        }
        acc
    }
}

/// Mergeable power sums `S_pq = Σ x^p y^q` of one variable pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentAggregate {
    pub variables: [String; 2],
    n: u64,
    sums: [CompensatedSum; SLOTS],
    min: [f64; 2],
    max: [f64; 2],
}

impl MomentAggregate {
    pub fn new(x: impl Into<String>, y: impl Into<String>) -> Self {
        Self {
            variables: [x.into(), y.into()],
            n: 0,
            sums: [CompensatedSum::new(); SLOTS],
            min: [f64::INFINITY; 2],
            max: [f64::NEG_INFINITY; 2],
        }
    }

    pub fn accumulate(x: impl Into<String>, y: impl Into<String>, samples: impl IntoIterator<Item = [f64; 2]>) -> Self {
        let mut agg = Self::new(x, y);
        for s in samples {
            agg.push(s[0], s[1]);
        }
        agg
    }

    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let mut xp = 1.0;
        for p in 0..=MAX_ORDER {
            let mut term = xp;
            for q in 0..=MAX_ORDER - p {
                self.sums[slot(p, q)].add(term);
                term *= y;
            }
            xp *= x;
        }
        self.min = [self.min[0].min(x), self.min[1].min(y)];
        self.max = [self.max[0].max(x), self.max[1].max(y)];
    }

    pub fn merge(&mut self, other: &MomentAggregate) -> Result<()> {
        if self.variables != other.variables {
            return Err(Error::VariableMismatch(
                self.variables[0].clone(),
                self.variables[1].clone(),
                other.variables[0].clone(),
                other.variables[1].clone(),
            ));
        }
        self.n += other.n;
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
        self.min = [self.min[0].min(other.min[0]), self.min[1].min(other.min[1])];
        self.max = [self.max[0].max(other.max[0]), self.max[1].max(other.max[1])];
        Ok(())
    }

    pub fn merged(mut self, other: &MomentAggregate) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn raw_sum(&self, p: usize, q: usize) -> f64 {
        self.sums[slot(p, q)].value()
    }

    /// Per-variable minimum; `None` when empty.
    pub fn min(&self) -> Option<[f64; 2]> {
        (self.n > 0).then_some(self.min)
    }

    pub fn max(&self) -> Option<[f64; 2]> {
        (self.n > 0).then_some(self.max)
    }

    pub fn raw_moments(&self) -> Result<RawMoments> {
        if self.n == 0 {
            return Err(Error::InsufficientSamples("moments of an empty aggregate".into()));
        }
        let n = self.n as f64;
        Ok(RawMoments::from_fn(|p, q| self.raw_sum(p, q) / n))
    }

    pub fn mean(&self) -> Result<[f64; 2]> {
        Ok(self.raw_moments()?.mean())
    }

    /// Population central co-moment of order `(p, q)`.
    pub fn comoment(&self, p: usize, q: usize) -> Result<f64> {
        if p + q > MAX_ORDER {
            return Err(Error::InvalidParameter(format!("co-moment order {p}+{q} exceeds {MAX_ORDER}")));
        }
        Ok(self.raw_moments()?.central(p, q))
    }

    /// Population covariance matrix.
    pub fn covariance(&self) -> Result<[[f64; 2]; 2]> {
        let m = self.raw_moments()?;
        let c = m.central(1, 1);
        Ok([[m.central(2, 0), c], [c, m.central(0, 2)]])
    }
}
