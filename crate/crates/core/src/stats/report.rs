use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::gmm::GmmModel;
use super::histogram::Histogram2D;
use super::kde::KdeModel;
use super::moments::{MomentAggregate, RawMoments, MAX_ORDER};
use crate::error::{Error, Result};

pub enum MomentModel<'a> {
    Gmm(&'a GmmModel),
    Histogram(&'a Histogram2D),
    Kde(&'a KdeModel),
}

impl MomentModel<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            MomentModel::Gmm(_) => "gmm",
            MomentModel::Histogram(_) => "histogram",
            MomentModel::Kde(_) => "kde",
        }
    }

    pub fn raw_moments(&self) -> Result<RawMoments> {
        match self {
            MomentModel::Gmm(g) => Ok(g.raw_moments()),
            MomentModel::Kde(k) => Ok(k.raw_moments()),
            MomentModel::Histogram(h) => histogram_moments(h),
        }
    }
}

/// Moments of the histogram with each bin's mass at its center.
fn histogram_moments(h: &Histogram2D) -> Result<RawMoments> {
    let total = h.inside();
    if total == 0 {
        return Err(Error::InsufficientSamples("histogram without in-range samples".into()));
    }
    let mut mass = Vec::new();
    for j in 0..h.y.bins {
        for i in 0..h.x.bins {
            let c = h.count(i, j);
            if c > 0 {
                mass.push((c as f64 / total as f64, h.x.center(i), h.y.center(j)));
            }
        }
    }
    Ok(RawMoments::from_fn(|p, q| mass.iter().map(|&(w, x, y)| w * x.powi(p as i32) * y.powi(q as i32)).sum()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    /// `mean_x`, `mean_y` or `mu_pq` for central co-moments.
    pub moment: String,
    pub p: usize,
    pub q: usize,
    pub raw: f64,
    pub model: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsReport {
    pub model: String,
    pub variables: [String; 2],
    pub n: u64,
    pub rows: Vec<MomentRow>,
}

fn relative_error(raw: f64, model: f64) -> f64 {
    let diff = (model - raw).abs();
    if raw == 0.0 {
        diff
    } else {
        diff / raw.abs()
    }
}

/// Means and central co-moments of orders 2 through 4, raw sample vs model.
pub fn moments_report(model: &MomentModel<'_>, raw: &MomentAggregate) -> Result<MomentsReport> {
    let data = raw.raw_moments()?;
    let fit = model.raw_moments()?;
    let mut rows = Vec::new();
    for (name, p, q) in [("mean_x", 1, 0), ("mean_y", 0, 1)] {
        let (r, m) = (data.get(p, q), fit.get(p, q));
        rows.push(MomentRow { moment: name.into(), p, q, raw: r, model: m, relative_error: relative_error(r, m) });
    }
    for order in 2..=MAX_ORDER {
        for p in (0..=order).rev() {
            let q = order - p;
            let (r, m) = (data.central(p, q), fit.central(p, q));
            rows.push(MomentRow {
                moment: format!("mu_{p}{q}"),
                p,
                q,
                raw: r,
                model: m,
                relative_error: relative_error(r, m),
            });
        }
    }
    Ok(MomentsReport { model: model.name().into(), variables: raw.variables.clone(), n: raw.n(), rows })
}

fn latex_escape(s: &str) -> String {
    s.replace('\\', "\\textbackslash{}").replace('_', "\\_").replace('&', "\\&").replace('%', "\\%")
}

impl MomentsReport {
    pub fn row(&self, moment: &str) -> Option<&MomentRow> {
        self.rows.iter().find(|r| r.moment == moment)
    }

    pub fn to_latex(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "% moments of ({}, {}), n = {}, model = {}",
            self.variables[0], self.variables[1], self.n, self.model
        );
        s.push_str("\\begin{tabular}{lrrr}\n\\hline\n");
        s.push_str("Moment & Raw & Model & Rel. error \\\\\n\\hline\n");
        for r in &self.rows {
            let label = match r.moment.as_str() {
                "mean_x" => format!("$\\mu_{{{}}}$", latex_escape(&self.variables[0])),
                "mean_y" => format!("$\\mu_{{{}}}$", latex_escape(&self.variables[1])),
                _ => format!("$\\mu_{{{}{}}}$", r.p, r.q),
            };
            let _ = writeln!(s, "{label} & {:.6e} & {:.6e} & {:.3e} \\\\", r.raw, r.model, r.relative_error);
        }
        s.push_str("\\hline\n\\end{tabular}\n");
        s
    }
}
