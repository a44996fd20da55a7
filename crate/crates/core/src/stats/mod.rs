//! Mergeable statistics of regions and the density models behind the plots.

pub mod gmm;
pub mod hierarchy;
pub mod histogram;
pub mod kde;
pub mod moments;
pub mod plot;
pub mod report;

pub use gmm::{fit_gmm, GaussianComponent, GmmFit, GmmModel, GmmParams};
pub use hierarchy::{hierarchy_moments, HierarchyMoments};
pub use histogram::{Axis, Bin, Histogram1D, Histogram2D, DEFAULT_BINS};
pub use kde::{kde_density, BandwidthRule, DensityRaster, EvalGrid, KdeModel};
pub use moments::{MomentAggregate, RawMoments, MAX_ORDER};
pub use plot::{density_payload, plot_data, DensityModel, PlotMode, PlotPayload, PlotRequest, PlotSamples};
pub use report::{moments_report, MomentModel, MomentRow, MomentsReport};
