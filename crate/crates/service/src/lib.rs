//! HTTP/JSON facade over a tessellated volume: hierarchy, projections,
//! nested selections, joint-plot payloads and moment tables.

pub mod api;
pub mod dataset;
pub mod selection;

pub use api::{router, serve, AppState};
pub use dataset::{Dataset, ServiceConfig};
pub use selection::{Level, Selection, SetOp};
