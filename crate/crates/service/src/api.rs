//! REST routes and per-session state.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use lrcvt_core::projection::ProjectedItem;
use lrcvt_core::stats::{
    density_payload, fit_gmm, moments_report, plot_data, Axis, DensityModel, EvalGrid, GmmParams, Histogram2D, KdeModel, MomentModel,
    MomentsReport, PlotMode, PlotPayload, PlotRequest,
};
use lrcvt_core::Error;

use crate::dataset::{Dataset, HierarchyTree};
use crate::selection::{Level, Pruned, Selection, SelectionError, SetOp};

pub const SESSION_HEADER: &str = "x-session-token";
const DEFAULT_SESSION: &str = "default";

/// Set on projected items that are part of the session's selection.
pub const SELECTED: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, code: "bad_request", message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { code: self.code.into(), message: self.message })).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::UnknownComponent(_) | Error::UnknownField(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::InsufficientSamples(_) => (StatusCode::UNPROCESSABLE_ENTITY, "insufficient_samples"),
            Error::InvalidParameter(_) | Error::BadIsoValues => (StatusCode::BAD_REQUEST, "bad_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self { status, code, message: e.to_string() }
    }
}

impl From<SelectionError> for ApiError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::Unknown { level, ids } => {
                Self { status: StatusCode::NOT_FOUND, code: "not_found", message: format!("unknown {level} ids {ids:?}") }
            }
            SelectionError::Nesting { level, ids } => Self {
                status: StatusCode::CONFLICT,
                code: "nesting_violation",
                message: format!("{level} ids {ids:?} lie outside the selected parents"),
            },
        }
    }
}

macro_rules! rejection {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(r: $t) -> Self {
                Self::bad_request(r.body_text())
            }
        }
    )*};
}
rejection!(JsonRejection, PathRejection, QueryRejection);

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotModel {
    #[default]
    Histogram,
    Kde,
    Gmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotConfig {
    pub mode: PlotMode,
    pub model: PlotModel,
    pub x: String,
    pub y: Option<String>,
    pub z: Option<String>,
    pub x_range: Option<[f64; 2]>,
    pub y_range: Option<[f64; 2]>,
    pub bins: usize,
    pub locked: bool,
}

impl PlotConfig {
    /// Everything but the view window, which locked plots transform client-side.
    fn same_layer(&self, other: &PlotConfig) -> bool {
        (self.mode, self.model, &self.x, &self.y, &self.z, self.bins) == (other.mode, other.model, &other.x, &other.y, &other.z, other.bins)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotResponse {
    pub mode: PlotMode,
    /// Model actually used; zooming forces the histogram.
    pub model: PlotModel,
    pub zooming: bool,
    pub locked: bool,
    pub cached: bool,
    pub sample_count: usize,
    pub gray: bool,
    pub payload: PlotPayload,
}

#[derive(Debug, Default)]
pub struct Session {
    pub selection: Selection,
    pub plot: Option<PlotConfig>,
    cached: Option<(PlotConfig, PlotResponse)>,
}

#[derive(Clone)]
pub struct AppState {
    pub dataset: Arc<Dataset>,
    sessions: Arc<RwLock<HashMap<String, Arc<Mutex<Session>>>>>,
}

impl AppState {
    pub fn new(dataset: Dataset) -> Self {
        Self { dataset: Arc::new(dataset), sessions: Default::default() }
    }

    fn session(&self, headers: &HeaderMap) -> (String, Arc<Mutex<Session>>) {
        let token = headers.get(SESSION_HEADER).and_then(|v| v.to_str().ok()).unwrap_or(DEFAULT_SESSION).to_string();
        if let Some(s) = self.sessions.read().expect("session map poisoned").get(&token) {
            return (token, s.clone());
        }
        let mut map = self.sessions.write().expect("session map poisoned");
        let s = map.entry(token.clone()).or_default().clone();
        (token, s)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/hierarchy", get(hierarchy))
        .route("/projection/{level}", get(projection))
        .route("/selection/{level}", post(selection))
        .route("/plot", get(plot))
        .route("/moments", get(moments))
        .route("/voxels", get(voxels))
        .route("/meta", get(meta))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn hierarchy(State(state): State<AppState>) -> Json<HierarchyTree> {
    Json(state.dataset.hierarchy())
}

fn parse_level(p: Result<Path<String>, PathRejection>) -> Result<Level, ApiError> {
    let Path(s) = p?;
    s.parse().map_err(|e: String| ApiError { status: StatusCode::NOT_FOUND, code: "not_found", message: e })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResponse {
    pub level: Level,
    pub method: lrcvt_core::projection::Method,
    pub seed: u64,
    pub fallback: bool,
    pub items: Vec<ProjectedItem>,
}

async fn projection(State(state): State<AppState>, headers: HeaderMap, level: Result<Path<String>, PathRejection>) -> ApiResult<ProjectionResponse> {
    let level = parse_level(level)?;
    let p = state.dataset.projection(level).ok_or_else(|| ApiError::bad_request(format!("no projection at {level} level")))?;
    let (_, session) = state.session(&headers);
    let selected = session.lock().expect("session poisoned").selection.ids(level);
    let items = p
        .items
        .iter()
        .map(|it| {
            let mut it = it.clone();
            if selected.binary_search(&it.id).is_ok() {
                it.flags |= SELECTED;
            }
            it
        })
        .collect();
    Ok(Json(ProjectionResponse { level, method: p.method, seed: p.seed, fallback: p.fallback, items }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRequest {
    pub ids: Vec<u64>,
    #[serde(default)]
    pub op: SetOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResponse {
    pub level: Level,
    pub op: SetOp,
    pub selection: Selection,
    /// Child ids dropped to keep the selection nested.
    pub pruned: Pruned,
    /// Regions of the selected components, or voxels of the selected regions.
    pub children: Vec<u64>,
}

async fn selection(
    State(state): State<AppState>,
    headers: HeaderMap,
    level: Result<Path<String>, PathRejection>,
    body: Result<Json<SelectionRequest>, JsonRejection>,
) -> ApiResult<SelectionResponse> {
    let level = parse_level(level)?;
    let Json(req) = body?;
    let (_, session) = state.session(&headers);
    let mut s = session.lock().expect("session poisoned");
    let pruned = s.selection.apply(state.dataset.as_ref(), level, &req.ids, req.op)?;
    s.cached = None;
    let d = &state.dataset;
    let children = match level {
        Level::Component => s.selection.components.iter().flat_map(|&c| d.component_regions(c)).map(|&r| r as u64).collect(),
        Level::Region => s.selection.regions.iter().flat_map(|&r| d.region_voxels(r)).map(|&v| v as u64).collect(),
        Level::Voxel => Vec::new(),
    };
    Ok(Json(SelectionResponse { level, op: req.op, selection: s.selection.clone(), pruned, children }))
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PlotQuery {
    pub mode: Option<String>,
    pub model: Option<PlotModel>,
    pub x: Option<String>,
    pub y: Option<String>,
    pub z: Option<String>,
    pub xmin: Option<f64>,
    pub xmax: Option<f64>,
    pub ymin: Option<f64>,
    pub ymax: Option<f64>,
    pub bins: Option<usize>,
    pub k: Option<usize>,
    #[serde(default)]
    pub zooming: bool,
    #[serde(default)]
    pub lock: bool,
}

fn range(lo: Option<f64>, hi: Option<f64>) -> Result<Option<[f64; 2]>, ApiError> {
    match (lo, hi) {
        (None, None) => Ok(None),
        (Some(a), Some(b)) => Ok(Some([a, b])),
        _ => Err(ApiError::bad_request("ranges need both bounds")),
    }
}

fn model_axis(r: Option<[f64; 2]>, values: &[f64], bins: usize) -> Result<Axis, Error> {
    match r {
        Some([lo, hi]) => Axis::new(lo, hi, bins),
        None => Axis::covering(values.iter().copied(), bins),
    }
}

async fn plot(State(state): State<AppState>, headers: HeaderMap, q: Result<Query<PlotQuery>, QueryRejection>) -> ApiResult<PlotResponse> {
    let Query(q) = q?;
    let d = &state.dataset;
    let mode: PlotMode = q.mode.as_deref().unwrap_or("hist2d").parse()?;
    let config = PlotConfig {
        mode,
        model: q.model.unwrap_or_default(),
        x: q.x.clone().unwrap_or_else(|| d.variables[0].clone()),
        y: if mode.needs_y() { Some(q.y.clone().unwrap_or_else(|| d.variables[1].clone())) } else { q.y.clone() },
        z: q.z.clone(),
        x_range: range(q.xmin, q.xmax)?,
        y_range: range(q.ymin, q.ymax)?,
        bins: q.bins.unwrap_or(d.config.bins),
        locked: q.lock,
    };
    if config.model != PlotModel::Histogram && mode != PlotMode::Hist2d {
        return Err(ApiError::bad_request("density models apply to the hist2d layer only"));
    }
    let (_, session) = state.session(&headers);
    let mut s = session.lock().expect("session poisoned");
    if config.locked {
        if let Some((key, resp)) = &s.cached {
            if key.same_layer(&config) {
                let resp = PlotResponse { cached: true, zooming: q.zooming, ..resp.clone() };
                s.plot = Some(config);
                return Ok(Json(resp));
            }
        }
    } else {
        s.cached = None;
    }

    let voxels = d.selected_voxels(&s.selection);
    let samples = d.samples(&voxels, &config.x, config.y.as_deref(), config.z.as_deref())?;
    let model = if q.zooming { PlotModel::Histogram } else { config.model };
    let request = PlotRequest { mode, x_range: config.x_range, y_range: config.y_range, bins: config.bins };
    let payload = match model {
        PlotModel::Histogram => plot_data(&samples, &request)?,
        PlotModel::Kde | PlotModel::Gmm => {
            let ys = samples.y.as_deref().unwrap_or_default();
            let points: Vec<[f64; 2]> = samples.x.iter().zip(ys).map(|(&x, &y)| [x, y]).collect();
            let grid = EvalGrid { x: model_axis(config.x_range, &samples.x, config.bins)?, y: model_axis(config.y_range, ys, config.bins)? };
            if model == PlotModel::Kde {
                density_payload(&DensityModel::Kde(&KdeModel::fit(points, d.config.kde)?), grid)
            } else {
                let params = GmmParams { k: q.k.unwrap_or(d.config.gmm.k), ..d.config.gmm };
                density_payload(&DensityModel::Gmm(&fit_gmm(&points, &params)?.model), grid)
            }
        }
    };
    let resp = PlotResponse {
        mode,
        model,
        zooming: q.zooming,
        locked: config.locked,
        cached: false,
        sample_count: voxels.len(),
        gray: voxels.len() < d.config.gray_threshold,
        payload,
    };
    if config.locked && !q.zooming {
        s.cached = Some((config.clone(), resp.clone()));
    }
    s.plot = Some(config);
    Ok(Json(resp))
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct MomentsQuery {
    pub model: Option<PlotModel>,
    pub x: Option<String>,
    pub y: Option<String>,
    pub k: Option<usize>,
    pub bins: Option<usize>,
}

async fn moments(State(state): State<AppState>, headers: HeaderMap, q: Result<Query<MomentsQuery>, QueryRejection>) -> ApiResult<MomentsReport> {
    let Query(q) = q?;
    let d = &state.dataset;
    let x = q.x.unwrap_or_else(|| d.variables[0].clone());
    let y = q.y.unwrap_or_else(|| d.variables[1].clone());
    let (_, session) = state.session(&headers);
    let selection = session.lock().expect("session poisoned").selection.clone();
    let raw = d.selected_moments(&selection, &x, &y)?;
    let samples = d.samples(&d.selected_voxels(&selection), &x, Some(&y), None)?;
    let ys = samples.y.unwrap_or_default();
    let points: Vec<[f64; 2]> = samples.x.iter().zip(&ys).map(|(&a, &b)| [a, b]).collect();
    if points.is_empty() {
        return Err(Error::InsufficientSamples("selection holds no voxels".into()).into());
    }
    let report = match q.model.unwrap_or(PlotModel::Gmm) {
        PlotModel::Gmm => {
            let params = GmmParams { k: q.k.unwrap_or(d.config.gmm.k), ..d.config.gmm };
            moments_report(&MomentModel::Gmm(&fit_gmm(&points, &params)?.model), &raw)?
        }
        PlotModel::Kde => moments_report(&MomentModel::Kde(&KdeModel::fit(points, d.config.kde)?), &raw)?,
        PlotModel::Histogram => {
            let bins = q.bins.unwrap_or(d.config.bins);
            let h = Histogram2D::from_samples(
                Axis::covering(samples.x.iter().copied(), bins)?,
                Axis::covering(ys.iter().copied(), bins)?,
                points,
            );
            moments_report(&MomentModel::Histogram(&h), &raw)?
        }
    };
    Ok(Json(report))
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct VoxelsQuery {
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelRecord {
    pub id: u64,
    pub coord: [usize; 3],
    pub component: u32,
    pub region: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelsResponse {
    pub count: usize,
    pub truncated: bool,
    pub voxels: Vec<VoxelRecord>,
}

async fn voxels(State(state): State<AppState>, headers: HeaderMap, q: Result<Query<VoxelsQuery>, QueryRejection>) -> ApiResult<VoxelsResponse> {
    let Query(q) = q?;
    let d = &state.dataset;
    let (_, session) = state.session(&headers);
    let selection = session.lock().expect("session poisoned").selection.clone();
    let all = d.selected_voxels(&selection);
    let limit = q.limit.unwrap_or(100_000);
    let dims = d.grid.dims();
    let site_of = &d.tessellation.site_of;
    let voxels = all
        .iter()
        .take(limit)
        .map(|&v| VoxelRecord {
            id: v as u64,
            coord: dims.coords(v),
            component: d.labels.component[v],
            region: (site_of[v] != lrcvt_core::grid::NONE).then_some(site_of[v]),
        })
        .collect();
    Ok(Json(VoxelsResponse { count: all.len(), truncated: all.len() > limit, voxels }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub token: String,
    pub selection: Selection,
    pub plot: Option<PlotConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub fields: Vec<String>,
    pub variables: [String; 2],
    pub iso_values: Vec<f64>,
    pub layer_count: usize,
    pub component_count: usize,
    pub region_count: usize,
    pub in_band_voxels: usize,
    pub gray_threshold: usize,
    pub session: SessionMeta,
}

async fn meta(State(state): State<AppState>, headers: HeaderMap) -> Json<Meta> {
    let d = &state.dataset;
    let (token, session) = state.session(&headers);
    let s = session.lock().expect("session poisoned");
    Json(Meta {
        dims: d.grid.dims().as_array(),
        spacing: d.grid.spacing(),
        fields: d.grid.field_names().into_iter().map(String::from).collect(),
        variables: d.variables.clone(),
        iso_values: d.labels.iso_values.clone(),
        layer_count: d.labels.layer_count(),
        component_count: d.labels.components.len(),
        region_count: d.tessellation.sites.len(),
        in_band_voxels: d.labels.in_band_count(),
        gray_threshold: d.config.gray_threshold,
        session: SessionMeta { token, selection: s.selection.clone(), plot: s.plot.clone() },
    })
}
