//! `lrcvt`: synthesize volumes, tessellate, aggregate, export layouts,
//! validate against the oracles, project and serve.

mod config;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lrcvt_core::grid::{classify_isobands, label_components, Dims, IsobandSpec, LabelMap, VoxelGrid};
use lrcvt_core::layout::{build_and_write, moment_blobs, LayoutInput, LayoutReader};
use lrcvt_core::projection::{EmbedParams, Method};
use lrcvt_core::seeding::{SeedingParams, Site};
use lrcvt_core::stats::{hierarchy_moments, HierarchyMoments};
use lrcvt_core::synth::{default_iso, synth_field, SynthKind};
use lrcvt_core::tessellation::validate::{validate_against_dijkstra, validate_against_euclidean};
use lrcvt_core::tessellation::{lrcvt, voronoi_classify, LloydParams, LrcvtParams, Tessellation};
use lrcvt_core::volume::{read_volume, write_volume};
use lrcvt_service::{AppState, Dataset, Level, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "lrcvt", version, about = "Level-set restricted CVT of voxel volumes")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON object whose keys supply flags missing from the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic volume.
    Synth(SynthArgs),
    /// Run seeding and Lloyd updates; prints the `update,mean_ds` trace.
    Tessellate(TessellateArgs),
    /// Region, component and layer moment aggregates as JSON.
    Aggregate(AggregateArgs),
    /// Write the component-contiguous layout file.
    Export(ExportArgs),
    /// Summarize a layout file.
    Inspect(InspectArgs),
    /// Read one component's records from a layout file.
    Load(LoadArgs),
    /// Check a tessellation against a reference oracle.
    Validate(ValidateArgs),
    /// Embed components or regions in 2D.
    Project(ProjectArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s.split(',').map(|p| p.trim().parse().map_err(|_| format!("bad size `{p}`"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated sizes".to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Rings,
    Spiral,
    Horseshoe,
    GaussianMix,
    RandomSmooth,
}

impl From<Kind> for SynthKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Rings => SynthKind::Rings,
            Kind::Spiral => SynthKind::Spiral,
            Kind::Horseshoe => SynthKind::Horseshoe,
            Kind::GaussianMix => SynthKind::GaussianMix,
            Kind::RandomSmooth => SynthKind::RandomSmooth,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, value_parser = parse_dims)]
    dims: [usize; 3],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metadata sidecar; raw field files are written next to it.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct VolumeArgs {
    #[arg(long)]
    volume: PathBuf,
}

#[derive(Debug, Args)]
struct TessellateArgs {
    #[command(flatten)]
    volume: VolumeArgs,
    /// Field the isobands are taken on.
    #[arg(long, default_value = "f")]
    field: String,
    /// Strictly increasing iso values.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1)]
    iso: Vec<f64>,
    /// Target number of sites for the whole volume.
    #[arg(long, default_value_t = 100.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    weight_field: Option<String>,
    #[arg(long, default_value_t = 16)]
    block_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    max_updates: usize,
    /// Stop once the mean site displacement (voxel lengths) is below this.
    #[arg(long, default_value_t = 0.25)]
    tolerance: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct TessInput {
    #[command(flatten)]
    volume: VolumeArgs,
    /// Output of `tessellate`.
    #[arg(long)]
    tessellation: PathBuf,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    #[command(flatten)]
    input: TessInput,
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    input: TessInput,
    /// Variables of the embedded moment aggregates; none when unset.
    #[arg(long, requires = "y")]
    x: Option<String>,
    #[arg(long, requires = "x")]
    y: Option<String>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    file: PathBuf,
}

#[derive(Debug, Args)]
struct LoadArgs {
    file: PathBuf,
    #[arg(long)]
    component: u32,
    /// Print records as CSV instead of a summary.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Oracle {
    Euclidean,
    Dijkstra,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    input: TessInput,
    #[arg(long, value_enum)]
    against: Oracle,
    /// Required fraction of voxels matching the oracle's site
    /// [default: 1.0 for euclidean, 0.95 for dijkstra].
    #[arg(long)]
    min_agreement: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProjectLevel {
    Component,
    Region,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProjectMethod {
    Mds,
    Tsne,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long, value_enum, default_value = "mds")]
    method: ProjectMethod,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
}

impl EmbedArgs {
    fn params(&self) -> EmbedParams {
        EmbedParams {
            method: match self.method {
                ProjectMethod::Mds => Method::Mds,
                ProjectMethod::Tsne => Method::Tsne,
            },
            perplexity: self.perplexity,
            seed: self.seed,
            iterations: self.iterations,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[command(flatten)]
    input: TessInput,
    #[arg(long, value_enum, default_value = "component")]
    level: ProjectLevel,
    #[command(flatten)]
    embed: EmbedArgs,
    /// Moment variables; the first two fields when unset.
    #[arg(long, requires = "y")]
    x: Option<String>,
    #[arg(long, requires = "x")]
    y: Option<String>,
    /// Fold-metric value for region pairs in different components.
    #[arg(long, default_value_t = 1.0)]
    fold_c: f64,
    /// Embed `1 - d` instead of the fold metric `d`.
    #[arg(long)]
    invert_fold: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    input: TessInput,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 30)]
    gray_threshold: usize,
    #[command(flatten)]
    embed: EmbedArgs,
    #[arg(long, requires = "y")]
    x: Option<String>,
    #[arg(long, requires = "x")]
    y: Option<String>,
}

/// Result file of `tessellate`; the classification is recomputed from the sites.
#[derive(Debug, Serialize, Deserialize)]
struct TessellationFile {
    field: String,
    iso_values: Vec<f64>,
    params: LrcvtParams,
    sites: Vec<Site>,
    trace: Vec<f64>,
    converged: bool,
}

struct Loaded {
    grid: VoxelGrid,
    labels: LabelMap,
    tess: Tessellation,
    file: TessellationFile,
}

fn labels_for(grid: &VoxelGrid, field: &str, iso: Vec<f64>) -> Result<LabelMap> {
    Ok(label_components(&classify_isobands(grid, &IsobandSpec::new(field, iso)?)?))
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

impl TessInput {
    fn load(&self) -> Result<Loaded> {
        let grid = read_volume(&self.volume.volume).with_context(|| format!("reading {}", self.volume.volume.display()))?;
        let text = std::fs::read_to_string(&self.tessellation).with_context(|| format!("reading {}", self.tessellation.display()))?;
        let file: TessellationFile = serde_json::from_str(&text).context("parsing tessellation file")?;
        let labels = labels_for(&grid, &file.field, file.iso_values.clone())?;
        let tess = voronoi_classify(&grid.geometry(), &labels, &file.sites)?;
        Ok(Loaded { grid, labels, tess, file })
    }
}

fn variables(grid: &VoxelGrid, x: &Option<String>, y: &Option<String>) -> Option<[String; 2]> {
    match (x, y) {
        (Some(x), Some(y)) => Some([x.clone(), y.clone()]),
        _ => {
            let names = grid.field_names();
            let first = names.first()?;
            Some([first.to_string(), names.get(1).unwrap_or(first).to_string()])
        }
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let kind = SynthKind::from(a.kind);
    let grid = synth_field(kind, Dims::new(a.dims[0], a.dims[1], a.dims[2]), a.seed)?;
    let meta = write_volume(&grid, &a.output)?;
    write_json(None, &serde_json::json!({ "volume": a.output, "meta": meta, "suggested_iso": default_iso(kind) }))
}

fn tessellate(a: &TessellateArgs) -> Result<()> {
    let grid = read_volume(&a.volume.volume).with_context(|| format!("reading {}", a.volume.volume.display()))?;
    let labels = labels_for(&grid, &a.field, a.iso.clone())?;
    let params = LrcvtParams {
        seeding: SeedingParams {
            alpha: a.alpha,
            gamma: a.gamma,
            weight_field: a.weight_field.clone(),
            block_size: a.block_size,
            seed: a.seed,
        },
        lloyd: LloydParams { max_updates: a.max_updates, ds_tolerance: a.tolerance },
    };
    let result = lrcvt(&grid, &labels, &params)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "update,mean_ds")?;
    for (i, ds) in result.trace.iter().enumerate() {
        writeln!(out, "{},{ds}", i + 1)?;
    }
    log::info!(
        "{} sites in {} components, converged: {}",
        result.tessellation.sites.len(),
        labels.components.len(),
        result.converged
    );
    let file = TessellationFile {
        field: a.field.clone(),
        iso_values: a.iso.clone(),
        params,
        sites: result.tessellation.sites.clone(),
        trace: result.trace,
        converged: result.converged,
    };
    write_json(Some(&a.output), &file)
}

fn aggregate(a: &AggregateArgs) -> Result<()> {
    let l = a.input.load()?;
    let h: HierarchyMoments = hierarchy_moments(&l.grid, &l.labels, &l.tess, &a.x, &a.y)?;
    write_json(a.output.as_deref(), &h)
}

fn export(a: &ExportArgs) -> Result<()> {
    let l = a.input.load()?;
    let blobs = match (&a.x, &a.y) {
        (Some(x), Some(y)) => moment_blobs(&hierarchy_moments(&l.grid, &l.labels, &l.tess, x, y)?)?,
        _ => Vec::new(),
    };
    let input = LayoutInput { grid: &l.grid, labels: &l.labels, tessellation: &l.tess, aggregates: &blobs, iso_field: &l.file.field };
    let summary = build_and_write(&input, &a.output)?;
    write_json(None, &summary)
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let r = LayoutReader::open(&a.file)?;
    write_json(
        None,
        &serde_json::json!({
            "header": r.header,
            "layers": r.layers,
            "components": r.components,
        }),
    )
}

fn load(a: &LoadArgs) -> Result<()> {
    let r = LayoutReader::open(&a.file)?;
    let data = r.load_component(a.component)?;
    if a.csv {
        let mut out = std::io::stdout().lock();
        let fields = &r.header.fields;
        writeln!(out, "x,y,z,{}", fields.join(","))?;
        for i in 0..data.records.len() {
            let [x, y, z] = data.records.coords[i];
            let vals: Vec<String> = data.records.values_of(i).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{x},{y},{z},{}", vals.join(","))?;
        }
        return Ok(());
    }
    write_json(
        None,
        &serde_json::json!({
            "component": a.component,
            "records": data.records.len(),
            "regions": data.regions.len(),
            "aggregates": data.aggregates.len(),
        }),
    )
}

/// Returns whether every check passed.
fn validate(a: &ValidateArgs) -> Result<bool> {
    let l = a.input.load()?;
    let (report, min) = match a.against {
        Oracle::Euclidean => (validate_against_euclidean(&l.tess, &l.labels), a.min_agreement.unwrap_or(1.0)),
        Oracle::Dijkstra => (validate_against_dijkstra(&l.tess, &l.labels), a.min_agreement.unwrap_or(0.95)),
    };
    let ok = report.passed() && report.agreement >= min;
    write_json(None, &serde_json::json!({ "passed": ok, "min_agreement": min, "report": report }))?;
    Ok(ok)
}

fn project(a: &ProjectArgs) -> Result<()> {
    let l = a.input.load()?;
    let config = ServiceConfig {
        variables: variables(&l.grid, &a.x, &a.y),
        embed: a.embed.params(),
        fold_c: a.fold_c,
        invert_fold: a.invert_fold,
        ..Default::default()
    };
    let d = Dataset::new(l.grid, l.labels, l.tess, config)?;
    let level = match a.level {
        ProjectLevel::Component => Level::Component,
        ProjectLevel::Region => Level::Region,
    };
    write_json(a.output.as_deref(), d.projection(level).expect("component and region levels have projections"))
}

fn serve(a: &ServeArgs) -> Result<()> {
    let l = a.input.load()?;
    let config = ServiceConfig {
        gray_threshold: a.gray_threshold,
        variables: variables(&l.grid, &a.x, &a.y),
        embed: a.embed.params(),
        ..Default::default()
    };
    let state = AppState::new(Dataset::new(l.grid, l.labels, l.tess, config)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(lrcvt_service::serve(state, a.addr))?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Tessellate(a) => tessellate(a)?,
        Command::Aggregate(a) => aggregate(a)?,
        Command::Export(a) => export(a)?,
        Command::Inspect(a) => inspect(a)?,
        Command::Load(a) => load(a)?,
        Command::Validate(a) => return validate(a),
        Command::Project(a) => project(a)?,
        Command::Serve(a) => serve(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv = match config::merge_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
