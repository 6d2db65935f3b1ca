mod cloud;
mod config;
mod render;
mod repro;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use moran_core::attractor::{cover, sample_measure};
use moran_core::dimension::{
    block_boundary_layers, dimension_report, natural_log_scales, DimensionConfig, MeasureClassConfig, DEFAULT_KMAX,
    DEFAULT_NMAX,
};
use moran_core::separation::{
    check_mosc, check_mssc, gamma2_mwhp, gamma3_mbdp, gamma4_neighbors, near_identity_gap, BoxSequence,
};
use moran_core::words::{count_cutset, cutset_log, CountMethod};
use moran_core::LayerSystem;
use serde::Serialize;

use crate::cloud::CloudFormat;
use crate::config::{load_box_sequence, load_system, ConfigError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "moran", version, about = "Moran-type iterated function systems")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a system declaration.
    Info(InfoArgs),
    /// Enumerate the cutset at scale b.
    Cutset(CutsetArgs),
    /// Deterministic cover of the attractor by images of one anchor point.
    Cover(CoverArgs),
    /// Random points distributed by the invariant measure.
    Sample(SampleArgs),
    /// Rasterize a point cloud to PPM or SVG.
    Render(RenderArgs),
    /// Hausdorff and box dimension estimates, measure classification.
    Dim(DimArgs),
    /// Finite-depth separation diagnostics.
    CheckSep(CheckSepArgs),
    /// Re-run a canonical example and compare against stored values.
    Repro(ReproArgs),
}

#[derive(Args, Serialize)]
struct InfoArgs {
    system: PathBuf,
    /// Layers to summarize.
    #[arg(long, default_value_t = 5)]
    layers: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

/// A scale given either directly (`--b`) or by its natural log (`--log-b`).
#[derive(Args, Serialize, Clone, Copy)]
struct Scale {
    #[arg(long, conflicts_with = "log_b")]
    b: Option<f64>,
    /// ln b, for scales below the smallest positive double.
    #[arg(long, allow_hyphen_values = true)]
    log_b: Option<f64>,
}

impl Scale {
    fn log(&self) -> Result<f64> {
        match (self.b, self.log_b) {
            (Some(b), _) if b > 0.0 && b < 1.0 => Ok(b.ln()),
            (Some(b), _) => bail!("--b must lie in (0,1), got {b}"),
            (None, Some(l)) if l < 0.0 => Ok(l),
            (None, Some(l)) => bail!("--log-b must be negative, got {l}"),
            (None, None) => bail!("one of --b or --log-b is required"),
        }
    }
}

#[derive(Args, Serialize)]
struct CutsetArgs {
    system: PathBuf,
    #[command(flatten)]
    scale: Scale,
    #[arg(long, default_value_t = 1 << 20)]
    limit: usize,
    /// Include the words themselves.
    #[arg(long)]
    words: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CoverArgs {
    system: PathBuf,
    #[arg(long)]
    b: f64,
    #[arg(long, default_value_t = 1 << 22)]
    limit: usize,
    /// Anchor point, comma separated (default: center of the ambient box).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    anchor: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<CloudFormat>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SampleArgs {
    system: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    count: usize,
    /// Per-point accuracy relative to the ambient diameter.
    #[arg(long, default_value_t = 1e-9)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    anchor: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<CloudFormat>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct RenderArgs {
    input: PathBuf,
    /// Output file; `.svg` selects SVG, anything else PPM.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<CloudFormat>,
    /// Dimension of a binary input cloud.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GridKind {
    /// Natural scales `∏ c_{2,i}` after each layer.
    Auto,
    /// Natural scales at the block boundaries 2^j − 1 and 2^j.
    Blocks,
    /// The values given with `--b-list` / `--log-b-list`.
    List,
}

#[derive(Args, Serialize)]
struct GridArgs {
    #[arg(long, value_enum, default_value_t = GridKind::Auto)]
    bgrid: GridKind,
    #[arg(long, value_delimiter = ',')]
    b_list: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    log_b_list: Vec<f64>,
    /// Layers covered by the auto and block grids.
    #[arg(long)]
    grid_layers: Option<usize>,
}

impl GridArgs {
    fn log_grid(&self, sys: &LayerSystem, default_layers: usize) -> Result<Vec<f64>> {
        let cap = |n: usize| sys.max_layer().map_or(n, |m| n.min(m));
        let layers = cap(self.grid_layers.unwrap_or(default_layers)).max(1);
        let mut grid = match self.bgrid {
            GridKind::Auto => natural_log_scales(sys, &(1..=layers).collect::<Vec<_>>())?,
            GridKind::Blocks => natural_log_scales(sys, &block_boundary_layers(layers))?,
            GridKind::List => {
                let mut g: Vec<f64> = self
                    .b_list
                    .iter()
                    .map(|&b| {
                        if b > 0.0 && b < 1.0 {
                            Ok(b.ln())
                        } else {
                            bail!("--b-list values must lie in (0,1), got {b}")
                        }
                    })
                    .collect::<Result<_>>()?;
                g.extend(self.log_b_list.iter().copied());
                if g.is_empty() {
                    bail!("--bgrid list needs --b-list or --log-b-list");
                }
                g
            }
        };
        grid.sort_by(|a, b| b.total_cmp(a));
        grid.dedup();
        Ok(grid)
    }
}

#[derive(Args, Serialize)]
struct DimArgs {
    system: PathBuf,
    #[arg(long, default_value_t = DEFAULT_KMAX)]
    kmax: usize,
    #[command(flatten)]
    grid: GridArgs,
    /// Exponent for the measure classification (default: the Hausdorff estimate).
    #[arg(long)]
    s: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_NMAX)]
    nmax: usize,
    #[arg(long, default_value_t = 1 << 20)]
    limit: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Condition {
    Mosc,
    Mwsc,
    Mssc,
    Mwhp,
    Mbdp,
    Gamma4,
    NearId,
}

#[derive(Args, Serialize)]
struct CheckSepArgs {
    system: PathBuf,
    #[arg(long, value_enum)]
    cond: Condition,
    /// Candidate open sets (required for mosc and mwsc unless the family ships them).
    #[arg(long = "V")]
    v: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 12)]
    depth: usize,
    #[arg(long, default_value_t = 1 << 20)]
    limit: usize,
    /// Count words instead of distinct maps (gamma4 only).
    #[arg(long)]
    words: bool,
    /// Near-identity threshold (default: 0.01 of the ambient diameter).
    #[arg(long)]
    theta: Option<f64>,
    /// Finest cover scale relative to the ambient diameter (mssc only).
    #[arg(long, default_value_t = 1e-9)]
    eps: f64,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ReproArgs {
    /// Target id; omit with --list to print all targets.
    id: Option<String>,
    #[arg(long)]
    list: bool,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report<'a, R: Serialize, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    run: &'a R,
    result: T,
}

fn emit<R: Serialize, T: Serialize>(command: &str, run: &R, result: T, path: Option<&Path>) -> Result<()> {
    let report = Report { schema_version: SCHEMA_VERSION, command, run, result };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn info(args: &InfoArgs) -> Result<()> {
    #[derive(Serialize)]
    struct LayerInfo {
        index: usize,
        log_count: f64,
        c1: f64,
        c2: f64,
        similarity: bool,
        equal_ratio: bool,
    }
    #[derive(Serialize)]
    struct Info {
        label: String,
        system: config::SystemDecl,
        dimension: usize,
        ambient: moran_core::Aabb,
        max_layer: Option<usize>,
        layers: Vec<LayerInfo>,
        contraction: moran_core::system::ContractionCheck,
    }
    let loaded = load_system(&args.system)?;
    let sys = &loaded.system;
    let depth = sys.max_layer().map_or(args.layers, |m| args.layers.min(m));
    let layers = sys
        .profiles(depth)?
        .into_iter()
        .map(|p| LayerInfo {
            index: p.index,
            log_count: p.log_count,
            c1: p.log_c1.exp(),
            c2: p.log_c2.exp(),
            similarity: p.is_similarity(),
            equal_ratio: p.equal_ratio(),
        })
        .collect();
    let result = Info {
        label: sys.label(),
        dimension: sys.dimension(),
        ambient: *sys.ambient(),
        max_layer: sys.max_layer(),
        layers,
        contraction: sys.contraction_check(moran_core::system::CONTRACTION_CHECK_DEPTH)?,
        system: loaded.decl.clone(),
    };
    emit("info", args, result, args.json.as_deref())
}

fn cutset_cmd(args: &CutsetArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Out {
        b: f64,
        log_b: f64,
        method: CountMethod,
        /// Exact counts; absent when they come from the closed form.
        count_words: Option<u64>,
        count_maps: Option<u64>,
        log_words: f64,
        log_maps: f64,
        min_len: usize,
        max_len: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        words: Option<Vec<String>>,
    }
    let loaded = load_system(&args.system)?;
    let log_b = args.scale.log()?;
    let result = if args.words {
        let c = cutset_log(&loaded.system, log_b, args.limit)?;
        Out {
            b: log_b.exp(),
            log_b,
            method: CountMethod::Enumerated,
            count_words: Some(c.count_words() as u64),
            count_maps: Some(c.count_maps() as u64),
            log_words: (c.count_words() as f64).ln(),
            log_maps: (c.count_maps() as f64).ln(),
            min_len: c.min_len(),
            max_len: c.max_len(),
            words: Some(c.words.iter().map(|w| w.to_string()).collect()),
        }
    } else {
        let c = count_cutset(&loaded.system, log_b, args.limit)?;
        let exact = |l: f64| (c.method == CountMethod::Enumerated).then(|| l.exp().round() as u64);
        Out {
            b: log_b.exp(),
            log_b,
            method: c.method,
            count_words: exact(c.log_words),
            count_maps: exact(c.log_maps),
            log_words: c.log_words,
            log_maps: c.log_maps,
            min_len: c.min_len,
            max_len: c.max_len,
            words: None,
        }
    };
    emit("cutset", args, result, args.out.as_deref())
}

#[derive(Serialize)]
struct CloudSummary {
    points: usize,
    dim: usize,
    scale: f64,
    provenance: moran_core::attractor::Provenance,
    bounds: Option<moran_core::Aabb>,
    out: PathBuf,
}

fn write_points(cloud: &moran_core::attractor::PointCloud, out: &Path, format: Option<CloudFormat>) -> Result<CloudSummary> {
    cloud::write_cloud(out, CloudFormat::for_path(out, format), cloud)?;
    Ok(CloudSummary {
        points: cloud.len(),
        dim: cloud.dim,
        scale: cloud.scale,
        provenance: cloud.provenance,
        bounds: cloud.bounds(),
        out: out.to_path_buf(),
    })
}

fn cover_cmd(args: &CoverArgs) -> Result<()> {
    let loaded = load_system(&args.system)?;
    let c = cover(&loaded.system, args.b, args.anchor.as_deref(), args.limit)?;
    let summary = write_points(&c, &args.out, args.format)?;
    emit("cover", args, summary, args.json.as_deref())
}

fn sample_cmd(args: &SampleArgs) -> Result<()> {
    let loaded = load_system(&args.system)?;
    let c = sample_measure(&loaded.system, &loaded.weights, args.count, args.eps, args.seed, args.anchor.as_deref())?;
    let summary = write_points(&c, &args.out, args.format)?;
    emit("sample", args, summary, args.json.as_deref())
}

fn render_cmd(args: &RenderArgs) -> Result<()> {
    if !(args.gamma > 0.0 && args.gamma.is_finite()) {
        bail!("--gamma must be positive");
    }
    let c = cloud::read_cloud(&args.input, CloudFormat::for_path(&args.input, args.format), args.dim)?;
    let raster = render::Raster::new(c.dim, &c.points, args.width, args.height)?;
    let file = std::fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let w = std::io::BufWriter::new(file);
    match args.out.extension().and_then(|e| e.to_str()) {
        Some("svg") => raster.write_svg(w, args.gamma),
        _ => raster.write_ppm(w, args.gamma),
    }
}

fn dim_cmd(args: &DimArgs) -> Result<()> {
    let loaded = load_system(&args.system)?;
    let sys = &loaded.system;
    let config = DimensionConfig {
        kmax: args.kmax,
        log_grid: Some(args.grid.log_grid(sys, 64)?),
        limit: args.limit,
        s: args.s,
        nmax: args.nmax,
        measure: MeasureClassConfig::default(),
        ..DimensionConfig::default()
    };
    let report = dimension_report(sys, &config)?;
    emit("dim", args, report, args.json.as_deref())
}

fn check_sep_cmd(args: &CheckSepArgs) -> Result<()> {
    let loaded = load_system(&args.system)?;
    let sys = &loaded.system;
    let boxes = |required: bool| -> Result<Option<BoxSequence>> {
        match &args.v {
            Some(p) => Ok(Some(load_box_sequence(p, sys.dimension())?)),
            None if sys.family().and_then(|f| f.open_set(1)).is_some() => Ok(Some(BoxSequence::Family)),
            None if required => bail!("--V is required: this system ships no open sets"),
            None => Ok(None),
        }
    };
    let grid = || args.grid.log_grid(sys, args.depth);
    let value = match args.cond {
        Condition::Mosc => serde_json::to_value(check_mosc(sys, &boxes(true)?.unwrap(), args.depth)?)?,
        Condition::Mwsc => {
            let u = boxes(true)?.unwrap();
            serde_json::to_value(gamma4_neighbors(sys, &grid()?, args.limit, false, Some(&u))?)?
        }
        Condition::Mssc => serde_json::to_value(check_mssc(sys, args.depth, args.eps, args.limit)?)?,
        Condition::Mwhp => serde_json::to_value(gamma2_mwhp(sys, &grid()?, args.limit)?)?,
        Condition::Mbdp => serde_json::to_value(gamma3_mbdp(sys, args.depth)?)?,
        Condition::Gamma4 => serde_json::to_value(gamma4_neighbors(sys, &grid()?, args.limit, !args.words, None)?)?,
        Condition::NearId => serde_json::to_value(near_identity_gap(sys, &grid()?, args.limit, args.theta)?)?,
    };
    emit("check-sep", args, value, args.json.as_deref())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Info(a) => info(a)?,
        Command::Cutset(a) => cutset_cmd(a)?,
        Command::Cover(a) => cover_cmd(a)?,
        Command::Sample(a) => sample_cmd(a)?,
        Command::Render(a) => render_cmd(a)?,
        Command::Dim(a) => dim_cmd(a)?,
        Command::CheckSep(a) => check_sep_cmd(a)?,
        Command::Repro(a) => {
            if a.list {
                for (id, description) in repro::targets()? {
                    println!("{id}\t{description}");
                }
                return Ok(ExitCode::SUCCESS);
            }
            let id = a.id.as_deref().context("give a target id, or --list")?;
            let outcome = repro::run(id)?;
            let passed = outcome.passed;
            emit("repro", &serde_json::json!({ "id": id }), outcome, a.json.as_deref())?;
            if !passed {
                eprintln!("repro {id}: mismatch against stored values");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            if let Some(c) = e.downcast_ref::<ConfigError>() {
                eprintln!("error: {c}");
            } else if let Some(moran_core::Error::NumericGuard { guard, detail }) = e.downcast_ref() {
                eprintln!("error: numeric guard `{guard}` tripped: {detail}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}
