//! The `b2p` command line: encode, decode, render, train, eval and synth.
//!
//! Settings resolve as command-line flag, then the `--config` JSON file, then
//! the built-in default. Config keys: `depth`, `base`, `min_level`,
//! `max_level`, `lambda`, `alpha`, `beta`, `gamma`, `lr`, `batch`, `iters`,
//! `views_per_scene`, `image_size`, `seed`, `views`, `size`.
//!
//! Exit codes: 0 ok, 1 usage, 2 missing input, 3 stream or level error,
//! 4 numeric failure. `B2P_THREADS` caps the worker thread count.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::entropy::LayeredBitstream;
use crate::metrics::{evaluate, render_views, EvalOptions};
use crate::net::{decode_pipeline, encode_pipeline, B2PModel};
use crate::splat::{load_gaussians, save_gaussians, Gaussian3D};
use crate::synth::{expected_count, synth_cloud, SynthKind, SynthSpec};
use crate::train::{reference_gaussians, write_log_csv, TrainConfig, Trainer, ViewRig};
use crate::voxel::{load_ply, save_ply, PlyFormat, PointCloud};
use crate::Error;

#[derive(Parser, Debug)]
#[command(name = "b2p", version, about = "Scalable point cloud color codec decoding to 3D Gaussians")]
pub struct Cli {
    /// Print a JSON summary instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// JSON file with default settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More progress output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compress the colors of a voxelized PLY cloud.
    Encode(EncodeArgs),
    /// Decode a stream at one level to a Gaussian dump.
    Decode(DecodeArgs),
    /// Render a Gaussian dump or a PLY cloud on the camera circle.
    Render(RenderArgs),
    /// Train a model on synthetic scenes or PLY clouds.
    Train(TrainArgs),
    /// Rate-distortion report of a stream against its source cloud.
    Eval(EvalArgs),
    /// Write a synthetic textured cloud.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Coded level range `L:M`, e.g. `7:9`. L must be the model's base level.
    #[arg(long)]
    pub levels: Option<String>,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub model: PathBuf,
    /// Render level; defaults to the highest level in the stream.
    #[arg(long)]
    pub level: Option<u32>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write the circle renders here.
    #[arg(long)]
    pub render_dir: Option<PathBuf>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Gaussian dump (`.gsp`) or voxel cloud (`.ply`).
    #[arg(short, long)]
    pub input: PathBuf,
    /// Output directory for `view_NN.png`.
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Grid bit depth used to frame the scene.
    #[arg(long)]
    pub depth: Option<u32>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Checkpoint to write.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Training clouds; synthetic scenes are generated when none are given.
    #[arg(short, long)]
    pub input: Vec<PathBuf>,
    /// Synthetic scene kind: sphere, cube or union.
    #[arg(long, default_value = "sphere")]
    pub scene: String,
    /// Synthetic scene size as a fraction of the grid.
    #[arg(long)]
    pub scene_size: Option<f64>,
    /// Number of synthetic scenes.
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    /// Start from the desk-scale preset (N=6, L=3, M 4..5) instead of the full-size one.
    #[arg(long)]
    pub toy: bool,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub depth: Option<u32>,
    #[arg(long)]
    pub base: Option<u32>,
    #[arg(long)]
    pub min_level: Option<u32>,
    #[arg(long)]
    pub max_level: Option<u32>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Training log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub model: PathBuf,
    /// Source cloud the ground-truth views are rendered from.
    #[arg(short, long)]
    pub reference: PathBuf,
    /// Report CSV; printed to stdout when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Levels `a:b` to decode.
    #[arg(long)]
    pub levels: Option<String>,
    /// Lambda tag for the report rows.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub dump_views: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// sphere, cube or union.
    #[arg(long, default_value = "sphere")]
    pub kind: String,
    #[arg(long)]
    pub depth: Option<u32>,
    #[arg(long)]
    pub size: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub checks: u32,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ascii: bool,
}

/// Settings that may come from the config file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub depth: Option<u32>,
    pub base: Option<u32>,
    pub min_level: Option<u32>,
    pub max_level: Option<u32>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub iters: Option<usize>,
    pub views_per_scene: Option<usize>,
    pub image_size: Option<usize>,
    pub seed: Option<u64>,
    pub views: Option<usize>,
    pub size: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::from(Error::io(path, e)))?;
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("config file {}: {e}", path.display())))
    }
}

/// Error with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn missing(what: &str, path: &Path) -> Self {
        Failure {
            code: 2,
            message: format!("{what} not found: {}", path.display()),
        }
    }
}

/// Exit code of a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Config(_) | Error::Contract(_) => 1,
        Error::Numeric(_) => 4,
        Error::Format(_)
        | Error::Truncated(_)
        | Error::Checksum(_)
        | Error::Incompatible(_)
        | Error::LevelUnavailable(_)
        | Error::Consistency(_) => 3,
        Error::Io { .. } | Error::Range { .. } | Error::Dimension(_) => 1,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

type Out = Result<Value, Failure>;

fn need(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::missing(what, path))
    }
}

fn load_model(path: &Path) -> Result<B2PModel, Failure> {
    need(path, "model")?;
    Ok(B2PModel::load(path)?.0)
}

fn load_stream(path: &Path) -> Result<LayeredBitstream, Failure> {
    need(path, "stream")?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(LayeredBitstream::deserialize(&bytes)?)
}

fn load_cloud(path: &Path, depth: Option<u32>) -> Result<PointCloud, Failure> {
    need(path, "input cloud")?;
    Ok(load_ply(path, depth)?)
}

/// Parses `a:b` into an inclusive range.
pub fn parse_levels(s: &str) -> Result<(u32, u32), Failure> {
    let bad = || Failure::usage(format!("--levels expects FROM:TO, got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let (a, b) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

fn write_views(dir: &Path, gs: &[Gaussian3D], rig: &ViewRig, views: usize) -> Result<Vec<PathBuf>, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cams = rig.circle(views)?;
    let mut paths = Vec::new();
    for (k, im) in render_views(gs, &cams).iter().enumerate() {
        let p = dir.join(format!("view_{k:02}.png"));
        im.save_png(&p)?;
        paths.push(p);
    }
    Ok(paths)
}

struct Ctx {
    file: FileConfig,
    verbose: u8,
}

impl Ctx {
    fn views(&self, flag: Option<usize>) -> usize {
        flag.or(self.file.views).unwrap_or(12)
    }

    fn size(&self, flag: Option<usize>) -> usize {
        flag.or(self.file.size).unwrap_or(256)
    }
}

fn cmd_encode(a: &EncodeArgs, _: &Ctx) -> Out {
    let model = load_model(&a.model)?;
    let cfg = model.config;
    let pc = load_cloud(&a.input, Some(cfg.depth))?;
    let top = match &a.levels {
        Some(s) => {
            let (lo, hi) = parse_levels(s)?;
            if lo != cfg.base {
                return Err(Failure::usage(format!("coding starts at the model's base level {}, not {lo}", cfg.base)));
            }
            Some(hi)
        }
        None => None,
    };
    let enc = encode_pipeline(&pc, &model, top)?;
    let bytes = enc.stream.serialize();
    std::fs::write(&a.out, &bytes).map_err(|e| Error::io(&a.out, e))?;
    let pts = pc.len() as f64;
    let levels: BTreeMap<String, Value> = enc
        .stream
        .levels
        .iter()
        .map(|c| {
            let bits = 8 * (crate::entropy::bitstream::LEVEL_PREFIX_BYTES + c.payload.len());
            (c.level.to_string(), json!({"bits": bits, "bpp": bits as f64 / pts, "points": c.num_points}))
        })
        .collect();
    Ok(json!({
        "points": pc.len(),
        "bytes": bytes.len(),
        "bpp": 8.0 * bytes.len() as f64 / pts,
        "geometry_bits": 8 * enc.stream.geometry_bytes(),
        "levels": levels,
        "clamped": enc.clamped,
    }))
}

fn cmd_decode(a: &DecodeArgs, ctx: &Ctx) -> Out {
    let model = load_model(&a.model)?;
    let stream = load_stream(&a.input)?;
    let m = match a.level {
        Some(m) => m,
        None => stream
            .top_level()
            .ok_or_else(|| Error::LevelUnavailable("stream carries no feature levels".into()))?,
    };
    let dec = decode_pipeline(&stream, &model, m)?;
    save_gaussians(&a.out, &dec.gaussians)?;
    let mut out = json!({"level": m, "gaussians": dec.gaussians.len(), "out": a.out});
    if let Some(dir) = &a.render_dir {
        let rig = ViewRig::for_depth(model.config.depth, ctx.size(a.size));
        let paths = write_views(dir, &dec.gaussians, &rig, ctx.views(a.views))?;
        out["renders"] = json!(paths);
    }
    Ok(out)
}

fn cmd_render(a: &RenderArgs, ctx: &Ctx) -> Out {
    need(&a.input, "input")?;
    let is_ply = a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    let (gs, depth) = if is_ply {
        let pc = load_ply(&a.input, a.depth)?;
        let d = pc.bit_depth;
        (reference_gaussians(&pc), d)
    } else {
        (load_gaussians(&a.input)?, a.depth.or(ctx.file.depth).unwrap_or(10))
    };
    let rig = ViewRig::for_depth(depth, ctx.size(a.size));
    let views = ctx.views(a.views);
    if views == 0 {
        return Err(Failure::usage("--views must be positive"));
    }
    let paths = write_views(&a.out, &gs, &rig, views)?;
    Ok(json!({"gaussians": gs.len(), "views": paths}))
}

fn train_config(a: &TrainArgs, f: &FileConfig) -> TrainConfig {
    let d = if a.toy { TrainConfig::toy() } else { TrainConfig::default() };
    TrainConfig {
        lambda: a.lambda.or(f.lambda).unwrap_or(d.lambda),
        alpha: f.alpha.unwrap_or(d.alpha),
        beta: f.beta.unwrap_or(d.beta),
        gamma: f.gamma.unwrap_or(d.gamma),
        lr: a.lr.or(f.lr).unwrap_or(d.lr),
        batch: f.batch.unwrap_or(d.batch),
        iters: a.iters.or(f.iters).unwrap_or(d.iters),
        views_per_scene: f.views_per_scene.unwrap_or(d.views_per_scene),
        base: a.base.or(f.base).unwrap_or(d.base),
        min_level: a.min_level.or(f.min_level).unwrap_or(d.min_level),
        max_level: a.max_level.or(f.max_level).unwrap_or(d.max_level),
        depth: a.depth.or(f.depth).unwrap_or(d.depth),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        image_size: a.image_size.or(f.image_size).unwrap_or(d.image_size),
    }
}

fn cmd_train(a: &TrainArgs, ctx: &Ctx) -> Out {
    let cfg = train_config(a, &ctx.file);
    cfg.validate()?;
    let clouds = if a.input.is_empty() {
        let kind: SynthKind = a.scene.parse()?;
        (0..a.scenes as u64)
            .map(|k| {
                let mut s = SynthSpec::new(kind, cfg.depth, cfg.seed.wrapping_add(k));
                if let Some(size) = a.scene_size {
                    s.size = size;
                }
                synth_cloud(&s)
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        a.input
            .iter()
            .map(|p| load_cloud(p, Some(cfg.depth)))
            .collect::<Result<Vec<_>, _>>()?
    };
    let model = B2PModel::new(cfg.model_config(), cfg.seed)?;
    let mut t = Trainer::new(model, clouds, cfg)?;
    for i in 0..cfg.iters {
        let row = t.step()?;
        if ctx.verbose > 0 && (i % 100 == 0 || i + 1 == cfg.iters) {
            eprintln!(
                "iter {:>6}  rate {:.4} bpp  l1 {:.5}  ssim {:.5}  total {:.5}",
                row.iter, row.rate, row.l1, row.ssim, row.total
            );
        }
    }
    let meta = t.metadata();
    let (model, log) = t.finish();
    model.save(&a.out, meta)?;
    if let Some(p) = &a.log {
        write_log_csv(p, &log)?;
    }
    Ok(json!({
        "out": a.out,
        "iterations": log.len(),
        "model_hash": format!("{:016x}", model.hash()),
        "final": log.last(),
    }))
}

fn cmd_eval(a: &EvalArgs, ctx: &Ctx) -> Out {
    let model = load_model(&a.model)?;
    let stream = load_stream(&a.input)?;
    let pc = load_cloud(&a.reference, Some(model.config.depth))?;
    let rig = ViewRig::for_depth(model.config.depth, ctx.size(a.size));
    let cams = rig.circle(ctx.views(a.views))?;
    let truth = render_views(&reference_gaussians(&pc), &cams);
    let levels = match &a.levels {
        Some(s) => {
            let (lo, hi) = parse_levels(s)?;
            (lo..=hi).collect()
        }
        None => Vec::new(),
    };
    let opts = EvalOptions {
        levels,
        lambda: a.lambda,
        dump_views: a.dump_views.clone(),
    };
    let report = evaluate(&stream, &model, &cams, &truth, &opts)?;
    let csv = report.to_csv();
    match &a.csv {
        Some(p) => std::fs::write(p, &csv).map_err(|e| Error::io(p, e))?,
        None if ctx.verbose == 0 => {}
        None => eprint!("{csv}"),
    }
    let mut v = serde_json::to_value(&report).expect("report serializes");
    v["csv"] = json!(csv);
    Ok(v)
}

fn cmd_synth(a: &SynthArgs, ctx: &Ctx) -> Out {
    let mut spec = SynthSpec::new(a.kind.parse()?, a.depth.or(ctx.file.depth).unwrap_or(10), a.seed.or(ctx.file.seed).unwrap_or(0));
    if let Some(s) = a.size {
        spec.size = s;
    }
    spec.checks = a.checks;
    let pc = synth_cloud(&spec)?;
    let fmt = if a.ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
    save_ply(&a.out, &pc, fmt)?;
    Ok(json!({"points": pc.len(), "expected": expected_count(&spec), "depth": spec.depth, "out": a.out}))
}

fn human(cmd: &Command, v: &Value) -> String {
    match cmd {
        Command::Encode(_) => {
            let mut s = String::from("level      bits       bpp\n");
            if let Some(levels) = v["levels"].as_object() {
                for (l, e) in levels {
                    s += &format!("{l:>5} {:>9} {:>9.4}\n", e["bits"], e["bpp"].as_f64().unwrap_or(0.0));
                }
            }
            s + &format!(
                "geometry {} bits, total {} bytes, {:.4} bpp over {} points\n",
                v["geometry_bits"],
                v["bytes"],
                v["bpp"].as_f64().unwrap_or(0.0),
                v["points"]
            )
        }
        Command::Decode(_) => format!("decoded {} gaussians at level {}\n", v["gaussians"], v["level"]),
        Command::Render(_) => format!("wrote {} views\n", v["views"].as_array().map_or(0, Vec::len)),
        Command::Train(_) => format!("trained {} iterations, model {}\n", v["iterations"], v["model_hash"]),
        Command::Eval(_) => v["csv"].as_str().unwrap_or_default().to_string(),
        Command::Synth(_) => format!("wrote {} points\n", v["points"]),
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("B2P_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Runs the CLI on `args`, printing results and errors; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    match execute(&cli) {
        Ok(v) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            } else {
                print!("{}", human(&cli.command, &v));
            }
            0
        }
        Err(f) => {
            if cli.json {
                println!("{}", json!({"error": f.message, "code": f.code}));
            }
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cli: &Cli) -> Out {
    let file = match &cli.config {
        Some(p) => {
            need(p, "config file")?;
            FileConfig::load(p)?
        }
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        file,
        verbose: cli.verbose,
    };
    match &cli.command {
        Command::Encode(a) => cmd_encode(a, &ctx),
        Command::Decode(a) => cmd_decode(a, &ctx),
        Command::Render(a) => cmd_render(a, &ctx),
        Command::Train(a) => cmd_train(a, &ctx),
        Command::Eval(a) => cmd_eval(a, &ctx),
        Command::Synth(a) => cmd_synth(a, &ctx),
    }
}
