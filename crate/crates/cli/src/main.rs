//! `strandforge`: batch entry points for every pipeline stage.

mod config;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use strandforge::baseline::{diffuse_field_3d, update_field_diffusion, ShellParams};
use strandforge::datagen::{build_mv_dataset, generate_sv_dataset, raster_for, read_sample_dir, render_bust_depth, write_sample_dir, DatasetParams, MvParams};
use strandforge::edit::{cut_by_stroke, laplacian_deform, recolor, scale_length, select_wisp, trim_by_mask, EditSelection, WispQuery};
use strandforge::formats::{read_hair, read_orientation_fmap, read_vfld, write_hair, write_orientation_fmap, write_vfld, FloatRaster};
use strandforge::neural::train::{o2v_example, s2o_example, v2v_example};
use strandforge::neural::{gradient_suite, train, GradCheckOptions, NetKind, TrainConfig, WeightStore};
use strandforge::pipeline::{clamp_field, grow_in_view, infer_o2v, infer_s2o, infer_v2v, rasterize_contour, validate_contour, EditRequest, Models, SessionConfig, StrokeSet};
use strandforge::strands::GrowParams;
use strandforge::{BustModel, Error, GridSpec, MaskMap, OrientationMap2D, Result, ViewPose};
use strandforge_service::{AppState, ServiceConfig};

use config::{Globals, GlobalArgs};

#[derive(Parser)]
#[command(name = "strandforge", version, about = "Sketch-driven strand hair modeling")]
struct Cli {
    #[command(flatten)]
    globals: GlobalArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Neural,
    Diffusion,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic single-view dataset.
    Datagen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value = "straight")]
        style: String,
        /// Render every sample from the front.
        #[arg(long)]
        no_augment: bool,
    },
    /// Train one generator/critic pair.
    Train {
        #[arg(long, value_parser = ["s2o", "o2v", "v2v"])]
        net: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        /// Overrides the iteration count derived from `--epochs`.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        /// Lifts front views for V2V tuples; diffusion when absent.
        #[arg(long)]
        o2v: Option<PathBuf>,
        /// Also write the loss history as JSON.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sketch (JSON stroke set) to dense orientation map.
    #[command(name = "infer-2d")]
    Infer2d {
        #[arg(long)]
        sketch: PathBuf,
        #[arg(long, value_enum, default_value = "diffusion")]
        backend: BackendArg,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Dense map to 3D field.
    #[command(name = "infer-3d")]
    Infer3d {
        #[arg(long)]
        dense: PathBuf,
        /// Mask raster; defaults to the dense map's valid pixels.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "diffusion")]
        backend: BackendArg,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = "default")]
        bust: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Update a prior field (already in the new view) against a new dense map.
    #[command(name = "update-3d")]
    Update3d {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        dense: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// View pose as `x,y,z` degrees.
        #[arg(long, default_value = "0,0,0")]
        pose: String,
        #[arg(long, value_enum, default_value = "diffusion")]
        backend: BackendArg,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = "default")]
        bust: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grow strands through a field.
    Grow {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value = "default")]
        bust: String,
        #[arg(long, default_value_t = 3000)]
        roots: usize,
        #[arg(long, default_value = "0,0,0")]
        pose: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one edit request (JSON) to a strand file.
    Edit {
        #[arg(long)]
        strands: PathBuf,
        #[arg(long)]
        request: PathBuf,
        #[arg(long, default_value = "0,0,0")]
        pose: String,
        /// Current mask, compared against a trim contour.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value = "default")]
        bust: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        timeout_ms: u64,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[arg(long)]
        s2o: Option<PathBuf>,
        #[arg(long)]
        o2v: Option<PathBuf>,
        #[arg(long)]
        v2v: Option<PathBuf>,
    },
    /// Finite-difference check of every loss term.
    Gradcheck {
        /// Run every term (the default when no `--term` is given).
        #[arg(long)]
        all: bool,
        #[arg(long)]
        term: Vec<String>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 4)]
        per_tensor: usize,
    },
    /// Mean squared error between two orientation maps.
    #[command(name = "eval-mse")]
    EvalMse {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = match cli.globals.resolve() {
        Ok(g) => g,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = g.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.cmd, &g) {
        Ok(Some(report)) => {
            emit(&report, g.json);
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg, report)) => {
            if let Some(r) = report {
                emit(&r, g.json);
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn emit(report: &Value, as_json: bool) {
    if as_json {
        println!("{}", serde_json::to_string_pretty(report).unwrap());
        return;
    }
    if let Value::Object(map) = report {
        for (k, v) in map {
            match v {
                Value::String(s) => println!("{k}: {s}"),
                Value::Array(items) => {
                    println!("{k}:");
                    for i in items {
                        println!("  {i}");
                    }
                }
                other => println!("{k}: {other}"),
            }
        }
    }
}

enum Failure {
    Usage(String),
    Run(String, Option<Value>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e.to_string(), None)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string(), None)
    }
}

type CliResult = std::result::Result<Option<Value>, Failure>;

fn parse_pose(s: &str) -> std::result::Result<ViewPose, Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("pose '{s}' is not x,y,z degrees")))?;
    if v.len() != 3 {
        return Err(Failure::Usage(format!("pose '{s}' needs three angles")));
    }
    ViewPose::new(v[0], v[1], v[2]).map_err(|e| Failure::Usage(e.to_string()))
}

fn bust(id: &str) -> Result<BustModel> {
    BustModel::by_id(id).ok_or_else(|| Error::NotFound(format!("unknown bust '{id}'")))
}

fn load_weights(path: Option<&Path>, kind: NetKind) -> std::result::Result<WeightStore, Failure> {
    let p = path.ok_or_else(|| Failure::Usage(format!("the neural backend needs --weights for {}", kind.as_str())))?;
    let ws = WeightStore::load(p)?;
    if ws.pair.kind != kind {
        return Err(Failure::Run(format!("{} holds {} weights, expected {}", p.display(), ws.pair.kind.as_str(), kind.as_str()), None));
    }
    Ok(ws)
}

fn read_mask(path: Option<&Path>, dense: &OrientationMap2D) -> Result<MaskMap> {
    match path {
        Some(p) => FloatRaster::from_bytes(&fs::read(p)?)?.to_mask(),
        None => Ok(dense.validity_mask()),
    }
}

fn grid_for(width: usize, height: usize) -> Result<GridSpec> {
    if width != height {
        return Err(Error::Dimension(format!("maps must be square, got {width}x{height}")));
    }
    Ok(GridSpec::for_resolution(width))
}

fn run(cmd: Cmd, g: &Globals) -> CliResult {
    match cmd {
        Cmd::Datagen { out, count, style, no_augment } => {
            let b = bust("default")?;
            let params = DatasetParams { count, res: g.res, style, seed: g.seed, augment: !no_augment, ..Default::default() };
            let samples = generate_sv_dataset(&b, &params)?;
            for s in &samples {
                write_sample_dir(&out, s)?;
            }
            Ok(Some(json!({ "samples": samples.len(), "res": g.res, "out": out.display().to_string() })))
        }
        Cmd::Train { net, data, epochs, iterations, batch, lr, o2v, history, out } => {
            let kind = NetKind::parse(&net)?;
            let samples = read_sample_dir(&data)?;
            if samples.is_empty() {
                return Err(Failure::Run(format!("no samples under {}", data.display()), None));
            }
            let grid = samples[0].sample.field.grid;
            let examples = match kind {
                NetKind::S2o => samples.iter().map(|s| s2o_example(&s.sample)).collect::<Result<Vec<_>>>()?,
                NetKind::O2v => samples.iter().map(|s| o2v_example(&s.sample)).collect::<Result<Vec<_>>>()?,
                NetKind::V2v => {
                    let b = bust("default")?;
                    let lift = o2v.as_deref().map(WeightStore::load).transpose()?;
                    let backend = |s: &strandforge::datagen::TrainingSampleSV| match &lift {
                        Some(ws) => infer_o2v(ws, &s.dense, &s.depth, s.field.grid),
                        None => diffuse_field_3d(&s.dense, &s.mask, &s.depth, s.field.grid, &ShellParams::default()),
                    };
                    let mv = build_mv_dataset(&samples, &b, backend, &MvParams { seed: g.seed, ..Default::default() })?;
                    mv.iter().map(v2v_example).collect::<Result<Vec<_>>>()?
                }
            };
            let iterations = iterations.unwrap_or_else(|| TrainConfig::iterations_for_epochs(epochs, examples.len(), batch));
            let mut store = WeightStore::init(kind, g.scale, grid.nx, grid.nz, g.seed)?;
            let cfg = TrainConfig { iterations, batch_size: batch, lr, seed: g.seed, ..Default::default() };
            let hist = train(&mut store, &examples, &cfg)?;
            store.meta.epochs = epochs;
            store.save(&out)?;
            if let Some(p) = history {
                fs::write(p, serde_json::to_vec_pretty(&hist).map_err(Error::from)?)?;
            }
            let last = hist.last();
            Ok(Some(json!({
                "net": kind.as_str(),
                "samples": examples.len(),
                "iterations": iterations,
                "scale": g.scale,
                "critic": last.map(|r| r.critic),
                "generator": last.map(|r| r.generator),
                "pixel": last.map(|r| r.pixel),
                "out": out.display().to_string(),
            })))
        }
        Cmd::Infer2d { sketch, backend, weights, out, mask_out } => {
            let strokes: StrokeSet = serde_json::from_slice(&fs::read(&sketch)?).map_err(|e| Failure::Run(format!("{}: {e}", sketch.display()), None))?;
            let (sk, mask) = strokes.rasterize()?;
            let dense = match backend {
                BackendArg::Diffusion => strandforge::baseline::diffuse_orientation_2d(&sk, &mask)?,
                BackendArg::Neural => infer_s2o(&load_weights(weights.as_deref(), NetKind::S2o)?, &sk, &mask)?,
            };
            fs::write(&out, write_orientation_fmap(&dense))?;
            if let Some(p) = mask_out {
                fs::write(p, FloatRaster::from(&mask).to_bytes())?;
            }
            Ok(Some(json!({ "valid": dense.valid_count(), "mask": mask.count(), "out": out.display().to_string() })))
        }
        Cmd::Infer3d { dense, mask, backend, weights, bust: bid, out } => {
            let d = read_orientation_fmap(&fs::read(&dense)?)?;
            let m = read_mask(mask.as_deref(), &d)?;
            let grid = grid_for(d.width, d.height)?;
            let depth = render_bust_depth(&bust(&bid)?, &ViewPose::IDENTITY, &raster_for(&grid));
            let field = match backend {
                BackendArg::Diffusion => diffuse_field_3d(&d, &m, &depth, grid, &ShellParams::default())?,
                BackendArg::Neural => infer_o2v(&load_weights(weights.as_deref(), NetKind::O2v)?, &d, &depth, grid)?,
            };
            fs::write(&out, write_vfld(&clamp_field(&field)))?;
            Ok(Some(json!({ "valid_cells": field.valid_count(), "grid": [grid.nx, grid.ny, grid.nz], "out": out.display().to_string() })))
        }
        Cmd::Update3d { prior, dense, mask, pose, backend, weights, bust: bid, out } => {
            let pose = parse_pose(&pose)?;
            let p = read_vfld(&fs::read(&prior)?)?;
            let d = read_orientation_fmap(&fs::read(&dense)?)?;
            let m = read_mask(mask.as_deref(), &d)?;
            let depth = render_bust_depth(&bust(&bid)?, &pose, &raster_for(&p.grid));
            let field = match backend {
                BackendArg::Diffusion => update_field_diffusion(&p, &d, &m, &depth, &ShellParams::default())?,
                BackendArg::Neural => infer_v2v(&load_weights(weights.as_deref(), NetKind::V2v)?, &p, &d, &depth)?,
            };
            fs::write(&out, write_vfld(&clamp_field(&field)))?;
            Ok(Some(json!({ "valid_cells": field.valid_count(), "out": out.display().to_string() })))
        }
        Cmd::Grow { field, bust: bid, roots, pose, out } => {
            let pose = parse_pose(&pose)?;
            let f = read_vfld(&fs::read(&field)?)?;
            let params = GrowParams { seed: g.seed, ..Default::default() };
            let set = grow_in_view(&bust(&bid)?, &f, &pose, roots, &params)?;
            fs::write(&out, write_hair(&set))?;
            Ok(Some(json!({
                "strands": set.len(),
                "rooted": set.rooted_count(),
                "vertices": set.vertex_count(),
                "out": out.display().to_string(),
            })))
        }
        Cmd::Edit { strands, request, pose, mask, bust: bid, out } => {
            let pose = parse_pose(&pose)?;
            let set = read_hair(&fs::read(&strands)?)?;
            let req: EditRequest = serde_json::from_slice(&fs::read(&request)?).map_err(|e| Failure::Run(format!("{}: {e}", request.display()), None))?;
            let spec = raster_for(&GridSpec::for_resolution(g.res));
            let b = bust(&bid)?;
            let select = |q: &Option<WispQuery>| -> Result<EditSelection> {
                match q {
                    None => Ok(EditSelection::all(&set)),
                    Some(q) => select_wisp(&set, &b, q, &pose, &spec),
                }
            };
            let mut resynth = false;
            let edited = match &req {
                EditRequest::Cut { stroke } => cut_by_stroke(&set, stroke, &pose, &spec)?,
                EditRequest::Trim { contour } => {
                    validate_contour(contour)?;
                    let new_mask = rasterize_contour(contour, spec.width, spec.height);
                    let old = match &mask {
                        Some(p) => FloatRaster::from_bytes(&fs::read(p)?)?.to_mask()?,
                        None => MaskMap::new(spec.width, spec.height),
                    };
                    let (t, flag) = trim_by_mask(&set, &new_mask, &old, &pose, &spec)?;
                    resynth = flag;
                    t
                }
                EditRequest::Deform { selection, handles } => laplacian_deform(&set, &select(selection)?, handles)?,
                EditRequest::ScaleLength { selection, factor } => scale_length(&set, &select(selection)?, *factor)?,
                EditRequest::Recolor { selection, color } => recolor(&set, &select(selection)?, *color)?,
            };
            fs::write(&out, write_hair(&edited))?;
            Ok(Some(json!({ "strands": edited.len(), "needs_resynthesis": resynth, "out": out.display().to_string() })))
        }
        Cmd::Serve { addr, data_dir, timeout_ms, workers, s2o, o2v, v2v } => {
            let load = |p: &Option<PathBuf>| -> Result<Option<Arc<WeightStore>>> {
                p.as_deref().map(|p| WeightStore::load(p).map(Arc::new)).transpose()
            };
            let models = Models { s2o: load(&s2o)?, o2v: load(&o2v)?, v2v: load(&v2v)? };
            let cfg = ServiceConfig {
                data_dir,
                sync_timeout: Duration::from_millis(timeout_ms),
                workers,
                session: SessionConfig { res: g.res, seed: g.seed, ..Default::default() },
            };
            let state = AppState::open(cfg, models)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(strandforge_service::serve(addr, state))?;
            Ok(None)
        }
        Cmd::Gradcheck { all, term, tol, per_tensor } => {
            if all && !term.is_empty() {
                return Err(Failure::Usage("--all and --term are exclusive".into()));
            }
            let opts = GradCheckOptions { per_tensor, seed: g.seed, ..Default::default() };
            let reports = gradient_suite(g.seed, &opts)?;
            let known: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
            if let Some(t) = term.iter().find(|t| !known.contains(&t.as_str())) {
                return Err(Failure::Usage(format!("unknown term '{t}', expected one of {}", known.join(", "))));
            }
            let chosen: Vec<_> = reports.into_iter().filter(|r| term.is_empty() || term.contains(&r.name)).collect();
            let pass = chosen.iter().all(|r| r.passes(tol));
            let rows: Vec<Value> = chosen
                .iter()
                .map(|r| {
                    json!({
                        "term": r.name,
                        "checked": r.checked,
                        "skipped": r.skipped,
                        "at_noise": r.at_noise,
                        "max_rel_err": r.max_rel_err,
                        "pass": r.passes(tol),
                    })
                })
                .collect();
            let report = json!({ "tol": tol, "pass": pass, "terms": rows });
            if pass {
                Ok(Some(report))
            } else {
                Err(Failure::Run("gradient check failed".into(), Some(report)))
            }
        }
        Cmd::EvalMse { pred, gt } => {
            let p = read_orientation_fmap(&fs::read(&pred)?)?;
            let t = read_orientation_fmap(&fs::read(&gt)?)?;
            Ok(Some(json!({ "mse": p.mse(&t)? })))
        }
    }
}
