// `!(x < y)` so a NaN MAE fails the assertion.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use sdf_carve::carve::{carve, inject_target_noise, render_targets};
use sdf_carve::config::RunConfig;
use sdf_carve::mesh::{compute_vertex_normals, load_mesh, save_mesh};
use sdf_carve::metrics::{compare_meshes, compare_normal_maps, MetricReport};
use sdf_carve::raster::{read_nmap, render_views, write_nmap, NormalImage, RawMap};
use sdf_carve::schedule::{
    array_from_raw, forward_interpolate, max_abs_difference, oracle_prediction, raw_from_array, recover_target,
    sample, step_schedule, MapPair, Prediction, ScheduleParams,
};
use sdf_carve::synth::synthesize;

const ECHO_FILE: &str = "run.cfg";

#[derive(Parser)]
#[command(name = "sdf-carve", version, about = "Refine coarse meshes against multi-view normal maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a coarse/fine OBJ pair for a procedural shape.
    Synth(SynthArgs),
    /// Render normal, depth and mask maps of a mesh from every rig camera.
    Render(RenderArgs),
    /// Carve a coarse mesh toward a directory of target normal maps.
    Carve(CarveArgs),
    /// Score meshes and/or normal-map directories against references.
    Eval(EvalArgs),
    /// Run the interpolation scheduler between two maps with an exact denoiser.
    ScheduleDemo(ScheduleArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable); applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    smoothing: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Skip the 8-bit PNG previews.
    #[arg(long)]
    no_preview: bool,
}

#[derive(Args)]
struct CarveArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Coarse mesh, already inside [-1, 1]^3.
    #[arg(long)]
    coarse: Option<PathBuf>,
    /// Directory holding normal_XX.nmap, one per rig camera.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, requires = "reference")]
    mesh: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Directory of predicted normal_XX.nmap files.
    #[arg(long, requires = "reference_normals")]
    normals: Option<PathBuf>,
    #[arg(long)]
    reference_normals: Option<PathBuf>,
    /// Exit with status 3 unless the normal MAE (degrees) is below this.
    #[arg(long)]
    assert_mae_below: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictionArg {
    V,
    Target,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Target map H (NMAP).
    #[arg(long)]
    target: PathBuf,
    /// Source map N (NMAP) the forward chain ends at.
    #[arg(long)]
    source: PathBuf,
    /// Number of sampling steps.
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, value_enum, default_value_t = PredictionArg::V)]
    prediction: PredictionArg,
    /// Where to write the forward chain maps.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A `--assert-*` threshold was not met (exit status 3).
#[derive(Debug)]
struct AssertionFailed(String);

impl std::fmt::Display for AssertionFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for AssertionFailed {}

fn load_config(args: &ConfigArgs, flags: &[(&str, Option<String>)]) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    let mut overrides = args.overrides.clone();
    overrides.extend(
        flags
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={v}"))),
    );
    cfg.apply_overrides(&overrides)?;
    Ok(cfg)
}

fn create_dir(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn required(path: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    path.clone()
        .with_context(|| format!("no {what} given (flag or config key)"))
}

fn map_name(kind: &str, k: usize) -> String {
    format!("{kind}_{k:02}.nmap")
}

fn read_normal_dir(dir: &Path, count: Option<usize>) -> anyhow::Result<Vec<NormalImage>> {
    let mut maps = Vec::new();
    loop {
        let path = dir.join(map_name("normal", maps.len()));
        if !path.exists() || count == Some(maps.len()) {
            break;
        }
        let raw = read_nmap(&path).with_context(|| format!("reading {}", path.display()))?;
        maps.push(NormalImage::from_raw(&raw)?);
    }
    if maps.is_empty() {
        bail!("no normal_00.nmap in {}", dir.display());
    }
    if let Some(n) = count {
        if maps.len() != n {
            bail!("{} holds {} normal maps, the rig has {n} cameras", dir.display(), maps.len());
        }
    }
    Ok(maps)
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let cfg = load_config(
        &args.config,
        &[
            ("preset", args.preset),
            ("amplitude", args.amplitude.map(|v| v.to_string())),
            ("smoothing_iterations", args.smoothing.map(|v| v.to_string())),
            ("seed", args.seed.map(|v| v.to_string())),
        ],
    )?;
    let (coarse, fine) = synthesize(cfg.preset, cfg.amplitude, cfg.smoothing_iterations, cfg.seed)?;
    create_dir(&args.out)?;
    save_mesh(&coarse, args.out.join("coarse.obj"))?;
    save_mesh(&fine, args.out.join("fine.obj"))?;
    cfg.write_echo(args.out.join(ECHO_FILE))?;
    info!(
        "{}: {} vertices, {} faces",
        cfg.preset,
        fine.vertices.len(),
        fine.faces.len()
    );
    Ok(())
}

fn cmd_render(args: RenderArgs) -> anyhow::Result<()> {
    let cfg = load_config(
        &args.config,
        &[("mesh", args.mesh.map(|p| p.display().to_string()))],
    )?;
    let mesh_path = required(&cfg.mesh, "mesh")?;
    let mesh = compute_vertex_normals(&load_mesh(&mesh_path)?);
    let cameras = cfg.cameras()?;
    let maps = render_views(&mesh, &cameras)?;
    create_dir(&args.out)?;
    for (k, m) in maps.iter().enumerate() {
        if m.foreground_count() == 0 {
            warn!("camera {k} sees no surface; its maps are all background");
        }
        let normals = m.normal_image();
        write_nmap(&normals.to_raw(), args.out.join(map_name("normal", k)))?;
        let scalar = |data: Vec<f32>| RawMap {
            height: m.height,
            width: m.width,
            channels: 1,
            data,
        };
        // background depth is written as 0 so the file stays finite
        let depth = m
            .depth
            .iter()
            .map(|&d| if d.is_finite() { d as f32 } else { 0.0 })
            .collect();
        write_nmap(&scalar(depth), args.out.join(map_name("depth", k)))?;
        let mask = m.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        write_nmap(&scalar(mask), args.out.join(map_name("mask", k)))?;
        if !args.no_preview {
            normals.save_preview(args.out.join(format!("normal_{k:02}.png")))?;
        }
    }
    cfg.write_echo(args.out.join(ECHO_FILE))?;
    info!("rendered {} views of {}", maps.len(), mesh_path.display());
    Ok(())
}

fn cmd_carve(args: CarveArgs) -> anyhow::Result<()> {
    let cfg = load_config(
        &args.config,
        &[
            ("mesh", args.coarse.map(|p| p.display().to_string())),
            ("targets", args.targets.map(|p| p.display().to_string())),
            ("strategy", args.strategy),
        ],
    )?;
    let coarse = load_mesh(required(&cfg.mesh, "coarse mesh")?)?;
    let cameras = cfg.cameras()?;
    let targets = read_normal_dir(&required(&cfg.targets, "targets directory")?, Some(cameras.len()))?;
    if let Some(t) = targets
        .iter()
        .find(|t| t.width != cfg.image_width || t.height != cfg.image_height)
    {
        bail!(
            "targets are {}x{}, the rig renders {}x{}",
            t.width,
            t.height,
            cfg.image_width,
            cfg.image_height
        );
    }
    let targets = inject_target_noise(&targets, cfg.noise_sigma, cfg.seed)?;
    let (refined, report) = carve(&coarse, &targets, &cameras, &cfg.carve)?;
    create_dir(&args.out)?;
    save_mesh(&refined, args.out.join("refined.obj"))?;
    report.save_csv(args.out.join("report.csv"))?;
    let summary = report.summary();
    fs::write(args.out.join("summary.txt"), &summary)?;
    cfg.write_echo(args.out.join(ECHO_FILE))?;
    print!("{summary}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config, &[])?;
    if args.mesh.is_none() && args.normals.is_none() {
        bail!("nothing to evaluate: give --mesh/--reference and/or --normals/--reference-normals");
    }
    let mut report = MetricReport {
        mae_degrees: None,
        chamfer: None,
        f_score_percent: None,
        samples: 0,
        pixels_compared: 0,
    };
    if let (Some(a), Some(b)) = (&args.mesh, &args.reference) {
        let (a, b) = (load_mesh(a)?, load_mesh(b)?);
        report = compare_meshes(&a, &b, cfg.samples, cfg.f_threshold, cfg.seed)?;
        let cameras = cfg.cameras()?;
        let rendered = compare_normal_maps(&render_targets(&a, &cameras)?, &render_targets(&b, &cameras)?)?;
        report.mae_degrees = rendered.mae_degrees;
        report.pixels_compared = rendered.pixels_compared;
    }
    if let (Some(a), Some(b)) = (&args.normals, &args.reference_normals) {
        let pred = read_normal_dir(a, None)?;
        let refs = read_normal_dir(b, Some(pred.len()))?;
        // explicit maps take precedence over renders of the meshes
        let maps = compare_normal_maps(&pred, &refs)?;
        report.mae_degrees = maps.mae_degrees;
        report.pixels_compared = maps.pixels_compared;
    }
    print!("{}", report.to_key_values());
    if let Some(out) = &args.out {
        create_dir(out)?;
        fs::write(out.join("eval.csv"), report.to_csv())?;
        cfg.write_echo(out.join(ECHO_FILE))?;
    }
    if let Some(limit) = args.assert_mae_below {
        let mae = report.mae_degrees.unwrap_or(f64::NAN);
        if !(mae < limit) {
            return Err(AssertionFailed(format!("MAE {mae:.4} degrees is not below {limit}")).into());
        }
    }
    Ok(())
}

fn cmd_schedule_demo(args: ScheduleArgs) -> anyhow::Result<()> {
    let target = array_from_raw(&read_nmap(&args.target)?);
    let source = array_from_raw(&read_nmap(&args.source)?);
    let pair = MapPair::new(target, source)?;
    let mut params = ScheduleParams::default();
    params.prediction = match args.prediction {
        PredictionArg::V => Prediction::V,
        PredictionArg::Target => Prediction::Target,
    };
    let steps = step_schedule(params.steps(), args.steps)?;
    if let Some(out) = &args.out {
        create_dir(out)?;
    }
    for &t in &steps {
        let a = params.alpha_bar(t)?;
        let h_t = forward_interpolate(&pair, t, &params)?;
        let v = oracle_prediction(&h_t, t, &pair.target, &params)?;
        let recovered = match params.prediction {
            Prediction::V => recover_target(&h_t, &v, a),
            Prediction::Target => v,
        };
        println!(
            "t={t} alpha_bar={a:.6} step_error={:.3e}",
            max_abs_difference(&recovered, &pair.target)?
        );
        if let Some(out) = &args.out {
            write_nmap(&raw_from_array(&h_t)?, out.join(format!("chain_t{t:04}.nmap")))?;
        }
    }
    let estimate = sample(
        |x, t| oracle_prediction(x, t, &pair.target, &params).expect("shapes checked by MapPair"),
        &pair.source,
        &params,
        &steps,
    )?;
    println!(
        "reconstruction_error={:.3e}",
        max_abs_difference(&estimate, &pair.target)?
    );
    if let Some(out) = &args.out {
        write_nmap(&raw_from_array(&estimate)?, out.join("reconstruction.nmap"))?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<AssertionFailed>().is_some() {
        return 3;
    }
    match err.downcast_ref::<sdf_carve::Error>() {
        Some(sdf_carve::Error::NonFiniteLoss { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Ok(n) = std::env::var("SC_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    warn!("could not size the worker pool: {e}");
                }
            }
            _ => {
                eprintln!("error: SC_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(1);
            }
        }
    }
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Render(a) => cmd_render(a),
        Command::Carve(a) => cmd_carve(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ScheduleDemo(a) => cmd_schedule_demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failures_map_to_exit_codes() {
        let numeric = sdf_carve::Error::NonFiniteLoss {
            iteration: 3,
            data: f64::NAN,
            smooth: 0.0,
            normal: 0.0,
        };
        assert_eq!(exit_code(&anyhow::Error::new(numeric).context("carving")), 2);
        assert_eq!(exit_code(&AssertionFailed("x".into()).into()), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), 1);
        assert_eq!(exit_code(&sdf_carve::Error::NoActiveCells.into()), 1);
    }
}
