use std::fs;
use std::path::{Path, PathBuf};

use lsvd_core::analysis::{self, GeodesicMode, Matching, SubspaceSide};
use lsvd_core::latent::{load_latent, save_latent, GenSpec, LatentMeta, LatentTensor, Shape};
use lsvd_core::linalg::{frobenius_distance, Norm};
use lsvd_core::phi::{load_model, save_model, PhiModel};
use lsvd_core::trainer::{self, TrainConfig};
use lsvd_core::{edit_latent, synth_latent, AviConfig, Lambdas, SingularValuePredictor, SourceSpectrum};
use serde_json::json;

use crate::{
    AnalyzeCommand, Cli, Command, EditArgs, Format, GenArgs, GeodesicArgs, InterpolateArgs, MatchingArg, MobilityArgs,
    ModeArg, NormArg, PredictorArgs, SequenceArgs, SideArg, TableArg, TheoremArgs, TrainArgs,
};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl From<lsvd_core::Error> for Failure {
    fn from(e: lsvd_core::Error) -> Self {
        let code = if e.is_validation() { EXIT_USAGE } else { EXIT_RUNTIME };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn echo(config: serde_json::Value) {
    eprintln!("{config}");
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => gen(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Edit(a) => edit(cli, a),
        Command::Interpolate(a) => interpolate(cli, a),
        Command::Analyze(AnalyzeCommand::Geodesic(a)) => geodesic(cli, a),
        Command::Analyze(AnalyzeCommand::Mobility(a)) => mobility(cli, a),
        Command::Analyze(AnalyzeCommand::Svtrace(a)) => svtrace(cli, a),
        Command::Analyze(AnalyzeCommand::Theorem(a)) => theorem(cli, a),
    }
}

fn gen(cli: &Cli, a: &GenArgs) -> Result<()> {
    let spec =
        GenSpec { shape: Shape::new(a.shape[0], a.shape[1], a.shape[2]), seed: cli.seed, mean: a.mean, std: a.std };
    echo(json!({
        "command": "gen",
        "out": a.out,
        "shape": [spec.shape.channels, spec.shape.height, spec.shape.width],
        "seed": spec.seed,
        "mean": spec.mean,
        "std": spec.std,
        "time_step": a.time_step,
        "total_steps": a.total_steps,
        "tag": a.tag,
    }));
    let t = synth_latent(&spec)?;
    let meta =
        LatentMeta { time_step: a.time_step, total_steps: a.total_steps, seed: Some(cli.seed), tag: a.tag.clone() };
    let t = LatentTensor::new(t.shape(), t.data().to_vec(), meta)?;
    save_latent(&t, &a.out)?;
    Ok(())
}

fn config_path(model: &Path) -> PathBuf {
    model.with_extension("config.json")
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    if a.x.len() != a.z.len() {
        return Err(Failure::usage(format!("--x given {} times but --z {} times", a.x.len(), a.z.len())));
    }
    let mut cfg = TrainConfig {
        pairs: a.x.iter().cloned().zip(a.z.iter().cloned()).collect(),
        samples_per_pair: a.n,
        sigma: a.sigma,
        k: a.k,
        rho: a.rho,
        lambdas: Lambdas([a.lambda1, a.lambda2, a.lambda3, a.lambda4]),
        batch: a.batch,
        lr: a.lr,
        epochs: a.epochs,
        seed: cli.seed,
        hidden: a.hidden,
    };
    cfg.samples_per_pair = Some(cfg.samples(cfg.pairs.len()));
    let echoed = json!({ "command": "train", "out_model": a.out_model, "history": a.history, "config": cfg });
    echo(echoed.clone());
    cfg.validate()?;
    let (model, history) = trainer::train(&cfg)?;
    save_model(&model, &a.out_model)?;
    fs::write(config_path(&a.out_model), serde_json::to_string_pretty(&echoed)?)?;
    if let Some(path) = &a.history {
        fs::write(path, history.to_csv(a.record_wall_time)?)?;
    }
    if let (Some(first), Some(last)) = (history.epochs.first(), history.epochs.last()) {
        eprintln!("trained {} steps: epoch-mean L_AVI {:.6e} -> {:.6e}", history.steps.len(), first.total, last.total);
    }
    Ok(())
}

fn load_predictor(p: &PredictorArgs) -> Result<Box<dyn SingularValuePredictor>> {
    if p.identity_s {
        return Ok(Box::new(SourceSpectrum));
    }
    let path = p.model.as_ref().ok_or_else(|| Failure::usage("--model or --identity-s is required"))?;
    let model: PhiModel = load_model(path)?;
    Ok(Box::new(model))
}

fn predictor_json(p: &PredictorArgs) -> serde_json::Value {
    if p.identity_s {
        json!("identity-s")
    } else {
        json!(p.model)
    }
}

fn edit(_cli: &Cli, a: &EditArgs) -> Result<()> {
    let cfg = AviConfig { k: a.k, rho: a.rho, ..Default::default() };
    echo(json!({
        "command": "edit",
        "x": a.x,
        "z": a.z,
        "predictor": predictor_json(&a.predictor),
        "rho": a.rho,
        "k": a.k,
        "out": a.out,
    }));
    cfg.validate()?;
    let predictor = load_predictor(&a.predictor)?;
    let (x, z) = (load_latent(&a.x)?, load_latent(&a.z)?);
    let y = edit_latent(&x, &z, predictor.as_ref(), &cfg)?;
    save_latent(&y, &a.out)?;
    Ok(())
}

/// `steps` evenly spaced values from `start` to `end`, both included.
pub fn rho_schedule(start: f64, end: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| match i {
            0 => start,
            _ if i == steps - 1 => end,
            _ => start + (end - start) * i as f64 / (steps - 1) as f64,
        })
        .collect()
}

fn interpolate(cli: &Cli, a: &InterpolateArgs) -> Result<()> {
    let rhos = rho_schedule(a.rho_start, a.rho_end, a.steps as usize);
    echo(json!({
        "command": "interpolate",
        "x": a.x,
        "z": a.z,
        "predictor": predictor_json(&a.predictor),
        "rho": rhos,
        "k": a.k,
        "out_dir": a.out_dir,
    }));
    let configs: Vec<AviConfig> = rhos
        .iter()
        .map(|&rho| {
            let c = AviConfig { k: a.k, rho, ..Default::default() };
            c.validate().map(|()| c)
        })
        .collect::<lsvd_core::Result<_>>()?;
    let predictor = load_predictor(&a.predictor)?;
    let (x, z) = (load_latent(&a.x)?, load_latent(&a.z)?);
    fs::create_dir_all(&a.out_dir)?;
    let mut rows = Vec::new();
    let mut first: Option<LatentTensor> = None;
    for (i, cfg) in configs.iter().enumerate() {
        let y = edit_latent(&x, &z, predictor.as_ref(), cfg)?;
        let path = a.out_dir.join(format!("interp_{i:03}_rho{:.4}.lat", cfg.rho));
        save_latent(&y, &path)?;
        let base = first.get_or_insert_with(|| y.clone());
        rows.push((i, cfg.rho, path, latent_distance(&y, base)?));
    }
    let report = match cli.format {
        Format::Json => {
            serde_json::to_string_pretty(
                &rows
                    .iter()
                    .map(|(i, rho, path, d)| json!({"index": i, "rho": rho, "path": path, "distance_from_first": d}))
                    .collect::<Vec<_>>(),
            )? + "\n"
        }
        Format::Csv => {
            let mut s = String::from("index,rho,path,distance_from_first\n");
            for (i, rho, path, d) in &rows {
                s += &format!("{i},{rho},{},{d}\n", path.display());
            }
            s
        }
    };
    print!("{report}");
    Ok(())
}

/// Frobenius distance over all channels.
fn latent_distance(a: &LatentTensor, b: &LatentTensor) -> Result<f64> {
    let mut sq = 0.0;
    for c in 0..a.shape().channels {
        sq += frobenius_distance(&a.channel(c), &b.channel(c))?.powi(2);
    }
    Ok(sq.sqrt())
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<LatentTensor>> {
    paths.iter().map(|p| Ok(load_latent(p)?)).collect()
}

fn emit(out: Option<&Path>, report: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, report)?,
        None => print!("{report}"),
    }
    Ok(())
}

fn json_report<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn format_name(f: Format) -> &'static str {
    match f {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

fn sequence_echo(cmd: &str, cli: &Cli, s: &SequenceArgs, extra: serde_json::Value) {
    let mut v = json!({
        "command": format!("analyze {cmd}"),
        "inputs": s.inputs,
        "out": s.out,
        "format": format_name(cli.format),
    });
    if let (Some(m), serde_json::Value::Object(e)) = (v.as_object_mut(), extra) {
        m.extend(e);
    }
    echo(v);
}

fn geodesic(cli: &Cli, a: &GeodesicArgs) -> Result<()> {
    let mode = match a.mode {
        ModeArg::Consecutive => GeodesicMode::Consecutive,
        ModeArg::AgainstFirst => GeodesicMode::AgainstFirst,
    };
    let side = match a.side {
        SideArg::Left => SubspaceSide::Left,
        SideArg::Right => SubspaceSide::Right,
    };
    sequence_echo("geodesic", cli, &a.seq, json!({ "p": a.p, "mode": mode, "side": side }));
    let latents = load_all(&a.seq.inputs)?;
    let series = analysis::geodesic_trajectory(&latents, a.p, mode, side)?;
    let report = match cli.format {
        Format::Csv => analysis::geodesic_csv(&series)?,
        Format::Json => json_report(&series)?,
    };
    emit(a.seq.out.as_deref(), &report)
}

fn mobility(cli: &Cli, a: &MobilityArgs) -> Result<()> {
    let matching = match a.matching {
        MatchingArg::Greedy => Matching::Greedy,
        MatchingArg::Hungarian => Matching::Hungarian,
    };
    let table = match a.table {
        TableArg::Ranks => "ranks",
        TableArg::Matches => "matches",
    };
    sequence_echo("mobility", cli, &a.seq, json!({ "matching": matching, "table": table }));
    let latents = load_all(&a.seq.inputs)?;
    let trace = analysis::mobility_trace(&latents, matching)?;
    let report = match (cli.format, a.table) {
        (Format::Json, _) => json_report(&trace)?,
        (Format::Csv, TableArg::Ranks) => analysis::mobility_ranks_csv(&trace)?,
        (Format::Csv, TableArg::Matches) => analysis::mobility_matches_csv(&trace)?,
    };
    emit(a.seq.out.as_deref(), &report)
}

fn svtrace(cli: &Cli, a: &SequenceArgs) -> Result<()> {
    sequence_echo("svtrace", cli, a, json!({}));
    let latents = load_all(&a.inputs)?;
    let trace = analysis::singular_value_trajectory(&latents)?;
    let report = match cli.format {
        Format::Csv => analysis::svtrace_csv(&trace)?,
        Format::Json => json_report(&trace)?,
    };
    emit(a.out.as_deref(), &report)
}

fn theorem(cli: &Cli, a: &TheoremArgs) -> Result<()> {
    if a.x.len() != a.z.len() {
        return Err(Failure::usage(format!("--x given {} times but --z {} times", a.x.len(), a.z.len())));
    }
    let norm = match a.norm {
        NormArg::Frobenius => Norm::Frobenius,
        NormArg::Spectral => Norm::Spectral,
    };
    let xs = load_all(&a.x)?;
    let zs = load_all(&a.z)?;
    let k = a.k.unwrap_or(xs[0].shape().height / 2);
    echo(json!({
        "command": "analyze theorem",
        "x": a.x,
        "z": a.z,
        "k": k,
        "norm": norm,
        "out": a.out,
        "format": format_name(cli.format),
    }));
    let pairs: Vec<_> = xs.into_iter().zip(zs).collect();
    let corpus = analysis::verify_corpus(&pairs, k, norm)?;
    let report = match cli.format {
        Format::Csv => analysis::theorem_csv(&corpus.reports)?,
        Format::Json => json_report(&corpus)?,
    };
    emit(a.out.as_deref(), &report)?;
    let channels: usize = corpus.reports.iter().map(|r| r.channels.len()).sum();
    eprintln!("rate {} over {channels} channels", corpus.rate);
    Ok(())
}
