//! `echodoa`: simulation, dataset, training and evaluation experiments from
//! the command line.

mod config;
mod fail;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use echodoa::dataset::{
    dataset_from_bytes, generate_dataset, ingest_capture, load_dataset, save_dataset, split, write_capture,
    write_index, Capture, Dataset,
};
use echodoa::eval::{evaluate, snr_crossover, Domain, Estimator, MetricsTable, ResultFormat};
use echodoa::music::{music_with_spectrum, DoaEstimate};
use echodoa::nn::{grad_check, train, Checkpoint, EpochStats, NetworkSpec};
use echodoa::signal::{add_awgn, synthesize_echo, to_baseband, wavelength, ArrayGeometry, Snr, SourceScenario};
use echodoa::triangulation::{fuse_doa_with_ranges, RangeMeasurement, SensorPose};
use echodoa::{exec, Execution};

use config::FileConfig;
use fail::{CliError, CliResult};

/// Noiseless 30 degree echo at half-wavelength spacing, 0.68 m range.
const BUNDLED_RECORD: &[u8] = include_bytes!("../assets/noiseless_30deg.edds");

#[derive(Debug, Parser)]
#[command(name = "echodoa", version, about = "Direction of arrival for two-element ultrasonic arrays")]
struct Cli {
    /// TOML file with [sweep], [network], [train], [adam], [music] and
    /// [gradcheck] sections. Flags override file values.
    #[arg(long, global = true, env = "ECHODOA_CONFIG")]
    config: Option<PathBuf>,

    /// Master seed for every random draw of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Primary output path of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one echo and dump its baseband (and optionally raw waveform,
    /// pseudospectrum and a capture file).
    Simulate(SimulateArgs),
    /// Generate a labelled dataset from the sweep, or ingest a capture file.
    Dataset(DatasetArgs),
    /// Train the regressor on a dataset; writes a checkpoint and loss history.
    Train(TrainArgs),
    /// Compare estimators on a dataset; writes a metrics table.
    Eval(EvalArgs),
    /// Run MUSIC on one record and print the estimate.
    Music(MusicArgs),
    /// Locate an obstacle from two ranges and an optional direction.
    Triangulate(TriangulateArgs),
    /// Dataset, training and held-out evaluation in one go.
    Sweep(SweepArgs),
    /// Verify backpropagation against finite differences on a small network.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Direction of arrival in degrees.
    #[arg(long, allow_hyphen_values = true, default_value_t = 30.0)]
    doa: f64,
    /// Obstacle range in meters.
    #[arg(long, default_value_t = 1.0)]
    range: f64,
    /// SNR in dB, or `inf` for a noiseless echo.
    #[arg(long, allow_hyphen_values = true, default_value = "inf")]
    snr: f64,
    /// Element spacing in wavelengths (default from the config sweep).
    #[arg(long)]
    spacing: Option<f64>,
    /// Also write the raw real waveform as a text table.
    #[arg(long)]
    waveform: Option<PathBuf>,
    /// Also write the MUSIC pseudospectrum as a text table.
    #[arg(long)]
    spectrum: Option<PathBuf>,
    /// Also write the raw waveform as a capture file.
    #[arg(long)]
    capture: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[arg(long)]
    records_per_cell: Option<usize>,
    /// Element spacing in wavelengths.
    #[arg(long)]
    spacing: Option<f64>,
    /// Write a per-record label index as CSV.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Ingest this capture file instead of simulating.
    #[arg(long)]
    from_capture: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset file.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Network input length in baseband samples.
    #[arg(long)]
    input_len: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Train on the records as they are, without random channel swaps and
    /// carrier-phase rotations.
    #[arg(long)]
    no_augment: bool,
    /// Loss history CSV (default: `<out>.history.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
    /// Also write a plain-text weight dump.
    #[arg(long)]
    text_export: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Trained checkpoint(s) to evaluate.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Leave MUSIC out of the comparison.
    #[arg(long)]
    no_music: bool,
    /// Angular domains to report.
    #[arg(long, value_delimiter = ',', default_value = "full")]
    domain: Vec<String>,
    /// Evaluate only the held-out part of the training split.
    #[arg(long)]
    heldout: bool,
}

#[derive(Debug, Args)]
struct MusicArgs {
    /// Dataset file to read the record from (default: bundled noiseless
    /// 30 degree record).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Record index within the dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Debug, Args)]
struct TriangulateArgs {
    /// Range from sensor 1 in meters (`nan` if missing).
    #[arg(long)]
    r1: f64,
    /// Range from sensor 2 in meters (`nan` if missing).
    #[arg(long)]
    r2: f64,
    /// Sensor 1 position `x,y`.
    #[arg(long, allow_hyphen_values = true, default_value = "-0.25,0")]
    sensor1: String,
    /// Sensor 2 position `x,y`.
    #[arg(long, allow_hyphen_values = true, default_value = "0.25,0")]
    sensor2: String,
    /// Range standard deviation in meters.
    #[arg(long, default_value_t = 0.01)]
    sigma_r: f64,
    /// Direction estimate in degrees to fuse with the ranges.
    #[arg(long, allow_hyphen_values = true)]
    doa: Option<f64>,
    /// Comma-separated ambiguity set of the direction estimate.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    ambiguity: Vec<f64>,
    /// Direction standard deviation in degrees.
    #[arg(long, default_value_t = 1.0)]
    sigma_theta: f64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    records_per_cell: Option<usize>,
    #[arg(long)]
    spacing: Option<f64>,
    /// Keep the generated dataset in the output directory.
    #[arg(long)]
    save_dataset: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Check the full default network instead of the reduced one (slow).
    #[arg(long)]
    full: bool,
}

struct Ctx {
    cfg: FileConfig,
    seed: Option<u64>,
    exec: Execution,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out_required(&self, what: &str) -> CliResult<&Path> {
        let p = self
            .out
            .as_deref()
            .ok_or_else(|| CliError::usage(format!("--out <path> is required for {what}")))?;
        check_output(p)?;
        Ok(p)
    }
}

fn check_input(p: &Path) -> CliResult<()> {
    if !p.is_file() {
        return Err(CliError::validation(format!("{}: no such file", p.display())));
    }
    Ok(())
}

fn check_output(p: &Path) -> CliResult<()> {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(CliError::validation(format!("{}: directory does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn print_toml<T: Serialize>(value: &T) {
    print!("{}", toml::to_string(value).expect("output serializes"));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::from(2),
                _ => CliError::usage(e.kind().to_string()).report(),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => {
            check_input(p)?;
            FileConfig::from_file(p)?
        }
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        cfg,
        seed: cli.seed,
        exec: if cli.workers == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        out: cli.out,
    };
    exec::with_workers(cli.workers, move || match cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Dataset(a) => dataset(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Music(a) => music(&ctx, a),
        Command::Triangulate(a) => triangulate(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Gradcheck(a) => gradcheck(&ctx, a),
    })
}

fn simulate(ctx: &Ctx, a: SimulateArgs) -> CliResult<()> {
    let out = ctx.out_required("simulate")?;
    for p in [&a.waveform, &a.spectrum, &a.capture].into_iter().flatten() {
        check_output(p)?;
    }
    let sim = &ctx.cfg.sweep.sim;
    let spacing = a.spacing.unwrap_or(ctx.cfg.sweep.spacing_wavelengths);
    let geometry = ArrayGeometry::pair_in_wavelengths(spacing, wavelength(sim))?;
    let snr = Snr::from_db(a.snr);
    let scenario = SourceScenario::new(a.doa, a.range, snr);
    scenario.validate()?;
    let clean = synthesize_echo(&scenario, &geometry, sim)?;
    let wave = add_awgn(&clean, snr, ctx.seed.unwrap_or(sim.rng_seed))?;
    let base = to_baseband(&wave, sim)?;

    let mut text = String::from("# t_s");
    for m in 0..base.channels {
        text += &format!(" ch{m}_re ch{m}_im");
    }
    text.push('\n');
    for i in 0..base.samples_per_channel {
        text += &format!("{:.9e}", i as f64 / base.sample_rate);
        for m in 0..base.channels {
            let z = base.channel(m)[i];
            text += &format!(" {:.16e} {:.16e}", z.re, z.im);
        }
        text.push('\n');
    }
    write_file(out, text.as_bytes())?;

    if let Some(p) = &a.waveform {
        let mut text = String::from("# t_s");
        for m in 0..wave.channels {
            text += &format!(" ch{m}");
        }
        text.push('\n');
        for i in 0..wave.samples_per_channel {
            text += &format!("{:.9e}", i as f64 / wave.sample_rate);
            for m in 0..wave.channels {
                text += &format!(" {:.16e}", wave.channel(m)[i]);
            }
            text.push('\n');
        }
        write_file(p, text.as_bytes())?;
    }
    if let Some(p) = &a.capture {
        let note = format!("doa_deg={};snr_db={};range_m={}", a.doa, snr.as_db(), a.range);
        write_capture(&Capture::from_shots(&[wave], geometry.clone(), &note)?, p)?;
    }
    let (est, spectrum) = music_with_spectrum(&base, &geometry, sim, &ctx.cfg.music)?;
    if let Some(p) = &a.spectrum {
        let spectrum = spectrum.ok_or_else(|| CliError::runtime("no echo detected, no pseudospectrum".to_string()))?;
        let mut buf = Vec::new();
        spectrum.write_table(&mut buf).expect("in-memory write");
        write_file(p, &buf)?;
    }
    print_toml(&EstimateReport::new(&est, Some(a.doa)));
    Ok(())
}

fn sweep_spec(ctx: &Ctx, records_per_cell: Option<usize>, spacing: Option<f64>) -> echodoa::dataset::SweepSpec {
    let mut spec = ctx.cfg.sweep.clone();
    if let Some(n) = records_per_cell {
        spec.records_per_cell = n;
    }
    if let Some(s) = spacing {
        spec.spacing_wavelengths = s;
    }
    if let Some(s) = ctx.seed {
        spec.seed = s;
    }
    spec
}

fn dataset(ctx: &Ctx, a: DatasetArgs) -> CliResult<()> {
    let out = ctx.out_required("dataset")?;
    if let Some(p) = &a.index {
        check_output(p)?;
    }
    let spec = sweep_spec(ctx, a.records_per_cell, a.spacing);
    let ds = match &a.from_capture {
        Some(p) => {
            check_input(p)?;
            let geometry = spec.geometry()?;
            let records = ingest_capture(p, &geometry, &spec.sim)?;
            Dataset::new(spec.sim.clone(), geometry, records)?
        }
        None => generate_dataset(&spec, ctx.exec)?,
    };
    save_dataset(&ds, out)?;
    if let Some(p) = &a.index {
        let mut buf = Vec::new();
        write_index(&ds, &mut buf).expect("in-memory write");
        write_file(p, &buf)?;
    }
    println!("records = {}", ds.len());
    Ok(())
}

fn write_history(path: &Path, history: &[EpochStats]) -> CliResult<()> {
    let mut text = String::from("epoch,train_loss,heldout_loss\n");
    for h in history {
        text += &format!("{},{:.16e},{:.16e}\n", h.epoch, h.train_loss, h.heldout_loss);
    }
    write_file(path, text.as_bytes())
}

fn history_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

fn network_spec(ctx: &Ctx, input_len: Option<usize>) -> CliResult<NetworkSpec> {
    let spec = match input_len {
        Some(t) => ctx.cfg.network.clone().with_input_len(t),
        None => ctx.cfg.network.clone(),
    };
    spec.layout()?;
    Ok(spec)
}

#[derive(Serialize)]
struct TrainReport {
    epochs_run: usize,
    best_epoch: usize,
    final_train_loss: f64,
    final_heldout_loss: f64,
    train_records: usize,
    heldout_records: usize,
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> CliResult<()> {
    check_input(&a.dataset)?;
    let out = ctx.out_required("train")?;
    let history = a.history.clone().unwrap_or_else(|| history_path(out));
    check_output(&history)?;
    let mut cfg = ctx.cfg.train.clone();
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if a.patience.is_some() {
        cfg.patience = a.patience;
    }
    if a.no_augment {
        cfg.mirror_augment = false;
        cfg.phase_augment = false;
    }
    cfg.validate()?;
    let spec = network_spec(ctx, a.input_len)?;
    let ds = load_dataset(&a.dataset)?;
    let outcome = train(&ds, &spec, &cfg, &ctx.cfg.adam, ctx.seed.unwrap_or(0), ctx.exec)?;
    outcome.checkpoint.save(out)?;
    write_history(&history, &outcome.history)?;
    if let Some(p) = &a.text_export {
        check_output(p)?;
        let mut buf = Vec::new();
        outcome.checkpoint.write_text(&mut buf)?;
        write_file(p, &buf)?;
    }
    let m = &outcome.checkpoint.meta;
    print_toml(&TrainReport {
        epochs_run: m.epochs_run,
        best_epoch: m.best_epoch,
        final_train_loss: m.final_train_loss,
        final_heldout_loss: m.final_heldout_loss,
        train_records: outcome.train_records.len(),
        heldout_records: outcome.heldout_records.len(),
    });
    Ok(())
}

fn eval_cmd(ctx: &Ctx, a: EvalArgs) -> CliResult<()> {
    check_input(&a.dataset)?;
    for p in &a.checkpoint {
        check_input(p)?;
    }
    if let Some(p) = &ctx.out {
        check_output(p)?;
    }
    let domains = a
        .domain
        .iter()
        .map(|d| Domain::parse(d))
        .collect::<echodoa::Result<Vec<_>>>()?;
    let mut estimators = Vec::new();
    for p in &a.checkpoint {
        let ck = Checkpoint::load(p)?;
        let id = if a.checkpoint.len() == 1 {
            "cnn".to_string()
        } else {
            format!("cnn-{}", p.file_stem().and_then(|s| s.to_str()).unwrap_or("model"))
        };
        estimators.push(Estimator::network(ck).with_id(id));
    }
    if !a.no_music {
        estimators.push(Estimator::music(ctx.cfg.music.clone()));
    }
    if estimators.is_empty() {
        return Err(CliError::usage("nothing to evaluate: give --checkpoint or drop --no-music".to_string()));
    }
    let mut ds = load_dataset(&a.dataset)?;
    if a.heldout {
        let (fraction, seed) = match estimators.first() {
            Some(Estimator::Network { checkpoint, .. }) => (checkpoint.meta.train_fraction, checkpoint.meta.split_seed),
            _ => (ctx.cfg.train.train_fraction, ctx.cfg.train.shuffle_seed),
        };
        ds = ds.subset(&split(&ds, fraction, seed)?.test);
    }
    let table = evaluate(&ds, &estimators, &domains, ctx.exec)?;
    emit(&table, ctx.out.as_deref())
}

fn emit(table: &MetricsTable, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => table.save(p, ResultFormat::from_path(p))?,
        None => {
            let stdout = std::io::stdout();
            table.write_csv(stdout.lock())?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EstimateReport {
    angle_deg: f64,
    status: String,
    ambiguity: Vec<f64>,
    prominence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth_deg: Option<f64>,
}

impl EstimateReport {
    fn new(e: &DoaEstimate, truth: Option<f64>) -> Self {
        EstimateReport {
            angle_deg: e.angle_deg,
            status: if e.is_fallback() { "fallback" } else { "converged" }.into(),
            ambiguity: e.ambiguity.clone(),
            prominence: e.prominence,
            truth_deg: truth.filter(|t| t.is_finite()),
        }
    }
}

fn music(ctx: &Ctx, a: MusicArgs) -> CliResult<()> {
    let ds = match &a.dataset {
        Some(p) => {
            check_input(p)?;
            load_dataset(p)?
        }
        None => dataset_from_bytes(BUNDLED_RECORD)?,
    };
    let r = ds
        .records
        .get(a.index)
        .ok_or_else(|| CliError::validation(format!("record {} out of range ({} records)", a.index, ds.len())))?;
    let (est, spectrum) = music_with_spectrum(&r.base, &ds.geometry, &ds.sim, &ctx.cfg.music)?;
    if let (Some(p), Some(s)) = (&ctx.out, spectrum) {
        check_output(p)?;
        let mut buf = Vec::new();
        s.write_table(&mut buf).expect("in-memory write");
        write_file(p, &buf)?;
    }
    print_toml(&EstimateReport::new(&est, Some(r.doa_deg)));
    Ok(())
}

fn parse_point(s: &str) -> CliResult<SensorPose> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || CliError::usage(format!("expected `x,y`, got {s:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let x = parts[0].trim().parse().map_err(|_| bad())?;
    let y = parts[1].trim().parse().map_err(|_| bad())?;
    Ok(SensorPose::new(x, y))
}

fn triangulate(_ctx: &Ctx, a: TriangulateArgs) -> CliResult<()> {
    let m1 = RangeMeasurement::new(parse_point(&a.sensor1)?, a.r1, a.sigma_r);
    let m2 = RangeMeasurement::new(parse_point(&a.sensor2)?, a.r2, a.sigma_r);
    let doa = match a.doa {
        Some(angle) => DoaEstimate {
            angle_deg: angle,
            status: echodoa::music::DoaStatus::Converged,
            ambiguity: if a.ambiguity.is_empty() { vec![angle] } else { a.ambiguity.clone() },
            prominence: 0.0,
        },
        None => DoaEstimate::fallback(),
    };
    let fix = fuse_doa_with_ranges(&doa, &m1, &m2, a.sigma_theta)?;
    print_toml(&fix);
    Ok(())
}

#[derive(Serialize)]
struct SweepReport {
    records: usize,
    best_epoch: usize,
    crossover_db: Option<f64>,
}

fn sweep(ctx: &Ctx, a: SweepArgs) -> CliResult<()> {
    let dir = ctx.out_required("sweep")?;
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    let spec = sweep_spec(ctx, a.records_per_cell, a.spacing);
    let mut cfg = ctx.cfg.train.clone();
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let net = network_spec(ctx, None)?;
    let seed = ctx.seed.unwrap_or(spec.seed);

    let ds = generate_dataset(&spec, ctx.exec)?;
    if a.save_dataset {
        save_dataset(&ds, dir.join("dataset.edds"))?;
    }
    let outcome = train(&ds, &net, &cfg, &ctx.cfg.adam, seed, ctx.exec)?;
    outcome.checkpoint.save(dir.join("model.edck"))?;
    write_history(&dir.join("history.csv"), &outcome.history)?;
    let test = ds.subset(&outcome.heldout_records);
    let estimators = [
        Estimator::network(outcome.checkpoint.clone()),
        Estimator::music(ctx.cfg.music.clone()),
    ];
    let table = evaluate(
        &test,
        &estimators,
        &[Domain::Full, Domain::Inside30, Domain::Outside30],
        ctx.exec,
    )?;
    table.save(dir.join("metrics.csv"), ResultFormat::Csv)?;
    table.save(dir.join("metrics.toml"), ResultFormat::Toml)?;
    print_toml(&SweepReport {
        records: ds.len(),
        best_epoch: outcome.checkpoint.meta.best_epoch,
        crossover_db: snr_crossover(&table, "cnn", "music", Domain::Full).ok(),
    });
    Ok(())
}

#[derive(Serialize)]
struct GradcheckLine {
    seed: u64,
    max_relative_error: f64,
    compared: usize,
    passed: bool,
}

#[derive(Serialize)]
struct GradcheckSummary {
    max_relative_error: f64,
    passed: bool,
    seeds: Vec<GradcheckLine>,
}

fn gradcheck(ctx: &Ctx, a: GradcheckArgs) -> CliResult<()> {
    let mut opts = ctx.cfg.gradcheck.clone();
    if let Some(e) = a.epsilon {
        opts.epsilon = e;
    }
    if let Some(t) = a.tolerance {
        opts.tolerance = t;
    }
    let spec = if a.full {
        NetworkSpec::default()
    } else {
        NetworkSpec::reduced()
    };
    let first = ctx.seed.unwrap_or(0);
    let mut lines = Vec::new();
    for seed in first..first + a.seeds.max(1) {
        let r = grad_check(&spec, seed, &opts)?;
        lines.push(GradcheckLine {
            seed,
            max_relative_error: r.max_relative_error,
            compared: r.compared,
            passed: r.passed,
        });
    }
    let summary = GradcheckSummary {
        max_relative_error: lines.iter().map(|l| l.max_relative_error).fold(0.0, f64::max),
        passed: lines.iter().all(|l| l.passed),
        seeds: lines,
    };
    print_toml(&summary);
    let _ = std::io::stdout().flush();
    if !summary.passed {
        return Err(CliError::runtime(format!(
            "gradient check failed: max relative error {:.3e} > {:.1e}",
            summary.max_relative_error, opts.tolerance
        )));
    }
    Ok(())
}
