use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use specdiff::classifier::{self, aggregate_bands, eeg_bands, Method, TuningConfig};
use specdiff::dtrace::{default_lambda_grid, log_grid};
use specdiff::io;
use specdiff::nll::ScreenConfig;
use specdiff::simulate::{generate_dataset, GroundTruth, SimDesign};
use specdiff::{par, AdamConfig, Error, Result, TrainedModel};

#[derive(Parser, Debug)]
#[command(name = "specdiff", version, about = "Spectral-domain classification of multivariate time series")]
struct Cli {
    /// Worker threads for per-sample and per-frequency stages (default: all cores).
    /// Outputs do not depend on this value.
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    /// Append timestamped progress lines to this file. Timestamps are written
    /// nowhere else, so all other outputs are reproducible byte for byte.
    #[arg(long, global = true, value_name = "FILE")]
    log: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a labeled dataset from a simulation design.
    Simulate(SimulateArgs),
    /// Fit a classifier on a labeled dataset.
    Train(TrainArgs),
    /// Re-run frequency screening of a trained model with new bounds.
    Screen(ScreenArgs),
    /// Classify every sample of a dataset.
    Predict(PredictArgs),
    /// Classify a labeled dataset and report error and recovery rates.
    Evaluate(EvaluateArgs),
    /// Aggregate |D| over EEG frequency bands into CSV and PGM heatmaps.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// n1 = n2 = 100, p = 32, T = 200, band 1..20
    #[value(name = "1")]
    One,
    /// n1 = n2 = 100, p = 64, T = 200, band 1..20
    #[value(name = "2")]
    Two,
    /// n1 = n2 = 30, p = 16, T = 128, band 1..10
    Scaled,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Output dataset directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Design preset; the flags below override single fields.
    #[arg(long, value_enum, default_value = "1")]
    example: Preset,
    /// Number of channels.
    #[arg(long)]
    p: Option<usize>,
    /// Series length.
    #[arg(long = "T", value_name = "T")]
    t: Option<usize>,
    /// Class-1 sample count.
    #[arg(long)]
    n1: Option<usize>,
    /// Class-2 sample count.
    #[arg(long)]
    n2: Option<usize>,
    /// Frequencies where the classes differ, as an inclusive range `a..b`.
    #[arg(long, value_name = "A..B", value_parser = parse_band)]
    band: Option<FreqRange>,
    /// Identity loading added to both inverse spectral densities.
    #[arg(long)]
    loading: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FitOptions {
    #[arg(long, value_enum, default_value = "dtrace")]
    method: MethodArg,
    /// Odd smoothing window of the periodogram, in Fourier frequencies.
    #[arg(long, default_value_t = 3)]
    bandwidth: usize,
    /// Penalty grid: `log:LO:HI:N` (log-spaced) or a comma-separated list.
    /// Default `log:1e-10:1:20`.
    #[arg(long, value_name = "SPEC", value_parser = parse_lambda_grid)]
    lambda_grid: Option<LambdaGrid>,
    /// Extra log-spaced points on each side of the best coarse penalty
    /// (dtrace only).
    #[arg(long, default_value_t = 4)]
    refine: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    /// Stop when no entry moves more than this in one step.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Samples per stochastic step of the joint objective (dtrace-nll only).
    #[arg(long)]
    minibatch: Option<usize>,
    /// Seed of the train/validation split (dtrace-nll only).
    #[arg(long)]
    cv_seed: Option<u64>,
    #[command(flatten)]
    screen: ScreenBounds,
}

#[derive(Args, Debug)]
struct ScreenBounds {
    /// Smallest admissible number of noise frequencies (default 1).
    #[arg(long)]
    t_min: Option<usize>,
    /// Largest admissible number of noise frequencies (default T' - 1).
    #[arg(long)]
    t_max: Option<usize>,
    /// Norms below this are raised to it before taking ratios.
    #[arg(long, default_value_t = specdiff::screening::DEFAULT_FLOOR)]
    floor: f64,
}

impl ScreenBounds {
    fn config(&self) -> ScreenConfig {
        ScreenConfig {
            t_min: self.t_min,
            t_max: self.t_max,
            floor: self.floor,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    /// Penalized D-trace loss, penalty chosen by GIC.
    Dtrace,
    /// D-trace plus cross-entropy, penalty chosen on a validation half.
    DtraceNll,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dtrace => Method::Dtrace,
            MethodArg::DtraceNll => Method::DtraceNll,
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset directory (labels.csv and series/).
    #[arg(long, short)]
    data: PathBuf,
    /// Keep channel means instead of subtracting them.
    #[arg(long)]
    no_center: bool,
}

impl DataArgs {
    fn load(&self) -> Result<io::LoadedDataset> {
        io::load_dataset(&self.data, !self.no_center)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model JSON to write.
    #[arg(long, short)]
    model: PathBuf,
    /// Screening table to write.
    #[arg(long)]
    screening: Option<PathBuf>,
    /// Penalty path (criterion value per lambda) to write as JSON.
    #[arg(long)]
    path: Option<PathBuf>,
    #[command(flatten)]
    fit: FitOptions,
}

#[derive(Args, Debug)]
struct ScreenArgs {
    /// Trained model.
    #[arg(long, short)]
    model: PathBuf,
    /// Screening table to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the model with the new screening.
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[command(flatten)]
    bounds: ScreenBounds,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, short)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Predictions CSV to write.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, short)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Report JSON to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the predictions CSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, short)]
    model: PathBuf,
    /// Sampling rate in Hz, used to map bands onto Fourier frequencies.
    #[arg(long)]
    sampling_rate: f64,
    /// Output directory for `<band>.csv` and `<band>.pgm`.
    #[arg(long, short)]
    out: PathBuf,
}

/// Inclusive range of 1-based Fourier indices.
#[derive(Clone, Debug)]
struct FreqRange(Vec<usize>);

#[derive(Clone, Debug)]
struct LambdaGrid(Vec<f64>);

fn parse_band(s: &str) -> std::result::Result<FreqRange, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad range end {b:?}"))?;
    if a == 0 || a > b {
        return Err(format!("need 1 <= A <= B, got {a}..{b}"));
    }
    Ok(FreqRange((a..=b).collect()))
}

fn parse_lambda_grid(s: &str) -> std::result::Result<LambdaGrid, String> {
    let positive = |v: &str| -> std::result::Result<f64, String> {
        match v.trim().parse::<f64>() {
            Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
            _ => Err(format!("penalty must be a positive number, got {v:?}")),
        }
    };
    if let Some(rest) = s.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            return Err(format!("expected log:LO:HI:N, got {s:?}"));
        };
        let (lo, hi) = (positive(lo)?, positive(hi)?);
        let n: usize = n.parse().map_err(|_| format!("bad point count {n:?}"))?;
        if n == 0 || lo > hi {
            return Err(format!("need LO <= HI and N >= 1, got {s:?}"));
        }
        return Ok(LambdaGrid(log_grid(lo, hi, n)));
    }
    s.split(',').map(positive).collect::<std::result::Result<_, _>>().map(LambdaGrid)
}

struct Log {
    file: Option<std::fs::File>,
    start: Instant,
}

impl Log {
    fn open(path: Option<&Path>) -> Result<Self> {
        let file = path
            .map(|p| {
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::Io {
                        path: p.to_path_buf(),
                        source: e,
                    })
            })
            .transpose()?;
        Ok(Log {
            file,
            start: Instant::now(),
        })
    }

    fn line(&mut self, msg: &str) {
        if let Some(f) = self.file.as_mut() {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
            let _ = writeln!(
                f,
                "{}.{:03} +{:.3}s {msg}",
                now.as_secs(),
                now.subsec_millis(),
                self.start.elapsed().as_secs_f64()
            );
        }
    }
}

fn simulate(args: &SimulateArgs, log: &mut Log) -> Result<()> {
    let mut design = match args.example {
        Preset::One => SimDesign::example1(args.seed),
        Preset::Two => SimDesign::example2(args.seed),
        Preset::Scaled => SimDesign::scaled(args.seed),
    };
    if let Some(p) = args.p {
        design.p = p;
    }
    if let Some(t) = args.t {
        design.t = t;
    }
    if let Some(n) = args.n1 {
        design.n1 = n;
    }
    if let Some(n) = args.n2 {
        design.n2 = n;
    }
    if let Some(b) = &args.band {
        design.signal_band = b.0.clone();
    }
    if let Some(l) = args.loading {
        design.loading = l;
    }
    design.validate()?;
    log.line(&format!("simulate p={} T={} n1={} n2={}", design.p, design.t, design.n1, design.n2));
    let data = generate_dataset(&design)?;
    let ids = io::default_ids(data.samples.len());
    io::write_dataset(&args.out, &ids, &data.samples, Some(&io::TruthFile::new(design, data.truth)))?;
    log.line(&format!("wrote {}", args.out.display()));
    println!("wrote {} samples to {}", ids.len(), args.out.display());
    Ok(())
}

fn tuning(opts: &FitOptions) -> TuningConfig {
    let mut t = TuningConfig {
        lambda_grid: opts.lambda_grid.as_ref().map_or_else(default_lambda_grid, |g| g.0.clone()),
        refine: opts.refine,
        adam: AdamConfig {
            learning_rate: opts.learning_rate,
            max_iters: opts.max_iters,
            tol: opts.tol,
            minibatch: opts.minibatch,
            ..AdamConfig::default()
        },
        screen: opts.screen.config(),
        ..TuningConfig::default()
    };
    if let Some(seed) = opts.cv_seed {
        t.cv_seed = seed;
    }
    t
}

fn train(args: &TrainArgs, log: &mut Log) -> Result<()> {
    let data = args.data.load()?;
    let grid = data.grid()?;
    log.line(&format!("loaded {} samples, T={}", data.samples.len(), grid.series_len()));
    let method = Method::from(args.fit.method);
    let fitted = classifier::fit(&data.samples, method, &grid, args.fit.bandwidth, &tuning(&args.fit))?;
    log.line("fit done");
    let model = &fitted.model;
    io::write_model(&args.model, model)?;
    if let Some(path) = &args.screening {
        io::write_screening_csv(path, &model.screening, &grid)?;
    }
    if let Some(path) = &args.path {
        io::write_json(path, &fitted.path)?;
    }
    println!(
        "method={} lambda={} selected={}/{}",
        model.method,
        io::fmt_f64(model.lambda),
        model.screening.selected.len(),
        grid.n_freq()
    );
    Ok(())
}

fn screen(args: &ScreenArgs, log: &mut Log) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let screening = args.bounds.config().apply(model.stack())?;
    log.line("screened");
    io::write_screening_csv(&args.out, &screening, &model.grid())?;
    println!("selected={}/{}", screening.selected.len(), model.stack().len());
    if let Some(path) = &args.model_out {
        let rescreened = TrainedModel::new(
            model.method,
            model.series_len,
            model.bandwidth,
            model.lambda,
            model.priors(),
            model.sdm1().to_vec(),
            model.stack().clone(),
            screening,
        )?;
        io::write_model(path, &rescreened)?;
    }
    Ok(())
}

fn load_for_model(model: &TrainedModel, data: &DataArgs) -> Result<io::LoadedDataset> {
    let loaded = data.load()?;
    let (p, t) = (model.channels(), model.series_len);
    for (id, s) in loaded.ids.iter().zip(&loaded.samples) {
        if s.channels() != p || s.len() != t {
            return Err(Error::Input(format!(
                "sample {id} is {} channels x {} steps, the model expects {p} x {t}",
                s.channels(),
                s.len()
            )));
        }
    }
    Ok(loaded)
}

fn predict(args: &PredictArgs, log: &mut Log) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let data = load_for_model(&model, &args.data)?;
    let preds = classifier::predict_all(&model, &data.samples)?;
    log.line(&format!("predicted {} samples", preds.len()));
    io::write_predictions_csv(&args.out, &data.ids, &preds)?;
    println!("wrote {} predictions to {}", preds.len(), args.out.display());
    Ok(())
}

fn evaluate(args: &EvaluateArgs, log: &mut Log) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let data = load_for_model(&model, &args.data)?;
    let labels = data
        .ids
        .iter()
        .zip(&data.samples)
        .map(|(id, s)| s.label().ok_or_else(|| Error::Input(format!("sample {id} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    let truth: Option<&GroundTruth> = data.truth.as_ref().map(|t| &t.truth);
    let preds = classifier::predict_all(&model, &data.samples)?;
    let report = classifier::report_from_predictions(&model, &preds, &labels, truth)?;
    log.line(&format!("evaluated {} samples", preds.len()));
    io::write_json(&args.out, &report)?;
    if let Some(path) = &args.predictions {
        io::write_predictions_csv(path, &data.ids, &preds)?;
    }
    println!("misclassification={}", io::fmt_f64(report.misclassification));
    Ok(())
}

fn report(args: &ReportArgs, log: &mut Log) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let bands = eeg_bands(args.sampling_rate, &model.grid())?;
    let mats = aggregate_bands(&model, &bands)?;
    if mats.iter().all(|(_, m)| m.iter().all(|v| *v == 0.0)) {
        eprintln!("warning: the model has no nonzero difference at any selected frequency; band matrices are zero");
    }
    for (band, (name, m)) in bands.iter().zip(&mats) {
        io::write_matrix_csv(&args.out.join(format!("{name}.csv")), m)?;
        let title = if band.is_empty() {
            format!("{name}: no Fourier frequencies")
        } else {
            format!("{name}: k = {}..{}", band.first, band.last)
        };
        io::write_pgm(&args.out.join(format!("{name}.pgm")), m, &title)?;
        if band.is_empty() {
            println!("{name}: empty");
        } else {
            println!("{name}: k={}..{}", band.first, band.last);
        }
    }
    log.line(&format!("wrote {} bands", mats.len()));
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        par::configure_threads(n as usize);
    }
    let mut log = Log::open(cli.log.as_deref())?;
    log.line(&format!("start {:?} threads={}", cli.command, par::current_threads()));
    let out = match &cli.command {
        Command::Simulate(a) => simulate(a, &mut log),
        Command::Train(a) => train(a, &mut log),
        Command::Screen(a) => screen(a, &mut log),
        Command::Predict(a) => predict(a, &mut log),
        Command::Evaluate(a) => evaluate(a, &mut log),
        Command::Report(a) => report(a, &mut log),
    };
    match &out {
        Ok(()) => log.line("done"),
        Err(e) => log.line(&format!("failed: {e}")),
    }
    out
}

/// 0 success, 1 bad input, 2 numerical failure.
fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
