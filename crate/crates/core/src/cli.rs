//! Command-line entry point: `simulate`, `train`, `fit`, `bench` and `gen`.
//!
//! Exit codes are 0 on success, 1 on a usage error and 2 on a data or format
//! error. `--config file.json` takes an object whose keys are long flag names;
//! its values are inserted before the command-line flags, which therefore win.
//! `REFRAX_THREADS` caps the worker pool.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::{run_grid, speedup_svg, write_csv, BenchMode, GridSpec};
use crate::data_io::{gen_poisson, load_dataset, load_spkt, save_spkt, two_rate_dataset, write_label_dataset, PoissonSpec};
use crate::error::Error;
use crate::fitting::io::{load_recordings, write_recordings};
use crate::fitting::{fit_neuron, prepare, synthetic_recordings, FitConfig, GroundTruth, NormStats, Split, SyntheticSpec};
use crate::params::{NetConfig, Network};
use crate::real::{Precision, Real};
use crate::sim::{simulate, Engine, SimConfig};
use crate::spikes::Input;
use crate::train::{evaluate, train_classifier, AdamConfig, DetachPolicy, EpochLog, SurrogateKind, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// A duration in ms, written `0.1ms` or as a bare number of ms.
fn parse_ms(s: &str) -> std::result::Result<f64, String> {
    let num = s.strip_suffix("ms").unwrap_or(s);
    match num.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive duration in ms (e.g. 0.1ms)")),
    }
}

/// Refractory period as given on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArpArg {
    Ms(f64),
    Steps(usize),
}

impl std::str::FromStr for ArpArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.ends_with("ms") {
            return parse_ms(s).map(ArpArg::Ms);
        }
        let num = s.strip_suffix("steps").unwrap_or(s);
        num.trim()
            .parse::<usize>()
            .map(ArpArg::Steps)
            .map_err(|_| format!("`{s}` is not a refractory period (e.g. 2ms or 20 steps)"))
    }
}

impl std::fmt::Display for ArpArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ArpArg::Ms(ms) => write!(f, "{ms} ms"),
            ArpArg::Steps(n) => write!(f, "{n} steps"),
        }
    }
}

impl ArpArg {
    /// Steps at resolution `dt_ms`, rounded to nearest; zero is an error.
    pub fn steps(self, dt_ms: f64) -> std::result::Result<usize, String> {
        let steps = match self {
            ArpArg::Steps(n) => n,
            ArpArg::Ms(ms) => (ms / dt_ms).round() as usize,
        };
        if steps == 0 {
            return Err(format!("refractory period {self} is less than one step of {dt_ms} ms"));
        }
        Ok(steps)
    }
}

#[derive(Debug, Parser)]
#[command(name = "refrax", version, about = "ALIF network simulation, training and fitting", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON object of flag values; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a network on a spike file.
    Simulate(SimulateArgs),
    /// Train a classifier on a labelled dataset folder.
    Train(TrainArgs),
    /// Fit a single neuron to a recordings folder.
    Fit(FitArgs),
    /// Time both engines over a grid of shapes.
    Bench(BenchArgs),
    /// Write synthetic data.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
struct EngineArgs {
    #[arg(long, default_value = "block")]
    engine: Engine,
    /// Refractory period, e.g. `2ms`, `20` or `20steps`.
    #[arg(long)]
    arp: Option<ArpArg>,
    /// Time step, e.g. `0.1ms`.
    #[arg(long, value_parser = parse_ms)]
    dt: Option<f64>,
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Input `.spkt` file.
    #[arg(long)]
    input: PathBuf,
    /// Parameter JSON; without it a network is initialised from the seed.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Hidden widths for a fresh network.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "64")]
    hidden: Vec<usize>,
    /// Readout width for a fresh network (0 for none).
    #[arg(long, default_value_t = 0)]
    classes: usize,
    #[command(flatten)]
    engine: EngineArgs,
    /// Where to write the last hidden layer's spikes.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write membrane traces as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Labelled dataset folder (`.spkt` files and labels.csv).
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset folder, evaluated with the best parameters.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "64,64")]
    hidden: Vec<usize>,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, default_value = "mg")]
    surrogate: SurrogateKind,
    /// `on` keeps gradients to feedforward paths only.
    #[arg(long, default_value = "on")]
    detach: DetachPolicy,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Epochs at which the learning rate drops tenfold.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    lr_milestones: Vec<usize>,
    /// Stop once an epoch reaches this training accuracy.
    #[arg(long)]
    stop_at: Option<f64>,
    /// JSON training log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Best parameters as JSON.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Include wall-clock times in the log.
    #[arg(long)]
    timings: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Recordings folder with train/ and test/ subfolders.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "block")]
    engine: Engine,
    #[arg(long, value_parser = parse_ms, default_value = "0.1ms")]
    dt: f64,
    #[arg(long, default_value = "2ms")]
    arp: ArpArg,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value = "mg")]
    surrogate: SurrogateKind,
    /// Fit report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value = "forward")]
    mode: BenchMode,
    /// `default` (the full grid) or `small`.
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    steps: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    arps: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    batches: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    depths: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV report.
    #[arg(long)]
    out: PathBuf,
    /// SVG plot of speedup against refractory period.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("kind").required(true).args(["poisson", "two_rate", "recordings"])))]
struct GenArgs {
    /// Poisson spike tensor with dims B N T, one rate per batch row.
    #[arg(long, num_args = 3, value_names = ["B", "N", "T"])]
    poisson: Option<Vec<usize>>,
    /// Labelled two-rate dataset with SAMPLES rows of N channels and T steps.
    #[arg(long, num_args = 3, value_names = ["SAMPLES", "N", "T"])]
    two_rate: Option<Vec<usize>>,
    /// Recordings of a synthetic ground-truth neuron, for `fit`.
    #[arg(long)]
    recordings: bool,
    /// Rate range in Hz (Poisson) or the two class rates (two-rate).
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    rates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output folder.
    #[arg(long)]
    out: PathBuf,
}

/// Turns a JSON object into `--key value` tokens.
fn config_tokens(path: &Path) -> CliResult<Vec<OsString>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let serde_json::Value::Object(map) = value else {
        return Err(CliError::Data(format!("{}: expected a JSON object", path.display())));
    };
    let scalar = |v: &serde_json::Value| match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => usage(format!("config value {other} is not a string or number")),
    };
    let mut out = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        match &v {
            serde_json::Value::Bool(true) => out.push(flag.into()),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                out.push(flag.into());
                for item in items {
                    out.push(scalar(item)?.into());
                }
            }
            other => {
                out.push(flag.into());
                out.push(scalar(other)?.into());
            }
        }
    }
    Ok(out)
}

/// Removes `--config FILE` and splices the file's flags in after the
/// subcommand name.
fn expand_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            let Some(p) = it.next() else {
                return usage("--config needs a file");
            };
            config = Some(PathBuf::from(p));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let tokens = config_tokens(&path)?;
    let at = rest.len().min(2);
    rest.splice(at..at, tokens);
    Ok(rest)
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("REFRAX_THREADS") else {
        return Ok(());
    };
    let n: usize = match v.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return usage(format!("REFRAX_THREADS must be a positive integer, got `{v}`")),
    };
    // a pool built earlier in this process stays in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let result = expand_config(argv).and_then(|argv| match Cli::try_parse_from(argv) {
        Ok(cli) => {
            configure_threads()?;
            run(cli)
        }
        Err(e) => {
            let _ = e.print();
            // help and version requests print to stdout and succeed
            if e.use_stderr() {
                Err(CliError::Usage(String::new()))
            } else {
                Ok(())
            }
        }
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            if !msg.is_empty() {
                eprintln!("usage error: {msg}");
            }
            EXIT_USAGE
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            EXIT_DATA
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Gen(a) => gen_cmd(a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn simulate_cmd(a: SimulateArgs) -> CliResult<()> {
    let precision = match &a.params {
        Some(p) => a.engine.precision.unwrap_or(Network::<f64>::load(p)?.config.precision),
        None => a.engine.precision.unwrap_or_default(),
    };
    match precision {
        Precision::F32 => simulate_typed::<f32>(&a),
        Precision::F64 => simulate_typed::<f64>(&a),
    }
}

fn simulate_typed<F: Real>(a: &SimulateArgs) -> CliResult<()> {
    let input = load_spkt(&a.input)?;
    let mut net: Network<F> = match &a.params {
        Some(p) => Network::load(p)?,
        None => {
            let mut config = NetConfig::new(input.neurons(), a.hidden.clone(), a.classes, 1.0, 1);
            config.precision = F::PRECISION;
            Network::init(config, a.engine.seed)?
        }
    };
    if let Some(dt) = a.engine.dt {
        net.config.dt_ms = dt;
    }
    if let Some(arp) = a.engine.arp {
        net.config.arp_steps = arp.steps(net.config.dt_ms).map_err(CliError::Usage)?;
    }
    let mut cfg = SimConfig::new(a.engine.engine);
    cfg.record_traces = a.trace.is_some();
    let r = simulate(&net, Input::Spikes(&input), &cfg)?;
    if let Some(out) = &a.out {
        let Some(last) = r.output() else {
            return usage("the network has no hidden layer to write spikes from");
        };
        save_spkt(out, last)?;
    }
    if let (Some(path), Some(traces)) = (&a.trace, &r.traces) {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
        w.write_record(["layer", "batch", "neuron", "t", "membrane"])
            .map_err(|e| CliError::Data(e.to_string()))?;
        for (l, tr) in traces.iter().enumerate() {
            for ((b, n, t), v) in tr.membrane.indexed_iter() {
                let row = [l.to_string(), b.to_string(), n.to_string(), t.to_string(), v.as_f64().to_string()];
                w.write_record(&row).map_err(|e| CliError::Data(e.to_string()))?;
            }
        }
        w.flush()?;
    }
    let counts: Vec<usize> = r.spikes.iter().map(|s| s.count()).collect();
    println!(
        "engine {} arp {} steps: stages per layer {:?}, spikes per layer {:?}",
        a.engine.engine, net.config.arp_steps, r.stages, counts
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainLog {
    epochs: Vec<serde_json::Value>,
    best_train_accuracy: f64,
    test_loss: Option<f64>,
    test_accuracy: Option<f64>,
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    match a.engine.precision.unwrap_or_default() {
        Precision::F32 => train_typed::<f32>(&a),
        Precision::F64 => train_typed::<f64>(&a),
    }
}

fn train_typed<F: Real>(a: &TrainArgs) -> CliResult<()> {
    let data = load_dataset(&a.data)?;
    let test = a.test.as_ref().map(load_dataset).transpose()?;
    let classes = data.labels.iter().copied().max().map_or(0, |m| m + 1).max(2);
    let dt = a.engine.dt.unwrap_or(1.0);
    let arp = a.engine.arp.unwrap_or(ArpArg::Steps(1)).steps(dt).map_err(CliError::Usage)?;
    let mut config = NetConfig::new(data.inputs.neurons(), a.hidden.clone(), classes, dt, arp);
    config.precision = F::PRECISION;
    let mut net = Network::<F>::init(config, a.engine.seed)?;
    let cfg = TrainConfig {
        engine: a.engine.engine,
        surrogate: a.surrogate,
        detach: a.detach,
        adam: AdamConfig {
            lr_milestones: a.lr_milestones.clone(),
            ..AdamConfig::with_lr(a.lr)
        },
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.engine.seed,
        stop_at_accuracy: a.stop_at,
    };
    let out = train_classifier(&mut net, &data, &cfg, |e: &EpochLog| {
        println!(
            "epoch {:>4}  loss {:.5}  accuracy {:.4}{}",
            e.epoch,
            e.loss,
            e.accuracy,
            if e.checkpoint { "  saved" } else { "" }
        );
    })?;
    let scored = test
        .as_ref()
        .map(|t| evaluate(&out.best, t, cfg.engine, cfg.batch_size))
        .transpose()?;
    if let Some((loss, acc)) = scored {
        println!("test loss {loss:.5}  accuracy {acc:.4}");
    }
    if let Some(path) = &a.log {
        let epochs = out
            .log
            .iter()
            .map(|e| {
                let mut v = serde_json::to_value(e).expect("plain record");
                if !a.timings {
                    v.as_object_mut().expect("object").remove("wall_secs");
                }
                v
            })
            .collect();
        write_json(
            path,
            &TrainLog {
                epochs,
                best_train_accuracy: out.best_accuracy,
                test_loss: scored.map(|s| s.0),
                test_accuracy: scored.map(|s| s.1),
            },
        )?;
    }
    if let Some(path) = &a.checkpoint {
        out.best.save(path)?;
    }
    Ok(())
}

fn fit_cmd(a: FitArgs) -> CliResult<()> {
    let recordings = load_recordings(&a.data)?;
    let stats = NormStats::from_train(recordings.iter().map(|r| &r.trace))?;
    let train = prepare(&recordings, Split::Train, &stats, a.dt)?;
    let test = prepare(&recordings, Split::Test, &stats, a.dt)?;
    let arp_steps = a.arp.steps(a.dt).map_err(CliError::Usage)?;
    let cfg = FitConfig {
        engine: a.engine,
        dt_ms: a.dt,
        arp_ms: arp_steps as f64 * a.dt,
        lr: a.lr,
        max_epochs: a.epochs,
        patience: a.patience,
        surrogate: a.surrogate,
        ..FitConfig::default()
    };
    let report = fit_neuron(&train, &test, &cfg)?;
    println!(
        "{} fit, dt {} ms, arp {} steps: test ETV {:.4}, train ETV {:.4}, {} epochs in {:.2} s",
        report.engine, report.dt_ms, report.arp_steps, report.test_etv, report.train_etv, report.epochs, report.wall_secs
    );
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    Ok(())
}

/// A quick grid for smoke runs.
pub fn small_grid() -> GridSpec {
    GridSpec {
        steps: vec![256],
        arps: vec![1, 4, 16],
        batches: vec![4],
        widths: vec![32],
        depths: vec![1],
    }
}

fn bench_cmd(a: BenchArgs) -> CliResult<()> {
    let mut grid = match a.grid.as_str() {
        "default" => GridSpec::default(),
        "small" => small_grid(),
        other => return usage(format!("unknown grid `{other}` (expected default or small)")),
    };
    let overrides = [
        (&a.steps, &mut grid.steps),
        (&a.arps, &mut grid.arps),
        (&a.batches, &mut grid.batches),
        (&a.widths, &mut grid.widths),
        (&a.depths, &mut grid.depths),
    ];
    for (src, dst) in overrides {
        if let Some(v) = src {
            *dst = v.clone();
        }
    }
    if a.repeats == 0 {
        return usage("--repeats must be at least 1");
    }
    let rows = run_grid(&grid, a.mode, a.repeats, a.seed, |r| {
        println!(
            "T {:>5} arp {:>3} B {:>3} width {:>4} depth {}: standard {:>9.2} ms  block {:>9.2} ms  speedup {:.2}",
            r.steps, r.arp, r.batch, r.width, r.depth, r.standard_ms, r.block_ms, r.speedup
        );
    })?;
    let file = fs::File::create(&a.out)?;
    write_csv(&rows, std::io::BufWriter::new(file))?;
    if let Some(plot) = &a.plot {
        fs::write(plot, speedup_svg(&rows))?;
    }
    Ok(())
}

fn gen_cmd(a: GenArgs) -> CliResult<()> {
    fs::create_dir_all(&a.out)?;
    if let Some(dims) = &a.poisson {
        let (lo, hi) = a.rates.as_ref().map_or((0.0, 200.0), |r| (r[0], r[1]));
        let spec = PoissonSpec::new(dims[0], dims[1], dims[2], a.seed).with_rates(lo, hi);
        let path = a.out.join("poisson.spkt");
        save_spkt(&path, &gen_poisson(&spec)?)?;
        println!("wrote {}", path.display());
    } else if let Some(dims) = &a.two_rate {
        let (lo, hi) = a.rates.as_ref().map_or((20.0, 100.0), |r| (r[0], r[1]));
        let data = two_rate_dataset(dims[0], dims[1], dims[2], (lo, hi), a.seed)?;
        write_label_dataset(&a.out, &data)?;
        println!("wrote {} samples to {}", data.len(), a.out.display());
    } else {
        if a.rates.is_some() {
            return usage("--rates does not apply to --recordings");
        }
        let spec = SyntheticSpec {
            seed: a.seed,
            ..SyntheticSpec::default()
        };
        let recs = synthetic_recordings(&GroundTruth::default(), &spec)?;
        write_recordings(&a.out, &recs)?;
        println!("wrote {} stimuli to {}", recs.len(), a.out.display());
    }
    std::io::stdout().flush()?;
    Ok(())
}
