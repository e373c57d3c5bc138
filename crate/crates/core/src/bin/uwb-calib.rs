use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use uwb_calib::config::ExperimentConfig;
use uwb_calib::io::write_atomic;
use uwb_calib::nn::{
    filter_training_set, load_weights, load_weights_for, save_weights, train, weights_from_str, weights_to_string,
};
use uwb_calib::sim::{generate_dataset, run_closed_loop, run_estimation, Dataset, RunLog, Summary, TrajectoryKind};
use uwb_calib::{Error, RangingMode, Result};

#[derive(Parser)]
#[command(
    name = "uwb-calib",
    version,
    about = "Simulated UWB ranging: bias learning, outlier gating, and EKF fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly random waypoint tours and write a (feature, bias) CSV.
    GenData(GenDataArgs),
    /// Fit a bias network to a dataset CSV and write its weight file.
    Train(TrainArgs),
    /// Run estimation or closed-loop flights and write JSON-lines logs.
    Simulate(SimulateArgs),
    /// Tabulate run logs and compare a baseline group against a candidate group.
    Eval(EvalArgs),
    /// Re-serialize a weight file after checking it round-trips exactly.
    ExportWeights(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Twr,
    Tdoa,
}

impl From<Mode> for RangingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Twr => RangingMode::Twr,
            Mode::Tdoa => RangingMode::Tdoa,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Path3 {
    CircleXy,
    CircleVaryingZ,
    GenericWaypoints,
}

impl From<Path3> for TrajectoryKind {
    fn from(p: Path3) -> Self {
        match p {
            Path3::CircleXy => TrajectoryKind::CircleXy,
            Path3::CircleVaryingZ => TrajectoryKind::CircleVaryingZ,
            Path3::GenericWaypoints => TrajectoryKind::GenericWaypoints,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Flags given on the command line win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// Ranging mode [default: twr]
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Number of flights [default: 20]
    #[arg(long)]
    flights: Option<usize>,
    /// Seconds per flight [default: 100]
    #[arg(long)]
    duration: Option<f64>,
    /// Logging rate in Hz [default: 50]
    #[arg(long)]
    rate: Option<f64>,
    /// Output CSV path; its directory must exist.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset CSV written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Drop samples with |bias| above this many meters [default: 0.7]
    #[arg(long)]
    xi: Option<f64>,
    /// Fraction of samples used for training, the rest for validation [default: 0.9]
    #[arg(long)]
    split: Option<f64>,
    /// Gradient-descent step size [default: 0.1]
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs [default: 300]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: 64]
    #[arg(long)]
    batch: Option<usize>,
    /// Output weight file.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV [default: <out> with extension .history.csv]
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Ranging mode [default: twr]
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Apply the bias network to each range [default: off]
    #[arg(long, value_enum)]
    compensation: Option<Switch>,
    /// Run the dynamics and chi-squared gates [default: on]
    #[arg(long, value_enum)]
    rejection: Option<Switch>,
    /// Steer the tag with a tracking controller on the estimate
    #[arg(long)]
    closed_loop: bool,
    /// Reference path [default: circle-xy]
    #[arg(long, value_enum)]
    trajectory: Option<Path3>,
    /// Reference speed in m/s [default: 0.375]
    #[arg(long)]
    speed: Option<f64>,
    /// Measurement rate in Hz [default: 200]
    #[arg(long)]
    rate: Option<f64>,
    /// Number of consecutive seeds to run [default: 1]
    #[arg(long)]
    seeds: Option<u64>,
    /// Weight file, required with --compensation on.
    #[arg(long, required_if_eq("compensation", "on"))]
    model: Option<PathBuf>,
    /// Output directory for logs and summaries; must exist.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Logs to tabulate.
    logs: Vec<PathBuf>,
    /// Baseline group for the percent-reduction comparison.
    #[arg(long, num_args = 1..)]
    baseline: Vec<PathBuf>,
    /// Candidate group for the percent-reduction comparison.
    #[arg(long, num_args = 1..)]
    candidate: Vec<PathBuf>,
    /// Write the comparison as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Weight file to read.
    #[arg(long)]
    input: PathBuf,
    /// Destination.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Simulate(a) => simulate(a),
        Command::Eval(a) => eval(a),
        Command::ExportWeights(a) => export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let mode = a.mode.map(Into::into).unwrap_or(cfg.run.mode);
    let mut dc = cfg.dataset_config(mode)?;
    if let Some(f) = a.flights {
        dc.flights = f;
    }
    if let Some(d) = a.duration {
        dc.flight_duration = d;
    }
    if let Some(r) = a.rate {
        dc.rate = r;
    }
    let data = generate_dataset(&dc)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_atomic(&a.out, &buf)?;

    let targets: Vec<f64> = data.samples.iter().map(|s| s.target_bias).collect();
    let (mean, std) = mean_std(&targets);
    let min = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let max = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("mode {mode}, {} flights, seed {}", dc.flights, dc.seed);
    println!("wrote {} samples to {}", data.len(), a.out.display());
    println!("bias mean {mean:.4} m, std {std:.4} m, min {min:.4} m, max {max:.4} m");
    Ok(())
}

fn history_path(out: &Path) -> PathBuf {
    let mut p = out.to_path_buf();
    p.set_extension("history.csv");
    p
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let mut tc = cfg.train.clone();
    if let Some(s) = a.common.seed {
        tc.seed = s;
    }
    if let Some(v) = a.xi {
        tc.xi_threshold = v;
    }
    if let Some(v) = a.split {
        tc.split_fraction = v;
    }
    if let Some(v) = a.lr {
        tc.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch {
        tc.batch_size = v;
    }
    tc.validate()?;

    let data = Dataset::read(&a.data)?;
    println!(
        "mode {}, xi {}, split {}, lr {}, epochs {}, batch {}, seed {}",
        data.mode, tc.xi_threshold, tc.split_fraction, tc.learning_rate, tc.epochs, tc.batch_size, tc.seed
    );
    let kept = filter_training_set(&data.samples, tc.xi_threshold).len();
    println!(
        "{} samples, {kept} kept after |bias| <= {}",
        data.len(),
        tc.xi_threshold
    );

    let (model, history) = train(&data.samples, &tc)?;
    save_weights(&model, &a.out)?;
    let hist_path = a.history.unwrap_or_else(|| history_path(&a.out));
    write_atomic(&hist_path, history.to_csv().as_bytes())?;
    let best = history.best().expect("training ran at least one epoch");
    println!(
        "best epoch {}: train RMSE {:.4} m, validation RMSE {:.4} m",
        best.epoch,
        best.train_loss.sqrt(),
        best.val_loss.sqrt()
    );
    println!("wrote {} and {}", a.out.display(), hist_path.display());
    Ok(())
}

#[derive(Serialize)]
struct Aggregate {
    mode: RangingMode,
    closed_loop: bool,
    compensation: bool,
    rejection: bool,
    seeds: Vec<u64>,
    estimation_rmse_mean: f64,
    estimation_rmse_std: f64,
    tracking_rmse_mean: f64,
    tracking_rmse_std: f64,
    diverged: usize,
    logs: Vec<PathBuf>,
}

fn on(s: Switch) -> bool {
    s == Switch::On
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let mode: RangingMode = a.mode.map(Into::into).unwrap_or(cfg.run.mode);
    let mut rc = cfg.run_config(mode)?;
    if let Some(s) = a.compensation {
        rc.compensation = on(s);
    }
    if let Some(s) = a.rejection {
        rc.rejection = on(s);
    }
    if let Some(t) = a.trajectory {
        rc.trajectory.kind = t.into();
    }
    if let Some(v) = a.speed {
        rc.trajectory.speed = v;
    }
    if let Some(r) = a.rate {
        rc.rate = r;
    }
    let closed_loop = a.closed_loop || cfg.run.closed_loop;
    let seeds = a.seeds.unwrap_or(cfg.run.seeds);
    if seeds == 0 {
        return Err(Error::InvalidConfig("--seeds must be >= 1".into()));
    }
    if rc.compensation {
        let path = a
            .model
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("--compensation on needs --model".into()))?;
        rc.model = Some(load_weights_for(path, mode)?);
    }
    rc.validate()?;
    if !a.out.is_dir() {
        return Err(Error::io(
            &a.out,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ));
    }

    let stem = format!(
        "{}_{mode}_comp-{}_rej-{}",
        if closed_loop { "closed_loop" } else { "estimation" },
        if rc.compensation { "on" } else { "off" },
        if rc.rejection { "on" } else { "off" },
    );
    println!(
        "{:>6} {:>10} {:>10} {:>8} {:>9}",
        "seed", "est RMSE", "trk RMSE", "diverged", "rejected"
    );
    let mut summaries: Vec<(u64, Summary)> = Vec::new();
    let mut logs = Vec::new();
    for seed in cfg.seed..cfg.seed + seeds {
        rc.seed = seed;
        let log = if closed_loop {
            run_closed_loop(&rc)?
        } else {
            run_estimation(&rc)?
        };
        let path = a.out.join(format!("{stem}_seed{seed}.jsonl"));
        write_atomic(&path, log.to_jsonl().as_bytes())?;
        let summary_json = serde_json::to_string_pretty(&log.summary).expect("summary serializes");
        write_atomic(&path.with_extension("summary.json"), summary_json.as_bytes())?;
        let s = &log.summary;
        println!(
            "{seed:>6} {:>10.4} {:>10.4} {:>8} {:>9}",
            s.estimation_rmse,
            s.tracking_rmse,
            if s.diverged { "yes" } else { "no" },
            s.rejected_dynamics + s.rejected_chi2
        );
        logs.push(path);
        summaries.push((seed, log.summary));
    }
    summaries.sort_by_key(|(seed, _)| *seed);
    let est: Vec<f64> = summaries.iter().map(|(_, s)| s.estimation_rmse).collect();
    let trk: Vec<f64> = summaries.iter().map(|(_, s)| s.tracking_rmse).collect();
    let (em, es) = mean_std(&est);
    let (tm, ts) = mean_std(&trk);
    let agg = Aggregate {
        mode,
        closed_loop,
        compensation: rc.compensation,
        rejection: rc.rejection,
        seeds: summaries.iter().map(|(s, _)| *s).collect(),
        estimation_rmse_mean: em,
        estimation_rmse_std: es,
        tracking_rmse_mean: tm,
        tracking_rmse_std: ts,
        diverged: summaries.iter().filter(|(_, s)| s.diverged).count(),
        logs,
    };
    let agg_path = a.out.join(format!("{stem}.aggregate.json"));
    write_atomic(
        &agg_path,
        serde_json::to_string_pretty(&agg)
            .expect("aggregate serializes")
            .as_bytes(),
    )?;
    println!(
        "{stem}: estimation RMSE {em:.4} ± {es:.4} m, tracking RMSE {tm:.4} ± {ts:.4} m, diverged {}/{}",
        agg.diverged, seeds
    );
    Ok(())
}

#[derive(Serialize)]
struct LogRow {
    path: PathBuf,
    mode: RangingMode,
    compensation: bool,
    rejection: bool,
    seed: u64,
    summary: Summary,
}

#[derive(Serialize)]
struct Comparison {
    baseline_rmse: f64,
    candidate_rmse: f64,
    reduction_percent: f64,
    baseline_tracking_rmse: f64,
    candidate_tracking_rmse: f64,
    tracking_reduction_percent: f64,
}

#[derive(Serialize)]
struct EvalReport {
    logs: Vec<LogRow>,
    baseline: Vec<LogRow>,
    candidate: Vec<LogRow>,
    comparison: Option<Comparison>,
}

fn read_group(paths: &[PathBuf]) -> Result<Vec<(PathBuf, RunLog)>> {
    paths.iter().map(|p| Ok((p.clone(), RunLog::read(p)?))).collect()
}

fn row(path: &Path, log: &RunLog) -> LogRow {
    LogRow {
        path: path.to_path_buf(),
        mode: log.meta.mode,
        compensation: log.meta.compensation,
        rejection: log.meta.rejection,
        seed: log.meta.seed,
        summary: log.summary.clone(),
    }
}

fn reduction(base: f64, cand: f64) -> f64 {
    if base == cand {
        0.0
    } else {
        100.0 * (base - cand) / base
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    if a.logs.is_empty() && a.baseline.is_empty() && a.candidate.is_empty() {
        return Err(Error::InvalidConfig("eval: no logs given".into()));
    }
    if a.baseline.is_empty() != a.candidate.is_empty() {
        return Err(Error::InvalidConfig(
            "eval: --baseline and --candidate go together".into(),
        ));
    }
    let plain = read_group(&a.logs)?;
    let base = read_group(&a.baseline)?;
    let cand = read_group(&a.candidate)?;

    let all: Vec<&(PathBuf, RunLog)> = plain.iter().chain(&base).chain(&cand).collect();
    let (first_path, first) = all[0];
    for (path, log) in &all[1..] {
        if log.meta.trajectory != first.meta.trajectory || log.meta.kind != first.meta.kind {
            return Err(Error::IncompatibleLogs(format!(
                "{} and {} come from different trajectories or run kinds",
                first_path.display(),
                path.display()
            )));
        }
    }

    println!(
        "{:<8} {:<5} {:>4} {:>4} {:>6} {:>10} {:>10} {:>8}  path",
        "group", "mode", "comp", "rej", "seed", "est RMSE", "trk RMSE", "diverged"
    );
    let yn = |b: bool| if b { "on" } else { "off" };
    for (group, logs) in [("log", &plain), ("baseline", &base), ("candidate", &cand)] {
        for (path, log) in logs.iter() {
            let s = &log.summary;
            println!(
                "{group:<8} {:<5} {:>4} {:>4} {:>6} {:>10.4} {:>10.4} {:>8}  {}",
                log.meta.mode.to_string(),
                yn(log.meta.compensation),
                yn(log.meta.rejection),
                log.meta.seed,
                s.estimation_rmse,
                s.tracking_rmse,
                if s.diverged { "yes" } else { "no" },
                path.display()
            );
        }
    }

    let comparison = if base.is_empty() {
        None
    } else {
        let mean = |g: &[(PathBuf, RunLog)], f: fn(&Summary) -> f64| {
            g.iter().map(|(_, l)| f(&l.summary)).sum::<f64>() / g.len() as f64
        };
        let b = mean(&base, |s| s.estimation_rmse);
        let c = mean(&cand, |s| s.estimation_rmse);
        let bt = mean(&base, |s| s.tracking_rmse);
        let ct = mean(&cand, |s| s.tracking_rmse);
        let cmp = Comparison {
            baseline_rmse: b,
            candidate_rmse: c,
            reduction_percent: reduction(b, c),
            baseline_tracking_rmse: bt,
            candidate_tracking_rmse: ct,
            tracking_reduction_percent: reduction(bt, ct),
        };
        println!(
            "estimation RMSE {b:.4} -> {c:.4} m ({:.1}% reduction); tracking RMSE {bt:.4} -> {ct:.4} m ({:.1}% reduction)",
            cmp.reduction_percent, cmp.tracking_reduction_percent
        );
        Some(cmp)
    };

    if let Some(out) = &a.out {
        let report = EvalReport {
            logs: plain.iter().map(|(p, l)| row(p, l)).collect(),
            baseline: base.iter().map(|(p, l)| row(p, l)).collect(),
            candidate: cand.iter().map(|(p, l)| row(p, l)).collect(),
            comparison,
        };
        write_atomic(
            out,
            serde_json::to_string_pretty(&report)
                .expect("report serializes")
                .as_bytes(),
        )?;
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let model = load_weights(&a.input)?;
    let text = weights_to_string(&model);
    let back = weights_from_str(&text)?;
    let exact = back
        .net()
        .params()
        .iter()
        .zip(model.net().params())
        .all(|(x, y)| x.to_bits() == y.to_bits())
        && back.normalizer() == model.normalizer();
    if !exact {
        return Err(Error::format(
            "weights",
            &a.input,
            "re-serialized weights do not round-trip exactly",
        ));
    }
    write_atomic(&a.out, text.as_bytes())?;
    println!(
        "{} model, {} parameters, layers {:?}: wrote {}",
        model.mode(),
        model.net().num_params(),
        model.net().dims(),
        a.out.display()
    );
    Ok(())
}
