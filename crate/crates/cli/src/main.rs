//! `oodc`: calibrate, score and monitor combined OOD detector scores.
//!
//! Exit codes: 0 success, 2 usage, 3 data or parse error, 4 numeric
//! degeneracy. Errors are printed as a single `error[<class>:<tag>]: <msg>`
//! line on stderr.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ood_combine::bench::{
    enumerate_subsets_with, gen_mixture_window, gen_scores, run_window_grid, sequential_trace, DriftSchedule, GridSpec,
    SyntheticConfig,
};
use ood_combine::io::{
    fmt_f64, load_score_matrix, read_calibration, write_atomic, write_calibration, write_score_matrix,
};
use ood_combine::metrics::MethodMetrics;
use ood_combine::window::{MonitorState, WindowDetector};
use ood_combine::{
    calibrate, calibrate_split, Calibration, CombinerKind, Error, ErrorClass, EvalReport, Execution, LabeledScores,
    Orientation, ScoreMatrix, WindowConfig,
};

#[derive(Parser)]
#[command(name = "oodc", version, about = "Combine OOD detector scores into calibrated p-values")]
struct Cli {
    /// Run on a single thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-detector ecdfs and combiner corrections on in-distribution scores.
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value = "fisher")]
        method: CombinerKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-row p-values, combined statistic and combined confidence.
    Score {
        #[arg(long)]
        cal: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-row shift decisions (1 = shifted).
    Decide {
        #[arg(long)]
        cal: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 0.95, value_parser = open_unit)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-sample KS test of a test window against a fixed reference window.
    DetectWindow {
        #[arg(long)]
        cal: PathBuf,
        /// Reference pool; the first `--reference-size` rows form the fixed window.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Test window size; defaults to the number of test rows.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0.95, value_parser = open_unit)]
        alpha: f64,
        /// Defaults to the reference pool size minus `m`.
        #[arg(long)]
        reference_size: Option<usize>,
        #[arg(long, default_value_t = 2000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sliding-window moving average of combined confidences over a stream.
    Monitor {
        #[arg(long)]
        cal: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, default_value_t = 64)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AUROC and FPR@TPR on labeled ID/shift files.
    Eval {
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        shift: PathBuf,
        #[arg(long)]
        cal: PathBuf,
        /// Also evaluate every other combiner and every detector column.
        #[arg(long)]
        all_methods: bool,
        /// Rows used to fit the other combiners' corrections (defaults to --id).
        #[arg(long)]
        fit_scores: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95, value_parser = open_unit)]
        tpr: f64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic data and experiment drivers.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// AUROC of every detector subset.
    Subsets {
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        shift: PathBuf,
        #[arg(long, default_value = "fisher")]
        method: CombinerKind,
        #[arg(long, default_value_t = 2)]
        min_size: usize,
        /// Refuse inputs with more detectors than this.
        #[arg(long, default_value_t = 20)]
        max_k: usize,
        /// Per-subset results; the per-size summary goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shapes {
    Normal,
    Mixed,
}

#[derive(Args)]
struct GeneratorArgs {
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// Score decrease under shift, per detector and unit intensity.
    #[arg(long, default_value_t = 1.0)]
    offset: f64,
    #[arg(long, value_enum, default_value_t = Shapes::Mixed)]
    shapes: Shapes,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GeneratorArgs {
    fn config(&self) -> SyntheticConfig {
        match self.shapes {
            Shapes::Normal => SyntheticConfig::normal(self.k, self.rho, self.offset, self.seed),
            Shapes::Mixed => SyntheticConfig::mixed(self.k, self.rho, self.offset, self.seed),
        }
    }
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write a synthetic score matrix.
    Scores {
        #[command(flatten)]
        gen: GeneratorArgs,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Draw every row from the shifted generator.
        #[arg(long, conflicts_with = "beta")]
        shifted: bool,
        /// Draw a mixture window with this shifted fraction.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Window-level AUROC over window sizes and mixture coefficients.
    Grid {
        #[command(flatten)]
        gen: GeneratorArgs,
        #[arg(long, default_value = "fisher")]
        method: CombinerKind,
        #[arg(long, default_value_t = 10_000)]
        calibration_rows: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
        window_sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1")]
        betas: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 1000)]
        reference_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monitor a progressive drift stream and correlate with accuracy.
    Sequential {
        #[command(flatten)]
        gen: GeneratorArgs,
        #[arg(long, default_value = "fisher")]
        method: CombinerKind,
        #[arg(long, default_value_t = 10_000)]
        calibration_rows: usize,
        #[arg(long, default_value_t = 500)]
        segment_len: usize,
        #[arg(long, default_value_t = 64)]
        window: usize,
        /// Run the drift schedule backwards.
        #[arg(long)]
        reverse: bool,
        /// Moving-average trace; the correlation goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => stdout(text)?,
    }
    Ok(())
}

/// Writes to stdout; a closed pipe ends output silently.
fn stdout(text: &str) -> CliResult<()> {
    let mut handle = std::io::stdout().lock();
    match handle.write_all(text.as_bytes()).and_then(|_| handle.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(Error::Io { path: PathBuf::from("<stdout>"), source: e }.into())
        }
        _ => Ok(()),
    }
}

fn score_table(cal: &Calibration, scores: &ScoreMatrix, exec: Execution) -> CliResult<String> {
    let aligned = scores.align_to(&cal.names())?;
    let rows = exec.try_map_range(aligned.n_rows(), |i| cal.score_row(aligned.row(i)))?;
    let mut out: String = cal.names().iter().map(|n| format!("{n}_p,")).collect();
    out.push_str("statistic,confidence\n");
    for r in rows {
        for p in &r.p_values {
            out.push_str(&fmt_f64(*p));
            out.push(',');
        }
        let _ = writeln!(out, "{},{}", fmt_f64(r.statistic), fmt_f64(r.confidence));
    }
    Ok(out)
}

fn confidence_auroc(
    cal: &Calibration,
    id: &ScoreMatrix,
    shift: &ScoreMatrix,
    tpr: f64,
    exec: Execution,
) -> CliResult<MethodMetrics> {
    let d = LabeledScores::from_groups(
        &cal.confidences_with(id, exec)?,
        &cal.confidences_with(shift, exec)?,
        Orientation::HigherIsId,
    )?;
    Ok(MethodMetrics::evaluate(&d, tpr)?)
}

fn run(cli: Cli) -> CliResult<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Calibrate { scores, method, out } => {
            let cal = calibrate(&load_score_matrix(&scores)?, method)?;
            write_calibration(&out, &cal)?;
        }
        Command::Score { cal, scores, out } => {
            let cal = read_calibration(&cal)?;
            let table = score_table(&cal, &load_score_matrix(&scores)?, exec)?;
            emit(out.as_deref(), &table)?;
        }
        Command::Decide { cal, scores, alpha, out } => {
            let cal = read_calibration(&cal)?;
            let scores = load_score_matrix(&scores)?.align_to(&cal.names())?;
            let flags = exec.try_map_range(scores.n_rows(), |i| cal.decide(scores.row(i), alpha))?;
            let mut text = String::from("decision\n");
            for f in flags {
                text.push_str(if f { "1\n" } else { "0\n" });
            }
            emit(out.as_deref(), &text)?;
        }
        Command::DetectWindow { cal, reference, test, m, alpha, reference_size, draws, seed } => {
            let cal = read_calibration(&cal)?;
            let reference = load_score_matrix(&reference)?;
            let test = load_score_matrix(&test)?;
            let m = m.unwrap_or(test.n_rows());
            let r = match reference_size {
                Some(r) => r,
                None => reference.n_rows().checked_sub(m).filter(|&r| r >= 2).ok_or_else(|| {
                    Error::InsufficientData(format!(
                        "reference pool of {} rows cannot hold a window of {m}",
                        reference.n_rows()
                    ))
                })?,
            };
            let cfg = WindowConfig { window_size: m, reference_size: r, alpha, null_draws: draws, seed };
            let v = WindowDetector::new(&cal, cfg, &reference)?.detect(&test)?;
            stdout(&format!(
                "{{\"ks_stat\": {}, \"threshold\": {}, \"detected\": {}, \"window_size\": {}}}\n",
                fmt_f64(v.ks_stat),
                fmt_f64(v.threshold),
                v.detected,
                v.window_size
            ))?;
        }
        Command::Monitor { cal, stream, window, out } => {
            let cal = read_calibration(&cal)?;
            let stream = load_score_matrix(&stream)?;
            let conf = cal.confidences_with(&stream, exec)?;
            let mut state = MonitorState::new(window)?;
            let mut text = String::from("t,moving_avg\n");
            for (t, c) in conf.into_iter().enumerate() {
                if let Some(avg) = state.push(c) {
                    let _ = writeln!(text, "{t},{}", fmt_f64(avg));
                }
            }
            emit(out.as_deref(), &text)?;
        }
        Command::Eval { id, shift, cal, all_methods, fit_scores, tpr, format, out } => {
            let cal = read_calibration(&cal)?;
            let id = load_score_matrix(&id)?.align_to(&cal.names())?;
            let shift = load_score_matrix(&shift)?.align_to(&cal.names())?;
            let mut report = EvalReport::default();
            report.insert(cal.kind().as_str(), confidence_auroc(&cal, &id, &shift, tpr, exec)?);
            if all_methods {
                let fit = match fit_scores {
                    Some(p) => load_score_matrix(&p)?,
                    None => id.clone(),
                };
                let references: Vec<Vec<f64>> = cal.ecdfs().iter().map(|e| e.reference().to_vec()).collect();
                let ecdf_scores = ScoreMatrix::from_columns(cal.names(), &references)?;
                for kind in CombinerKind::ALL.into_iter().filter(|&k| k != cal.kind()) {
                    let other = calibrate_split(&ecdf_scores, &fit, kind)?;
                    report.insert(kind.as_str(), confidence_auroc(&other, &id, &shift, tpr, exec)?);
                }
                for (j, name) in cal.names().iter().enumerate() {
                    let d = LabeledScores::from_groups(&id.column(j), &shift.column(j), Orientation::HigherIsId)?;
                    report.insert(format!("detector:{name}"), MethodMetrics::evaluate(&d, tpr)?);
                }
            }
            let text = match format {
                Format::Csv => report.to_csv(),
                Format::Json => report.to_json(),
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Synth { command } => synth(command, exec)?,
        Command::Subsets { id, shift, method, min_size, max_k, out } => {
            let id = load_score_matrix(&id)?;
            let shift = load_score_matrix(&shift)?;
            if id.n_cols() > max_k {
                return Err(Error::Guard(format!("{} detectors exceed --max-k {max_k}", id.n_cols())).into());
            }
            let study = enumerate_subsets_with(&id, &shift, method, min_size, exec)?;
            if let Some(p) = out {
                let mut text = String::from("size,detectors,auroc\n");
                for r in &study.results {
                    let _ = writeln!(text, "{},{},{}", r.columns.len(), r.names.join("+"), fmt_f64(r.auroc));
                }
                write_atomic(&p, text.as_bytes())?;
            }
            let mut text = String::from("size,count,best,mean,worst,std_err\n");
            for s in &study.by_size {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{},{}",
                    s.size,
                    s.count,
                    fmt_f64(s.best),
                    fmt_f64(s.mean),
                    fmt_f64(s.worst),
                    fmt_f64(s.std_err)
                );
            }
            stdout(&text)?;
        }
    }
    Ok(())
}

fn synth(command: SynthCommand, exec: Execution) -> CliResult<()> {
    match command {
        SynthCommand::Scores { gen, n, shifted, beta, out } => {
            let cfg = gen.config();
            let m = match beta {
                Some(b) => gen_mixture_window(&cfg.with_beta(b), n)?,
                None => gen_scores(&cfg, n, shifted)?,
            };
            write_score_matrix(&out, &m)?;
        }
        SynthCommand::Grid {
            gen,
            method,
            calibration_rows,
            window_sizes,
            betas,
            trials,
            seeds,
            reference_size,
            out,
        } => {
            let cfg = gen.config();
            let cal = calibrate(&gen_scores(&cfg, calibration_rows, false)?, method)?;
            let spec = GridSpec { window_sizes, betas, trials, seeds, reference_size, exec };
            let mut text = String::from("window_size,beta,auroc_mean,auroc_ci\n");
            for c in run_window_grid(&cal, &cfg, &spec)? {
                let _ = writeln!(
                    text,
                    "{},{},{},{}",
                    c.window_size,
                    fmt_f64(c.beta),
                    fmt_f64(c.auroc_mean),
                    fmt_f64(c.auroc_ci)
                );
            }
            emit(out.as_deref(), &text)?;
        }
        SynthCommand::Sequential { gen, method, calibration_rows, segment_len, window, reverse, out } => {
            let cfg = gen.config();
            let cal = calibrate(&gen_scores(&cfg, calibration_rows, false)?, method)?;
            let mut schedule = DriftSchedule::progressive(segment_len);
            if reverse {
                schedule = schedule.reversed();
            }
            let run = sequential_trace(&cal, &cfg, &schedule, window)?;
            if let Some(p) = out {
                let mut text = String::from("t,moving_avg,accuracy\n");
                for ((t, a), acc) in run.timestamps.iter().zip(&run.moving_avgs).zip(&run.accuracies) {
                    let _ = writeln!(text, "{t},{},{}", fmt_f64(*a), fmt_f64(*acc));
                }
                write_atomic(&p, text.as_bytes())?;
            }
            stdout(&format!("correlation,{}\n", fmt_f64(run.correlation()?)))?;
        }
    }
    Ok(())
}

fn report(err: CliError) -> ExitCode {
    match err {
        CliError::Usage(msg) => {
            eprintln!("error[usage]: {msg}");
            ExitCode::from(2)
        }
        CliError::Lib(e) => {
            let (class, code) = match e.class() {
                ErrorClass::Data => ("data", 3),
                ErrorClass::Numeric => ("numeric", 4),
            };
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{class}:{}]: {msg}", e.kind_tag());
            ExitCode::from(code)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return report(CliError::Usage(first));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}
