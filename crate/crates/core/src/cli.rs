//! Batch front-end: run chains from a configuration file and write samples
//! and statistics to disk.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ResolvedRun, RunConfig};
use crate::diagnostics::{summary_rates, torus_phi_reference_density, ChainStats, IterationRecord, SummaryRates};
use crate::error::{Error, Result};
use crate::problems::{ProblemKind, ProblemParams};
use crate::rng::ChainStreams;
use crate::sampler::{initial_state, run_chain, ChainOutcome, RecordSink};

/// Iteration count used by `run --full`.
pub const FULL_ITERATIONS: u64 = 10_000_000;

pub const EXIT_OK: i32 = 0;
/// Failure not attributable to the configuration or the chain (e.g. output I/O).
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHAIN_ABORT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "submanifold-mcmc", version, about = "Multiple-projection MCMC on implicitly defined submanifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the chains described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Sets the iteration count to ten million.
        #[arg(long)]
        full: bool,
        /// Suppresses the summary on standard output.
        #[arg(long)]
        quiet: bool,
    },
    /// Check a configuration file and print it with all defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the reference marginal density of the torus angle phi as CSV.
    ReferenceDensity {
        #[arg(long)]
        problem: String,
        /// Problem parameter as `NAME=VALUE`; repeatable.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, f64)>,
        #[arg(long, default_value_t = 100)]
        bins: usize,
    },
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("'{v}': {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// Summary block of `stats.json`.
#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub scheme_label: String,
    pub seed: u64,
    pub n_chains: u64,
    pub n_iterations_per_chain: u64,
    pub wall_time_seconds: f64,
    pub rates: SummaryRates,
    pub counts: CountsReport,
    pub per_chain: Vec<ChainReport>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct CountsReport {
    pub n_total: u64,
    /// Entry `n` counts iterations whose forward set had `n` elements.
    pub forward_solution_counts: Vec<u64>,
    pub backward_solution_counts: Vec<u64>,
    pub n_reversibility_invoked: u64,
    pub n_reversibility_passed: u64,
    pub n_accepted_moves: u64,
    pub n_large_jumps: u64,
    pub n_expensive: u64,
    pub n_expensive_accepted: u64,
    pub n_unmatched_autopass: u64,
    pub n_multiplier_mismatch: u64,
    pub n_omega_fallback: u64,
    /// Entry `c` counts iterations ending in component `c`; absent without a tracker.
    pub component_occupancy: Option<Vec<u64>>,
    /// Entry `[i][j]` counts iterations moving from component `i` to `j`.
    pub component_transitions: Option<Vec<Vec<u64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    pub chain: u64,
    pub rates: SummaryRates,
    pub wall_time_seconds: f64,
}

fn dense(hist: &BTreeMap<usize, u64>) -> Vec<u64> {
    let len = hist.keys().next_back().map_or(0, |k| k + 1);
    let mut out = vec![0; len];
    for (k, v) in hist {
        out[*k] = *v;
    }
    out
}

impl CountsReport {
    pub fn from_stats(s: &ChainStats, tracked: bool) -> Self {
        let (occupancy, transitions) = if tracked {
            let n = s
                .component_occupancy
                .keys()
                .chain(s.component_transitions.keys().flat_map(|(a, b)| [a, b]))
                .max()
                .map_or(0, |m| m + 1);
            let mut matrix = vec![vec![0; n]; n];
            for ((a, b), v) in &s.component_transitions {
                matrix[*a][*b] = *v;
            }
            let mut occ = dense(&s.component_occupancy);
            occ.resize(n, 0);
            (Some(occ), Some(matrix))
        } else {
            (None, None)
        };
        Self {
            n_total: s.n_total,
            forward_solution_counts: dense(&s.n_forward_hist),
            backward_solution_counts: dense(&s.n_backward_hist),
            n_reversibility_invoked: s.n_reversibility_invoked,
            n_reversibility_passed: s.n_reversibility_passed,
            n_accepted_moves: s.n_accepted_moves,
            n_large_jumps: s.n_large_jumps,
            n_expensive: s.n_expensive,
            n_expensive_accepted: s.n_expensive_accepted,
            n_unmatched_autopass: s.n_unmatched_autopass,
            n_multiplier_mismatch: s.n_multiplier_mismatch,
            n_omega_fallback: s.n_omega_fallback,
            component_occupancy: occupancy,
            component_transitions: transitions,
        }
    }
}

/// Writes thinned records as CSV with 17 significant digits.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
    record_every: u64,
    dim: usize,
}

impl<W: Write> CsvSink<W> {
    pub fn new(inner: W, dim: usize, record_every: u64) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        let mut header = vec!["iter".to_string()];
        header.extend((1..=dim).map(|i| format!("x_{i}")));
        header.extend(["accepted", "n_forward", "n_backward", "jump_distance", "stage"].map(String::from));
        writer.write_record(&header).map_err(csv_err)?;
        Ok(Self {
            writer,
            record_every,
            dim,
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

impl<W: Write> RecordSink for CsvSink<W> {
    fn record(&mut self, rec: &IterationRecord) -> Result<()> {
        if rec.iter % self.record_every != 0 {
            return Ok(());
        }
        debug_assert_eq!(rec.x.len(), self.dim);
        let mut row = Vec::with_capacity(self.dim + 6);
        row.push(rec.iter.to_string());
        row.extend(rec.x.iter().map(|v| float(*v)));
        row.push(rec.accepted.to_string());
        row.push(rec.n_forward.to_string());
        row.push(rec.n_backward.map_or("-1".to_string(), |n| n.to_string()));
        row.push(float(rec.jump_distance));
        row.push(rec.stage.as_str().to_string());
        self.writer.write_record(&row).map_err(csv_err)
    }
}

/// Runs one chain of a resolved configuration into an arbitrary sink.
pub fn run_single_chain(run: &ResolvedRun, chain: u64, sink: &mut dyn RecordSink) -> Result<ChainOutcome> {
    let cm = run.problem.constraint.as_ref();
    let mut streams = ChainStreams::new(run.sampler.seed, chain);
    let init = initial_state(&run.sampler, cm, &run.initial_point, None, &mut streams)?;
    run_chain(&run.sampler, cm, run.problem.tracker, init, chain, sink)
}

/// Runs every chain concurrently, writing `samples_<chain>.csv` and
/// `stats.json` under the configured output directory.
pub fn execute(run: &ResolvedRun) -> Result<StatsReport> {
    let dir = &run.config.output_dir;
    std::fs::create_dir_all(dir)?;
    let dim = run.problem.constraint.ambient_dim();
    let start = std::time::Instant::now();
    let outcomes: Vec<Result<ChainOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..run.config.n_chains)
            .map(|chain| {
                let path = dir.join(format!("samples_{chain}.csv"));
                scope.spawn(move || -> Result<ChainOutcome> {
                    let file = BufWriter::new(File::create(&path)?);
                    let mut sink = CsvSink::new(file, dim, run.config.record_every)?;
                    let out = run_single_chain(run, chain, &mut sink)?;
                    sink.finish()?;
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain worker panicked")).collect()
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut pooled = ChainStats::default();
    let mut per_chain = Vec::new();
    for (chain, out) in outcomes.iter().enumerate() {
        pooled.merge(&out.stats);
        per_chain.push(ChainReport {
            chain: chain as u64,
            rates: summary_rates(&out.stats)?,
            wall_time_seconds: out.stats.wall_time_seconds,
        });
    }
    let report = StatsReport {
        scheme_label: run.config.scheme_label.clone(),
        seed: run.sampler.seed,
        n_chains: run.config.n_chains,
        n_iterations_per_chain: run.sampler.n_iterations,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        rates: summary_rates(&pooled)?,
        counts: CountsReport::from_stats(&pooled, run.problem.tracker.is_some()),
        per_chain,
        config: run.config.clone(),
    };
    let mut file = BufWriter::new(File::create(dir.join("stats.json"))?);
    serde_json::to_writer_pretty(&mut file, &report).map_err(|e| Error::Io(e.into()))?;
    writeln!(file)?;
    file.flush()?;
    Ok(report)
}

/// Loads a configuration and applies command-line overrides.
pub fn load_config(path: &Path, seed: Option<u64>, output: Option<PathBuf>, full: bool) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(seed) = seed {
        cfg.sampler.seed = seed;
    }
    if let Some(dir) = output {
        cfg.output_dir = dir;
    }
    if full {
        cfg.sampler.n_iterations = FULL_ITERATIONS;
    }
    Ok(cfg)
}

/// The `reference-density` table: bin centres and density values.
pub fn reference_density(problem: &str, params: &[(String, f64)], bins: usize) -> Result<Vec<(f64, f64)>> {
    let kind: ProblemKind = problem.parse()?;
    if kind != ProblemKind::Torus {
        return Err(Error::config("problem", "a reference density is available for the torus only"));
    }
    if bins == 0 {
        return Err(Error::config("bins", "must be >= 1"));
    }
    let mut p = ProblemParams::default();
    for (name, value) in params {
        match name.as_str() {
            "R" => p.big_r = Some(*value),
            "r" => p.small_r = Some(*value),
            other => return Err(Error::config(format!("param.{other}"), "unknown torus parameter")),
        }
    }
    crate::problems::builtin_problem(kind, &p)?;
    let (big_r, small_r) = (p.big_r.unwrap_or_default(), p.small_r.unwrap_or_default());
    let width = std::f64::consts::TAU / bins as f64;
    Ok((0..bins)
        .map(|i| {
            let phi = (i as f64 + 0.5) * width;
            (phi, torus_phi_reference_density(phi, big_r, small_r))
        })
        .collect())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ChainAbort { .. } => EXIT_CHAIN_ABORT,
        e if e.is_config_error() => EXIT_CONFIG,
        // initial point that cannot be placed on the manifold
        Error::ConstraintViolated { .. } | Error::RankDeficient { .. } | Error::SingularGram { .. } => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Single-line JSON error report for standard error.
pub fn error_line(e: &Error) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("error".into(), e.code().into());
    if let Error::InvalidConfig { field, .. } = e {
        obj.insert("field".into(), field.clone().into());
    }
    if let Error::ChainAbort { iteration, source } = e {
        obj.insert("iteration".into(), (*iteration).into());
        obj.insert("cause".into(), source.code().into());
    }
    obj.insert("message".into(), e.to_string().into());
    serde_json::Value::Object(obj).to_string()
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            output,
            full,
            quiet,
        } => {
            let cfg = load_config(&config, seed, output, full)?;
            let run = cfg.resolve()?;
            let report = execute(&run)?;
            if !quiet {
                writeln!(stdout, "{}", serde_json::to_string(&report.rates).expect("rates serialize"))?;
            }
        }
        Command::Validate { config } => {
            let run = RunConfig::from_file(&config)?.resolve()?;
            writeln!(stdout, "{}", run.config.to_json())?;
        }
        Command::ReferenceDensity { problem, params, bins } => {
            let mut w = csv::Writer::from_writer(stdout);
            w.write_record(["phi", "density"]).map_err(csv_err)?;
            for (phi, d) in reference_density(&problem, &params, bins)? {
                w.write_record([float(phi), float(d)]).map_err(csv_err)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Entry point shared by the binary and tests; returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let err = Error::config("arguments", e.kind().to_string());
            let _ = writeln!(stderr, "{}", error_line(&err));
            return EXIT_CONFIG;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_line(&e));
            exit_code(&e)
        }
    }
}
