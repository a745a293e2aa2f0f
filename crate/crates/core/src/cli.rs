//! Command-line front end. Exit codes: 0 success, 1 computation failure,
//! 2 argument error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::density::{marginal_pdf, transition_pdf, NumericConfig, TransitionQuery};
use crate::error::Error;
use crate::experiments::{
    jump_rate_ladder, margin_mass_asymptotics, mc_double_jump, mc_jump_probability,
    mc_poisson_limit, mixing_decay, quadrature_jump_rate, verify_kernel_bounds,
    verify_small_rho_expansions, ExperimentReport, McConfig, DEFAULT_STEP_CAP,
};
use crate::jumps::{count_events, JumpSpec};
use crate::qseries::{alpha_q, QParams, SeriesConfig};
use crate::sampler::{
    build_transition_table, simulate_path, table_quad_config, RngSeed, TransitionTable, DEFAULT_NU,
    DEFAULT_NX,
};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "QOU_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "qou",
    version,
    about = "q-Ornstein-Uhlenbeck densities, sampling and big-jump experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Model parameter q in (-1, 1)
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub q: Option<f64>,
    /// Margin width epsilon
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Dyadic level n (time step 2^-n)
    #[arg(long, global = true)]
    pub n: Option<u32>,
    /// Number of Monte Carlo replicates
    #[arg(long, global = true)]
    pub replicates: Option<u64>,
    /// Master seed
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (default: standard output)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads for Monte Carlo and table construction
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Record wall-clock time in reports (otherwise null, keeping output reproducible)
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Poisson parameter alpha_q
    Alpha,
    /// Stationary density p(x)
    Density {
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
    },
    /// Transition density p_{0,t}(x, y)
    Transition {
        #[arg(long)]
        t: f64,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
        #[arg(long, allow_hyphen_values = true)]
        y: f64,
    },
    /// Simulate a path on the grid i/2^n
    SamplePath {
        #[arg(long, default_value_t = 1)]
        horizon: u64,
        #[command(flatten)]
        table: TableArgs,
    },
    /// Simulate a path and count big jumps per unit interval of (a, b]
    CountJumps {
        #[arg(long, default_value_t = 1)]
        horizon: u64,
        /// Window start a (default 0)
        #[arg(long, default_value_t = 0)]
        window_start: u64,
        /// Window end b (default: horizon)
        #[arg(long)]
        window_end: Option<u64>,
        #[command(flatten)]
        table: TableArgs,
    },
    /// Run one experiment
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        /// Target mean of W for the Poisson experiment
        #[arg(long)]
        scale_lambda: Option<f64>,
        /// Ladder of epsilon (or rho, or t) values, comma separated
        #[arg(long, value_delimiter = ',')]
        ladder: Option<Vec<f64>>,
        /// Grid points per axis for the bound and mixing checks
        #[arg(long)]
        grid: Option<usize>,
        /// Cap on simulated transitions
        #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
        step_cap: f64,
        #[command(flatten)]
        table: TableArgs,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct TableArgs {
    /// Transition table rows (source states)
    #[arg(long, default_value_t = DEFAULT_NX)]
    pub nx: usize,
    /// Transition table columns (probability levels)
    #[arg(long, default_value_t = DEFAULT_NU)]
    pub nu: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    JumpRate,
    Ladder,
    MarginMass,
    JumpProbability,
    Poisson,
    DoubleJump,
    KernelBounds,
    Expansions,
    Mixing,
}

/// Argument-level problems, reported with exit code 2.
#[derive(Debug)]
struct Usage(String);

enum Failure {
    Usage(Usage),
    Compute(Error),
    Io(io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::InvalidInput(_) => Failure::Usage(Usage(e.to_string())),
            other => Failure::Compute(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(Usage(msg.into())))
}

/// Parses `argv` and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(Usage(m))) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Compute(e)) => {
            eprintln!("computation failed: {e}");
            1
        }
        Err(Failure::Io(e)) => {
            eprintln!("output failed: {e}");
            1
        }
    }
}

fn require<T: Copy>(v: Option<T>, flag: &str, cmd: &str) -> Result<T, Failure> {
    match v {
        Some(x) => Ok(x),
        None => usage(format!("`{cmd}` requires --{flag}")),
    }
}

fn params(cli: &Cli, cmd: &str) -> Result<QParams, Failure> {
    let q = require(cli.q, "q", cmd)?;
    QParams::new(q).map_err(Failure::from)
}

fn open_out(cli: &Cli) -> Result<Box<dyn Write>, Failure> {
    Ok(match &cli.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn emit_json<T: Serialize>(cli: &Cli, value: &T) -> Result<(), Failure> {
    let mut w = open_out(cli)?;
    write_json(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn json_only(cli: &Cli, cmd: &str) -> Result<(), Failure> {
    if cli.format != Format::Json {
        return usage(format!("`{cmd}` only supports --format json"));
    }
    Ok(())
}

fn table_for(qp: &QParams, n: u32, t: &TableArgs) -> Result<TransitionTable, Failure> {
    let cfg = NumericConfig {
        quad: table_quad_config(),
        ..NumericConfig::default()
    };
    build_transition_table(qp, n, t.nx, t.nu, &cfg).map_err(Failure::from)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return usage("--threads must be at least 1");
        }
        // a global pool can only be installed once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }
    let series = SeriesConfig::default();
    match &cli.command {
        Command::Alpha => {
            json_only(cli, "alpha")?;
            let qp = params(cli, "alpha")?;
            let a = alpha_q(&qp, &series).map_err(|e| e.context("alpha_q"))?;
            emit_json(
                cli,
                &json!({"alpha_q": a, "config": {"q": qp.q(), "series": series}}),
            )
        }
        Command::Density { x } => {
            json_only(cli, "density")?;
            let qp = params(cli, "density")?;
            let v = marginal_pdf(&qp, *x, &series).map_err(|e| e.context("marginal_pdf"))?;
            emit_json(
                cli,
                &json!({"x": x, "value": v, "config": {"q": qp.q(), "series": series}}),
            )
        }
        Command::Transition { t, x, y } => {
            json_only(cli, "transition")?;
            let qp = params(cli, "transition")?;
            let query = TransitionQuery::new(&qp, *t, *x, *y)?;
            let v =
                transition_pdf(&qp, &query, &series).map_err(|e| e.context("transition_pdf"))?;
            emit_json(
                cli,
                &json!({"t": t, "x": x, "y": y, "value": v, "config": {"q": qp.q(), "series": series}}),
            )
        }
        Command::SamplePath { horizon, table } => {
            let qp = params(cli, "sample-path")?;
            let n = require(cli.n, "n", "sample-path")?;
            let tab = table_for(&qp, n, table)?;
            let seed = RngSeed::new(cli.seed, 0);
            let path = simulate_path(&qp, n, *horizon, seed, &tab)
                .map_err(|e| e.context("simulate_path"))?;
            match cli.format {
                Format::Csv => {
                    let mut w = open_out(cli)?;
                    path.write_csv(&mut w)?;
                    w.flush()?;
                    Ok(())
                }
                Format::Json => emit_json(
                    cli,
                    &json!({
                        "config": {"q": qp.q(), "n": n, "horizon": horizon, "seed": seed,
                                   "table_nx": table.nx, "table_nu": table.nu},
                        "values": path.values(),
                    }),
                ),
            }
        }
        Command::CountJumps {
            horizon,
            window_start,
            window_end,
            table,
        } => {
            json_only(cli, "count-jumps")?;
            let qp = params(cli, "count-jumps")?;
            let n = require(cli.n, "n", "count-jumps")?;
            let eps = require(cli.epsilon, "epsilon", "count-jumps")?;
            let b = window_end.unwrap_or(*horizon);
            let spec = JumpSpec::new(&qp, eps, *window_start, b)?;
            if b > *horizon {
                return usage(format!("window end {b} exceeds horizon {horizon}"));
            }
            let tab = table_for(&qp, n, table)?;
            let seed = RngSeed::new(cli.seed, 0);
            let path = simulate_path(&qp, n, *horizon, seed, &tab)
                .map_err(|e| e.context("simulate_path"))?;
            let count = count_events(&path, &spec).map_err(|e| e.context("count_events"))?;
            let mut v = serde_json::to_value(&count).expect("serializable count");
            v["config"] = json!({"q": qp.q(), "horizon": horizon, "seed": seed,
                                 "table_nx": table.nx, "table_nu": table.nu});
            emit_json(cli, &v)
        }
        Command::Experiment {
            kind,
            scale_lambda,
            ladder,
            grid,
            step_cap,
            table,
        } => run_experiment(
            cli,
            *kind,
            *scale_lambda,
            ladder.as_deref(),
            *grid,
            *step_cap,
            table,
        ),
    }
}

fn run_experiment(
    cli: &Cli,
    kind: ExperimentKind,
    scale_lambda: Option<f64>,
    ladder: Option<&[f64]>,
    grid: Option<usize>,
    step_cap: f64,
    table: &TableArgs,
) -> Result<(), Failure> {
    let name = "experiment";
    let qp = params(cli, name)?;
    let cfg = NumericConfig::default();
    let laddered = matches!(
        kind,
        ExperimentKind::Ladder
            | ExperimentKind::MarginMass
            | ExperimentKind::Expansions
            | ExperimentKind::Mixing
    );
    if cli.format == Format::Csv && !laddered {
        return usage("--format csv is only available for ladder experiments");
    }
    let mc = |reps: u64| McConfig {
        replicates: reps,
        master_seed: cli.seed,
        step_cap,
    };
    let mut report: ExperimentReport = match kind {
        ExperimentKind::JumpRate => {
            let eps = require(cli.epsilon, "epsilon", "experiment jump-rate")?;
            quadrature_jump_rate(&qp, eps, &cfg).map_err(|e| e.context("quadrature_jump_rate"))?
        }
        ExperimentKind::Ladder => {
            let eps = ladder.unwrap_or(&[0.2, 0.1, 0.05, 0.02]);
            jump_rate_ladder(&qp, eps, None, &cfg).map_err(|e| e.context("jump_rate_ladder"))?
        }
        ExperimentKind::MarginMass => {
            let eps = ladder.unwrap_or(&[0.2, 0.1, 0.05, 0.02, 0.01]);
            margin_mass_asymptotics(&qp, eps, &cfg)
                .map_err(|e| e.context("margin_mass_asymptotics"))?
        }
        ExperimentKind::JumpProbability | ExperimentKind::DoubleJump | ExperimentKind::Poisson => {
            let eps = require(cli.epsilon, "epsilon", "experiment")?;
            let n = require(cli.n, "n", "experiment")?;
            let reps = require(cli.replicates, "replicates", "experiment")?;
            JumpSpec::new(&qp, eps, 0, 1)?;
            let lambda = if kind == ExperimentKind::Poisson {
                Some(require(scale_lambda, "scale-lambda", "experiment poisson")?)
            } else {
                None
            };
            let tab = table_for(&qp, n, table)?;
            match kind {
                ExperimentKind::JumpProbability => mc_jump_probability(&tab, eps, &mc(reps), &cfg)
                    .map_err(|e| e.context("mc_jump_probability"))?,
                ExperimentKind::DoubleJump => mc_double_jump(&tab, eps, &mc(reps), &cfg)
                    .map_err(|e| e.context("mc_double_jump"))?,
                _ => mc_poisson_limit(&tab, eps, lambda.expect("checked above"), &mc(reps), &cfg)
                    .map_err(|e| e.context("mc_poisson_limit"))?,
            }
        }
        ExperimentKind::KernelBounds => {
            let deltas = ladder.unwrap_or(&[0.1, 0.5, 1.0, 4.0]);
            verify_kernel_bounds(&qp, deltas, grid.unwrap_or(100), &cfg)
                .map_err(|e| e.context("verify_kernel_bounds"))?
        }
        ExperimentKind::Expansions => {
            let rhos = ladder.unwrap_or(&[0.1, 0.01, 0.001]);
            verify_small_rho_expansions(&qp, rhos, grid.unwrap_or(101), &cfg)
                .map_err(|e| e.context("verify_small_rho_expansions"))?
        }
        ExperimentKind::Mixing => {
            let ts = ladder.unwrap_or(&[1.0, 2.0, 4.0, 8.0]);
            mixing_decay(&qp, ts, grid.unwrap_or(50), &cfg)
                .map_err(|e| e.context("mixing_decay"))?
        }
    };
    if !cli.timing {
        report.wall_time = None;
    }
    report.config.insert(
        "experiment".into(),
        serde_json::to_value(kind).expect("kind"),
    );
    match cli.format {
        Format::Csv => {
            let mut w = open_out(cli)?;
            report.write_ladder_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Format::Json => emit_json(cli, &report),
    }
}

/// JSON formatter writing every float with 17 significant digits: fixed
/// notation for `1e−5 ≤ |v| < 1e16`, scientific otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct SeventeenDigits;

/// `v` with 17 significant digits, as written by [`SeventeenDigits`].
pub fn format_f64(v: f64) -> String {
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    if v == 0.0 || (-5..16).contains(&exp) {
        if v == 0.0 {
            return format!("{sign}0.0000000000000000");
        }
        if exp >= 0 {
            let split = exp as usize + 1;
            format!("{sign}{}.{}", &digits[..split], &digits[split..])
        } else {
            format!("{sign}0.{}{}", "0".repeat((-exp - 1) as usize), digits)
        }
    } else {
        format!("{sign}{mantissa}e{exp}")
    }
}

impl serde_json::ser::Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }
}

/// Serializes `value` with [`SeventeenDigits`].
pub fn write_json<W: Write, T: Serialize>(w: &mut W, value: &T) -> io::Result<()> {
    let v: Value = serde_json::to_value(value).map_err(io::Error::other)?;
    let mut ser = serde_json::Serializer::with_formatter(w, SeventeenDigits);
    v.serialize(&mut ser).map_err(io::Error::other)
}
