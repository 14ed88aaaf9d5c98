//! The `acofi` command line: solve the safety table, run experiments, check
//! the coverage certificates and export plot columns.
//!
//! Every failure ends with one line on stderr of the form
//! `error code=<N> kind=<kind>: <message>`, with exit codes 2 (configuration),
//! 3 (solver did not converge), 4 (a certificate check failed) and 5 (I/O or
//! unreadable input). Files are written through a temporary file in the
//! target directory and renamed into place, so a failed command leaves no
//! half-written outputs.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use acofi_core::bellman::solve_safety_bellman;
use acofi_core::harness::{run_episode, run_matrix, summarize, verify_theorems, write_summary, Episode, TheoremReport};
use acofi_core::trace::{read_trace, write_trace};
use acofi_core::{Error, ExperimentConfig, PolicyKind, QTable, Scenario};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "acofi", version, about = "Adaptive conformal safety filtering on a Dubins car")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the safety Q-function on the configured grid.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the table as `px,py,theta,a,Q` rows.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run one episode and write its trace.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        qtable: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log_draws: bool,
    },
    /// Run every policy, scenario and seed and summarize.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        qtable: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        reset_aci_on_respawn: bool,
        #[arg(long)]
        log_draws: bool,
    },
    /// Check the coverage certificates on a stored trace.
    VerifyTheorem {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Write `t V B epsilon policy` columns for plotting.
    ExportPlot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Threshold column value; taken from `--config` when omitted, else 0.1.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    NonConvergence,
    Theorem,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::NonConvergence => 3,
            ErrorKind::Theorem => 4,
            ErrorKind::Io => 5,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::NonConvergence => "nonconvergence",
            ErrorKind::Theorem => "theorem",
            ErrorKind::Io => "io",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message.replace(['\n', '\r'], " ");
        write!(f, "error code={} kind={}: {msg}", self.kind.exit_code(), self.kind.name())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::Config(_) | Error::HeaderMismatch(_) | Error::EmptyInput => ErrorKind::Config,
            Error::NonConvergence { .. } => ErrorKind::NonConvergence,
            Error::Format(_) | Error::MalformedTrace(_) | Error::Io(_) => ErrorKind::Io,
        };
        CliError::new(kind, e.to_string())
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::new(ErrorKind::Io, format!("{}: {e}", path.display()))
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Writes a file by filling a temporary sibling and renaming it over `path`.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> acofi_core::Result<()>) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::new(ErrorKind::Config, format!("--{name} not given and not set under [paths]")))
}

/// Loads a table and insists it was solved for this configuration.
pub fn load_table(path: &Path, cfg: &ExperimentConfig) -> CliResult<QTable> {
    let q = QTable::load(path).map_err(|e| match e {
        Error::Io(io) => io_err(path, io),
        other => other.into(),
    })?;
    q.check_matches(cfg.grid, cfg.world.bounds, cfg.solver.gamma, cfg.dynamics)?;
    Ok(q)
}

/// What a successful command wants printed on stdout.
pub type Report = Vec<String>;

pub fn run(cli: Cli) -> CliResult<Report> {
    match cli.command {
        Command::Solve { config, out, csv } => solve(&config, out, csv),
        Command::Simulate { config, qtable, policy, scenario, seed, out, log_draws } => {
            let mut cfg = load_config(&config)?;
            if let Some(p) = policy {
                cfg.simulate.policy = p;
            }
            if let Some(s) = scenario {
                cfg.simulate.scenario = s;
            }
            if let Some(s) = seed {
                cfg.simulate.seed = s;
            }
            cfg.experiment.log_draws |= log_draws;
            simulate(cfg, qtable, out)
        }
        Command::Compare { config, qtable, out, jobs, reset_aci_on_respawn, log_draws } => {
            let mut cfg = load_config(&config)?;
            if let Some(j) = jobs {
                cfg.experiment.jobs = j;
            }
            cfg.experiment.reset_aci_on_respawn |= reset_aci_on_respawn;
            cfg.experiment.log_draws |= log_draws;
            compare(cfg, qtable, out)
        }
        Command::VerifyTheorem { trace, config } => verify(&trace, &config),
        Command::ExportPlot { trace, out, epsilon, config } => export_plot(&trace, &out, epsilon, config.as_deref()),
    }
}

pub fn solve(config: &Path, out: Option<PathBuf>, csv: Option<PathBuf>) -> CliResult<Report> {
    let cfg = load_config(config)?;
    cfg.validate_solver()?;
    let out = required(out, &cfg.paths.qtable, "out")?;
    let s = &cfg.solver;
    let (table, rep) = solve_safety_bellman(&cfg.world, cfg.grid, cfg.dynamics, s.gamma, s.tol, s.max_iters)?;
    write_atomic(&out, |w| table.write_to(w))?;
    if let Some(csv) = csv {
        write_atomic(&csv, |w| table.write_csv(w))?;
    }
    Ok(vec![format!("residual = {:e}", rep.residual), format!("iterations = {}", rep.iterations)])
}

fn write_trace_file(dir: &Path, e: &Episode) -> CliResult<()> {
    write_atomic(&dir.join("traces").join(format!("{}.csv", e.file_stem())), |w| write_trace(&e.trace, w))?;
    if let Some(draws) = &e.draws {
        write_atomic(&dir.join("draws").join(format!("{}.csv", e.file_stem())), |w| {
            writeln!(w, "step,speed,steer")?;
            for (step, d) in draws {
                writeln!(w, "{step},{},{}", d.speed, d.steer)?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

/// Certificate checks over the adaptive-filter episodes, as `key = value` lines.
fn verification(episodes: &[Episode], cfg: &ExperimentConfig) -> CliResult<(bool, Vec<String>)> {
    let filter = cfg.filter_config();
    let mut lines = Vec::new();
    let (mut checked, mut passed) = (0usize, 0usize);
    let mut worst = f64::INFINITY;
    let mut per_trace: Vec<(String, TheoremReport)> = Vec::new();
    for e in episodes.iter().filter(|e| e.policy == PolicyKind::Acofi) {
        let rep = verify_theorems(&e.trace, &filter)?;
        checked += 1;
        passed += usize::from(rep.passed());
        worst = worst.min(rep.worst_slack());
        per_trace.push((e.file_stem(), rep));
    }
    let all_ok = checked == passed;
    lines.push(format!("traces_checked = {checked}"));
    lines.push(format!("traces_passed = {passed}"));
    lines.push(format!("all_ok = {all_ok}"));
    if checked > 0 {
        lines.push(format!("worst_slack = {worst}"));
    }
    for (stem, rep) in &per_trace {
        lines.push(format!("{stem}.passed = {}", rep.passed()));
        for (k, v) in rep.key_values() {
            lines.push(format!("{stem}.{k} = {v}"));
        }
    }
    Ok((all_ok, lines))
}

fn write_lines(path: &Path, lines: &[String]) -> CliResult<()> {
    write_atomic(path, |w| {
        for l in lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })
}

fn finish_experiment(cfg: &ExperimentConfig, out: &Path, episodes: &[Episode]) -> CliResult<Report> {
    let rows = summarize(episodes)?;
    let (all_ok, lines) = verification(episodes, cfg)?;
    write_atomic(&out.join("config.resolved.toml"), |w| Ok(w.write_all(cfg.to_toml_string().as_bytes())?))?;
    for e in episodes {
        write_trace_file(out, e)?;
    }
    write_atomic(&out.join("summary.csv"), |w| write_summary(&rows, w))?;
    write_lines(&out.join("verification.txt"), &lines)?;
    if !all_ok {
        return Err(CliError::new(
            ErrorKind::Theorem,
            format!("certificate check failed; see {}", out.join("verification.txt").display()),
        ));
    }
    let mut report = vec![format!("episodes = {}", episodes.len())];
    report.extend(lines.into_iter().take(4));
    Ok(report)
}

pub fn simulate(cfg: ExperimentConfig, qtable: Option<PathBuf>, out: Option<PathBuf>) -> CliResult<Report> {
    cfg.validate()?;
    let qpath = required(qtable, &cfg.paths.qtable, "qtable")?;
    let out = required(out, &cfg.paths.out, "out")?;
    let table = load_table(&qpath, &cfg)?;
    let sim = cfg.simulate;
    let ep = run_episode(sim.policy, sim.scenario, sim.seed, &cfg, &table)?;
    finish_experiment(&cfg, &out, std::slice::from_ref(&ep))
}

pub fn compare(cfg: ExperimentConfig, qtable: Option<PathBuf>, out: Option<PathBuf>) -> CliResult<Report> {
    cfg.validate()?;
    let qpath = required(qtable, &cfg.paths.qtable, "qtable")?;
    let out = required(out, &cfg.paths.out, "out")?;
    let table = load_table(&qpath, &cfg)?;
    let episodes = run_matrix(&cfg, &table, cfg.experiment.jobs)?;
    finish_experiment(&cfg, &out, &episodes)
}

fn read_trace_file(path: &Path) -> CliResult<Vec<acofi_core::StepRecord>> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(read_trace(f)?)
}

pub fn verify(trace: &Path, config: &Path) -> CliResult<Report> {
    let cfg = load_config(config)?;
    let filter = cfg.filter_config();
    filter.validate()?;
    let records = read_trace_file(trace)?;
    let rep = verify_theorems(&records, &filter)?;
    let mut lines = vec![format!("passed = {}", rep.passed())];
    lines.extend(rep.key_values().into_iter().map(|(k, v)| format!("{k} = {v}")));
    if rep.passed() {
        Ok(lines)
    } else {
        for l in &lines {
            println!("{l}");
        }
        Err(CliError::new(ErrorKind::Theorem, format!("certificate check failed on {}", trace.display())))
    }
}

pub fn export_plot(trace: &Path, out: &Path, epsilon: Option<f64>, config: Option<&Path>) -> CliResult<Report> {
    let eps = match (epsilon, config) {
        (Some(e), _) => e,
        (None, Some(c)) => load_config(c)?.filter.epsilon,
        (None, None) => ExperimentConfig::default().filter.epsilon,
    };
    let records = read_trace_file(trace)?;
    write_atomic(out, |w| {
        writeln!(w, "t V B epsilon policy")?;
        for r in &records {
            writeln!(w, "{} {} {} {eps} {}", r.t, r.v_next, r.b, r.policy.name())?;
        }
        Ok(())
    })?;
    Ok(vec![format!("rows = {}", records.len())])
}

/// Parses, runs and reports; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::new(ErrorKind::Config, first));
            return ErrorKind::Config.exit_code();
        }
    };
    match run(cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.kind.exit_code()
        }
    }
}
