use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fwat_core::analysis::Certificate;
use fwat_core::protocol::GainStatus;
use fwat_core::scenario::{self, LabelResult, ScenarioConfig, SweepGrid};

/// `println!` that ignores a closed stdout (for example `fwat run ... | head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CERTIFICATE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "fwat",
    version,
    about = "Arbitrary-time consensus simulations with certificates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write CSV, JSON sidecar and (optionally) a plot script.
    Run(RunArgs),
    /// Recompute the certificates of a stored trajectory.
    Verify(VerifyArgs),
    /// Batch-run a scenario over a parameter grid.
    Sweep(SweepArgs),
    /// Print the built-in scenarios.
    ListBuiltins,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Built-in scenario name (see `list-builtins`).
    builtin: Option<String>,
    /// Scenario config file (TOML).
    #[arg(long, conflicts_with = "builtin")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Terminal guard ε: integration stops at tf − ε (and t1 − ε).
    #[arg(long)]
    guard: Option<f64>,
    /// Certificate tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, env = "FWAT_OUT_DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    emit_plots: bool,
    /// Exit with status 4 when a required certificate fails.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct VerifyArgs {
    csv: PathBuf,
    /// Sidecar JSON; defaults to the `<stem>.json` next to the CSV.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Accepted for symmetry with `run`; verify always exits 4 on failure.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',')]
    eta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    eta2: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    tf: Vec<f64>,
    /// Seeds as a list (`1,2,5`) or a half-open range (`0..20`).
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, env = "FWAT_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Exit with status 4 unless every cell settles before tf.
    #[arg(long)]
    strict: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<fwat_core::Error> for Failure {
    fn from(e: fwat_core::Error) -> Self {
        Self {
            code: if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_CONFIG
            },
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_scenario(a: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let mut c = match (&a.builtin, &a.config) {
        (Some(name), None) => scenario::builtin(name).ok_or_else(|| {
            Failure::config(format!(
                "unknown builtin `{name}`; available: {}",
                scenario::builtin_names().join(", ")
            ))
        })?,
        (None, Some(path)) => ScenarioConfig::load(path)?,
        _ => return Err(Failure::config("give a builtin name or --config PATH")),
    };
    if let Some(seed) = a.seed {
        c.seed = seed;
    }
    if let Some(g) = a.guard {
        c.integrator.eps_guard = Some(g);
    }
    if let Some(t) = a.tol {
        c.tol = Some(t);
    }
    Ok(c)
}

fn describe(c: &Certificate) -> String {
    let status = if c.achieved { "ok" } else { "FAILED" };
    let when = c
        .achieved_time
        .map(|t| format!(" at t = {t:.4}"))
        .unwrap_or_default();
    format!(
        "{:?}: {status}{when} (tol {:e}, witness {:.3e} at t = {:.4})",
        c.kind, c.tolerance_used, c.witness.value, c.witness.time
    )
}

fn print_result(r: &LabelResult) {
    say!(
        "[{}] {}",
        r.label,
        if r.passed() { "passed" } else { "FAILED" }
    );
    for c in &r.required {
        say!("  {}", describe(c));
    }
    for c in &r.informational {
        say!("  (info) {}", describe(c));
    }
    for (k, v) in &r.summary {
        if v.fract() == 0.0 && v.abs() < 1e15 {
            say!("  {k} = {v}");
        } else {
            say!("  {k} = {v:.6e}");
        }
    }
}

fn run(a: RunArgs) -> Outcome {
    let mut config = load_scenario(&a.scenario)?;
    if a.emit_plots {
        config.output.emit_plots = true;
    }
    let out = scenario::run(&config)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    for r in &out.results {
        print_result(r);
    }
    let written = scenario::write_outputs(&out, &a.out, a.emit_plots)?;
    for p in &written.csv {
        say!("wrote {}", p.display());
    }
    say!("wrote {}", written.sidecar.display());
    if let Some(p) = &written.plot_script {
        say!("wrote {}", p.display());
    }
    if a.strict && !out.passed() {
        return Err(Failure {
            code: EXIT_CERTIFICATE,
            message: format!("scenario `{}` failed its certificates", config.name),
        });
    }
    Ok(())
}

/// `dir/stem_label.csv` → `dir/stem.json`, trying shorter `_` prefixes.
fn find_sidecar(csv: &Path) -> Option<PathBuf> {
    let dir = csv.parent().unwrap_or(Path::new("."));
    let mut stem = csv.file_stem()?.to_string_lossy().into_owned();
    loop {
        let candidate = dir.join(format!("{stem}.json"));
        if candidate.exists() {
            return Some(candidate);
        }
        stem.truncate(stem.rfind('_')?);
    }
}

fn verify(a: VerifyArgs) -> Outcome {
    let sidecar = match a.sidecar {
        Some(p) => p,
        None => find_sidecar(&a.csv).ok_or_else(|| {
            Failure::config(format!(
                "no sidecar found for {}; pass --sidecar",
                a.csv.display()
            ))
        })?,
    };
    let report = scenario::verify(&a.csv, &sidecar)?;
    print_result(&report.result);
    if !report.matches_sidecar {
        eprintln!(
            "warning: recomputed certificates differ from those stored in {}",
            sidecar.display()
        );
    }
    if !report.passed() {
        return Err(Failure {
            code: EXIT_CERTIFICATE,
            message: format!("{} failed verification", a.csv.display()),
        });
    }
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::config(format!("bad --seeds `{s}`; use `0..20` or `1,2,3`"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| bad()))
        .collect()
}

fn sweep(a: SweepArgs) -> Outcome {
    let base = load_scenario(&a.scenario)?;
    base.prepare()?;
    let grid = SweepGrid {
        eta: a.eta,
        eta2: a.eta2,
        tf: a.tf,
        seeds: match &a.seeds {
            Some(s) => parse_seeds(s)?,
            None => vec![],
        },
    };
    let rows = scenario::sweep(&base, &grid);
    std::fs::create_dir_all(&a.out)
        .map_err(|e| Failure::config(format!("{}: {e}", a.out.display())))?;
    let path = a.out.join(format!("{}_sweep.csv", base.stem()));
    scenario::write_sweep_csv(&rows, &path)?;
    let mut unsettled = 0;
    for r in &rows {
        if r.gain == Some(GainStatus::Violated) {
            eprintln!(
                "warning: gain condition violated for eta = {:?}, eta2 = {:?}; convergence is not certified",
                r.eta, r.eta2
            );
        }
        if r.status != "ok" {
            eprintln!(
                "cell eta = {:?} tf = {:?} seed {}: {}",
                r.eta, r.tf, r.seed, r.status
            );
        }
        if !r.settled_before_tf() {
            unsettled += 1;
        }
    }
    say!(
        "{} cells, {} settled before tf",
        rows.len(),
        rows.len() - unsettled
    );
    say!("wrote {}", path.display());
    if a.strict && unsettled > 0 {
        return Err(Failure {
            code: EXIT_CERTIFICATE,
            message: format!("{unsettled} cells did not settle before tf"),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a),
        Command::ListBuiltins => {
            for (name, about) in scenario::BUILTINS {
                say!("{name:<16} {about}");
            }
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
