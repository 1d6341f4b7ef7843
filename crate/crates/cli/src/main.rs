//! `schottky`: manifest-driven runs of the theta, curve, particle, wave and
//! detection tools. Exit status 0 when every check passes, 1 when a check
//! fails or a computation breaks down, 2 on usage errors.

mod commands;
mod error;
mod manifest;

use clap::{Args, Parser, Subcommand};
use commands::{Ctx, Output};
use error::{CliError, CliResult};
use manifest::load;
use schottky_core::detect::params_hash;
use schottky_core::Truncation;
use serde::de::DeserializeOwned;
use serde_json::json;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "schottky", version, about = "Numerical experiments around the Riemann-Schottky problem")]
struct Cli {
    #[command(flatten)]
    opts: Common,
    #[command(subcommand)]
    group: Group,
}

#[derive(Args)]
struct Common {
    /// TOML manifest describing the run
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// seed for stochastic commands (overrides the manifest)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// absolute truncation tolerance for theta sums
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// worker threads, 0 picks the number of cores
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Group {
    /// Riemann theta functions
    #[command(subcommand)]
    Theta(ThetaCmd),
    /// Hyperelliptic period data
    #[command(subcommand)]
    Curve(CurveCmd),
    /// Calogero-Moser particles and tau-function zeros
    #[command(subcommand)]
    Cm(CmCmd),
    /// Formal wave series and pseudo-differential operators
    #[command(subcommand)]
    Waves(WavesCmd),
    /// Jacobian criteria and the search for directions
    #[command(subcommand)]
    Schottky(SchottkyCmd),
}

#[derive(Subcommand, Clone, Copy)]
enum ThetaCmd {
    Eval,
    Deriv,
    Char,
}

#[derive(Subcommand, Clone, Copy)]
enum CurveCmd {
    Periods,
    Vectors,
    Flex,
}

#[derive(Subcommand, Clone, Copy)]
enum CmCmd {
    Simulate,
    Track,
    Residue,
}

#[derive(Subcommand, Clone, Copy)]
enum WavesCmd {
    Recurse,
    PsidoCheck,
}

#[derive(Subcommand, Clone, Copy)]
enum SchottkyCmd {
    Kp,
    Dubrovin,
    DivisorEq,
    Flex,
    Search,
}

trait Seeded {
    fn seed(&self) -> Option<u64>;
}

macro_rules! seeded {
    ($($t:ty),*) => {
        $(impl Seeded for $t {
            fn seed(&self) -> Option<u64> {
                self.seed
            }
        })*
    };
}

use manifest::*;
seeded!(
    ThetaEval, ThetaDeriv, ThetaChar, CurvePeriods, CurveVectors, CurveFlex, CmSimulate, CmTrack, CmResidue, WavesRecurse, PsidoCheck,
    SchottkyKp, SchottkyPlain, SchottkyDivisor, SchottkySearch
);

struct Run {
    name: &'static str,
    seed: Option<u64>,
    manifest_text: String,
    output: Output,
}

fn execute<M: DeserializeOwned + Seeded>(
    name: &'static str,
    path: &Path,
    opts: &Common,
    trunc: Truncation,
    f: fn(&M, &Ctx) -> CliResult<Output>,
) -> CliResult<Run> {
    let (m, manifest_text) = load::<M>(path)?;
    let seed = opts.seed.or(m.seed());
    let output = f(&m, &Ctx { seed, trunc })?;
    Ok(Run { name, seed, manifest_text, output })
}

fn dispatch(group: &Group, path: &Path, opts: &Common, trunc: Truncation) -> CliResult<Run> {
    use commands as c;
    match group {
        Group::Theta(ThetaCmd::Eval) => execute("theta eval", path, opts, trunc, c::theta_eval),
        Group::Theta(ThetaCmd::Deriv) => execute("theta deriv", path, opts, trunc, c::theta_deriv_cmd),
        Group::Theta(ThetaCmd::Char) => execute("theta char", path, opts, trunc, c::theta_char),
        Group::Curve(CurveCmd::Periods) => execute("curve periods", path, opts, trunc, c::curve_periods),
        Group::Curve(CurveCmd::Vectors) => execute("curve vectors", path, opts, trunc, c::curve_vectors),
        Group::Curve(CurveCmd::Flex) => execute("curve flex", path, opts, trunc, c::curve_flex),
        Group::Cm(CmCmd::Simulate) => execute("cm simulate", path, opts, trunc, c::cm_simulate),
        Group::Cm(CmCmd::Track) => execute("cm track", path, opts, trunc, c::cm_track),
        Group::Cm(CmCmd::Residue) => execute("cm residue", path, opts, trunc, c::cm_residue),
        Group::Waves(WavesCmd::Recurse) => execute("waves recurse", path, opts, trunc, c::waves_recurse),
        Group::Waves(WavesCmd::PsidoCheck) => execute("waves psido-check", path, opts, trunc, c::psido_check),
        Group::Schottky(SchottkyCmd::Kp) => execute("schottky kp", path, opts, trunc, c::schottky_kp),
        Group::Schottky(SchottkyCmd::Dubrovin) => execute("schottky dubrovin", path, opts, trunc, c::schottky_dubrovin),
        Group::Schottky(SchottkyCmd::DivisorEq) => execute("schottky divisor-eq", path, opts, trunc, c::schottky_divisor),
        Group::Schottky(SchottkyCmd::Flex) => execute("schottky flex", path, opts, trunc, c::schottky_flex),
        Group::Schottky(SchottkyCmd::Search) => execute("schottky search", path, opts, trunc, c::schottky_search),
    }
}

fn write(dir: &Path, name: &str, content: &str) -> CliResult<()> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|source| CliError::Write { path, source })
}

fn persist(run: &Run, dir: &Path, trunc: Truncation) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    for (name, content) in &run.output.files {
        write(dir, name, content)?;
    }
    let checks: Vec<_> = run
        .output
        .checks
        .iter()
        .map(|c| json!({ "name": c.name, "value": c.value, "limit": c.limit, "pass": c.pass() }))
        .collect();
    let summary = json!({
        "command": run.name,
        "seed": run.seed,
        "tol": trunc.tol,
        "manifest_hash": params_hash(&run.manifest_text),
        "files": run.output.files.iter().map(|f| f.0.clone()).collect::<Vec<_>>(),
        "checks": checks,
        "pass": run.output.checks.iter().all(|c| c.pass()),
    });
    write(dir, "run.json", &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"))
}

fn run(cli: Cli) -> CliResult<()> {
    let opts = &cli.opts;
    let path = opts.manifest.as_deref().ok_or_else(|| CliError::Usage("--manifest is required".into()))?;
    let trunc = match opts.tol {
        Some(t) if t.is_finite() && t > 0.0 && t < 1.0 => Truncation::with_tol(t),
        Some(t) => return Err(CliError::Usage(format!("--tol must lie in (0, 1), got {t}"))),
        None => Truncation::default(),
    };
    if opts.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let run = dispatch(&cli.group, path, opts, trunc)?;
    persist(&run, &opts.out, trunc)?;
    for c in &run.output.checks {
        let tag = if c.pass() { "pass" } else { "FAIL" };
        println!("{} {tag} {}: {:.3e} (limit {:.1e})", run.name, c.name, c.value, c.limit);
    }
    match run.output.checks.iter().find(|c| !c.pass()) {
        Some(c) => Err(CliError::Threshold(format!("criterion `{}`: {:.3e} exceeds {:.1e}", c.name, c.value, c.limit))),
        None => Ok(()),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("schottky: {e}");
        std::process::exit(e.exit_code());
    }
}
