use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand};

use isosec::config::RunConfig;
use isosec::pipeline::{self, RunOutput};
use isosec::report::{emit_report, write_field_csv};
use isosec::{Error, Result};

const EXIT_FAIL: u8 = 1;
const EXIT_ERROR: u8 = 2;
const EXIT_USAGE: u8 = 64;

/// Holomorphic isotropic sections on the disk and destabilizing test sections.
///
/// Exit status: 0 when every check passes, 1 when a check fails, 2 on a precondition or
/// numerical error, 64 on a usage error. ISOSEC_THREADS caps the worker pool.
#[derive(Parser, Debug)]
#[command(name = "isosec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Isotropic holomorphic section from seeded boundary data.
    Construct(Common),
    /// Gaussian peak section of the model bundle (K, C).
    Gaussian(Common),
    /// Conformal tweak raising the curvature above --target.
    Tweak(Common),
    /// Compactly supported destabilizing section on B_r(p).
    Destabilize(Common),
    /// Rayleigh quotients over radii and the stability crossover.
    Sweep(Common),
    /// Every module's invariant suite.
    VerifyAll(Common),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundle rank.
    #[arg(long)]
    n: Option<usize>,
    /// Model degrees, comma separated.
    #[arg(long = "K", value_delimiter = ',')]
    k: Option<Vec<f64>>,
    /// Model metric weights, comma separated.
    #[arg(long = "C", value_delimiter = ',')]
    c: Option<Vec<f64>>,
    /// Disk radius.
    #[arg(long = "R", value_parser = parse_real)]
    radius: Option<f64>,
    /// Lattice spacing, e.g. 0.015625 or 1/64.
    #[arg(long, value_parser = parse_real)]
    h: Option<f64>,
    /// Boundary samples (power of two, at least 64).
    #[arg(long = "M")]
    m: Option<usize>,
    /// Destabilizer radius.
    #[arg(long, value_parser = parse_real)]
    r: Option<f64>,
    /// Destabilizer center as re,im.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    p: Option<Vec<f64>>,
    /// Concentration ratio.
    #[arg(long, value_parser = parse_real)]
    a: Option<f64>,
    /// Stability scale epsilon.
    #[arg(long, value_parser = parse_real)]
    eps: Option<f64>,
    /// Tweak curvature floor.
    #[arg(long, value_parser = parse_real)]
    target: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for CSV field dumps.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long = "tol-dbar")]
    tol_dbar: Option<f64>,
    #[arg(long = "tol-iso")]
    tol_iso: Option<f64>,
    #[arg(long = "tol-norm")]
    tol_norm: Option<f64>,
    #[arg(long = "tol-leibniz")]
    tol_leibniz: Option<f64>,
    #[arg(long = "tol-tweak")]
    tol_tweak: Option<f64>,
    #[arg(long = "tol-solver")]
    tol_solver: Option<f64>,
}

fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let bad = || format!("not a real number: {s}");
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            Ok(a / b)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json(&fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src.clone() { cfg.$($dst).+ = v; })*
            };
        }
        set!(n => n, radius => radius, h => h, m => m, r => r, a => a, eps => eps, target => target, seed => seed,
             tol_dbar => tol.dbar, tol_iso => tol.iso, tol_norm => tol.norm, tol_leibniz => tol.leibniz,
             tol_tweak => tol.tweak, tol_solver => tol.solver);
        if let Some(k) = &self.k {
            cfg.k = Some(k.clone());
        }
        if let Some(c) = &self.c {
            cfg.c = Some(c.clone());
        }
        if let Some(p) = &self.p {
            match p.as_slice() {
                [x, y] => cfg.p = [*x, *y],
                _ => return Err(Error::Config(format!("--p expects re,im, got {} values", p.len()))),
            }
        }
        Ok(cfg)
    }
}

fn write_outputs(out: &RunOutput, path: Option<&Path>, csv: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => emit_report(&out.report, p)?,
        None => println!("{}", out.report.to_canonical_json()),
    }
    if let Some(dir) = csv {
        fs::create_dir_all(dir)?;
        for (name, f) in &out.fields {
            let file = fs::File::create(dir.join(format!("{name}.csv")))?;
            write_field_csv(BufWriter::new(file), &out.nodes, f.values())?;
        }
    }
    Ok(())
}

fn run(cmd: &Command) -> Result<bool> {
    let (common, f): (&Common, fn(&RunConfig) -> Result<RunOutput>) = match cmd {
        Command::Construct(c) => (c, pipeline::run_construct),
        Command::Gaussian(c) => (c, pipeline::run_gaussian),
        Command::Tweak(c) => (c, pipeline::run_tweak),
        Command::Destabilize(c) => (c, pipeline::run_destabilize),
        Command::Sweep(c) => (c, pipeline::run_sweep),
        Command::VerifyAll(c) => (c, pipeline::verify_all),
    };
    let cfg = common.resolve()?;
    let out = f(&cfg)?;
    write_outputs(&out, common.out.as_deref(), common.csv.as_deref())?;
    for c in out.report.failures() {
        eprintln!("check failed: {} measured {} ({} {:?})", c.name, c.measured, c.relation, c.bound);
    }
    Ok(out.report.passed())
}

fn threads() -> std::result::Result<Option<usize>, String> {
    match std::env::var("ISOSEC_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t >= 1 => Ok(Some(t)),
            _ => Err(format!("ISOSEC_THREADS must be an integer >= 1, got {v:?}")),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match threads() {
        Ok(Some(t)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_ERROR);
            }
        }
        Ok(None) => {}
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
