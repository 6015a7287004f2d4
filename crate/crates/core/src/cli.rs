//! `tersoff` command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input or configuration
//! error, 3 numerical error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::engine::{make_diamond_lattice, run, RunConfig};
use crate::error::Error;
use crate::model::{AtomSystem, ParamTable, PrecisionMode, SILICON_A0};
use crate::potential_opt::{Scheme, SUPPORTED_WIDTHS};
use crate::verify::{run_suite, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tersoff", version, about = "Tersoff-potential molecular dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation and write the thermo CSV.
    Run(CommonArgs),
    /// Run the property suite; prints one PASS/FAIL line per property.
    Verify(CommonArgs),
    /// Time a matrix of schemes, widths and precisions.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Parameter file; the built-in silicon table when omitted.
    #[arg(long, value_name = "PATH")]
    pub params: Option<PathBuf>,
    /// Lattice size in conventional cells (run/bench default 4 4 4, verify 2 2 2).
    #[arg(long, num_args = 3, value_names = ["NX", "NY", "NZ"])]
    pub cells: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Time step in ps.
    #[arg(long, default_value_t = 0.001)]
    pub dt: f64,
    /// Neighbor-list skin in Å.
    #[arg(long, default_value_t = 1.0)]
    pub skin: f64,
    #[arg(long, default_value_t = 16)]
    pub kmax: usize,
    /// auto, ref, scalar-opt, v1, v2 or v3.
    #[arg(long, default_value = "auto")]
    pub scheme: String,
    /// Vector width (1, 2, 4, 8 or 16); defaults to 4 for double, 8 otherwise.
    #[arg(long)]
    pub width: Option<usize>,
    /// ref, double, single or mixed.
    #[arg(long, default_value = "double")]
    pub precision: String,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 12345)]
    pub seed: u64,
    /// Output CSV; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Initial temperature in K.
    #[arg(long, default_value_t = 300.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 100)]
    pub thermo_every: usize,
    /// Cubic lattice constant in Å.
    #[arg(long, default_value_t = SILICON_A0)]
    pub a0: f64,
    /// Lattice species (first species of the table when omitted).
    #[arg(long)]
    pub species: Option<String>,
    /// Atomic mass in g/mol (looked up for C, Si and Ge when omitted).
    #[arg(long)]
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Widths to time, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 4, 8, 16])]
    pub widths: Vec<usize>,
    /// Optimized precisions to time, comma separated.
    #[arg(long, value_delimiter = ',', default_values = ["double", "single", "mixed"])]
    pub precisions: Vec<String>,
}

struct Failure {
    code: i32,
    stage: &'static str,
    message: String,
}

impl Failure {
    fn from_error(stage: &'static str, e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT },
            stage,
            message: e.to_string(),
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> Stage<T> for crate::error::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure::from_error(stage, e))
    }
}

fn element_mass(name: &str) -> Option<f64> {
    match name {
        "C" => Some(12.011),
        "Si" => Some(28.0855),
        "Ge" => Some(72.630),
        _ => None,
    }
}

fn load_params(args: &CommonArgs) -> Result<ParamTable, Failure> {
    match &args.params {
        Some(p) => ParamTable::from_path(p).stage("load parameters"),
        None => Ok(ParamTable::silicon()),
    }
}

fn cells(args: &CommonArgs, default: usize) -> [usize; 3] {
    match args.cells.as_deref() {
        Some([x, y, z]) => [*x, *y, *z],
        _ => [default; 3],
    }
}

fn run_config(args: &CommonArgs) -> Result<RunConfig, Failure> {
    let scheme: Scheme = args.scheme.parse().stage("parse arguments")?;
    let precision: PrecisionMode = args.precision.parse().stage("parse arguments")?;
    let cfg = RunConfig {
        steps: args.steps,
        dt: args.dt,
        skin: args.skin,
        rebuild_check_every: 1,
        k_max: args.kmax,
        scheme,
        precision,
        backend_width: args.width,
        workers: args.workers,
        thermo_every: args.thermo_every,
        seed: args.seed,
        temperature: Some(args.temperature),
    };
    cfg.validate().stage("configure")?;
    Ok(cfg)
}

fn build_lattice(args: &CommonArgs, params: &ParamTable) -> Result<AtomSystem, Failure> {
    let name = args
        .species
        .clone()
        .unwrap_or_else(|| params.species_names()[0].clone());
    let species = params.species_id(&name).ok_or_else(|| Failure {
        code: EXIT_INPUT,
        stage: "build lattice",
        message: format!("species `{name}` is not in the parameter table"),
    })?;
    let mass = args.mass.or_else(|| element_mass(&name)).ok_or_else(|| Failure {
        code: EXIT_INPUT,
        stage: "build lattice",
        message: format!("no built-in mass for `{name}`; pass --mass"),
    })?;
    let mut masses = vec![1.0; params.species_count()];
    masses[species] = mass;
    make_diamond_lattice(
        cells(args, 4),
        args.a0,
        species,
        &masses,
        params.r_cut_max() + args.skin,
    )
    .stage("build lattice")
}

fn write_output(path: Option<&PathBuf>, text: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    let res = match path {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => stdout.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    res.map_err(|message| Failure {
        code: EXIT_INPUT,
        stage: "write output",
        message,
    })
}

fn cmd_run(args: &CommonArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let params = load_params(args)?;
    let cfg = run_config(args)?;
    let system = build_lattice(args, &params)?;
    let report = run(system, &params, &cfg).stage("simulate")?;
    write_output(args.out.as_ref(), &report.to_csv(), stdout)?;
    Ok(EXIT_OK)
}

fn cmd_verify(args: &CommonArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let params = load_params(args)?;
    let cfg = VerifyConfig {
        cells: cells(args, 2),
        a0: args.a0,
        seed: args.seed,
        workers: args.workers,
        ..Default::default()
    };
    let checks = run_suite(&params, &cfg).stage("verify")?;
    let mut text = String::new();
    for c in &checks {
        text.push_str(&c.line());
        text.push('\n');
    }
    write_output(args.out.as_ref(), &text, stdout)?;
    Ok(if checks.iter().all(|c| c.passed) {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

/// Header of the bench table.
pub const BENCH_HEADER: &str = "scheme,width,precision,ns_per_day,speedup_vs_ref";

fn cmd_bench(args: &BenchArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let common = &args.common;
    let params = load_params(common)?;
    let base = run_config(common)?;
    let system = build_lattice(common, &params)?;
    let precisions = args
        .precisions
        .iter()
        .map(|p| p.parse::<PrecisionMode>())
        .collect::<crate::error::Result<Vec<_>>>()
        .stage("parse arguments")?;
    if let Some(w) = args.widths.iter().find(|w| !SUPPORTED_WIDTHS.contains(w)) {
        return Err(Failure {
            code: EXIT_INPUT,
            stage: "parse arguments",
            message: format!("unsupported width {w} (supported: {SUPPORTED_WIDTHS:?})"),
        });
    }

    let reference = RunConfig {
        scheme: Scheme::Ref,
        precision: PrecisionMode::Ref,
        ..base.clone()
    };
    let ref_report = run(system.clone(), &params, &reference).stage("bench ref")?;
    let mut text = format!("{BENCH_HEADER}\nref,1,ref,{},1\n", ref_report.ns_per_day);
    for &precision in precisions.iter().filter(|p| **p != PrecisionMode::Ref) {
        for &width in &args.widths {
            let cfg = RunConfig {
                precision,
                backend_width: Some(width),
                ..base.clone()
            };
            let r = run(system.clone(), &params, &cfg).stage("bench")?;
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                r.scheme,
                r.width,
                r.precision,
                r.ns_per_day,
                r.ns_per_day / ref_report.ns_per_day
            ));
        }
    }
    write_output(common.out.as_ref(), &text, stdout)?;
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and executes the subcommand.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = stderr.write_all(rendered.as_bytes());
            } else {
                let _ = stdout.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    let (name, result) = match &cli.command {
        Command::Run(a) => ("run", cmd_run(a, stdout)),
        Command::Verify(a) => ("verify", cmd_verify(a, stdout)),
        Command::Bench(a) => ("bench", cmd_bench(a, stdout)),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let message = f.message.replace('\n', " ");
            let _ = writeln!(stderr, "tersoff {name}: {}: {message}", f.stage);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["tersoff"];
        full.extend_from_slice(args);
        let code = main_with_args(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn run_samples_first_and_last_step() {
        let (code, out, err) = call(&["run", "--cells", "2", "2", "2", "--steps", "20", "--thermo-every", "10"]);
        assert_eq!(code, 0, "{err}");
        let rows: Vec<_> = out.lines().skip(1).take_while(|l| !l.starts_with("scheme")).collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].starts_with("0,0,"));
    }

    #[test]
    fn missing_params_file() {
        let (code, _, err) = call(&["run", "--params", "/nonexistent/Si.tersoff", "--steps", "1"]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("/nonexistent/Si.tersoff"), "{err}");
        assert!(err.starts_with("tersoff run: load parameters:"), "{err}");
        assert_eq!(err.lines().count(), 1);
    }

    #[test]
    fn bad_flags_are_input_errors() {
        assert_eq!(call(&["run", "--scheme", "v7"]).0, EXIT_INPUT);
        assert_eq!(call(&["run", "--precision", "half"]).0, EXIT_INPUT);
        assert_eq!(call(&["run", "--dt", "-1"]).0, EXIT_INPUT);
        assert_eq!(call(&["run", "--cells", "1", "1", "1", "--steps", "1"]).0, EXIT_INPUT);
        assert_eq!(call(&["frobnicate"]).0, EXIT_INPUT);
        assert_eq!(call(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn footer_echoes_configuration() {
        let (code, out, _) = call(&[
            "run", "--cells", "2", "2", "2", "--steps", "2", "--scheme", "v2", "--width", "8", "--precision", "mixed",
        ]);
        assert_eq!(code, 0);
        assert!(out.contains("\nscheme,v2\nwidth,8\nprecision,mixed\nns_per_day,"));
    }

    #[test]
    fn bench_rows() {
        let (code, out, err) = call(&[
            "bench", "--cells", "2", "2", "2", "--steps", "2", "--widths", "1,4,8", "--precisions", "double",
        ]);
        assert_eq!(code, 0, "{err}");
        let lines: Vec<_> = out.lines().collect();
        assert_eq!(lines[0], BENCH_HEADER);
        assert_eq!(lines.len(), 1 + 1 + 3);
        assert!(lines[1].starts_with("ref,1,ref,") && lines[1].ends_with(",1"));
        assert!(lines[2].starts_with("v3,1,double,"));
        assert!(lines[3].starts_with("v1,4,double,"));
        assert!(lines[4].starts_with("v2,8,double,"));
    }
}
