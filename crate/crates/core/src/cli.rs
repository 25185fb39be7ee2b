//! Command-line front end: `generate`, `solve`, `diagnose`, `sweep-noise`,
//! `sweep-rho` and `trace-export`.
//!
//! A `solve` run directory holds `state.json` (final iterate, rounded
//! transforms and the embedded instance), `trace.json` and `trace.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bench::{self, parse_scheme, InitKind, SweepConfig};
use crate::diagnostics::{clean_rho_bound, diagnose, dual_from_primal, instability_threshold};
use crate::error::{Error, Result};
use crate::model::{
    build_clean_data_matrix, build_data_matrix, generate_instance, matrix_to_rows,
    recover_points, round_to_transforms, rows_to_matrix, DataMatrix, InstanceSpec,
    RegistrationInstance,
};
use crate::solver::{self, GramIterate, OscillationConfig, SolverConfig, SolverTrace, Termination, Variant};

#[derive(Debug, Parser)]
#[command(name = "rigreg", version, about = "Multi-patch rigid registration by rank-constrained SDP and ADMM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic instance file.
    Generate(GenerateArgs),
    /// Run REG-ADMM or C-ADMM on an instance and write a run directory.
    Solve(SolveArgs),
    /// Evaluate all certificates on a run directory.
    Diagnose(DiagnoseArgs),
    /// Noise sweep with C-ADMM reference solutions.
    SweepNoise(SweepArgs),
    /// Penalty sweep of REG-ADMM.
    SweepRho(SweepArgs),
    /// Export the trace of a run directory as CSV.
    TraceExport(TraceExportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    /// `all_nodes` or `chained:<overlap>`.
    #[arg(long, default_value = "all_nodes")]
    pub scheme: String,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// `nonconvex` (REG-ADMM) or `convex` (C-ADMM).
    #[arg(long, default_value = "nonconvex")]
    pub variant: String,
    /// A positive number or `auto`.
    #[arg(long, default_value = "auto")]
    pub rho: String,
    #[arg(long, default_value_t = SolverConfig::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    /// Primal and change tolerance; defaults to `1e-9 Md`.
    #[arg(long)]
    pub eps: Option<f64>,
    /// `identity` or `random` (seeded from the instance seed).
    #[arg(long, default_value = "identity")]
    pub init: String,
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    #[arg(long, default_value_t = 10.0)]
    pub ratio_tol: f64,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Run directory written by `solve`.
    #[arg(long)]
    pub run: PathBuf,
    /// Report path; defaults to `<run>/diagnostics.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `key = value` configuration file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub scheme: Option<String>,
    /// Comma-separated noise levels.
    #[arg(long)]
    pub sigma: Option<String>,
    /// Comma-separated penalties; `auto` allowed.
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub init: Option<String>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Final state of a `solve` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunState {
    pub variant: Variant,
    pub rho: f64,
    /// How `ρ` was chosen: `given`, `clean_rho_bound`, `instability_4x` or `fallback`.
    pub rho_source: String,
    pub init: String,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub objective: f64,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "Lambda")]
    pub lambda: Vec<Vec<f64>>,
    /// Rounded transforms, absent when `G` has no rank-`d` signal.
    pub rotations: Option<Vec<Vec<Vec<f64>>>>,
    pub translations: Option<Vec<Vec<f64>>>,
    pub points: Option<Vec<Vec<f64>>>,
    pub instance: serde_json::Value,
}

impl RunState {
    pub fn iterate(&self) -> Result<GramIterate> {
        Ok(GramIterate {
            g: rows_to_matrix(&self.g)?,
            h: rows_to_matrix(&self.h)?,
            lambda: rows_to_matrix(&self.lambda)?,
        })
    }

    pub fn instance(&self) -> Result<RegistrationInstance> {
        RegistrationInstance::from_json(&self.instance.to_string())
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(run_dir.join("state.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `ρ` for `--rho auto`: the clean-data bound at `H⁰` for noise-free
/// instances, otherwise four times the instability threshold `μ²/M` of `H⁰`
/// with its closed-form dual, falling back to 1 when that threshold vanishes.
pub fn auto_rho(
    instance: &RegistrationInstance,
    c: &DataMatrix,
    h0: &DMatrix<f64>,
) -> Result<(f64, &'static str)> {
    if instance.noise_sigma == 0.0 {
        let c0 = build_clean_data_matrix(instance)?;
        return Ok((clean_rho_bound(&c0, h0)?, "clean_rho_bound"));
    }
    let lambda = dual_from_primal(c, h0)?;
    let t = instability_threshold(c, &lambda, instance.m)?;
    if t.rho_threshold > 0.0 {
        Ok((4.0 * t.rho_threshold, "instability_4x"))
    } else {
        Ok((1.0, "fallback"))
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let spec = InstanceSpec {
        d: a.d,
        n: a.n,
        m: a.m,
        scheme: parse_scheme(&a.scheme)?,
        sigma: a.sigma,
        seed: a.seed,
    };
    let inst = generate_instance(&spec)?;
    write_output(a.out.as_deref(), &(inst.to_json()? + "\n"))
}

fn write_trace(dir: &Path, trace: &SolverTrace) -> Result<()> {
    fs::write(dir.join("trace.json"), serde_json::to_string(trace)?)?;
    fs::write(dir.join("trace.csv"), trace.to_csv())?;
    Ok(())
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let inst = RegistrationInstance::from_json(&fs::read_to_string(&a.instance)?)?;
    let variant: Variant = a.variant.parse()?;
    let init: InitKind = a.init.parse()?;
    let c = build_data_matrix(&inst)?;
    let h0 = init.matrix(inst.m, inst.d, inst.seed);
    let (rho, rho_source) = if a.rho == "auto" {
        auto_rho(&inst, &c, &h0)?
    } else {
        let v: f64 = a
            .rho
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("invalid rho '{}'", a.rho)))?;
        (v, "given")
    };
    let mut cfg = SolverConfig::new(variant, rho, c.size())
        .with_max_iters(a.max_iters)
        .with_oscillation(OscillationConfig {
            window: a.window,
            ratio_tol: a.ratio_tol,
        });
    if let Some(eps) = a.eps {
        cfg = cfg.with_eps(eps);
    }
    fs::create_dir_all(&a.out)?;
    let (it, trace) = match solver::run(&c, &cfg, Some(&h0), None) {
        Ok(r) => r,
        Err(Error::Diverged { iteration, trace }) => {
            write_trace(&a.out, &trace)?;
            return Err(Error::Diverged { iteration, trace });
        }
        Err(e) => return Err(e),
    };
    write_trace(&a.out, &trace)?;

    let (rotations, translations, points) = match round_to_transforms(&it.g, inst.d) {
        Ok(rots) => {
            let est = recover_points(&inst, &rots)?;
            let vecs = |v: &[nalgebra::DVector<f64>]| -> Vec<Vec<f64>> {
                v.iter().map(|x| x.iter().copied().collect()).collect()
            };
            (
                Some(rots.iter().map(matrix_to_rows).collect()),
                Some(vecs(&est.translations)),
                Some(vecs(&est.points)),
            )
        }
        Err(Error::DegenerateRank(msg)) => {
            log::warn!("rounding skipped: {msg}");
            (None, None, None)
        }
        Err(e) => return Err(e),
    };
    let state = RunState {
        variant,
        rho,
        rho_source: rho_source.to_string(),
        init: init.to_string(),
        iterations: trace.len(),
        termination: trace.termination,
        objective: c.matrix().component_mul(&it.g).sum(),
        g: matrix_to_rows(&it.g),
        h: matrix_to_rows(&it.h),
        lambda: matrix_to_rows(&it.lambda),
        rotations,
        translations,
        points,
        instance: serde_json::from_str(&inst.to_json()?)?,
    };
    fs::write(a.out.join("state.json"), serde_json::to_string_pretty(&state)?)?;
    eprintln!(
        "{} after {} iterations (rho = {rho:e}, {rho_source}), objective {:e}",
        trace.termination.map_or("stopped".into(), |t| t.to_string()),
        trace.len(),
        state.objective
    );
    Ok(())
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<()> {
    let state = RunState::load(&a.run)?;
    let inst = state.instance()?;
    let report = diagnose(&inst, &state.iterate()?, state.rho)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    let out = a.out.clone().unwrap_or_else(|| a.run.join("diagnostics.json"));
    fs::write(out, &text)?;
    print!("{text}");
    Ok(())
}

fn sweep_config(a: &SweepArgs) -> Result<SweepConfig> {
    let mut cfg = match &a.config {
        Some(p) => SweepConfig::parse(&fs::read_to_string(p)?)?,
        None => SweepConfig::default(),
    };
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        match v {
            Some(v) => cfg.set(k, &v),
            None => Ok(()),
        }
    };
    set("d", a.d.map(|v| v.to_string()))?;
    set("n", a.n.map(|v| v.to_string()))?;
    set("m", a.m.map(|v| v.to_string()))?;
    set("scheme", a.scheme.clone())?;
    set("sigma", a.sigma.clone())?;
    set("rho", a.rho.clone())?;
    set("trials", a.trials.map(|v| v.to_string()))?;
    set("seed", a.seed.map(|v| v.to_string()))?;
    set("max_iters", a.max_iters.map(|v| v.to_string()))?;
    set("eps", a.eps.map(|v| v.to_string()))?;
    set("init", a.init.clone())?;
    if let Some(out) = &a.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit_rows<T: Serialize>(rows: &[T], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => bench::write_csv(rows, fs::File::create(p)?),
        None => bench::write_csv(rows, std::io::stdout().lock()),
    }
}

fn cmd_trace_export(a: &TraceExportArgs) -> Result<()> {
    let trace: SolverTrace = serde_json::from_str(&fs::read_to_string(a.run.join("trace.json"))?)?;
    write_output(a.out.as_deref(), &trace.to_csv())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::SweepNoise(a) => {
            let cfg = sweep_config(a)?;
            emit_rows(&bench::sweep_noise(&cfg)?, cfg.out.as_deref())
        }
        Command::SweepRho(a) => {
            let cfg = sweep_config(a)?;
            emit_rows(&bench::sweep_rho(&cfg)?, cfg.out.as_deref())
        }
        Command::TraceExport(a) => cmd_trace_export(a),
    }
}

/// Parses `argv` and runs the command. Returns the process exit code:
/// 0 on success, 1 on a runtime error, 2 on a usage error.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
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
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
