//! Command dispatch for the `dpvi` binary.
//!
//! Exit codes: 0 success, 1 failed certificate or other runtime error,
//! 2 invalid configuration or input, 3 non-convergence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::ProblemConfig;
use crate::error::{Error, Result};
use crate::extremal::{discontinuous_fixed_point, extremal_pair, solve_enclosed, IterationRecord, OrderedInterval};
use crate::mesh::FeFunction;
use crate::multifun::SelectionRule;
use crate::spaces::{luxemburg_norm, modular};
use crate::visolve::{check_coercivity, solve_vi, SolveOptions, SolveReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dpvi", version, about = "Multi-valued double-phase variational inequalities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the inequality (inside the certified interval when [bounds] is given).
    Solve(CommonArgs),
    /// Smallest and greatest solutions in the certified interval.
    Extremal(CommonArgs),
    /// Check the sub- and supersolution certificates of the [bounds] pair.
    Verify(CommonArgs),
    /// Print modular and Luxemburg norm of the [norm] function.
    Norm(CommonArgs),
    /// Sample the coercivity pairing on spheres of growing radius.
    ProbeCoercivity(ProbeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for CSV and report files.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// lower | upper | midpoint
    #[arg(long)]
    pub selection: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated radii, e.g. 1,2,4,8.
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NotConverged(_) | Error::SingularSystem { .. } => EXIT_NOT_CONVERGED,
        Error::Expr(_)
        | Error::InvalidMesh(_)
        | Error::MeshMismatch
        | Error::LayoutMismatch { .. }
        | Error::EmptyTagSet(_)
        | Error::InvalidArgument(_)
        | Error::EndpointOrder { .. }
        | Error::Infeasible { .. }
        | Error::BoundViolation { .. }
        | Error::Config(_) => EXIT_INVALID,
        _ => EXIT_FAILURE,
    }
}

/// Runs a parsed command; errors are printed to standard error.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Context {
    cfg: ProblemConfig,
    opts: SolveOptions,
    seed: u64,
    out: PathBuf,
}

fn context(args: &CommonArgs) -> Result<Context> {
    let cfg = ProblemConfig::load(&args.config)?;
    let mut opts = cfg.solve_options()?;
    if let Some(t) = args.tol {
        if !(t > 0.0) {
            return Err(Error::Config(format!("--tol must be positive, got {t}")));
        }
        opts.tol = t;
    }
    if let Some(m) = args.max_iter {
        opts.max_iter = m;
    }
    if let Some(s) = &args.selection {
        opts.selection = SelectionRule::parse(s).map_err(|e| Error::Config(format!("--selection: {e}")))?;
    }
    let seed = args.seed.unwrap_or_else(|| cfg.seed());
    Ok(Context {
        cfg,
        opts,
        seed,
        out: args.out.clone(),
    })
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(&context(a)?),
        Command::Extremal(a) => cmd_extremal(&context(a)?),
        Command::Verify(a) => cmd_verify(&context(a)?),
        Command::Norm(a) => cmd_norm(&context(a)?),
        Command::ProbeCoercivity(a) => cmd_probe(&context(&a.common)?, a.radii.as_deref()),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_csv(dir: &Path, name: &str, u: &FeFunction) -> Result<()> {
    fs::write(dir.join(name), u.to_csv_string())?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn write_summary(dir: &Path, text: &str) -> Result<()> {
    print!("{text}");
    fs::write(dir.join("summary.txt"), text)?;
    Ok(())
}

pub fn history_csv(records: &[IterationRecord]) -> String {
    let mut s = String::from("iter,max_update,residual\n");
    for r in records {
        let _ = writeln!(s, "{},{:?},{:?}", r.iter, r.max_update, r.residual);
    }
    s
}

fn solver_history(report: &SolveReport) -> Vec<IterationRecord> {
    report
        .residual_history
        .iter()
        .zip(&report.max_update_history)
        .enumerate()
        .map(|(i, (&residual, &max_update))| IterationRecord {
            iter: i + 1,
            max_update,
            residual,
        })
        .collect()
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    command: &'static str,
    constraint: &'static str,
    interval: Option<&'a OrderedInterval>,
    min_value: f64,
    max_value: f64,
    report: &'a SolveReport,
}

fn cmd_solve(ctx: &Context) -> Result<i32> {
    let prob = ctx.cfg.build_problem()?;
    let (sol, oi) = if ctx.cfg.bounds.is_some() {
        let oi = ctx.cfg.ordered_interval(&prob, &ctx.opts)?;
        (solve_enclosed(&prob, &oi, &ctx.opts)?, Some(oi))
    } else {
        (solve_vi(&prob, &ctx.opts)?, None)
    };
    create_out(&ctx.out)?;
    write_csv(&ctx.out, "solution.csv", &sol.u)?;
    fs::write(ctx.out.join("history.csv"), history_csv(&solver_history(&sol.report)))?;
    write_json(
        &ctx.out,
        "report.json",
        &SolveOutput {
            command: "solve",
            constraint: prob.constraint.name(),
            interval: oi.as_ref(),
            min_value: sol.u.min_value(),
            max_value: sol.u.max_value(),
            report: &sol.report,
        },
    )?;
    let mut s = String::new();
    let _ = writeln!(s, "solve: {} constraint, {} nodes", prob.constraint.name(), prob.mesh().node_count());
    if let Some(oi) = &oi {
        let _ = writeln!(s, "  {}", oi.sub.summary());
        let _ = writeln!(s, "  {}", oi.sup.summary());
    }
    let _ = writeln!(
        s,
        "  iterations {}, residual {:.3e}, converged {}",
        sol.report.iterations, sol.report.residual, sol.report.converged
    );
    let _ = writeln!(s, "  min u = {:.9}, max u = {:.9}", sol.u.min_value(), sol.u.max_value());
    write_summary(&ctx.out, &s)?;
    Ok(if sol.report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn cmd_extremal(ctx: &Context) -> Result<i32> {
    let prob = ctx.cfg.build_problem()?;
    let oi = ctx.cfg.ordered_interval(&prob, &ctx.opts)?;
    if !oi.passes() {
        return Err(Error::InvalidArgument(format!(
            "interval is not certified: {}; {}",
            oi.sub.summary(),
            oi.sup.summary()
        )));
    }
    create_out(&ctx.out)?;
    let mut s = String::new();
    if let Some(j) = ctx.cfg.two_arg()? {
        let d = discontinuous_fixed_point(&prob, &j, None, &oi, &ctx.opts)?;
        write_csv(&ctx.out, "u_smallest.csv", &d.smallest)?;
        write_csv(&ctx.out, "u_greatest.csv", &d.greatest)?;
        let conv = |h: &[crate::extremal::FixedPointRecord]| -> Vec<IterationRecord> {
            h.iter()
                .map(|r| IterationRecord {
                    iter: r.iter,
                    max_update: r.max_update,
                    residual: r.residual,
                })
                .collect()
        };
        fs::write(ctx.out.join("history_greatest.csv"), history_csv(&conv(&d.g_history)))?;
        fs::write(ctx.out.join("history_smallest.csv"), history_csv(&conv(&d.t_history)))?;
        write_json(&ctx.out, "report.json", &d)?;
        let _ = writeln!(
            s,
            "extremal (state-dependent): {} downward and {} upward outer iterations",
            d.g_history.len(),
            d.t_history.len()
        );
        let _ = writeln!(
            s,
            "  residuals: smallest {:.3e}, greatest {:.3e}",
            d.smallest_residual, d.greatest_residual
        );
    } else {
        let res = extremal_pair(&prob, &oi, &ctx.opts)?;
        write_csv(&ctx.out, "u_smallest.csv", res.smallest())?;
        write_csv(&ctx.out, "u_greatest.csv", res.greatest())?;
        fs::write(ctx.out.join("history_greatest.csv"), history_csv(&res.greatest_history))?;
        fs::write(ctx.out.join("history_smallest.csv"), history_csv(&res.smallest_history))?;
        write_json(&ctx.out, "report.json", &res)?;
        let _ = writeln!(
            s,
            "extremal: {} downward and {} upward iterations, order defect {:.3e}",
            res.greatest_history.len(),
            res.smallest_history.len(),
            res.set.order_defect
        );
        let (lo, hi) = (res.smallest(), res.greatest());
        let _ = writeln!(s, "  max gap u^* - u_* = {:.9}", hi.sub(lo)?.max_value());
    }
    write_summary(&ctx.out, &s)?;
    Ok(EXIT_OK)
}

fn cmd_verify(ctx: &Context) -> Result<i32> {
    let prob = ctx.cfg.build_problem()?;
    let oi = ctx.cfg.ordered_interval(&prob, &ctx.opts)?;
    create_out(&ctx.out)?;
    write_json(&ctx.out, "report.json", &oi)?;
    write_csv(&ctx.out, "u_lower.csv", &oi.lower)?;
    write_csv(&ctx.out, "u_upper.csv", &oi.upper)?;
    let s = format!(
        "verify: {}\n  {}\n  {}\n",
        if oi.passes() { "PASS" } else { "FAIL" },
        oi.sub.summary(),
        oi.sup.summary()
    );
    write_summary(&ctx.out, &s)?;
    Ok(if oi.passes() { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_norm(ctx: &Context) -> Result<i32> {
    let mesh = ctx.cfg.build_mesh()?;
    let ed = ctx.cfg.exponents(&mesh)?;
    let (kind, u, tol) = ctx.cfg.norm_request(&mesh)?;
    let rho = modular(&kind, &ed, &u)?;
    let norm = luxemburg_norm(&kind, &ed, &u, tol)?;
    println!("kind: {}", kind.name());
    println!("modular: {rho:.10}");
    println!("luxemburg: {norm:.10}");
    Ok(EXIT_OK)
}

fn cmd_probe(ctx: &Context, radii: Option<&[f64]>) -> Result<i32> {
    let prob = ctx.cfg.build_problem()?;
    let (cfg_radii, samples, u0) = ctx.cfg.probe_request(prob.mesh())?;
    let radii = radii.map(<[f64]>::to_vec).unwrap_or(cfg_radii);
    let report = check_coercivity(&prob, &u0, &radii, samples, ctx.seed)?;
    create_out(&ctx.out)?;
    write_json(&ctx.out, "report.json", &report)?;
    let mut s = String::from("radius,samples,min_value,no_violation_found\n");
    for r in &report.radii {
        let _ = writeln!(s, "{:?},{},{:?},{}", r.radius, r.samples, r.min_value, r.no_violation_found);
    }
    fs::write(ctx.out.join("probe.csv"), &s)?;
    let _ = writeln!(s, "verdict: {}", report.verdict);
    write_summary(&ctx.out, &s)?;
    Ok(EXIT_OK)
}
