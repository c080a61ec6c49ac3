use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use boundary_core::catalog::{example, IDS};
use boundary_core::connection::{build_hat, convexity_report, laplace_identity_check};
use boundary_core::montecarlo::SimConfig;
use boundary_core::problem::{build, parse_file, Mode, Problem, ProblemFile};
use boundary_core::report::{csv_grid, fmt, render_csv, render_json, render_text, solve_problem, RunOptions, Solution};
use boundary_core::reproduce::reproduce;
use boundary_core::verify::{parse_values, sweep, verify_mc, SweepParam};
use boundary_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

/// Optimal stopping and singular control of linear diffusions.
#[derive(Parser)]
#[command(name = "boundary-solver", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem in a spec file and print the report.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Also print the value at this point.
        #[arg(long)]
        x: Option<f64>,
        /// Number of CSV rows across the working domain.
        #[arg(long, default_value_t = 401)]
        rows: usize,
    },
    /// Compare the analytic value at --x with a Monte Carlo estimate.
    VerifyMc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: f64,
        #[command(flatten)]
        mc: McFlags,
    },
    /// Associated diffusion, convexity conditions and the W' = V-hat link.
    CheckConnection {
        #[command(flatten)]
        common: Common,
        /// Run the hitting-time Laplace check from this point.
        #[arg(long)]
        x: Option<f64>,
        /// Target level for the Laplace check (defaults to 2x).
        #[arg(long)]
        level: Option<f64>,
        #[command(flatten)]
        mc: McFlags,
    },
    /// Re-run a built-in worked example and check its golden values.
    Reproduce {
        /// Example number 1 to 11, or 0 for all.
        #[arg(long)]
        example: u32,
        /// Include the simulation checks.
        #[arg(long)]
        mc: bool,
        #[command(flatten)]
        mc_flags: McFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve over a grid of one parameter and write a CSV table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// mu, sigma or r.
        #[arg(long)]
        param: String,
        /// from:to:count or a comma-separated list.
        #[arg(long)]
        values: String,
        #[arg(long)]
        x: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    spec: PathBuf,
    /// Directory for report.txt, report.json and the CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximizer-set tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct McFlags {
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl McFlags {
    /// Flags win over the spec file's [mc] section, which wins over defaults.
    fn config(&self, file: Option<&ProblemFile>) -> SimConfig {
        let mut cfg = SimConfig::default();
        if let Some(f) = file {
            let m = &f.mc;
            cfg.paths = m.paths.unwrap_or(cfg.paths);
            cfg.step = m.step.unwrap_or(cfg.step);
            cfg.base_seed = m.seed.unwrap_or(cfg.base_seed);
            cfg.horizon = m.horizon;
            cfg.antithetic = m.antithetic.unwrap_or(false);
        }
        cfg.paths = self.paths.unwrap_or(cfg.paths);
        cfg.step = self.step.unwrap_or(cfg.step);
        cfg.base_seed = self.seed.unwrap_or(cfg.base_seed);
        cfg
    }
}

fn load(path: &Path) -> Result<(ProblemFile, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok((parse_file(&text)?, text))
}

fn load_problem(path: &Path) -> Result<Problem> {
    let (file, text) = load(path)?;
    build(file, Some(&text))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), body)?;
    Ok(())
}

fn emit(p: &Problem, sol: &Solution, out: Option<&Path>, rows: usize, text: &str) -> Result<()> {
    print!("{text}");
    if let Some(dir) = out {
        write(dir, "report.txt", text)?;
        let j = serde_json::to_string_pretty(&render_json(p, sol)).expect("json values serialize");
        write(dir, "report.json", &(j + "\n"))?;
        let xs = csv_grid(p, sol, rows);
        write(dir, "solution.csv", &render_csv(p, sol, &xs))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { common, x, rows } => {
            if rows < 2 {
                return Err(Error::Validation("--rows must be at least 2".into()));
            }
            let p = load_problem(&common.spec)?;
            let sol = solve_problem(&p, RunOptions { tol: common.tol })?;
            let mut text = render_text(&p, &sol);
            if let Some(x) = x {
                text.push_str(&format!(
                    "value at {}: {}\n",
                    fmt(x),
                    sol.value(x).map_or("unresolved".into(), fmt)
                ));
            }
            emit(&p, &sol, common.out.as_deref(), rows, &text)
        }
        Command::VerifyMc { common, x, mc } => {
            let p = load_problem(&common.spec)?;
            let cfg = mc.config(Some(&p.file));
            let sol = solve_problem(&p, RunOptions { tol: common.tol })?;
            let checks = verify_mc(&p, &sol, x, &cfg)?;
            let mut text = String::new();
            for c in &checks {
                text.push_str(&c.render());
                text.push('\n');
            }
            print!("{text}");
            if let Some(dir) = common.out.as_deref() {
                write(dir, "verify.txt", &text)?;
                let j = json!({ "x": x, "checks": checks.iter().map(|c| c.to_json()).collect::<Vec<_>>() });
                write(dir, "verify.json", &(serde_json::to_string_pretty(&j).expect("json") + "\n"))?;
            }
            if checks.iter().all(|c| c.agrees) {
                Ok(())
            } else {
                Err(Error::McNonConvergence("simulation disagrees with the analytic value beyond 3 standard errors".into()))
            }
        }
        Command::CheckConnection { common, x, level, mc } => {
            let (mut file, text) = load(&common.spec)?;
            file.mode.kind = Mode::Connection;
            let p = build(file, Some(&text))?;
            let cfg = mc.config(Some(&p.file));
            let sol = solve_problem(&p, RunOptions { tol: common.tol })?;
            let mut out = render_text(&p, &sol);
            let Solution::Connection(r) = &sol else { unreachable!("connection mode") };
            let conv = convexity_report(&p.spec, &r.hat.pair, &cfg)?;
            out.push_str("-- convexity\n");
            out.push_str(&format!("psi convex: {} ({})\n", conv.psi_convex.holds, conv.psi_convex.reason));
            out.push_str(&format!("phi convex: {} ({})\n", conv.phi_convex.holds, conv.phi_convex.reason));
            for c in &conv.conditions {
                out.push_str(&format!("  {}: {} ({})\n", c.name, c.holds, c.detail));
            }
            out.push_str(&format!(
                "concave near lower: {}   concave near upper: {}\n",
                conv.concave_near_lower, conv.concave_near_upper
            ));
            out.push_str(&format!("second-derivative integral identity: {}\n", if conv.identity_ok { "holds" } else { "fails" }));
            if let Some(x) = x {
                let hat = build_hat(&p.spec)?;
                let b = level.unwrap_or(2.0 * x);
                let c = laplace_identity_check(&hat, x, b, Some(&cfg))?;
                let e = c.mc.expect("simulation requested");
                out.push_str(&format!(
                    "Laplace check from {} to {}: analytic {}, simulated {} +- {} (z = {:.2})\n",
                    fmt(x),
                    fmt(b),
                    fmt(c.analytic),
                    fmt(e.mean),
                    fmt(e.std_error),
                    e.z_score(c.analytic)
                ));
            }
            emit(&p, &sol, common.out.as_deref(), 401, &out)
        }
        Command::Reproduce { example: id, mc, mc_flags, out } => {
            let ids: Vec<u32> = if id == 0 { IDS.collect() } else { vec![id] };
            let cfg = mc_flags.config(None);
            let mut failed = Vec::new();
            for id in ids {
                let ex = example(id)?;
                let r = reproduce(id, mc.then_some(&cfg))?;
                let mut text = render_text(&r.problem, &r.solution);
                text.push_str(&r.render());
                if let Some(dir) = out.as_deref() {
                    let dir = dir.join(format!("example{id}"));
                    write(&dir, &format!("example{id}.toml"), &ex.toml())?;
                    emit(&r.problem, &r.solution, Some(&dir), 401, &text)?;
                } else {
                    print!("{text}");
                }
                if let Err(e) = r.into_result() {
                    failed.push(e);
                }
            }
            match failed.len() {
                0 => Ok(()),
                1 => Err(failed.remove(0)),
                n => {
                    for e in &failed {
                        eprintln!("{e}");
                    }
                    Err(Error::GoldenMismatch { example: 0, diff: format!("{n} examples failed") })
                }
            }
        }
        Command::Sweep { common, param, values, x } => {
            let (file, text) = load(&common.spec)?;
            build(file.clone(), Some(&text))?;
            let param = SweepParam::parse(&param)?;
            let vals = parse_values(&values)?;
            let csv = sweep(&file, param, &vals, x, RunOptions { tol: common.tol })?;
            match common.out.as_deref() {
                Some(dir) => write(dir, "sweep.csv", &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
