use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dmiqp::admm::{solve_distributed_with, AdmmParams, JsonLines, Silent, Transcript};
use dmiqp::intersection::{compile_with, CompileOptions, IntersectionScenario};
use dmiqp::model::{example1, read_problem, write_problem, MiqpProblem};
use dmiqp::oracle::{
    accuracy_experiment, solve_exhaustive_with, AccuracyConfig, OracleConfig, SolverChoice,
};
use dmiqp::report::{Mode, SolveReport};
use dmiqp::sim::{self, SimConfig};
use dmiqp::tighten::{solve_centralized, TightenConfig};
use dmiqp::{plot, Error};

#[derive(Parser)]
#[command(
    name = "dmiqp",
    version,
    about = "Big-M tightening solvers for multi-agent MIQPs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a problem file and print the report as JSON.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one JSON line per distributed iteration here.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Solve the bundled four-agent example.
    Example1 {
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate all binary assignments of a problem file.
    Oracle {
        problem: PathBuf,
        #[arg(long, default_value_t = dmiqp::oracle::DEFAULT_BUDGET)]
        budget: usize,
        /// Skip subtrees whose relaxation bound cannot beat the incumbent.
        #[arg(long)]
        prune: bool,
        /// Write the per-leaf CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a solver with the oracle on seeded random instances.
    Accuracy {
        #[arg(long, default_value_t = 4)]
        agents: usize,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compile an intersection scenario into a problem file.
    Compile {
        scenario: PathBuf,
        /// Bound each initial M by the range of its row.
        #[arg(long)]
        bound_m: bool,
        /// Penalty weight for rear-end rows against HDV predictions.
        #[arg(long)]
        soft_weight: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        lateral_cost: f64,
        /// Hold the later CAV of each crossing pair before its conflict zone.
        #[arg(long)]
        lateral_order: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the closed-loop intersection simulation.
    Sim {
        #[arg(long, default_value_t = 1200.0)]
        volume: f64,
        #[arg(long, default_value_t = 0.5)]
        penetration: f64,
        #[arg(long, default_value_t = 240)]
        duration: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of lanes; lanes 2i and 2i+1 conflict.
        #[arg(long, default_value_t = 4)]
        lanes: usize,
        /// Prediction horizon in steps.
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Centralized)]
        mode: ModeArg,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Skip the per-step trajectory file.
        #[arg(long)]
        no_trajectory: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a solve report (convergence curves) or a trajectory CSV
    /// (time-space diagram) to SVG.
    Plot {
        input: PathBuf,
        /// Problem file used to separate binaries from continuous variables.
        #[arg(long)]
        problem: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Centralized,
    Distributed,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Centralized)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Floor factor of the M update.
    #[arg(long, default_value_t = 0.01)]
    xi: f64,
    /// Integrality tolerance.
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Iteration cap of the tightening loop (default 100 centralized, 300 distributed).
    #[arg(long)]
    tmax: Option<usize>,
    /// Weight of each big-M penalty row in the relaxation.
    #[arg(long, default_value_t = 1.0)]
    penalty_weight: f64,
}

impl SolverArgs {
    fn tighten(&self) -> TightenConfig {
        let d = TightenConfig::default();
        TightenConfig {
            xi: self.xi,
            eps: self.eps,
            t_max: self.tmax.unwrap_or(d.t_max),
            penalty_weight: self.penalty_weight,
            ..d
        }
    }

    fn admm(&self) -> AdmmParams {
        let d = AdmmParams::default();
        AdmmParams {
            rho: self.rho,
            beta: self.beta,
            gamma: self.gamma,
            xi: self.xi,
            eps: self.eps,
            t_max: self.tmax.unwrap_or(d.t_max),
            penalty_weight: self.penalty_weight,
            ..d
        }
    }

    fn solve(
        &self,
        p: &MiqpProblem,
        transcript: &mut dyn Transcript,
    ) -> dmiqp::Result<SolveReport> {
        match self.mode {
            ModeArg::Centralized => solve_centralized(p, &self.tighten()),
            ModeArg::Distributed => solve_distributed_with(p, &self.admm(), transcript),
        }
    }
}

fn write_out(out: Option<&Path>, text: &str) -> dmiqp::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn report_exit(report: &SolveReport, out: Option<&Path>) -> dmiqp::Result<ExitCode> {
    write_out(out, &(report.to_json() + "\n"))?;
    eprintln!(
        "status {:?}, objective {:.6}, {} iterations",
        report.status, report.objective, report.iterations
    );
    Ok(if report.status.is_mixed_integer() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn run(cli: Cli) -> dmiqp::Result<ExitCode> {
    match cli.cmd {
        Cmd::Solve {
            problem,
            solver,
            out,
            transcript,
        } => {
            let p = read_problem(&problem)?;
            let report = match transcript {
                Some(path) => {
                    let mut t = JsonLines::new(BufWriter::new(File::create(path)?));
                    let r = solver.solve(&p, &mut t)?;
                    t.into_inner().flush()?;
                    r
                }
                None => solver.solve(&p, &mut Silent)?,
            };
            report_exit(&report, out.as_deref())
        }
        Cmd::Example1 { solver, out } => {
            let report = solver.solve(&example1(), &mut Silent)?;
            report_exit(&report, out.as_deref())
        }
        Cmd::Oracle {
            problem,
            budget,
            prune,
            out,
        } => {
            let p = read_problem(&problem)?;
            let cfg = OracleConfig {
                budget,
                prune,
                ..OracleConfig::default()
            };
            let r = solve_exhaustive_with(&p, &cfg)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["assignment", "status", "feasible", "objective"])?;
            for leaf in &r.leaves {
                let bits: String = leaf
                    .assignment
                    .iter()
                    .map(|b| char::from(b'0' + b))
                    .collect();
                w.write_record([
                    bits,
                    format!("{:?}", leaf.status),
                    leaf.feasible.to_string(),
                    format!("{:.9}", leaf.objective),
                ])?;
            }
            let text = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
                .expect("csv output is UTF-8");
            write_out(out.as_deref(), &text)?;
            match r.best_binaries() {
                Some(b) => {
                    eprintln!(
                        "best {:?}, objective {:.9}, {} leaves",
                        b, r.best_objective, r.enumerated
                    );
                    Ok(ExitCode::SUCCESS)
                }
                None => {
                    eprintln!("no feasible assignment among {} leaves", r.enumerated);
                    Ok(ExitCode::from(2))
                }
            }
        }
        Cmd::Accuracy {
            agents,
            count,
            seed,
            solver,
            out,
        } => {
            let mut cfg = AccuracyConfig::new(seed, count, agents);
            cfg.solver = match solver.mode {
                ModeArg::Centralized => SolverChoice::Centralized(TightenConfig {
                    record_x: false,
                    ..solver.tighten()
                }),
                ModeArg::Distributed => SolverChoice::Distributed(AdmmParams {
                    record_x: false,
                    ..solver.admm()
                }),
            };
            let r = accuracy_experiment(&cfg)?;
            let mut buf = Vec::new();
            r.write_csv(&mut buf)?;
            write_out(
                out.as_deref(),
                &String::from_utf8(buf).expect("csv output is UTF-8"),
            )?;
            match r.match_fraction() {
                Some(f) => eprintln!("match fraction {f:.4} over {count} instances"),
                None => eprintln!("match fraction undefined: no instances"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Compile {
            scenario,
            bound_m,
            soft_weight,
            lateral_cost,
            lateral_order,
            out,
        } => {
            let scn = IntersectionScenario::read(&scenario)?;
            let opts = CompileOptions {
                bound_derived_m: bound_m,
                lateral_cost,
                lateral_order,
            };
            let mut c = compile_with(&scn, &opts)?;
            if let Some(w) = soft_weight {
                c = c.soften_hdv(w)?;
            }
            write_problem(&c.problem, &out)?;
            eprintln!(
                "{} agents, {} variables, {} binaries, {} coupling rows",
                c.problem.n_agents(),
                c.problem.total_vars(),
                c.problem.total_binaries(),
                c.problem.m_coupling()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sim {
            volume,
            penetration,
            duration,
            seed,
            lanes,
            horizon,
            mode,
            rho,
            beta,
            gamma,
            no_trajectory,
            out,
        } => {
            let mut cfg = SimConfig {
                volume,
                penetration,
                duration,
                seed,
                lanes,
                conflicts: (0..lanes / 2).map(|i| (2 * i, 2 * i + 1)).collect(),
                mode: match mode {
                    ModeArg::Centralized => Mode::Centralized,
                    ModeArg::Distributed => Mode::Distributed,
                },
                record_trajectory: !no_trajectory,
                ..SimConfig::default()
            };
            cfg.params.horizon = horizon;
            if let Some(r) = rho {
                cfg.admm.rho = r;
            }
            if let Some(b) = beta {
                cfg.admm.beta = b;
                cfg.auto_beta = false;
            }
            if let Some(g) = gamma {
                cfg.admm.gamma = g;
            }
            let res = sim::run(cfg)?;
            std::fs::create_dir_all(&out)?;
            sim::write_records_csv(&out.join("metrics.csv"), &res.records)?;
            sim::write_summary_json(&out.join("summary.json"), &res.summary)?;
            let mut w = csv::Writer::from_path(out.join("incidents.csv"))?;
            w.write_record(["step", "kind", "detail"])?;
            for i in &res.incidents {
                let kind = serde_json::to_value(i.kind)?;
                w.write_record([
                    i.step.to_string(),
                    kind.as_str().unwrap_or_default().to_string(),
                    i.detail.clone(),
                ])?;
            }
            w.flush()?;
            if !no_trajectory {
                sim::write_trajectory_csv(&out.join("trajectory.csv"), &res.trajectory)?;
            }
            let s = &res.summary;
            eprintln!(
                "{} vehicles exited, mean travel time {}, mean total acceleration {}, {} fallback steps",
                s.exited,
                s.avg_travel_time.map_or("n/a".into(), |t| format!("{t:.3} s")),
                s.avg_total_accel.map_or("n/a".into(), |a| format!("{a:.3} m/s")),
                s.fallback_steps
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Plot {
            input,
            problem,
            out,
        } => {
            let cols = match problem {
                Some(path) => Some(
                    read_problem(&path)?
                        .agents
                        .iter()
                        .map(|a| a.binary_cols.clone())
                        .collect::<Vec<_>>(),
                ),
                None => None,
            };
            let svg = plot::plot_file(&input, cols.as_deref())?;
            std::fs::write(&out, svg)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MIQP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
