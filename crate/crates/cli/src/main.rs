use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::Vector3;

use ctsteam::config::{load_config, ExperimentConfig};
use ctsteam::experiment::{compare, estimate, evaluate, simulate, RunOutcome};
use ctsteam::io::{
    read_ground_truth, read_knots, read_measurements, write_ground_truth, write_knots,
    write_measurements, write_results, write_segment_errors, RunSummary,
};
use ctsteam::metric::SegmentErrors;
use ctsteam::sim::run_bias_experiment;
use ctsteam::{Error, PriorOrder, Termination, Trajectory};

#[derive(Parser, Debug)]
#[command(name = "ctsteam", version, about = "Continuous-time SE(3) trajectory estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an urban drive: writes ground_truth.csv and measurements.csv.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a trajectory from a measurements file.
    Estimate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        measurements: PathBuf,
        /// Defaults to the order in the config.
        #[arg(long)]
        order: Option<PriorOrder>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One Gauss-Newton step of the stationary-start bias setup.
    BiasDemo {
        /// Forward acceleration.
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        /// Transformed measurement point `x,y,z`.
        #[arg(long, allow_hyphen_values = true)]
        point: String,
        /// Both orders when omitted.
        #[arg(long)]
        order: Option<PriorOrder>,
    },
    /// Segment translation errors of an estimate against ground truth.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate once and estimate under both priors.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Validation(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Singular(_) => Failure::Solver(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

fn config(path: &Option<PathBuf>) -> Result<ExperimentConfig, Failure> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    })
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Validation(format!("cannot create {}: {e}", dir.display())))
}

fn parse_point(s: &str) -> Result<Vector3<f64>, Failure> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Validation(format!("point {s:?} is not three comma-separated numbers")))?;
    match parts.as_slice() {
        [x, y, z] if parts.iter().all(|v| v.is_finite()) => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(Failure::Validation(format!(
            "point {s:?} is not three comma-separated numbers"
        ))),
    }
}

fn check_converged(order: PriorOrder, t: Termination) -> Result<(), Failure> {
    match t {
        Termination::Converged => Ok(()),
        Termination::MaxIterations => Err(Failure::Solver(format!(
            "{order} solve reached the iteration limit without converging"
        ))),
        Termination::NonImproving => Err(Failure::Solver(format!(
            "{order} solve stopped: step halving could not reduce the cost"
        ))),
    }
}

fn fmt_percent(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn print_comparison(a: &SegmentErrors, j: &SegmentErrors) {
    println!("{:>10}  {:>10}  {:>10}", "length_m", "wnoa_%", "wnoj_%");
    let mut lengths: Vec<f64> = a.per_length.iter().map(|e| e.length).collect();
    for e in &j.per_length {
        if !lengths.contains(&e.length) {
            lengths.push(e.length);
        }
    }
    lengths.sort_by(f64::total_cmp);
    let at = |s: &SegmentErrors, l: f64| {
        s.per_length
            .iter()
            .find(|e| e.length == l)
            .map(|e| e.mean_percent)
    };
    for l in lengths {
        println!("{l:>10}  {:>10}  {:>10}", fmt_percent(at(a, l)), fmt_percent(at(j, l)));
    }
    println!("{:>10}  {:>10}  {:>10}", "overall", fmt_percent(a.overall), fmt_percent(j.overall));
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, seed: u64, run: &RunOutcome) -> Result<(), Failure> {
    let stem = run.order.to_string();
    write_knots(
        &dir.join(format!("{stem}_trajectory.csv")),
        run.order,
        run.trajectory.knots(),
    )?;
    let summary = RunSummary::new(cfg, seed, run.order, &run.report, &run.errors)?;
    write_results(dir, &stem, &summary, &run.errors)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config: c, seed, out } => {
            let cfg = config(&c)?;
            let seed = seed.unwrap_or(cfg.seed);
            let sim = simulate(&cfg, seed)?;
            ensure_dir(&out)?;
            write_ground_truth(&out.join("ground_truth.csv"), &sim.ground_truth)?;
            write_measurements(&out.join("measurements.csv"), &sim.measurements)?;
            println!(
                "simulated {:.1} s, {} measurements",
                sim.ground_truth.end(),
                sim.measurements.len()
            );
        }
        Command::Estimate {
            config: c,
            measurements,
            order,
            seed,
            out,
        } => {
            let cfg = config(&c)?;
            let order = order.unwrap_or(cfg.prior.order);
            let seed = seed.unwrap_or(cfg.seed);
            let ms = read_measurements(&measurements)?;
            let (traj, report) = estimate(&ms, &cfg, order)?;
            ensure_dir(&out)?;
            write_knots(&out.join(format!("{order}_trajectory.csv")), order, traj.knots())?;
            let empty = SegmentErrors {
                per_length: Vec::new(),
                overall: None,
            };
            let summary = RunSummary::new(&cfg, seed, order, &report, &empty)?;
            write_results(&out, &order.to_string(), &summary, &empty)?;
            println!(
                "{order}: {} iterations, cost {:.6e} -> {:.6e}",
                report.iterations, report.initial_cost, report.final_cost
            );
            check_converged(order, report.termination)?;
        }
        Command::BiasDemo { a, point, order } => {
            if !a.is_finite() {
                return Err(Failure::Validation(format!("acceleration {a} is not finite")));
            }
            let p = parse_point(&point)?;
            let orders = match order {
                Some(o) => vec![o],
                None => vec![PriorOrder::Wnoa, PriorOrder::Wnoj],
            };
            for o in orders {
                let r = run_bias_experiment(a, &p, o)?;
                match r.m_denominator {
                    Some(m) => println!("{o}: m = {m}"),
                    None => println!("{o}:"),
                }
                println!("{:>4}  {:>14}  {:>14}", "dof", "delta_xi", "closed_form");
                for i in 0..6 {
                    println!("{i:>4}  {:>14.8}  {:>14.8}", r.delta_xi[i], r.closed_form[i]);
                }
            }
        }
        Command::Evaluate {
            config: c,
            estimate: est,
            ground_truth,
            out,
        } => {
            let cfg = config(&c)?;
            let (order, knots) = read_knots(&est)?;
            let traj = Trajectory::new(order, knots)?;
            let gt = read_ground_truth(&ground_truth)?;
            let errors = evaluate(&traj, &gt, &cfg.metric.segment_lengths)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                ensure_dir(parent)?;
            }
            write_segment_errors(&out, &errors)?;
            match errors.overall {
                Some(v) => println!("overall {v:.4} %"),
                None => println!("path shorter than every segment length; no segments"),
            }
        }
        Command::Compare { config: c, seed, out } => {
            let cfg = config(&c)?;
            let seed = seed.unwrap_or(cfg.seed);
            let cmp = compare(&cfg, seed)?;
            ensure_dir(&out)?;
            write_run(&out, &cfg, seed, &cmp.wnoa)?;
            write_run(&out, &cfg, seed, &cmp.wnoj)?;
            print_comparison(&cmp.wnoa.errors, &cmp.wnoj.errors);
            check_converged(PriorOrder::Wnoa, cmp.wnoa.report.termination)?;
            check_converged(PriorOrder::Wnoj, cmp.wnoj.report.termination)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error[validation]: {first}");
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error[validation]: {}", msg.replace('\n', " "));
            ExitCode::from(1)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error[solver]: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
    }
}
