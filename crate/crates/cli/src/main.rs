use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use lfv_core::acceptance::{run_criterion, CRITERIA, KNOWN_FAILURES};
use lfv_core::harness::{self, write_outputs, RunConfig, Statistic};
use lfv_core::Error;

#[derive(Parser)]
#[command(name = "lfv", version, about = "Lambda-Fleming-Viot ensembles and limit checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ensemble; write CSV, JSON report and plot script.
    Simulate(Common),
    /// Check the `[schedule]` table against its regime's conditions.
    ValidateSchedule(Common),
    /// KS and mean comparison of one marginal of two configs.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Second configuration.
        #[arg(long)]
        against: PathBuf,
        /// Observation time (default: the horizon).
        #[arg(long)]
        t: Option<f64>,
        /// Compare this probe instead of the primary readout.
        #[arg(long)]
        probe: Option<usize>,
    },
    /// Poisson check of final lookdown level configurations.
    DiagnosePoisson(Common),
    /// Run the acceptance suite.
    Accept {
        /// Criterion ids to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        #[arg(long)]
        workers: Option<usize>,
        /// Write `acceptance.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Outcome {
    Pass,
    Fail,
}

fn load(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.base_seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = Some(w);
    }
    if let Some(o) = &c.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.check()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value).expect("serializable"))?;
    Ok(p)
}

fn outcome(pass: bool) -> Outcome {
    if pass {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = load(&c)?;
            let report = harness::simulate(&cfg)?;
            let files = write_outputs(&report, &out_dir(&cfg))?;
            let last = report.rows.last().expect("non-empty time grid");
            println!(
                "{} replicates, t={}: mean {} (se {}), var {}",
                report.replicates, last.t, last.mean, last.se, last.var
            );
            for v in &report.verdicts {
                println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
            }
            println!("wrote {}", files.json.display());
            Ok(outcome(report.pass()))
        }
        Command::ValidateSchedule(c) => {
            let cfg = load(&c)?;
            let rep = harness::validate(&cfg)?;
            for cond in &rep.conditions {
                println!(
                    "{} {} ({:?}, limit {:?})",
                    if cond.pass { "PASS" } else { "FAIL" },
                    cond.name,
                    cond.trend,
                    cond.limit
                );
            }
            if let Some(dir) = &cfg.output_dir {
                write_json(dir, "schedule_report.json", &rep)?;
            }
            Ok(outcome(rep.pass))
        }
        Command::Compare {
            common,
            against,
            t,
            probe,
        } => {
            let a = load(&common)?;
            let b = load(&Common {
                config: against,
                ..common.clone()
            })?;
            let t = t.unwrap_or(a.horizon);
            let stat = match probe {
                Some(index) => Statistic::Probe { index, t },
                None => Statistic::Total { t },
            };
            let rep = harness::compare(&a, &b, stat)?;
            println!(
                "{} KS D {:.4} p {:.4}; means {:.5} vs {:.5} ({:.2} SE)",
                if rep.pass { "PASS" } else { "FAIL" },
                rep.ks.statistic,
                rep.ks.p_value,
                rep.mean_a,
                rep.mean_b,
                rep.z
            );
            if let Some(dir) = &a.output_dir {
                write_json(dir, "compare.json", &rep)?;
            }
            Ok(outcome(rep.pass))
        }
        Command::DiagnosePoisson(c) => {
            let cfg = load(&c)?;
            let d = harness::diagnose_poisson(&cfg)?;
            let pass = d.ks_gap_p > 0.01 && d.laplace_z() <= 3.0;
            println!(
                "{} {} gaps, KS p {:.4}; Laplace {:.6} vs {:.6} ({:.2} SE)",
                if pass { "PASS" } else { "FAIL" },
                d.n_gaps,
                d.ks_gap_p,
                d.laplace_lhs,
                d.laplace_rhs,
                d.laplace_z()
            );
            if let Some(dir) = &cfg.output_dir {
                write_json(dir, "poisson.json", &d)?;
            }
            Ok(outcome(pass))
        }
        Command::Accept { only, workers, out } => {
            if let Some(w) = workers {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(w.max(1))
                    .build_global()
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            let mut results = Vec::new();
            for (id, _) in CRITERIA.iter().filter(|c| only.is_empty() || only.contains(&c.0)) {
                info!("criterion {id}");
                let r = run_criterion(*id);
                println!("{r}");
                if !r.pass && KNOWN_FAILURES.contains(id) {
                    println!("     (known failure, see README)");
                }
                results.push(r);
            }
            if let Some(dir) = out {
                write_json(&dir, "acceptance.json", &results)?;
            }
            Ok(outcome(results.iter().all(|r| r.pass)))
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
