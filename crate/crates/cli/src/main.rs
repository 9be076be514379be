mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use swarmcode::evolution::GenerationReport;
use swarmcode::fitness::Objective;
use swarmcode::runner::{self, RunOptions, SummaryRow};
use swarmcode::scenario::{Overrides, ScenarioConfig};

#[derive(Parser)]
#[command(name = "swarmcode", version, about = "Co-design heterogeneous robot swarms by cooperative co-evolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Fitness,
    Roi,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Fitness => Objective::Fitness,
            ObjectiveArg::Roi => Objective::Roi,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a scenario file.
    Run {
        #[arg(long, env = "SWARMCODE_SCENARIO")]
        scenario: PathBuf,
        /// Run directory. With several budgets, one subdirectory per budget.
        #[arg(long, env = "SWARMCODE_OUT")]
        out: PathBuf,
        #[arg(long, env = "SWARMCODE_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "SWARMCODE_GENERATIONS")]
        generations: Option<u32>,
        /// Evaluation worker threads (0 = one per core). Results do not
        /// depend on this value.
        #[arg(long, env = "SWARMCODE_THREADS", default_value_t = 0)]
        threads: usize,
        #[arg(long, env = "SWARMCODE_OBJECTIVE", value_enum)]
        objective: Option<ObjectiveArg>,
        /// Swarm budget; a comma-separated list runs a sweep.
        #[arg(long, env = "SWARMCODE_BUDGET", value_delimiter = ',')]
        budget: Vec<f64>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Continue a run from its latest checkpoint.
    Resume {
        #[arg(long, env = "SWARMCODE_OUT")]
        out: PathBuf,
        #[arg(long, env = "SWARMCODE_THREADS", default_value_t = 0)]
        threads: usize,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Check scenario files without running them.
    Validate {
        #[arg(long = "scenario", required = true, num_args = 1..)]
        scenarios: Vec<PathBuf>,
    },
    /// Render SVG plots from a run log.
    Plot {
        /// Run directory containing generations.jsonl.
        #[arg(long, env = "SWARMCODE_OUT")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        kind: plot::Kind,
        /// Where to write the images (defaults to <out>/plots).
        #[arg(long)]
        dest: Option<PathBuf>,
    },
}

fn progress(quiet: bool) -> impl FnMut(&GenerationReport) {
    move |r: &GenerationReport| {
        if !quiet {
            eprintln!(
                "gen {:>4}  species {:>2}  best {:>9.3}  team species {}  cost {:>8.1}  delivered {:.2}",
                r.generation,
                r.census.len(),
                r.best.fitness,
                r.best.species_count,
                r.best.team_cost,
                r.best.stats.total_delivered(),
            );
        }
    }
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::from_path(path).with_context(|| format!("loading {}", path.display()))
}

fn run(
    scenario: &Path,
    out: &Path,
    overrides: Overrides,
    budgets: &[f64],
    threads: usize,
    quiet: bool,
) -> Result<()> {
    let mut cfg = load(scenario)?;
    cfg.apply(&overrides);
    let opts = RunOptions { threads };

    if budgets.len() <= 1 {
        if let Some(&b) = budgets.first() {
            cfg.budget.budget = Some(b);
        }
        report_validation(&cfg, scenario)?;
        runner::run(&cfg, out, opts, &mut progress(quiet))?;
        if !quiet {
            eprintln!("wrote {}", out.display());
        }
        return Ok(());
    }

    let mut rows = Vec::with_capacity(budgets.len());
    for &b in budgets {
        let mut c = cfg.clone();
        c.budget.budget = Some(b);
        report_validation(&c, scenario)?;
        let dir = out.join(format!("budget_{b}"));
        if !quiet {
            eprintln!("budget {b} -> {}", dir.display());
        }
        let outcome = runner::run(&c, &dir, opts, &mut progress(quiet))?;
        if let Some(last) = outcome.last {
            rows.push(SummaryRow::new(&c, &last));
        }
    }
    let path = out.join(runner::SUMMARY);
    runner::write_csv(&path, &rows)?;
    if !quiet {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn report_validation(cfg: &ScenarioConfig, path: &Path) -> Result<()> {
    let d = cfg.diagnostics();
    for w in &d.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    if !d.is_valid() {
        for e in &d.errors {
            eprintln!("error: {}: {e}", path.display());
        }
        bail!("{} is not a valid scenario", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            generations,
            threads,
            objective,
            budget,
            quiet,
        } => run(
            &scenario,
            &out,
            Overrides {
                seed,
                generations,
                objective: objective.map(Into::into),
                budget: None,
            },
            &budget,
            threads,
            quiet,
        ),
        Command::Resume { out, threads, quiet } => {
            runner::resume(&out, RunOptions { threads }, &mut progress(quiet)).map(|_| ()).map_err(Into::into)
        }
        Command::Validate { scenarios } => {
            let mut bad = 0;
            for p in &scenarios {
                match load(p).and_then(|c| report_validation(&c, p)) {
                    Ok(()) => println!("ok: {}", p.display()),
                    Err(e) => {
                        eprintln!("{e:#}");
                        bad += 1;
                    }
                }
            }
            if bad > 0 {
                Err(anyhow::anyhow!("{bad} of {} scenarios invalid", scenarios.len()))
            } else {
                Ok(())
            }
        }
        Command::Plot { out, kind, dest } => {
            let dest = dest.unwrap_or_else(|| out.join("plots"));
            plot::render(&out, kind, &dest).map(|files| {
                for f in files {
                    println!("{}", f.display());
                }
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
