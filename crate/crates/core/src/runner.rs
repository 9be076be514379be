//! Experiment driver: run directory layout, generation log, checkpoints,
//! resume and end-of-run summaries.
//!
//! A run directory holds
//!
//! ```text
//! manifest.json        resolved scenario and tool version, written first
//! generations.jsonl    one GenerationReport per line, append-only
//! timings.jsonl        wall-clock seconds per generation
//! checkpoints/         gen_NNNNN.json every checkpoint_interval generations
//! summary.csv          final best team, one row
//! best_team.json       final best team with full genomes
//! traits.csv           one row per robot type of the final best team
//! ```
//!
//! Everything in `generations.jsonl` is a pure function of the scenario, so
//! two runs with the same seed produce byte-identical logs whatever the
//! thread count.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{step_generation, BestTeam, EvolutionState, GenerationReport};
use crate::genome::EndEffector;
use crate::scenario::ScenarioConfig;

pub const MANIFEST: &str = "manifest.json";
pub const GENERATIONS: &str = "generations.jsonl";
pub const TIMINGS: &str = "timings.jsonl";
pub const CHECKPOINTS: &str = "checkpoints";
pub const SUMMARY: &str = "summary.csv";
pub const BEST_TEAM: &str = "best_team.json";
pub const TRAITS: &str = "traits.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: ScenarioConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    scenario: ScenarioConfig,
    state: EvolutionState,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads for evaluation; 0 uses rayon's default.
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub generations: u32,
    pub last: Option<GenerationReport>,
}

/// One summary row describing a run's final best team.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub seed: u64,
    pub budget: Option<f64>,
    pub generation: u32,
    pub best_fitness: f64,
    pub team_cost: f64,
    pub total_deliveries: f64,
    pub individual_deliveries: f64,
    pub collab_deliveries: f64,
    pub avg_energy_used: f64,
    pub species: usize,
}

impl SummaryRow {
    pub fn new(cfg: &ScenarioConfig, report: &GenerationReport) -> Self {
        let b = &report.best;
        Self {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            budget: cfg.budget.budget,
            generation: report.generation,
            best_fitness: b.fitness,
            team_cost: b.team_cost,
            total_deliveries: b.stats.total_delivered(),
            individual_deliveries: b.stats.delivered,
            collab_deliveries: b.stats.collab_delivered,
            avg_energy_used: b.stats.energy_used,
            species: b.species_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitRow {
    pub species: u32,
    pub genome: u64,
    pub count: usize,
    pub radius: f64,
    pub chassis_tier: u8,
    pub motor_tier: u8,
    pub battery_tier: u8,
    pub end_effector: EndEffector,
    pub torque_setpoint: f64,
    pub battery_setpoint: f64,
    pub dominance: f64,
    pub selectivity: f64,
}

pub fn trait_rows(team: &BestTeam) -> Vec<TraitRow> {
    team.members
        .iter()
        .map(|m| {
            let h = &m.genome.hardware;
            TraitRow {
                species: m.species.0,
                genome: m.genome.id.0,
                count: m.count,
                radius: h.radius,
                chassis_tier: h.chassis_tier.level(),
                motor_tier: h.motor_tier.level(),
                battery_tier: h.battery_tier.level(),
                end_effector: h.end_effector,
                torque_setpoint: h.torque_setpoint,
                battery_setpoint: h.battery_setpoint,
                dominance: m.genome.dominance,
                selectivity: m.genome.selectivity,
            }
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(MANIFEST))
}

/// Every generation record in `dir`, in order.
pub fn read_log(dir: &Path) -> Result<Vec<GenerationReport>> {
    let path = dir.join(GENERATIONS);
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                what: format!("{} line {}", path.display(), i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

fn checkpoint_path(dir: &Path, generation: u32) -> PathBuf {
    dir.join(CHECKPOINTS).join(format!("gen_{generation:05}.json"))
}

fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let cdir = dir.join(CHECKPOINTS);
    if !cdir.exists() {
        return Ok(None);
    }
    let mut found: Vec<PathBuf> = fs::read_dir(&cdir)
        .map_err(|e| Error::io(&cdir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("gen_") && n.ends_with(".json"))
        })
        .collect();
    found.sort();
    Ok(found.pop())
}

/// Keep the first `keep` lines of a line-delimited file.
fn truncate_lines(path: &Path, keep: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in BufReader::new(f).lines().take(keep) {
        kept.push_str(&line.map_err(|e| Error::io(path, e))?);
        kept.push('\n');
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

fn append(path: &Path) -> Result<BufWriter<File>> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Start a fresh run in `dir`, replacing any previous log there.
pub fn run(
    cfg: &ScenarioConfig,
    dir: &Path,
    opts: RunOptions,
    on_generation: &mut dyn FnMut(&GenerationReport),
) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(dir.join(CHECKPOINTS)).map_err(|e| Error::io(dir, e))?;
    write_json(
        &dir.join(MANIFEST),
        &Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            scenario: cfg.clone(),
        },
    )?;
    for name in [GENERATIONS, TIMINGS] {
        let p = dir.join(name);
        fs::write(&p, "").map_err(|e| Error::io(&p, e))?;
    }
    if let Some(p) = latest_checkpoint(dir)? {
        let cdir = dir.join(CHECKPOINTS);
        fs::remove_dir_all(&cdir).map_err(|e| Error::io(&p, e))?;
        fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
    }
    let state = EvolutionState::initial(cfg)?;
    drive(cfg, dir, state, None, opts, on_generation)
}

/// Continue the run in `dir` from its latest checkpoint (or from scratch if
/// none was written). Log records past the checkpoint are discarded and
/// regenerated identically.
pub fn resume(
    dir: &Path,
    opts: RunOptions,
    on_generation: &mut dyn FnMut(&GenerationReport),
) -> Result<RunOutcome> {
    let manifest = read_manifest(dir)?;
    let cfg = manifest.scenario;
    let state = match latest_checkpoint(dir)? {
        Some(p) => {
            let c: Checkpoint = read_json(&p)?;
            if c.scenario != cfg {
                return Err(Error::Config(format!(
                    "checkpoint {} was written for a different scenario",
                    p.display()
                )));
            }
            c.state
        }
        None => EvolutionState::initial(&cfg)?,
    };
    let done = state.generation as usize;
    truncate_lines(&dir.join(GENERATIONS), done)?;
    truncate_lines(&dir.join(TIMINGS), done)?;
    let last = if done > 0 {
        read_log(dir)?.pop()
    } else {
        None
    };
    drive(&cfg, dir, state, last, opts, on_generation)
}

#[derive(Serialize)]
struct Timing {
    generation: u32,
    seconds: f64,
}

fn drive(
    cfg: &ScenarioConfig,
    dir: &Path,
    mut state: EvolutionState,
    mut last: Option<GenerationReport>,
    opts: RunOptions,
    on_generation: &mut dyn FnMut(&GenerationReport),
) -> Result<RunOutcome> {
    let pool = build_pool(opts.threads)?;
    let cdir = dir.join(CHECKPOINTS);
    fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
    let log_path = dir.join(GENERATIONS);
    let timing_path = dir.join(TIMINGS);
    let mut log = append(&log_path)?;
    let mut timings = append(&timing_path)?;

    while state.generation < cfg.generations {
        let t0 = Instant::now();
        let (next, report) = pool.install(|| step_generation(&state, cfg))?;
        let line = serde_json::to_string(&report).expect("report serializes");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        let timing = Timing {
            generation: report.generation,
            seconds: t0.elapsed().as_secs_f64(),
        };
        let line = serde_json::to_string(&timing).expect("timing serializes");
        writeln!(timings, "{line}").map_err(|e| Error::io(&timing_path, e))?;
        timings.flush().map_err(|e| Error::io(&timing_path, e))?;

        state = next;
        on_generation(&report);
        last = Some(report);
        if state.generation % cfg.checkpoint_interval == 0 || state.generation == cfg.generations {
            write_json(
                &checkpoint_path(dir, state.generation),
                &Checkpoint {
                    scenario: cfg.clone(),
                    state: state.clone(),
                },
            )?;
        }
    }

    if let Some(report) = &last {
        write_csv(&dir.join(SUMMARY), &[SummaryRow::new(cfg, report)])?;
        write_json(&dir.join(BEST_TEAM), &report.best)?;
        write_csv(&dir.join(TRAITS), &trait_rows(&report.best))?;
    }
    Ok(RunOutcome {
        generations: state.generation,
        last,
    })
}
