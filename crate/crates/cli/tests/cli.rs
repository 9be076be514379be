use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use swarmcode::runner::{read_csv, read_log, SummaryRow, GENERATIONS, MANIFEST, SUMMARY};

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn smoke() -> PathBuf {
    workspace().join("scenarios/smoke.toml")
}

fn swarmcode(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_swarmcode"));
    c.args(args).env_clear();
    c
}

fn ok(mut c: Command) -> Output {
    let out = c.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn run_smoke(out: &Path, extra: &[&str]) -> Output {
    let mut c = swarmcode(&["run", "-q", "--threads", "1"]);
    c.arg("--scenario").arg(smoke()).arg("--out").arg(out).args(extra);
    ok(c)
}

#[test]
fn smoke_run_writes_manifest_log_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    run_smoke(tmp.path(), &[]);
    assert!(tmp.path().join(MANIFEST).exists());
    let log = read_log(tmp.path()).unwrap();
    assert_eq!(log.len(), 2);
    let rows: Vec<SummaryRow> = read_csv(&tmp.path().join(SUMMARY)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].best_fitness, log[1].best.fitness);
}

#[test]
fn flags_beat_environment_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = swarmcode(&["run", "-q"]);
    c.env("SWARMCODE_SCENARIO", smoke())
        .env("SWARMCODE_OUT", tmp.path().join("env"))
        .env("SWARMCODE_GENERATIONS", "1");
    ok(c);
    assert_eq!(read_log(&tmp.path().join("env")).unwrap().len(), 1);

    let mut c = swarmcode(&["run", "-q", "--generations", "3"]);
    c.env("SWARMCODE_SCENARIO", smoke())
        .env("SWARMCODE_OUT", tmp.path().join("flag"))
        .env("SWARMCODE_GENERATIONS", "1");
    ok(c);
    assert_eq!(read_log(&tmp.path().join("flag")).unwrap().len(), 3);
}

#[test]
fn budget_sweep_writes_one_summary_row_per_budget() {
    let tmp = tempfile::tempdir().unwrap();
    run_smoke(tmp.path(), &["--generations", "1", "--budget", "1500,3000,6000"]);
    let rows: Vec<SummaryRow> = read_csv(&tmp.path().join(SUMMARY)).unwrap();
    let budgets: Vec<Option<f64>> = rows.iter().map(|r| r.budget).collect();
    assert_eq!(budgets, [Some(1500.0), Some(3000.0), Some(6000.0)]);
    for b in ["1500", "3000", "6000"] {
        assert!(tmp.path().join(format!("budget_{b}")).join(GENERATIONS).exists());
    }
    let header = fs::read_to_string(tmp.path().join(SUMMARY)).unwrap();
    let header = header.lines().next().unwrap();
    for col in ["budget", "best_fitness", "team_cost", "total_deliveries", "avg_energy_used", "species"] {
        assert!(header.split(',').any(|c| c == col), "{col} missing from {header}");
    }
}

#[test]
fn resume_continues_a_shortened_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    run_smoke(&full, &["--generations", "3"]);
    let part = tmp.path().join("part");
    run_smoke(&part, &["--generations", "3"]);
    let log = fs::read_to_string(part.join(GENERATIONS)).unwrap();
    let first: String = log.lines().take(1).map(|l| format!("{l}\n")).collect();
    fs::write(part.join(GENERATIONS), first).unwrap();
    fs::remove_dir_all(part.join("checkpoints")).unwrap();

    let mut c = swarmcode(&["resume", "-q", "--threads", "2"]);
    c.arg("--out").arg(&part);
    ok(c);
    assert_eq!(fs::read(full.join(GENERATIONS)).unwrap(), fs::read(part.join(GENERATIONS)).unwrap());
}

#[test]
fn bundled_scenarios_validate() {
    let mut files: Vec<PathBuf> = Vec::new();
    for dir in ["scenarios", "scenarios/desk"] {
        for e in fs::read_dir(workspace().join(dir)).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "toml") {
                files.push(p);
            }
        }
    }
    assert!(files.len() >= 11, "{files:?}");
    let mut c = swarmcode(&["validate"]);
    for f in &files {
        c.arg("--scenario").arg(f);
    }
    let out = ok(c);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("ok: ")).count(), files.len());
}

#[test]
fn invalid_scenario_names_the_offending_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[genome]\nradius_min = 0.4\nradius_max = 0.2\n").unwrap();
    let mut c = swarmcode(&["validate"]);
    c.arg("--scenario").arg(&bad);
    let out = c.output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("genome.radius_min"), "{stderr}");

    let mut c = swarmcode(&["run", "-q"]);
    c.arg("--scenario").arg(&bad).arg("--out").arg(tmp.path().join("run"));
    assert!(!c.output().unwrap().status.success());
    assert!(!tmp.path().join("run").join(MANIFEST).exists());

    fs::write(&bad, "population_sise = 10\n").unwrap();
    let mut c = swarmcode(&["validate"]);
    c.arg("--scenario").arg(&bad);
    let out = c.output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("population_sise"));
}

#[test]
fn plot_renders_every_figure_from_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    run_smoke(tmp.path(), &[]);
    let mut c = swarmcode(&["plot"]);
    c.arg("--out").arg(tmp.path());
    ok(c);
    for f in ["species.svg", "team.svg", "fitness.svg", "traits.svg"] {
        let svg = fs::read_to_string(tmp.path().join("plots").join(f)).unwrap();
        assert!(svg.starts_with("<svg"), "{f}");
    }

    let dest = tmp.path().join("only");
    let mut c = swarmcode(&["plot", "--kind", "fitness"]);
    c.arg("--out").arg(tmp.path()).arg("--dest").arg(&dest);
    ok(c);
    let names: Vec<_> = fs::read_dir(&dest).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["fitness.svg"]);
}

#[test]
fn plot_without_a_log_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = swarmcode(&["plot"]);
    c.arg("--out").arg(tmp.path());
    let out = c.output().unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
