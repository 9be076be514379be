//! SVG figures rendered from a run log alone.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use plotters::prelude::*;
use swarmcode::evolution::GenerationReport;
use swarmcode::runner::{read_log, trait_rows};
use swarmcode::SpeciesId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    /// Species composition of the population per generation.
    Species,
    /// Species composition of the best team per generation.
    Team,
    /// Best-team fitness per generation.
    Fitness,
    /// Morphological traits of the final best team.
    Traits,
    All,
}

const SIZE: (u32, u32) = (960, 540);

fn color(id: SpeciesId) -> RGBColor {
    let c = Palette99::pick(id.0 as usize).to_rgba();
    RGBColor(c.0, c.1, c.2)
}

/// Stacked areas, one band per species, from per-generation counts.
fn stack(path: &Path, title: &str, y_desc: &str, rows: &[BTreeMap<SpeciesId, usize>]) -> Result<()> {
    let ids: BTreeSet<SpeciesId> = rows.iter().flat_map(|r| r.keys().copied()).collect();
    let ids: Vec<SpeciesId> = ids.into_iter().collect();
    let top = rows
        .iter()
        .map(|r| r.values().sum::<usize>())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let n = rows.len() as u32;

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0u32..n.saturating_sub(1).max(1), 0f64..top)?;
    chart
        .configure_mesh()
        .x_desc("generation")
        .y_desc(y_desc)
        .disable_mesh()
        .draw()?;

    // Cumulative bands, drawn tallest first so each covers only its share.
    let cumulative: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut acc = 0.0;
            ids.iter()
                .map(|id| {
                    acc += r.get(id).copied().unwrap_or(0) as f64;
                    acc
                })
                .collect()
        })
        .collect();
    for (k, id) in ids.iter().enumerate().rev() {
        let c = color(*id);
        chart
            .draw_series(AreaSeries::new(
                cumulative.iter().enumerate().map(|(g, v)| (g as u32, v[k])),
                0.0,
                c.mix(0.85),
            ))?
            .label(id.to_string())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], c.filled()));
    }
    if ids.len() <= 24 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::UpperRight)
            .draw()?;
    }
    root.present()?;
    Ok(())
}

fn fitness(path: &Path, log: &[GenerationReport]) -> Result<()> {
    let ys: Vec<f64> = log.iter().map(|r| r.best.fitness).collect();
    let hi = ys.iter().copied().fold(0.0, f64::max).max(1e-9) * 1.05;
    let n = log.len() as u32;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Best-team fitness", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0u32..n.saturating_sub(1).max(1), 0f64..hi)?;
    chart
        .configure_mesh()
        .x_desc("generation")
        .y_desc("smoothed fitness")
        .draw()?;
    chart.draw_series(LineSeries::new(
        ys.iter().enumerate().map(|(g, &y)| (g as u32, y)),
        BLUE.stroke_width(2),
    ))?;
    root.present()?;
    Ok(())
}

fn traits(path: &Path, last: &GenerationReport) -> Result<()> {
    let rows = trait_rows(&last.best);
    let header = [
        "species", "robots", "radius", "chassis", "motor", "battery", "effector", "torque",
        "battery sp", "dominance",
    ];
    let line_h: i32 = 28;
    let height = (80 + line_h * (rows.len() as i32 + 1)).max(160) as u32;
    let root = SVGBackend::new(path, (SIZE.0, height)).into_drawing_area();
    root.fill(&WHITE)?;
    let title = format!(
        "Best team at generation {} (fitness {:.3}, cost {:.0})",
        last.generation, last.best.fitness, last.best.team_cost
    );
    root.draw(&Text::new(title, (20, 20), ("sans-serif", 20).into_font()))?;
    let col = |i: usize| 20 + i as i32 * 92;
    let style = ("sans-serif", 15).into_font();
    for (i, h) in header.iter().enumerate() {
        root.draw(&Text::new(h.to_string(), (col(i), 60), style.clone()))?;
    }
    for (r, t) in rows.iter().enumerate() {
        let y = 60 + line_h * (r as i32 + 1);
        let c = color(SpeciesId(t.species));
        root.draw(&Rectangle::new([(col(0) - 14, y + 2), (col(0) - 4, y + 12)], c.filled()))?;
        let cells = [
            format!("s{}", t.species),
            t.count.to_string(),
            format!("{:.3}", t.radius),
            t.chassis_tier.to_string(),
            t.motor_tier.to_string(),
            t.battery_tier.to_string(),
            format!("{:?}", t.end_effector).to_lowercase(),
            format!("{:.2}", t.torque_setpoint),
            format!("{:.2}", t.battery_setpoint),
            format!("{:.2}", t.dominance),
        ];
        for (i, cell) in cells.into_iter().enumerate() {
            root.draw(&Text::new(cell, (col(i), y), style.clone()))?;
        }
    }
    root.present()?;
    Ok(())
}

pub fn render(run_dir: &Path, kind: Kind, dest: &Path) -> Result<Vec<PathBuf>> {
    let log = read_log(run_dir).with_context(|| format!("reading run log in {}", run_dir.display()))?;
    let Some(last) = log.last() else {
        bail!("{} has no generation records", run_dir.display());
    };
    std::fs::create_dir_all(dest).with_context(|| format!("creating {}", dest.display()))?;
    let wanted = |k: Kind| kind == Kind::All || kind == k;
    let mut written = Vec::new();

    if wanted(Kind::Species) {
        let p = dest.join("species.svg");
        let rows: Vec<_> = log.iter().map(|r| r.census.clone()).collect();
        stack(&p, "Population species composition", "individuals", &rows)?;
        written.push(p);
    }
    if wanted(Kind::Team) {
        let p = dest.join("team.svg");
        let rows: Vec<BTreeMap<SpeciesId, usize>> = log
            .iter()
            .map(|r| {
                let mut m = BTreeMap::new();
                for t in &r.best.members {
                    *m.entry(t.species).or_insert(0) += t.count;
                }
                m
            })
            .collect();
        stack(&p, "Best-team species composition", "robots", &rows)?;
        written.push(p);
    }
    if wanted(Kind::Fitness) {
        let p = dest.join("fitness.svg");
        fitness(&p, &log)?;
        written.push(p);
    }
    if wanted(Kind::Traits) {
        let p = dest.join("traits.svg");
        traits(&p, last)?;
        written.push(p);
    }
    Ok(written)
}
