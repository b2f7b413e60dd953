//! `report`: turn result CSVs into a markdown summary and SVG plots.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use memtopo_core::baselines::{BASELINE_HEADER, NOISE_HEADER};
use memtopo_core::data::write_atomic;
use memtopo_core::dynamic::SWEEP_HEADER;
use plotters::prelude::*;

use crate::commands::{HISTORY_HEADER, READ_NOISE_HEADER};
use crate::ReportArgs;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Schema {
    Sweep,
    Noise,
    ReadNoise,
    Baseline,
    History,
}

impl Schema {
    fn detect(header: &str) -> Option<Self> {
        [
            (SWEEP_HEADER, Schema::Sweep),
            (NOISE_HEADER, Schema::Noise),
            (READ_NOISE_HEADER, Schema::ReadNoise),
            (BASELINE_HEADER, Schema::Baseline),
            (HISTORY_HEADER, Schema::History),
        ]
        .into_iter()
        .find(|(h, _)| *h == header)
        .map(|(_, s)| s)
    }
}

struct Table {
    name: String,
    schema: Schema,
    rows: Vec<csv::StringRecord>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or_default().trim();
    let Some(schema) = Schema::detect(header) else {
        bail!("{}: unrecognised header `{header}`", path.display());
    };
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    let name = path.file_stem().map_or("table".into(), |s| s.to_string_lossy().into_owned());
    Ok(Table { name, schema, rows })
}

fn num(r: &csv::StringRecord, i: usize) -> Result<f64> {
    let s = r.get(i).unwrap_or_default();
    s.parse().with_context(|| format!("bad number `{s}` in column {i}"))
}

type Series = Vec<(String, Vec<(f64, f64)>)>;

fn bounds(series: &Series) -> ((f64, f64), (f64, f64)) {
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |a: f64, b: f64| {
        let d = if b > a { 0.05 * (b - a) } else { 0.5 * a.abs().max(1e-3) };
        (a - d, b + d)
    };
    (pad(x0, x1), pad(y0, y1))
}

fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &Series) -> Result<()> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let ((x0, x1), (y0, y1)) = bounds(series);
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
        for (i, (name, pts)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    write_atomic(path, svg.as_bytes())?;
    Ok(())
}

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow::anyhow!("plotting: {e:?}")
}

/// Mean metric per (group, x), sorted by x.
fn grouped_means(rows: &[(String, f64, f64)]) -> Series {
    let mut acc: BTreeMap<String, BTreeMap<i64, (f64, f64, usize)>> = BTreeMap::new();
    for (g, x, y) in rows {
        let key = (x * 1e9).round() as i64;
        let e = acc.entry(g.clone()).or_default().entry(key).or_insert((*x, 0.0, 0));
        e.1 += y;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(g, m)| (g, m.into_values().map(|(x, s, n)| (x, s / n as f64)).collect()))
        .collect()
}

pub fn run(a: &ReportArgs) -> Result<()> {
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let tables = a.inputs.iter().map(|p| read_table(p)).collect::<Result<Vec<_>>>()?;
    let mut md = String::from("# Results\n");
    let mut sweeps: Series = Vec::new();

    for t in &tables {
        md.push_str(&format!("\n## {}\n\n", t.name));
        match t.schema {
            Schema::Sweep => {
                md.push_str("| threshold | metric | avg timesteps | n |\n|---|---|---|---|\n");
                let mut pts = Vec::new();
                for r in &t.rows {
                    md.push_str(&format!("| {} | {:.4} | {:.3} | {} |\n", &r[0], num(r, 1)?, num(r, 2)?, &r[3]));
                    pts.push((num(r, 2)?, num(r, 1)?));
                }
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                sweeps.push((t.name.clone(), pts));
            }
            Schema::Noise | Schema::ReadNoise => {
                let rows: Vec<(String, f64, f64)> = t
                    .rows
                    .iter()
                    .map(|r| {
                        Ok(match t.schema {
                            Schema::Noise => (r[0].to_string(), num(r, 1)?, num(r, 3)?),
                            _ => ("read noise".to_string(), num(r, 0)?, num(r, 2)?),
                        })
                    })
                    .collect::<Result<_>>()?;
                let series = grouped_means(&rows);
                md.push_str("| arm | noise scale | mean metric |\n|---|---|---|\n");
                for (g, pts) in &series {
                    for (x, y) in pts {
                        md.push_str(&format!("| {g} | {x} | {y:.4} |\n"));
                    }
                }
                let svg = a.out_dir.join(format!("{}.svg", t.name));
                line_plot(&svg, &t.name, "noise scale", "metric", &series)?;
                md.push_str(&format!("\n![{}]({}.svg)\n", t.name, t.name));
            }
            Schema::Baseline => {
                md.push_str("| arm | metric | avg timesteps | n |\n|---|---|---|---|\n");
                for r in &t.rows {
                    md.push_str(&format!("| {} | {:.4} | {:.3} | {} |\n", &r[0], num(r, 2)?, num(r, 3)?, &r[4]));
                }
            }
            Schema::History => {
                md.push_str("| epoch | loss | metric | lr |\n|---|---|---|---|\n");
                let mut pts = Vec::new();
                for r in &t.rows {
                    md.push_str(&format!("| {} | {:.4} | {:.4} | {} |\n", &r[0], num(r, 1)?, num(r, 2)?, &r[3]));
                    pts.push((num(r, 0)?, num(r, 1)?));
                }
                let svg = a.out_dir.join(format!("{}.svg", t.name));
                line_plot(&svg, &t.name, "epoch", "training loss", &vec![("loss".into(), pts)])?;
                md.push_str(&format!("\n![{}]({}.svg)\n", t.name, t.name));
            }
        }
    }
    if !sweeps.is_empty() {
        line_plot(
            &a.out_dir.join("tradeoff.svg"),
            "metric vs average timesteps",
            "average timesteps",
            "metric",
            &sweeps,
        )?;
        md.push_str("\n![trade-off](tradeoff.svg)\n");
    }
    write_atomic(&a.out_dir.join("summary.md"), md.as_bytes())?;
    print!("{md}");
    Ok(())
}
