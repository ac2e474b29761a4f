use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use plotters::prelude::*;

use crate::report::{NodeTable, Series, SuiteReport};

pub fn write_report(report: &SuiteReport, path: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(report)? + "\n";
    match path {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing report {}", p.display())),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

pub fn write_csv(table: &NodeTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|x| format!("{x:e}")))?;
    }
    w.flush()?;
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

/// One SVG per non-empty series; empty series are skipped with a warning.
pub fn emit_plots(series: &[Series], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for s in series {
        let finite: Vec<(f64, f64)> =
            s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite() && (!s.log_y || *y > 0.0)).collect();
        if finite.is_empty() {
            eprintln!("warning: series '{}' has no plottable points; no file written", s.name);
            continue;
        }
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{}.svg", file_stem(&s.name)));
        plot_one(s, &finite, &path).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = lo.abs().max(1.0) * 0.05;
        (lo - pad, hi + pad)
    }
}

fn plot_one(s: &Series, points: &[(f64, f64)], path: &Path) -> Result<()> {
    let (x0, x1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let (x0, x1) = padded(x0, x1);
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut builder = ChartBuilder::on(&root);
    builder.caption(&s.name, ("sans-serif", 18)).margin(12).x_label_area_size(36).y_label_area_size(64);
    if s.log_y {
        let (y0, y1) = if y1 > y0 { (y0 / 2.0, y1 * 2.0) } else { (y0 / 10.0, y1 * 10.0) };
        let mut chart = builder.build_cartesian_2d(x0..x1, (y0..y1).log_scale())?;
        chart.configure_mesh().x_desc(&s.x_label).y_desc(&s.y_label).y_label_formatter(&|v| format!("{v:.0e}")).draw()?;
        chart.draw_series(LineSeries::new(points.iter().copied(), &BLUE))?;
        chart.draw_series(points.iter().map(|p| Circle::new(*p, 3, BLUE.filled())))?;
    } else {
        let (y0, y1) = padded(y0, y1);
        let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1)?;
        chart.configure_mesh().x_desc(&s.x_label).y_desc(&s.y_label).draw()?;
        chart.draw_series(LineSeries::new(points.iter().copied(), &BLUE))?;
    }
    root.present()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_series_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let s = Series { name: "empty".into(), x_label: "t".into(), y_label: "y".into(), log_y: true, points: vec![] };
        assert!(emit_plots(&[s], dir.path()).unwrap().is_empty());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn log_series_becomes_svg() {
        let dir = tempfile::tempdir().unwrap();
        let s = Series {
            name: "Newton residual".into(),
            x_label: "iteration".into(),
            y_label: "residual".into(),
            log_y: true,
            points: vec![(0.0, 1e-3), (1.0, 1e-7), (2.0, 1e-13)],
        };
        let files = emit_plots(&[s], dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let svg = std::fs::read_to_string(&files[0]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("Newton residual"));
    }
}
