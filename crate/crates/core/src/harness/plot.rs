//! Static line charts (no text) plus the CSV data behind them.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn bounds(series: &[Vec<(f64, f64)>]) -> ((f64, f64), (f64, f64)) {
    let pts = series.iter().flatten().filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return ((0.0, 1.0), (0.0, 1.0));
    }
    let pad = |lo: f64, hi: f64| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    (pad(x0, x1), pad(y0, y1))
}

/// One polyline per series inside a framed box. Colours follow series order.
pub fn line_chart(path: &Path, series: &[Vec<(f64, f64)>], fixed: Option<((f64, f64), (f64, f64))>) -> Result<()> {
    let ((x0, x1), (y0, y1)) = fixed.unwrap_or_else(|| bounds(series));
    let root = BitMapBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| plot_err(path, e))?;
    let frame = vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)];
    chart
        .draw_series(LineSeries::new(frame, &BLACK))
        .map_err(|e| plot_err(path, e))?;
    for (i, s) in series.iter().enumerate() {
        let pts = s.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite());
        chart
            .draw_series(LineSeries::new(pts, PALETTE[i % PALETTE.len()].stroke_width(2)))
            .map_err(|e| plot_err(path, e))?;
    }
    root.present().map_err(|e| plot_err(path, e))
}

/// ROC curve with the chance diagonal.
pub fn roc_chart(path: &Path, roc: &[(f64, f64)]) -> Result<()> {
    line_chart(path, &[roc.to_vec(), vec![(0.0, 0.0), (1.0, 1.0)]], Some(((0.0, 1.0), (0.0, 1.0))))
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::InvalidArgument(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_png_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("roc.png");
        roc_chart(&p, &[(0.0, 0.0), (0.2, 0.7), (1.0, 1.0)]).unwrap();
        let img = image::open(&p).unwrap();
        assert_eq!((img.width(), img.height()), (640, 480));
        let c = dir.path().join("a.csv");
        write_csv(&c, &["x", "y"], vec![vec!["1".into(), "2".into()]]).unwrap();
        assert_eq!(std::fs::read_to_string(&c).unwrap(), "x,y\n1,2\n");
        line_chart(&dir.path().join("empty.png"), &[vec![]], None).unwrap();
    }
}
