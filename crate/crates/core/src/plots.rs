//! Static SVG plots: curves over epochs and CSS heatmaps.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::CssMatrix;
use crate::trainer::EpochRecord;

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// Named series of `(x, y)` points drawn on a shared `[0, 1]` y-axis.
pub fn line_chart(path: &Path, title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let x_max = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .fold(1.0_f64, f64::max);
    let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..x_max, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Test accuracy and pseudo-label accuracy per epoch.
pub fn accuracy_curve(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let acc = log.iter().map(|r| (r.epoch as f64, r.target_accuracy)).collect();
    let pseudo = log
        .iter()
        .filter_map(|r| r.pseudo_accuracy.map(|a| (r.epoch as f64, a)))
        .collect();
    line_chart(
        path,
        "target accuracy",
        "epoch",
        &[("test accuracy".into(), acc), ("pseudo-label accuracy".into(), pseudo)],
    )
}

/// Node and pair gate fractions per epoch.
pub fn gate_curve(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let pick = |f: fn(&EpochRecord) -> f64| log.iter().map(|r| (r.epoch as f64, f(r))).collect::<Vec<_>>();
    line_chart(
        path,
        "gate ratios",
        "epoch",
        &[
            ("node kept".into(), pick(|r| r.gates.node_kept)),
            ("pair gate open".into(), pick(|r| r.gates.combined_open)),
            ("similar, close".into(), pick(|r| r.gates.similar_close)),
            ("dissimilar, close".into(), pick(|r| r.gates.dissimilar_close)),
        ],
    )
}

/// Heatmap of a CSS matrix; absent entries are drawn grey.
pub fn css_heatmap(path: &Path, title: &str, css: &CssMatrix) -> Result<()> {
    let k = css.classes();
    let root = SVGBackend::new(path, (520, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(36)
        .build_cartesian_2d(0..k, 0..k)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("labeled class")
        .y_desc("unlabeled class")
        .draw()
        .map_err(plot_err)?;
    let cells = (0..k).flat_map(|r| (0..k).map(move |c| (r, c)));
    chart
        .draw_series(cells.map(|(r, c)| {
            let color = match css.get(r, c) {
                Some(v) => {
                    let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))) as u8;
                    RGBColor(shade, shade, 255)
                }
                None => RGBColor(200, 200, 200),
            };
            Rectangle::new([(c, r), (c + 1, r + 1)], color.filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::css_from_predictions;
    use crate::model::PredictionDistribution;

    #[test]
    fn writes_svg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.svg");
        line_chart(&path, "t", "x", &[("a".into(), vec![(0.0, 0.1), (1.0, 0.9)])]).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains("<svg"));

        let p = vec![PredictionDistribution::one_hot(2, 0), PredictionDistribution::one_hot(2, 1)];
        let css = css_from_predictions(2, &p, &[0, 1], &p, &[0, 0]).unwrap();
        let path = dir.path().join("h.svg");
        css_heatmap(&path, "css", &css).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }
}
