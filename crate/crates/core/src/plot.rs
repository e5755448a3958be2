//! Static SVG figures: the per-iteration relaxed iterates of a solve and the
//! time-space diagram of a simulation.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::report::SolveReport;
use crate::sim::TrajectoryRow;

const WIDTH: u32 = 900;
const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];
const GREEN: RGBColor = RGBColor(46, 160, 67);
const RED: RGBColor = RGBColor(215, 48, 39);

fn draw_err<E: std::error::Error + Send + Sync>(e: DrawingAreaErrorKind<E>) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn padded(lo: f64, hi: f64) -> Range<f64> {
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span)..(hi + 0.05 * span)
}

/// Curves of the relaxed iterate over the tightening iterations.
///
/// `binary_cols[i]` lists the binary columns of agent `i`; when given, the
/// binaries get their own panel. The trace must carry per-agent iterates.
pub fn trace_svg(report: &SolveReport, binary_cols: Option<&[Vec<usize>]>) -> Result<String> {
    let entries: Vec<_> = report.trace.iter().filter(|e| !e.x.is_empty()).collect();
    if entries.is_empty() {
        return Err(Error::EmptyPlot(
            "the trace has no recorded iterates".into(),
        ));
    }
    let is_bin =
        |i: usize, j: usize| binary_cols.is_some_and(|b| b.get(i).is_some_and(|c| c.contains(&j)));
    let mut cont: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut bins: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (i, xi) in entries[0].x.iter().enumerate() {
        for j in 0..xi.len() {
            let pts = entries
                .iter()
                .filter_map(|e| e.x.get(i).and_then(|v| v.get(j)).map(|&v| (e.t as f64, v)))
                .collect();
            if is_bin(i, j) {
                bins.push((format!("agent {i} binary {j}"), pts));
            } else {
                cont.push((format!("agent {i} x{j}"), pts));
            }
        }
    }
    let t_hi = entries.last().map_or(1.0, |e| e.t as f64).max(1.0);
    let panels = if bins.is_empty() { 1 } else { 2 };
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, (WIDTH, 360 * panels)).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let areas = root.split_evenly((panels as usize, 1));
        let mut groups = vec![("relaxed continuous variables", &cont)];
        if panels == 2 {
            groups.push(("relaxed binaries", &bins));
        }
        for (area, (title, series)) in areas.iter().zip(groups) {
            let (lo, hi) = series
                .iter()
                .flat_map(|(_, p)| p.iter().map(|q| q.1))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                    (a.min(v), b.max(v))
                });
            let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
            let mut chart = ChartBuilder::on(area)
                .caption(title, ("sans-serif", 18))
                .margin(10)
                .x_label_area_size(35)
                .y_label_area_size(55)
                .build_cartesian_2d(0.0..t_hi, padded(lo, hi))
                .map_err(draw_err)?;
            chart
                .configure_mesh()
                .x_desc("iteration")
                .light_line_style(WHITE)
                .draw()
                .map_err(draw_err)?;
            for (k, (label, pts)) in series.iter().enumerate() {
                let color = PALETTE[k % PALETTE.len()];
                chart
                    .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                    .map_err(draw_err)?
                    .label(label.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
            }
            if series.len() <= 16 {
                chart
                    .configure_series_labels()
                    .background_style(WHITE.mix(0.8))
                    .border_style(BLACK)
                    .draw()
                    .map_err(draw_err)?;
            }
        }
        root.present().map_err(draw_err)?;
    }
    Ok(out)
}

/// Time-space diagram, one panel per lane. Vehicle trajectories are drawn as
/// lines (CAVs solid blue, HDVs orange) and the light state as a band along
/// the stop line.
pub fn trajectory_svg(rows: &[TrajectoryRow], stop_line: Option<f64>) -> Result<String> {
    let vehicle_rows = rows.iter().filter(|r| r.kind != "light" && r.p.is_some());
    let mut tracks: BTreeMap<(usize, u64), (String, Vec<(f64, f64)>)> = BTreeMap::new();
    for r in vehicle_rows {
        let id = r.id.unwrap_or(u64::MAX);
        tracks
            .entry((r.lane, id))
            .or_insert_with(|| (r.kind.clone(), Vec::new()))
            .1
            .push((r.time, r.p.unwrap_or(0.0)));
    }
    let mut lights: BTreeMap<usize, Vec<(f64, u8)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.kind == "light") {
        lights.entry(r.lane).or_default().push((r.time, r.light));
    }
    if tracks.is_empty() && lights.is_empty() {
        return Err(Error::EmptyPlot("the trajectory file has no rows".into()));
    }
    let lanes: Vec<usize> = tracks
        .keys()
        .map(|k| k.0)
        .chain(lights.keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let t_hi = rows.iter().map(|r| r.time).fold(0.0, f64::max).max(1.0);
    let p_hi = rows
        .iter()
        .filter_map(|r| r.p)
        .fold(stop_line.unwrap_or(1.0), f64::max);
    let psi = stop_line.unwrap_or(p_hi);

    let mut out = String::new();
    {
        let height = 260 * lanes.len() as u32;
        let root = SVGBackend::with_string(&mut out, (WIDTH, height)).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let areas = root.split_evenly((lanes.len(), 1));
        for (area, &lane) in areas.iter().zip(&lanes) {
            let mut chart = ChartBuilder::on(area)
                .caption(format!("lane {lane}"), ("sans-serif", 16))
                .margin(8)
                .x_label_area_size(30)
                .y_label_area_size(50)
                .build_cartesian_2d(0.0..t_hi, 0.0..p_hi * 1.02)
                .map_err(draw_err)?;
            chart
                .configure_mesh()
                .x_desc("time [s]")
                .y_desc("position [m]")
                .light_line_style(WHITE)
                .draw()
                .map_err(draw_err)?;
            if let Some(states) = lights.get(&lane) {
                let band = p_hi * 0.01;
                for w in states.windows(2) {
                    let color = if w[0].1 == 1 { GREEN } else { RED };
                    chart
                        .draw_series(std::iter::once(Rectangle::new(
                            [(w[0].0, psi - band), (w[1].0, psi + band)],
                            color.filled(),
                        )))
                        .map_err(draw_err)?;
                }
            }
            for ((_, _), (kind, pts)) in tracks.range((lane, 0)..=(lane, u64::MAX)) {
                let color = if kind == "cav" {
                    PALETTE[0]
                } else {
                    PALETTE[1]
                };
                chart
                    .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(1)))
                    .map_err(draw_err)?;
            }
        }
        root.present().map_err(draw_err)?;
    }
    Ok(out)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<TrajectoryRow>, _>>()?;
    Ok(rows)
}

/// Render `input` to SVG: a JSON solve report (convergence curves) or a
/// trajectory CSV (time-space diagram).
pub fn plot_file(input: &Path, binary_cols: Option<&[Vec<usize>]>) -> Result<String> {
    let text = std::fs::read_to_string(input)?;
    if text.trim().is_empty() {
        return Err(Error::EmptyPlot(format!("{} is empty", input.display())));
    }
    if text.trim_start().starts_with('{') {
        let report: SolveReport = serde_json::from_str(&text)?;
        trace_svg(&report, binary_cols)
    } else {
        let rows = read_trajectory_csv(input)?;
        trajectory_svg(&rows, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::example1;
    use crate::tighten::{solve_centralized, TightenConfig};

    #[test]
    fn example_trace_renders() {
        let r = solve_centralized(&example1(), &TightenConfig::default()).unwrap();
        let cols: Vec<Vec<usize>> = example1()
            .agents
            .iter()
            .map(|a| a.binary_cols.clone())
            .collect();
        let svg = trace_svg(&r, Some(&cols)).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("relaxed binaries"));
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let mut r = solve_centralized(&example1(), &TightenConfig::default()).unwrap();
        r.trace.clear();
        assert!(matches!(trace_svg(&r, None), Err(Error::EmptyPlot(_))));
        assert!(matches!(
            trajectory_svg(&[], None),
            Err(Error::EmptyPlot(_))
        ));
    }

    #[test]
    fn trajectory_renders_light_bands() {
        let mut rows = Vec::new();
        for k in 0..4 {
            rows.push(TrajectoryRow {
                step: k,
                time: k as f64 * 0.5,
                kind: "light".into(),
                id: None,
                lane: 0,
                light: u8::from(k < 2),
                p: None,
                v: None,
                u: None,
            });
            rows.push(TrajectoryRow {
                step: k,
                time: k as f64 * 0.5,
                kind: "hdv".into(),
                id: Some(3),
                lane: 0,
                light: 1,
                p: Some(10.0 * k as f64),
                v: Some(10.0),
                u: Some(0.0),
            });
        }
        let svg = trajectory_svg(&rows, Some(150.0)).unwrap();
        assert!(svg.contains("lane 0"));
        assert!(svg.contains("<rect"));
    }
}
