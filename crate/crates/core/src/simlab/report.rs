//! Tidy CSV output, per-figure plot data and a minimal SVG line chart.

use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::{CellResult, EstimatorKind, McResult};

pub const RESULT_COLUMNS: [&str; 14] = [
    "dgp",
    "estimator",
    "n",
    "L",
    "W",
    "rep_count",
    "beta_mean",
    "beta_rmse",
    "fs_rmse",
    "coverage",
    "coverage_se",
    "failures",
    "beta_sd",
    "fs_rmse_sd",
];

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

fn sort_key(c: &CellResult) -> (String, EstimatorKind, usize, usize, usize) {
    let (l, w) = c.architecture.map_or((0, 0), |a| (a.depth, a.width));
    (c.dgp.clone(), c.estimator, l, w, c.n)
}

fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Domain(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Domain(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per cell, ordered by dgp, estimator, architecture, then `n`.
pub fn results_csv(result: &McResult) -> Result<String> {
    let mut cells: Vec<&CellResult> = result.cells.iter().collect();
    cells.sort_by_key(|c| sort_key(c));
    to_csv(
        &RESULT_COLUMNS,
        cells.into_iter().map(|c| {
            vec![
                c.dgp.clone(),
                c.estimator.name().to_string(),
                c.n.to_string(),
                c.architecture.map_or_else(|| "NA".into(), |a| a.depth.to_string()),
                c.architecture.map_or_else(|| "NA".into(), |a| a.width.to_string()),
                c.rep_count.to_string(),
                num(c.beta_mean),
                num(c.beta_rmse),
                opt(c.fs_rmse),
                num(c.coverage),
                num(c.coverage_se),
                c.failures.to_string(),
                num(c.beta_sd),
                opt(c.fs_rmse_sd),
            ]
        }),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    FirstStageRmse,
    BetaRmse,
    Coverage,
}

impl Metric {
    fn of(self, c: &CellResult) -> Option<f64> {
        let v = match self {
            Metric::FirstStageRmse => c.fs_rmse?,
            Metric::BetaRmse => c.beta_rmse,
            Metric::Coverage => c.coverage,
        };
        v.is_finite().then_some(v)
    }

    fn label(self) -> &'static str {
        match self {
            Metric::FirstStageRmse => "first-stage RMSE",
            Metric::BetaRmse => "beta RMSE",
            Metric::Coverage => "coverage",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FigureData {
    pub number: usize,
    pub title: String,
    /// `(n, series, value)` in series-then-n order.
    pub points: Vec<(usize, String, f64)>,
}

impl FigureData {
    pub fn file_name(&self) -> String {
        format!("fig{}.csv", self.number)
    }

    pub fn to_csv(&self) -> Result<String> {
        to_csv(
            &["x", "series", "value"],
            self.points.iter().map(|(x, s, v)| vec![x.to_string(), s.clone(), num(*v)]),
        )
    }
}

fn arch_label(c: &CellResult) -> String {
    let a = c.architecture.expect("network cell");
    format!("W={},L={}", a.width, a.depth)
}

fn collect(result: &McResult, metric: Metric, keep: impl Fn(&CellResult) -> Option<String>) -> Vec<(usize, String, f64)> {
    let mut cells: Vec<&CellResult> = result.cells.iter().collect();
    cells.sort_by_key(|c| sort_key(c));
    cells
        .into_iter()
        .filter_map(|c| Some((c.n, keep(c)?, metric.of(c)?)))
        .collect()
}

/// Plot data for each figure family present in `result`.
///
/// Odd figure numbers belong to the weak-instrument design and even ones to
/// the linear one. Estimator comparisons use the first architecture
/// listed for the network estimators.
pub fn figures(result: &McResult) -> Vec<FigureData> {
    let Some(first) = result.cells.first() else { return Vec::new() };
    let dgp = first.dgp.clone();
    let offset = usize::from(dgp != "dgp1");
    let primary = result.cells.iter().find_map(|c| c.architecture);
    let by_estimator = |c: &CellResult| {
        (c.architecture.is_none() || c.architecture == primary).then(|| c.estimator.name().to_string())
    };
    let by_arch = |c: &CellResult| (c.estimator == EstimatorKind::Dnn).then(|| arch_label(c));
    let families = [
        (1, Metric::FirstStageRmse, false),
        (3, Metric::FirstStageRmse, true),
        (5, Metric::BetaRmse, false),
        (7, Metric::BetaRmse, true),
        (9, Metric::Coverage, false),
        (11, Metric::Coverage, true),
    ];
    families
        .into_iter()
        .filter_map(|(base, metric, arch)| {
            let points = if arch { collect(result, metric, by_arch) } else { collect(result, metric, by_estimator) };
            if points.is_empty() {
                return None;
            }
            let split = if arch { " by (W, L)" } else { "" };
            Some(FigureData {
                number: base + offset,
                title: format!("{} {}{}", dgp, metric.label(), split),
                points,
            })
        })
        .collect()
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Renders figure CSV (`x,series,value`) as an SVG line chart. Depends only on its inputs.
pub fn render_svg(figure_csv: &str, title: &str) -> Result<String> {
    let mut reader = csv::Reader::from_reader(figure_csv.as_bytes());
    let bad = |m: String| Error::Domain(format!("figure csv: {m}"));
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", rec.len())));
        }
        let x: f64 = rec[0].parse().map_err(|_| bad(format!("x value {:?}", &rec[0])))?;
        let Ok(v) = rec[2].parse::<f64>() else { continue };
        match series.iter_mut().find(|(s, _)| s == &rec[1]) {
            Some((_, pts)) => pts.push((x, v)),
            None => series.push((rec[1].to_string(), vec![(x, v)])),
        }
    }
    let all = || series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if series.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 170.0, 40.0, 50.0);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{l} {t} V{b} H{r}" fill="none" stroke="black"/>"#,
        l = left,
        t = top,
        b = h - bottom,
        r = w - right
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(fx), h - bottom + 18.0, tick(fx));
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, py(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">n</text>"#, (left + w - right) / 2.0, h - 12.0);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, coords.join(" "));
        let ly = top + 16.0 * i as f64;
        let lx = w - right + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
