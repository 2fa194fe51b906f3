//! Result files: JSON and CSV tables, boxplot data, and static SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::{BenchError, BoxplotEntry, ExternalRow, Scenario, ScenarioResult, Summary, SweepCurve};

fn write_file(path: PathBuf, contents: &str) -> Result<PathBuf, BenchError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, contents)?;
    Ok(path)
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, BenchError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line per (model, repetition).
pub fn scenario_csv(result: &ScenarioResult) -> Result<String, BenchError> {
    let mut rows = Vec::new();
    for r in &result.results {
        for (i, ((rmse, seed), size)) in r.rmses.iter().zip(&r.seeds).zip(&r.train_sizes).enumerate() {
            rows.push(vec![
                r.model.label().to_string(),
                format!("{:?}", result.scenario),
                i.to_string(),
                seed.to_string(),
                size.to_string(),
                rmse.to_string(),
            ]);
        }
    }
    csv_string(&["model", "scenario", "repetition", "seed", "train_size", "rmse"], rows)
}

/// Writes `<dir>/<name>/<scenario>.json` and `.csv`.
pub fn write_scenario(dir: &Path, result: &ScenarioResult) -> Result<Vec<PathBuf>, BenchError> {
    let base = dir.join(&result.spec.name).join(result.scenario.file_stem());
    Ok(vec![
        write_file(base.with_extension("json"), &json(result)?)?,
        write_file(base.with_extension("csv"), &scenario_csv(result)?)?,
    ])
}

pub fn summary_csv(summary: &Summary) -> Result<String, BenchError> {
    let rows = summary
        .rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                if r.external { "external" } else { "internal" }.to_string(),
                opt(r.scenario1.as_ref().map(|m| m.mean)),
                opt(r.scenario1.as_ref().map(|m| m.median)),
                opt(r.scenario2.as_ref().map(|m| m.mean)),
                opt(r.scenario2.as_ref().map(|m| m.median)),
            ]
        })
        .collect();
    csv_string(
        &["model", "source", "scenario1_mean", "scenario1_median", "scenario2_mean", "scenario2_median"],
        rows,
    )
}

/// Writes the comparison table, `boxplot.json` and one SVG per scenario.
pub fn write_summary(dir: &Path, summary: &Summary) -> Result<Vec<PathBuf>, BenchError> {
    let base = dir.join(&summary.name);
    let mut out = vec![
        write_file(base.join("summary.json"), &json(summary)?)?,
        write_file(base.join("summary.csv"), &summary_csv(summary)?)?,
        write_file(base.join("boxplot.json"), &json(&summary.boxplots)?)?,
    ];
    for scenario in [Scenario::I, Scenario::II] {
        let entries: Vec<&BoxplotEntry> = summary.boxplots.iter().filter(|b| b.scenario == scenario).collect();
        if entries.is_empty() {
            continue;
        }
        let title = format!("RMSE, {} ({scenario:?})", summary.name);
        let file = format!("boxplot_{}.svg", scenario.file_stem());
        out.push(write_file(base.join(file), &render_boxplot_svg(&title, &entries))?);
    }
    Ok(out)
}

pub fn sweep_csv(curve: &SweepCurve) -> Result<String, BenchError> {
    let mut rows = Vec::new();
    for p in &curve.points {
        if let Some(msg) = &p.failed {
            rows.push(vec![p.count.to_string(), String::new(), String::new(), String::new(), msg.clone()]);
        }
        for r in &p.results {
            rows.push(vec![
                p.count.to_string(),
                r.model.label().to_string(),
                r.mean.to_string(),
                r.median.to_string(),
                String::new(),
            ]);
        }
    }
    csv_string(&["synthetic_count", "model", "mean_rmse", "median_rmse", "failure"], rows)
}

pub fn write_sweep(dir: &Path, curve: &SweepCurve) -> Result<Vec<PathBuf>, BenchError> {
    let base = dir.join(&curve.spec.name);
    Ok(vec![
        write_file(base.join("sweep.json"), &json(curve)?)?,
        write_file(base.join("sweep.csv"), &sweep_csv(curve)?)?,
        write_file(base.join("sweep.svg"), &render_sweep_svg(curve))?,
    ])
}

/// Reads a JSON list of externally computed table rows.
pub fn read_external_rows<R: Read>(input: R) -> Result<Vec<ExternalRow>, BenchError> {
    Ok(serde_json::from_reader(input)?)
}

const W: f64 = 760.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 90.0;

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>) -> Axis {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let pad = ((hi - lo) * 0.05).max(1e-9);
        Axis { lo: lo - pad, hi: hi + pad }
    }

    fn y(&self, v: f64) -> f64 {
        TOP + (H - TOP - BOTTOM) * (self.hi - v) / (self.hi - self.lo)
    }

    fn ticks(&self, svg: &mut String) {
        for k in 0..=4 {
            let v = self.lo + (self.hi - self.lo) * k as f64 / 4.0;
            let y = self.y(v);
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.4}</text>"##,
                W - RIGHT,
                LEFT - 6.0,
                y + 4.0
            );
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

pub fn render_boxplot_svg(title: &str, entries: &[&BoxplotEntry]) -> String {
    let axis = Axis::new(entries.iter().flat_map(|e| e.values.iter().copied()));
    let mut svg = header(title);
    axis.ticks(&mut svg);
    let slot = (W - LEFT - RIGHT) / entries.len().max(1) as f64;
    for (i, e) in entries.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let half = (slot * 0.3).min(40.0);
        let s = &e.stats;
        let (yq1, yq3, ymed) = (axis.y(s.q1), axis.y(s.q3), axis.y(s.median));
        let _ = writeln!(
            svg,
            r##"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{yq3:.1}" stroke="black"/><line x1="{cx:.1}" y1="{yq1:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"##,
            axis.y(s.whisker_high),
            axis.y(s.whisker_low)
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{:.1}" y="{yq3:.1}" width="{:.1}" height="{:.1}" fill="#9ecae1" stroke="black"/><line x1="{:.1}" y1="{ymed:.1}" x2="{:.1}" y2="{ymed:.1}" stroke="#c00" stroke-width="2"/>"##,
            cx - half,
            2.0 * half,
            (yq1 - yq3).max(0.5),
            cx - half,
            cx + half
        );
        for &o in &s.outliers {
            let _ = writeln!(svg, r##"<circle cx="{cx:.1}" cy="{:.1}" r="3" fill="none" stroke="black"/>"##, axis.y(o));
        }
        let _ = writeln!(
            svg,
            r##"<text x="{cx:.1}" y="{:.1}" font-size="11" text-anchor="end" transform="rotate(-30 {cx:.1} {:.1})">{}</text>"##,
            H - BOTTOM + 16.0,
            H - BOTTOM + 16.0,
            escape(&e.model)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// Mean RMSE against synthetic count, one line per policy; each policy's
/// argmin is ringed.
pub fn render_sweep_svg(curve: &SweepCurve) -> String {
    let axis = Axis::new(curve.points.iter().flat_map(|p| p.results.iter().map(|r| r.mean)));
    let mut svg = header(&format!("Mean RMSE vs synthetic rows, {}", curve.spec.name));
    axis.ticks(&mut svg);
    let max_c = curve.points.iter().map(|p| p.count).max().unwrap_or(1).max(1) as f64;
    let x = |c: usize| LEFT + (W - LEFT - RIGHT) * c as f64 / max_c;
    for p in &curve.points {
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"##,
            x(p.count),
            H - BOTTOM + 16.0,
            p.count
        );
    }
    let models: Vec<_> = curve.argmin.keys().copied().collect();
    for (k, m) in models.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<(usize, f64)> = curve.points.iter().filter_map(|p| p.mean(*m).map(|v| (p.count, v))).collect();
        let path: Vec<String> = pts.iter().map(|(c, v)| format!("{:.1},{:.1}", x(*c), axis.y(*v))).collect();
        let _ = writeln!(svg, r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"##, path.join(" "));
        for (c, v) in &pts {
            let r = if curve.argmin.get(m) == Some(c) { 6 } else { 3 };
            let _ = writeln!(
                svg,
                r##"<circle cx="{:.1}" cy="{:.1}" r="{r}" fill="{color}" fill-opacity="{}" stroke="{color}"/>"##,
                x(*c),
                axis.y(*v),
                if r == 6 { "0.2" } else { "1" }
            );
        }
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-size="12" fill="{color}">{}</text>"##,
            LEFT + 10.0,
            TOP + 16.0 * (k as f64 + 1.0),
            escape(m.label())
        );
    }
    svg.push_str("</svg>\n");
    svg
}
