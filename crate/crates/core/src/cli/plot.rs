//! Static SVG rendering of reward and loss curves.

use std::collections::BTreeMap;
use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("{file} line {line}: {message}")]
    BadRow { file: String, line: usize, message: String },
    #[error("{0} holds no plottable rows")]
    Empty(String),
}

/// Curves extracted from one metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(iteration, return)`: evaluation rows when present, else collected episodes.
    pub reward: Vec<(f64, f64)>,
    /// `(iteration, mean world-model loss)`.
    pub loss: Vec<(f64, f64)>,
}

impl Series {
    pub fn from_metrics(name: &str, text: &str) -> Result<Self, PlotError> {
        let mut eval = Vec::new();
        let mut collect = Vec::new();
        let mut loss = Vec::new();
        let mut seed = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| PlotError::BadRow { file: name.into(), line: n + 1, message };
            let row: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let it = row["iteration"].as_f64().ok_or_else(|| bad("missing iteration".into()))?;
            seed = seed.or(row["seed"].as_u64());
            match row["phase"].as_str() {
                Some("eval") => eval.extend(row["eval_return"].as_f64().map(|r| (it, r))),
                Some("collect") => collect.extend(row["losses"]["return"].as_f64().map(|r| (it, r))),
                Some("world_model") => loss.extend(row["losses"]["loss_mean"].as_f64().map(|l| (it, l))),
                Some(_) => {}
                None => return Err(bad("missing phase".into())),
            }
        }
        let reward = if eval.is_empty() { collect } else { eval };
        if reward.is_empty() && loss.is_empty() {
            return Err(PlotError::Empty(name.into()));
        }
        let label = match seed {
            Some(s) => format!("seed {s} ({name})"),
            None => name.into(),
        };
        Ok(Self { label, reward, loss })
    }
}

const WIDTH: f64 = 720.0;
const PANEL: f64 = 260.0;
const MARGIN: f64 = 60.0;
const COLOURS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Option<[f64; 4]> {
    let mut b: Option<[f64; 4]> = None;
    for &(x, y) in points.filter(|p| p.0.is_finite() && p.1.is_finite()) {
        let c = b.get_or_insert([x, x, y, y]);
        *c = [c[0].min(x), c[1].max(x), c[2].min(y), c[3].max(y)];
    }
    b.map(|[x0, x1, y0, y1]| {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        [x0, x1, y0, y1]
    })
}

/// Mean and standard deviation across series at every shared x.
fn band(curves: &[&[(f64, f64)]]) -> Vec<(f64, f64, f64)> {
    let mut at: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for c in curves {
        for &(x, y) in c.iter().filter(|p| p.1.is_finite()) {
            at.entry(x.to_bits()).or_default().push(y);
        }
    }
    at.into_iter()
        .filter(|(_, ys)| ys.len() == curves.len())
        .map(|(x, ys)| {
            let n = ys.len() as f64;
            let m = ys.iter().sum::<f64>() / n;
            let sd = (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n).sqrt();
            (f64::from_bits(x), m, sd)
        })
        .collect()
}

fn panel(svg: &mut String, top: f64, title: &str, curves: &[&[(f64, f64)]], labels: &[&str]) {
    let h = PANEL - MARGIN;
    let w = WIDTH - 2.0 * MARGIN;
    let _ = writeln!(svg, r#"<g class="panel"><text x="{}" y="{}" font-size="14">{}</text>"#, MARGIN, top + 18.0, escape(title));
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{}" width="{w}" height="{h}" fill="none" stroke="#888"/>"##,
        top + 30.0
    );
    let Some([x0, x1, y0, y1]) = bounds(curves.iter().flat_map(|c| c.iter())) else {
        let _ = writeln!(svg, "</g>");
        return;
    };
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * w;
    let py = |y: f64| top + 30.0 + h - (y - y0) / (y1 - y0) * h;
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{}" font-size="10">{y1:.3}</text>"#, top + 28.0);
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{}" font-size="10">{y0:.3}</text>"#, top + 42.0 + h);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">iteration {x1}</text>"#, MARGIN + w, top + 42.0 + h);

    if curves.len() > 1 {
        let b = band(curves);
        if !b.is_empty() {
            let upper = b.iter().map(|(x, m, s)| format!("{:.2},{:.2}", px(*x), py(m + s)));
            let lower = b.iter().rev().map(|(x, m, s)| format!("{:.2},{:.2}", px(*x), py(m - s)));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(svg, r##"<polygon class="band" points="{}" fill="#000" fill-opacity="0.12"/>"##, pts.join(" "));
            let mean: Vec<String> = b.iter().map(|(x, m, _)| format!("{:.2},{:.2}", px(*x), py(*m))).collect();
            let _ = writeln!(svg, r##"<polyline class="mean" points="{}" fill="none" stroke="#000" stroke-width="2"/>"##, mean.join(" "));
        }
    }
    for (k, c) in curves.iter().enumerate() {
        let pts: Vec<String> = c
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-label="{}" points="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
            escape(labels[k]),
            pts.join(" "),
            COLOURS[k % COLOURS.len()]
        );
    }
    let _ = writeln!(svg, "</g>");
}

/// Two stacked panels (return, world-model loss) with one line per series
/// and, for several series, their mean with a ±1 sd band.
pub fn render_svg(series: &[Series]) -> String {
    let legend = 20.0 * series.len() as f64;
    let height = 2.0 * PANEL + 40.0 + legend;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    let reward: Vec<&[(f64, f64)]> = series.iter().map(|s| s.reward.as_slice()).collect();
    let loss: Vec<&[(f64, f64)]> = series.iter().map(|s| s.loss.as_slice()).collect();
    panel(&mut svg, 0.0, "return", &reward, &labels);
    panel(&mut svg, PANEL + 20.0, "world-model loss", &loss, &labels);
    for (k, l) in labels.iter().enumerate() {
        let y = 2.0 * PANEL + 50.0 + 20.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><rect x="{MARGIN}" y="{}" width="14" height="4" fill="{}"/><text x="{}" y="{}" font-size="12">{}</text></g>"#,
            y - 4.0,
            COLOURS[k % COLOURS.len()],
            MARGIN + 20.0,
            y,
            escape(l)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
