//! Small deterministic SVG line and bar charts.

use std::fmt::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChartKind {
    Line,
    Bar,
    GroupedBar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    /// For bar charts `x` is the category index.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_log: bool,
    pub y_log: bool,
    pub categories: Vec<String>,
    pub series: Vec<Series>,
    /// Dashed vertical reference lines `(x, label)`.
    pub vlines: Vec<(f64, String)>,
}

impl ChartSpec {
    pub fn line(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            kind: ChartKind::Line,
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_log: false,
            y_log: false,
            categories: Vec::new(),
            series: Vec::new(),
            vlines: Vec::new(),
        }
    }

    pub fn bars(title: &str, y_label: &str, categories: Vec<String>) -> Self {
        Self { kind: ChartKind::GroupedBar, categories, ..Self::line(title, "", y_label) }
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum ChartError {
    Empty(String),
    NonPositiveOnLogAxis(String),
    NonFinite(String),
}

impl std::fmt::Display for ChartError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChartError::Empty(t) => write!(f, "chart {t:?} has no data points"),
            ChartError::NonPositiveOnLogAxis(t) => write!(f, "chart {t:?} has a non-positive value on a log axis"),
            ChartError::NonFinite(t) => write!(f, "chart {t:?} has a non-finite value"),
        }
    }
}

impl std::error::Error for ChartError {}

const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 340.0;
const LEFT: f64 = 68.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if a >= 1e6 {
        format!("{}M", trim(v / 1e6))
    } else if a >= 1e4 {
        format!("{}k", trim(v / 1e3))
    } else if a >= 1e-3 {
        trim(v)
    } else {
        format!("{v:.0e}")
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(mut lo: f64, mut hi: f64, log: bool, pad: bool) -> Self {
        if log {
            let (a, b) = (lo.log10(), hi.log10());
            let (a, b) = if a == b { (a - 0.5, b + 0.5) } else { (a, b) };
            let m = if pad { 0.05 * (b - a) } else { 0.0 };
            return Axis { lo: a - m, hi: b + m, log };
        }
        if lo == hi {
            lo -= 1.0;
            hi += 1.0;
        }
        let m = if pad { 0.05 * (hi - lo) } else { 0.0 };
        Axis { lo: lo - m, hi: hi + m, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let mut t: Vec<f64> = (a..=b).map(|e| 10f64.powi(e)).collect();
            if t.len() < 3 {
                t = (self.lo.floor() as i32..=self.hi.ceil() as i32)
                    .flat_map(|e| [1.0, 2.0, 5.0].map(|m| m * 10f64.powi(e)))
                    .filter(|v| (self.lo..=self.hi).contains(&v.log10()))
                    .collect();
            }
            return t;
        }
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
        let first = (self.lo / step).ceil() as i64;
        let last = (self.hi / step).floor() as i64;
        (first..=last).map(|k| k as f64 * step).collect()
    }
}

fn validate(c: &ChartSpec) -> Result<(), ChartError> {
    if c.series.iter().all(|s| s.points.is_empty()) {
        return Err(ChartError::Empty(c.title.clone()));
    }
    for (x, y) in c.series.iter().flat_map(|s| s.points.iter()) {
        if !x.is_finite() || !y.is_finite() {
            return Err(ChartError::NonFinite(c.title.clone()));
        }
        if (c.x_log && c.kind == ChartKind::Line && *x <= 0.0) || (c.y_log && *y <= 0.0) {
            return Err(ChartError::NonPositiveOnLogAxis(c.title.clone()));
        }
    }
    for (x, _) in &c.vlines {
        if !x.is_finite() || (c.x_log && *x <= 0.0) {
            return Err(ChartError::NonPositiveOnLogAxis(c.title.clone()));
        }
    }
    Ok(())
}

fn render_panel(out: &mut String, c: &ChartSpec, ox: f64) {
    let pw = PANEL_W - LEFT - RIGHT;
    let ph = PANEL_H - TOP - BOTTOM;
    let px0 = ox + LEFT;
    let py0 = TOP;
    let ys: Vec<f64> = c.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let bars = c.kind != ChartKind::Line;
    let (mut ylo, yhi) = (ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if bars && !c.y_log {
        ylo = ylo.min(0.0);
    }
    let yaxis = Axis::new(ylo, yhi, c.y_log, true);
    let xaxis = if bars {
        Axis { lo: -0.5, hi: c.categories.len().max(1) as f64 - 0.5, log: false }
    } else {
        let xs = c.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).chain(c.vlines.iter().map(|v| v.0));
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        Axis::new(lo, hi, c.x_log, true)
    };
    let sx = |x: f64| px0 + xaxis.frac(x) * pw;
    let sy = |y: f64| py0 + (1.0 - yaxis.frac(y)) * ph;

    let _ = writeln!(out, r#"<g font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        px0 + pw / 2.0,
        escape(&c.title)
    );
    let _ = writeln!(out, r##"<rect x="{px0:.2}" y="{py0:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444"/>"##);
    for t in yaxis.ticks() {
        let y = sy(t);
        let _ = writeln!(out, r##"<line x1="{px0:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, px0 + pw);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, px0 - 4.0, y + 4.0, fmt_num(t));
    }
    if bars {
        for (i, cat) in c.categories.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(i as f64),
                py0 + ph + 16.0,
                escape(cat)
            );
        }
    } else {
        for t in xaxis.ticks() {
            let x = sx(t);
            let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{py0:.2}" x2="{x:.2}" y2="{:.2}" stroke="#eee"/>"##, py0 + ph);
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, py0 + ph + 16.0, fmt_num(t));
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        px0 + pw / 2.0,
        py0 + ph + 38.0,
        escape(&c.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate({:.2},{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        ox + 16.0,
        py0 + ph / 2.0,
        escape(&c.y_label)
    );

    for (x, label) in &c.vlines {
        let vx = sx(*x);
        let _ = writeln!(
            out,
            r##"<line x1="{vx:.2}" y1="{py0:.2}" x2="{vx:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="6 4"/>"##,
            py0 + ph
        );
        let _ = writeln!(out, r##"<text x="{:.2}" y="{:.2}" fill="#555">{}</text>"##, vx + 4.0, py0 + 14.0, escape(label));
    }

    let n_series = c.series.len().max(1) as f64;
    for (k, s) in c.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if bars {
            let slot = 0.8 / n_series;
            let base = if c.y_log { yaxis.lo } else { 0.0f64.clamp(yaxis.lo, yaxis.hi) };
            let y0 = if c.y_log { py0 + ph } else { sy(base) };
            for &(x, y) in &s.points {
                let left = sx(x - 0.4 + slot * k as f64);
                let width = sx(x - 0.4 + slot * (k as f64 + 1.0)) - left;
                let top = sy(y).min(y0);
                let height = (sy(y) - y0).abs();
                let _ = writeln!(
                    out,
                    r#"<rect x="{left:.2}" y="{top:.2}" width="{width:.2}" height="{height:.2}" fill="{color}"/>"#
                );
            }
        } else {
            if s.points.len() >= 2 {
                let d: Vec<String> = s
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, &(x, y))| format!("{}{:.2},{:.2}", if i == 0 { "M" } else { "L" }, sx(x), sy(y)))
                    .collect();
                let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, d.join(" "));
            }
            for &(x, y) in &s.points {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
            }
        }
        if c.series.len() < 2 {
            continue;
        }
        let ly = py0 + 14.0 + 15.0 * k as f64;
        let lx = px0 + pw - 150.0;
        let _ = writeln!(out, r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="4" fill="{color}"/>"#, ly - 6.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 16.0, escape(&s.name));
    }
    let _ = writeln!(out, "</g>");
}

/// Panels laid out left to right in one SVG document.
pub fn emit_svg(panels: &[ChartSpec]) -> Result<String, ChartError> {
    if panels.is_empty() {
        return Err(ChartError::Empty(String::new()));
    }
    for p in panels {
        validate(p)?;
    }
    let width = PANEL_W * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, PANEL_W * i as f64);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_series(points: Vec<(f64, f64)>) -> ChartSpec {
        let mut c = ChartSpec::line("t", "x", "y");
        c.series.push(Series { name: "s".into(), points });
        c
    }

    #[test]
    fn log_ticks_are_decades() {
        let a = Axis::new(10.0, 1e5, true, false);
        assert_eq!(a.ticks(), vec![10.0, 100.0, 1e3, 1e4, 1e5]);
    }

    #[test]
    fn linear_ticks_are_round() {
        let a = Axis::new(0.0, 97.0, false, false);
        assert_eq!(a.ticks(), vec![0.0, 20.0, 40.0, 60.0, 80.0]);
    }

    #[test]
    fn single_point_draws_marker_without_path() {
        let svg = emit_svg(&[one_series(vec![(3.0, 4.0)])]).unwrap();
        assert!(svg.contains("<circle"));
        assert!(!svg.contains("<path"));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(matches!(emit_svg(&[one_series(vec![])]), Err(ChartError::Empty(_))));
        let mut c = one_series(vec![(0.0, 1.0), (1.0, 2.0)]);
        c.x_log = true;
        assert!(matches!(emit_svg(&[c]), Err(ChartError::NonPositiveOnLogAxis(_))));
        assert!(matches!(emit_svg(&[one_series(vec![(f64::NAN, 1.0)])]), Err(ChartError::NonFinite(_))));
    }

    #[test]
    fn labels_are_escaped() {
        let mut c = one_series(vec![(1.0, 1.0), (2.0, 2.0)]);
        c.title = "a < b & c".into();
        assert!(emit_svg(&[c]).unwrap().contains("a &lt; b &amp; c"));
    }
}
