//! Minimal deterministic SVG line plots.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("nothing to plot")]
    Empty,
    #[error("non-positive value on a log axis")]
    LogDomain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Reference line y = c x^slope anchored at the first point of the first series.
#[derive(Clone, Debug, PartialEq)]
pub struct Guide {
    pub slope: f64,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    pub guide: Option<Guide>,
}

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn tf(v: f64, log: bool) -> Result<f64, PlotError> {
    if !log {
        return Ok(v);
    }
    if v > 0.0 {
        Ok(v.log10())
    } else {
        Err(PlotError::LogDomain)
    }
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo > 1e-12 {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64, log: bool) -> String {
    let x = if log { 10f64.powf(v) } else { v };
    if x != 0.0 && (x.abs() >= 1e4 || x.abs() < 1e-2) {
        format!("{x:.2e}")
    } else {
        format!("{x:.3}")
    }
}

impl Plot {
    pub fn render(&self) -> Result<String, PlotError> {
        let pts: Vec<(f64, f64)> = self.series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        if pts.is_empty() {
            return Err(PlotError::Empty);
        }
        let mut tp = Vec::with_capacity(pts.len());
        for (x, y) in &pts {
            tp.push((tf(*x, self.log_x)?, tf(*y, self.log_y)?));
        }
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in &tp {
            x0 = x0.min(*x);
            x1 = x1.max(*x);
            y0 = y0.min(*y);
            y1 = y1.max(*y);
        }
        // guide through the first finite point, in transformed coordinates
        let guide_line = self.guide.as_ref().map(|g| {
            let (ax, ay) = tp[0];
            let (gy0, gy1) = (ay + g.slope * (x0 - ax), ay + g.slope * (x1 - ax));
            (g, (x0, gy0), (x1, gy1))
        });
        if let Some((_, (_, a), (_, b))) = guide_line {
            y0 = y0.min(a).min(b);
            y1 = y1.max(a).max(b);
        }
        let (x0, x1) = span(x0, x1);
        let (y0, y1) = span(y0, y1);
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#);
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let _ = writeln!(s, r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#ccc"/>"##, px(xv), TOP, TOP + ph);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, px(xv), TOP + ph + 18.0, tick_label(xv, self.log_x));
            let _ = writeln!(s, r##"<line x1="{1:.2}" y1="{0:.2}" x2="{2:.2}" y2="{0:.2}" stroke="#ccc"/>"##, py(yv), LEFT, LEFT + pw);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py(yv) + 4.0, tick_label(yv, self.log_y));
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 16.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0:.2}" text-anchor="middle" transform="rotate(-90 18 {0:.2})">{1}</text>"#,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );

        let mut legend_y = TOP + 10.0;
        let lx = LEFT + pw + 12.0;
        for (i, ser) in self.series.iter().enumerate() {
            let c = COLORS[i % COLORS.len()];
            let mut path = String::new();
            for (x, y) in ser.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                let (x, y) = (px(tf(*x, self.log_x)?), py(tf(*y, self.log_y)?));
                let _ = write!(path, "{}{x:.2},{y:.2}", if path.is_empty() { "" } else { " " });
                let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{c}"/>"#);
            }
            if path.contains(' ') {
                let _ = writeln!(s, r#"<polyline points="{path}" fill="none" stroke="{c}" stroke-width="1.5"/>"#);
            }
            let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{legend_y:.2}" x2="{:.2}" y2="{legend_y:.2}" stroke="{c}" stroke-width="2"/>"#, lx + 20.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, legend_y + 4.0, esc(&ser.label));
            legend_y += 18.0;
        }
        if let Some((g, (ax, ay), (bx, by))) = guide_line {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="6,4"/>"#,
                px(ax),
                py(ay),
                px(bx),
                py(by)
            );
            let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{legend_y:.2}" x2="{:.2}" y2="{legend_y:.2}" stroke="gray" stroke-dasharray="6,4"/>"#, lx + 20.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{} (slope {:.4})</text>"#, lx + 26.0, legend_y + 4.0, esc(&g.label), g.slope);
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}
