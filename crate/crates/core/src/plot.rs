//! Minimal static SVG charts. Each chart also renders the exact numbers it
//! plots as CSV so figures always have a machine-readable twin.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#555555"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Dashed,
    Points,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub style: Style,
}

impl Series {
    pub fn new(name: &str, x: Vec<f64>, y: Vec<f64>, style: Style) -> Self {
        assert_eq!(x.len(), y.len(), "series {name}: x and y lengths differ");
        Series {
            name: name.to_string(),
            x,
            y,
            style,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub series: Vec<Series>,
}

struct Axis {
    scale: Scale,
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn fit(scale: Scale, values: impl Iterator<Item = f64>, px_lo: f64, px_hi: f64) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| usable(*v, scale)) {
            let t = transform(v, scale);
            lo = lo.min(t);
            hi = hi.max(t);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 * lo.abs().max(1.0) {
            lo -= 0.5;
            hi += 0.5;
        }
        if scale == Scale::Log {
            lo = lo.floor();
            hi = hi.ceil();
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Axis {
            scale,
            lo,
            hi,
            px_lo,
            px_hi,
        }
    }

    fn px(&self, v: f64) -> f64 {
        let t = transform(v, self.scale);
        self.px_lo + (t - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        match self.scale {
            Scale::Log => {
                let span = (self.hi - self.lo).round() as i64;
                let step = (span / 8 + 1).max(1);
                (self.lo as i64..=self.hi as i64)
                    .step_by(step as usize)
                    .map(|k| (10f64.powi(k as i32), format!("1e{k}")))
                    .collect()
            }
            Scale::Linear => {
                let raw = (self.hi - self.lo) / 6.0;
                let mag = 10f64.powf(raw.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0]
                    .iter()
                    .map(|m| m * mag)
                    .find(|s| *s >= raw)
                    .unwrap_or(10.0 * mag);
                let digits = (-step.log10().floor()).max(0.0) as usize;
                let first = (self.lo / step).ceil() as i64;
                let last = (self.hi / step).floor() as i64;
                (first..=last)
                    .map(|k| {
                        let v = k as f64 * step;
                        (v, format!("{v:.digits$}"))
                    })
                    .collect()
            }
        }
    }
}

fn usable(v: f64, scale: Scale) -> bool {
    v.is_finite() && (scale == Scale::Linear || v > 0.0)
}

fn transform(v: f64, scale: Scale) -> f64 {
    match scale {
        Scale::Linear => v,
        Scale::Log => v.log10(),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
        escape(y_label)
    )
    .unwrap();
}

fn axes(out: &mut String, xa: &Axis, ya: &Axis) {
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    writeln!(
        out,
        r#"<rect x="{x0}" y="{y1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    )
    .unwrap();
    for (v, label) in xa.ticks() {
        let px = xa.px(v);
        writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{y0}" stroke="#e0e0e0"/><text x="{px:.2}" y="{:.1}" text-anchor="middle">{label}</text>"##,
            y0 + 16.0
        )
        .unwrap();
    }
    for (v, label) in ya.ticks() {
        let py = ya.px(v);
        writeln!(
            out,
            r##"<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="#e0e0e0"/><text x="{:.1}" y="{:.2}" text-anchor="end">{label}</text>"##,
            x0 - 6.0,
            py + 4.0
        )
        .unwrap();
    }
}

impl Figure {
    pub fn new(title: &str, x_label: &str, y_label: &str, x_scale: Scale, y_scale: Scale) -> Self {
        Figure {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            x_scale,
            y_scale,
            series: Vec::new(),
        }
    }

    pub fn with(mut self, series: Series) -> Self {
        self.series.push(series);
        self
    }

    pub fn to_svg(&self) -> String {
        let xa = Axis::fit(
            self.x_scale,
            self.series.iter().flat_map(|s| s.x.iter().copied()),
            LEFT,
            WIDTH - RIGHT,
        );
        let ya = Axis::fit(
            self.y_scale,
            self.series.iter().flat_map(|s| s.y.iter().copied()),
            HEIGHT - BOTTOM,
            TOP,
        );
        let mut out = String::new();
        frame(&mut out, &self.title, &self.x_label, &self.y_label);
        axes(&mut out, &xa, &ya);
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<(f64, f64)> = s
                .x
                .iter()
                .zip(&s.y)
                .filter(|(x, y)| usable(**x, self.x_scale) && usable(**y, self.y_scale))
                .map(|(&x, &y)| (xa.px(x), ya.px(y)))
                .collect();
            match s.style {
                Style::Points => {
                    for (px, py) in &pts {
                        writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3.5" fill="{color}"/>"#).unwrap();
                    }
                }
                Style::Line | Style::Dashed => {
                    let dash = if s.style == Style::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
                    let mut d = String::new();
                    for (i, (px, py)) in pts.iter().enumerate() {
                        write!(d, "{}{px:.2},{py:.2}", if i == 0 { "M" } else { " L" }).unwrap();
                    }
                    writeln!(
                        out,
                        r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.3"{dash}/>"#
                    )
                    .unwrap();
                }
            }
            let ly = TOP + 14.0 + 18.0 * k as f64;
            let lx = WIDTH - RIGHT + 12.0;
            writeln!(
                out,
                r#"<rect x="{lx}" y="{:.1}" width="14" height="4" fill="{color}"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
                ly - 5.0,
                lx + 20.0,
                escape(&s.name)
            )
            .unwrap();
        }
        out.push_str("</svg>\n");
        out
    }

    /// Long format: `series,x,y`, one row per plotted point.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["series", "x", "y"]).unwrap();
        for s in &self.series {
            for (x, y) in s.x.iter().zip(&s.y) {
                w.write_record([s.name.clone(), x.to_string(), y.to_string()]).unwrap();
            }
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Colour map over a rectilinear grid; `z[row][col]` sits at `(x[col], y[row])`.
#[derive(Debug, Clone)]
pub struct HeatMap {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub z_label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

fn colour(t: f64) -> String {
    // white → dark blue
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

impl HeatMap {
    pub fn to_svg(&self) -> String {
        let xa = Axis::fit(Scale::Linear, self.x.iter().copied(), LEFT, WIDTH - RIGHT);
        let ya = Axis::fit(Scale::Linear, self.y.iter().copied(), HEIGHT - BOTTOM, TOP);
        let zmax = self
            .z
            .iter()
            .flatten()
            .copied()
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        let mut out = String::new();
        frame(&mut out, &self.title, &self.x_label, &self.y_label);
        let half = |v: &[f64], k: usize| {
            if v.len() < 2 {
                0.5
            } else if k + 1 < v.len() {
                0.5 * (v[k + 1] - v[k])
            } else {
                0.5 * (v[k] - v[k - 1])
            }
        };
        for (r, row) in self.z.iter().enumerate() {
            let (yc, hy) = (self.y[r], half(&self.y, r));
            for (c, &v) in row.iter().enumerate() {
                if !(v > 0.0) {
                    continue;
                }
                let (xc, hx) = (self.x[c], half(&self.x, c));
                let (px0, px1) = (xa.px(xc - hx), xa.px(xc + hx));
                let (py0, py1) = (ya.px(yc + hy), ya.px(yc - hy));
                writeln!(
                    out,
                    r#"<rect x="{px0:.2}" y="{py0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    (px1 - px0).max(0.1),
                    (py1 - py0).max(0.1),
                    colour(if zmax > 0.0 { v / zmax } else { 0.0 })
                )
                .unwrap();
            }
        }
        axes(&mut out, &xa, &ya);
        let lx = WIDTH - RIGHT + 12.0;
        writeln!(
            out,
            r#"<text x="{lx}" y="{:.1}">{}</text><text x="{lx}" y="{:.1}">max {zmax:.3}</text>"#,
            TOP + 14.0,
            escape(&self.z_label),
            TOP + 32.0
        )
        .unwrap();
        out.push_str("</svg>\n");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["x", "y", "z"]).unwrap();
        for (r, row) in self.z.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                w.write_record([self.x[c].to_string(), self.y[r].to_string(), v.to_string()])
                    .unwrap();
            }
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}
