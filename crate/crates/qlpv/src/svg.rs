//! Minimal SVG line plots: stacked panels with axes, polylines, horizontal
//! reference lines and filled polygons.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#444444"];

#[derive(Clone, Debug, Default)]
pub struct Series {
    pub name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub dashed: bool,
    /// Draw markers instead of a line.
    pub points: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Panel {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub series: Vec<Series>,
    pub hlines: Vec<(String, f64)>,
    pub polygons: Vec<Vec<(f64, f64)>>,
    /// Same scale on both axes.
    pub equal_axes: bool,
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xmin) / (self.xmax - self.xmin) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.ymin) / (self.ymax - self.ymin) * self.h
    }
}

fn range(vals: impl Iterator<Item = f64>, pad: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + hi.abs()) {
        let pad = 0.5 * (1.0 + hi.abs()) * 1e-3;
        return (lo - pad, hi + pad);
    }
    let pad = pad * (hi - lo);
    (lo - pad, hi + pad)
}

/// Tick positions at multiples of 1, 2 or 5 times a power of ten.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn draw(out: &mut String, p: &Panel, x0: f64, y0: f64, w: f64, h: f64) {
    let xs = p.series.iter().flat_map(|s| s.xs.iter().copied()).chain(p.polygons.iter().flatten().map(|v| v.0));
    let ys = p
        .series
        .iter()
        .flat_map(|s| s.ys.iter().copied())
        .chain(p.polygons.iter().flatten().map(|v| v.1))
        .chain(p.hlines.iter().map(|l| l.1));
    let (mut xmin, mut xmax) = range(xs, if p.equal_axes || p.series.iter().any(|s| s.points) { 0.05 } else { 0.0 });
    let (mut ymin, mut ymax) = range(ys, 0.05);
    let (l, r, t, b) = (70.0, 20.0, 30.0, 45.0);
    let (iw, ih) = (w - l - r, h - t - b);
    if p.equal_axes {
        let sx = (xmax - xmin) / iw;
        let sy = (ymax - ymin) / ih;
        let s = sx.max(sy);
        let (cx, cy) = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax));
        (xmin, xmax) = (cx - 0.5 * s * iw, cx + 0.5 * s * iw);
        (ymin, ymax) = (cy - 0.5 * s * ih, cy + 0.5 * s * ih);
    }
    let f = Frame { x0: x0 + l, y0: y0 + t, w: iw, h: ih, xmin, xmax, ymin, ymax };
    let _ = writeln!(out, r##"<rect x="{}" y="{}" width="{iw}" height="{ih}" fill="white" stroke="#888"/>"##, f.x0, f.y0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{}</text>"#, f.x0 + iw / 2.0, y0 + 18.0, esc(&p.title));
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, f.x0 + iw / 2.0, y0 + h - 8.0, esc(&p.xlabel));
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
        x0 + 14.0,
        f.y0 + ih / 2.0,
        x0 + 14.0,
        f.y0 + ih / 2.0,
        esc(&p.ylabel)
    );
    for xv in ticks(xmin, xmax) {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" font-size="10" text-anchor="middle">{}</text>"#, f.px(xv), f.y0 + ih + 14.0, label(xv));
    }
    for yv in ticks(ymin, ymax) {
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#, f.x0 - 4.0, f.py(yv) + 3.0, label(yv));
    }
    for poly in &p.polygons {
        let pts: Vec<String> = poly.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
        let _ = writeln!(out, r##"<polygon points="{}" fill="#dde8f5" stroke="#1f4e79" stroke-width="1.5"/>"##, pts.join(" "));
    }
    for (k, (name, v)) in p.hlines.iter().enumerate() {
        let y = f.py(*v);
        let _ = writeln!(out, r##"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#000" stroke-dasharray="6,3"/>"##, f.x0, f.x0 + iw);
        if !name.is_empty() {
            let _ = writeln!(out, r#"<text x="{}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#, f.x0 + iw - 4.0, y - 3.0 - 10.0 * (k % 2) as f64, esc(name));
        }
    }
    for (k, s) in p.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> =
            s.xs.iter().zip(&s.ys).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(&x, &y)| (f.px(x), f.py(y))).collect();
        if s.points {
            for (x, y) in &pts {
                let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
            }
        } else if !pts.is_empty() {
            let d: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, d.join(" "));
        }
        let ly = f.y0 + 14.0 + 14.0 * k as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="10" height="3" fill="{color}"/>"#, f.x0 + 8.0, ly - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{ly}" font-size="11">{}</text>"#, f.x0 + 22.0, esc(&s.name));
    }
}

/// Panels stacked vertically, `height` pixels each.
pub fn render(panels: &[Panel], width: f64, height: f64) -> String {
    let total = height * panels.len() as f64;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total}" viewBox="0 0 {width} {total}" font-family="sans-serif">"#
    );
    out.push('\n');
    for (i, p) in panels.iter().enumerate() {
        draw(&mut out, p, 0.0, height * i as f64, width, height);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_every_element() {
        let p = Panel {
            title: String::from("a < b"),
            series: vec![Series { name: String::from("s"), xs: vec![0.0, 1.0], ys: vec![1.0, f64::NAN], ..Default::default() }],
            hlines: vec![(String::from("lim"), 0.5)],
            polygons: vec![vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]],
            equal_axes: true,
            ..Default::default()
        };
        let s = render(&[p.clone(), p], 400.0, 300.0);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert_eq!(s.matches("<polygon").count(), 2);
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.contains("a &lt; b"));
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(0.0, 50.0), vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0]);
        let t = ticks(-0.11, 0.11);
        assert!(t.len() >= 3 && t.iter().all(|v| ((v / 0.05).round() - v / 0.05).abs() < 1e-9));
    }
}
