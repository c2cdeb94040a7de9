//! Standalone SVG charts. Output depends only on the input data.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 60.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn tick(v: f64) -> String {
    format!("{v:.4}")
}

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn covering(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
            let pad = 0.5 * lo.abs().max(1.0);
            return Self { lo: lo - pad, hi: hi + pad };
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad }
    }

    fn frac(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = WIDTH,
        h = HEIGHT
    );
}

fn axes(out: &mut String, x_label: &str, y_label: &str, x: Option<&Axis>, y: &Axis) {
    let (x0, y0, x1, y1) = (LEFT, HEIGHT - BOTTOM, WIDTH - RIGHT, TOP);
    let _ = writeln!(out, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, fmt(x0), fmt(y0), fmt(x1), fmt(y0));
    let _ = writeln!(out, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, fmt(x0), fmt(y0), fmt(x0), fmt(y1));
    if let Some(x) = x {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="start">{}</text>"#, fmt(x0), fmt(y0 + 16.0), tick(x.lo));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, fmt(x1), fmt(y0 + 16.0), tick(x.hi));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, fmt(x0 - 6.0), fmt(y0), tick(y.lo));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, fmt(x0 - 6.0), fmt(y1 + 10.0), tick(y.hi));
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        fmt(0.5 * (x0 + x1)),
        fmt(HEIGHT - 16.0),
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        fmt(0.5 * (y0 + y1)),
        fmt(0.5 * (y0 + y1)),
        escape(y_label)
    );
}

/// Sample markers plus the fitted curve as a single polyline.
pub fn scatter_curve(points: &[(f64, f64)], curve: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let all = || points.iter().chain(curve);
    let xa = Axis::covering(all().map(|p| p.0));
    let ya = Axis::covering(all().map(|p| p.1));
    let px = |v: f64| LEFT + xa.frac(v) * (WIDTH - LEFT - RIGHT);
    let py = |v: f64| HEIGHT - BOTTOM - ya.frac(v) * (HEIGHT - TOP - BOTTOM);

    let mut out = String::new();
    header(&mut out);
    axes(&mut out, x_label, y_label, Some(&xa), &ya);
    let path: Vec<String> = curve.iter().map(|&(x, y)| format!("{},{}", fmt(px(x)), fmt(py(y)))).collect();
    let _ = writeln!(out, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, path.join(" "));
    for &(x, y) in points {
        let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="4" fill="black"/>"#, fmt(px(x)), fmt(py(y)));
    }
    out.push_str("</svg>\n");
    out
}

/// One bar per component, height proportional to its magnitude on a
/// `[0, 1]` scale. Negative components are drawn in a second colour.
pub fn bars(bars: &[(String, f64)], y_label: &str) -> String {
    let ya = Axis { lo: 0.0, hi: 1.0 };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let slot = plot_w / bars.len().max(1) as f64;

    let mut out = String::new();
    header(&mut out);
    axes(&mut out, "parameter", y_label, None, &ya);
    for (i, (name, v)) in bars.iter().enumerate() {
        let h = v.abs().min(1.0) * plot_h;
        let x = LEFT + slot * (i as f64 + 0.2);
        let fill = if *v < 0.0 { "indianred" } else { "steelblue" };
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
            fmt(x),
            fmt(HEIGHT - BOTTOM - h),
            fmt(0.6 * slot),
            fmt(h)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt(LEFT + slot * (i as f64 + 0.5)),
            fmt(HEIGHT - BOTTOM + 16.0),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
