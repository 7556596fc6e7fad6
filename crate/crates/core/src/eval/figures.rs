//! Standalone SVG figures. Every data bin gets its own element carrying
//! its edges and values as attributes, so the files can be checked
//! structurally as well as viewed.

use std::fmt::Write as _;

use super::report::{CurveBin, Histogram};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

struct Frame {
    x0: f64,
    x1: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        H - BOTTOM - v / self.y1 * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(s: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<text class="title" x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text class="x-label" x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text class="y-label" x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    let _ = writeln!(
        s,
        r#"<path class="axes" d="M{LEFT},{TOP} V{} H{}" fill="none" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT
    );
}

fn y_ticks(s: &mut String, f: &Frame, fmt: impl Fn(f64) -> String) {
    for i in 0..=4 {
        let v = f.y1 * i as f64 / 4.0;
        let y = f.y(v);
        let _ = writeln!(
            s,
            r#"<text class="y-tick" x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            fmt(v)
        );
    }
}

fn x_tick(s: &mut String, f: &Frame, v: f64) {
    let _ = writeln!(
        s,
        r#"<text class="x-tick" x="{:.2}" y="{}" text-anchor="middle">{v}</text>"#,
        f.x(v),
        H - BOTTOM + 16.0
    );
}

/// Observed 7-day mortality per difference bin with Wilson intervals;
/// low-support bins are drawn hollow.
pub fn curve_svg(curve: &[CurveBin]) -> String {
    let mut s = String::new();
    open(
        &mut s,
        "Observed 7-day mortality by mean flow difference",
        "Mean recommended - logged flow (L/min)",
        "7-day mortality",
    );
    let x0 = curve.iter().map(|b| b.low).fold(f64::INFINITY, f64::min);
    let x1 = curve.iter().map(|b| b.high).fold(f64::NEG_INFINITY, f64::max);
    let top = curve.iter().map(|b| b.observed_ci.1).fold(0.0, f64::max);
    let f = Frame {
        x0: if x0.is_finite() { x0 } else { -1.0 },
        x1: if x1.is_finite() { x1 } else { 1.0 },
        y1: if top > 0.0 { top } else { 1.0 },
    };
    y_ticks(&mut s, &f, |v| format!("{v:.3}"));
    let points: Vec<String> = curve
        .iter()
        .map(|b| format!("{:.2},{:.2}", f.x(b.center), f.y(b.observed)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline class="curve" points="{}" fill="none" stroke="{}"/>"##,
        points.join(" "),
        COLORS[0]
    );
    for b in curve {
        x_tick(&mut s, &f, b.low);
        let (cx, cy) = (f.x(b.center), f.y(b.observed));
        let _ = writeln!(
            s,
            r#"<line class="ci" x1="{cx:.2}" x2="{cx:.2}" y1="{:.2}" y2="{:.2}" stroke="{}"/>"#,
            f.y(b.observed_ci.0),
            f.y(b.observed_ci.1),
            COLORS[0]
        );
        let _ = writeln!(
            s,
            r#"<circle class="bin" cx="{cx:.2}" cy="{cy:.2}" r="4" fill="{}" stroke="{}" data-center="{}" data-low="{}" data-high="{}" data-count="{}" data-observed="{}" data-estimated="{}" data-low-support="{}"/>"#,
            if b.low_support { "white" } else { COLORS[0] },
            COLORS[0],
            b.center,
            b.low,
            b.high,
            b.count,
            b.observed,
            b.estimated,
            b.low_support
        );
    }
    if let Some(last) = curve.last() {
        x_tick(&mut s, &f, last.high);
    }
    s.push_str("</svg>\n");
    s
}

/// Side-by-side bars for each series, one group per bin.
pub fn histogram_svg(title: &str, x_label: &str, series: &[(&str, &Histogram)]) -> String {
    let mut s = String::new();
    open(&mut s, title, x_label, "Decision points");
    let base = series[0].1;
    let top = series.iter().flat_map(|(_, h)| h.counts.iter()).copied().max().unwrap_or(0);
    let f = Frame {
        x0: base.low,
        x1: base.high,
        y1: top.max(1) as f64,
    };
    y_ticks(&mut s, &f, |v| format!("{v:.0}"));
    let m = series.len() as f64;
    for (k, _) in base.counts.iter().enumerate() {
        let (lo, hi) = base.edges(k);
        x_tick(&mut s, &f, lo);
        let bar = (f.x(hi) - f.x(lo)) / m;
        for (i, (name, h)) in series.iter().enumerate() {
            let c = h.counts[k];
            let y = f.y(c as f64);
            let _ = writeln!(
                s,
                r#"<rect class="bin" x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}" data-series="{}" data-low="{lo}" data-high="{hi}" data-count="{c}"/>"#,
                f.x(lo) + i as f64 * bar,
                bar.max(0.0),
                (H - BOTTOM - y).max(0.0),
                COLORS[i % COLORS.len()],
                escape(name)
            );
        }
    }
    x_tick(&mut s, &f, base.high);
    for (i, (name, _)) in series.iter().enumerate() {
        let y = TOP + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect class="legend" x="{}" y="{}" width="10" height="10" fill="{}"/><text class="legend" x="{}" y="{}">{}</text>"#,
            W - RIGHT - 120.0,
            y,
            COLORS[i % COLORS.len()],
            W - RIGHT - 105.0,
            y + 9.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
