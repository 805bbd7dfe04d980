//! Deterministic SVG line charts for sweep summaries.

use std::fmt::Write as _;

/// One plotted point: x, mean and 95% CI half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Compact tick label with at most four significant digits.
pub fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        let s = format!("{v:.2e}");
        let (m, e) = s.split_once('e').unwrap_or((&s, "0"));
        let m = m.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{e}");
    }
    let digits = (3 - a.log10().floor() as i32).clamp(0, 6) as usize;
    let s = format!("{v:.digits$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// About `n` round tick values spanning `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::EPSILON * hi.abs().max(1.0));
    let raw = span / n.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the chart; identical input gives identical bytes.
pub fn render_svg(chart: &Chart) -> String {
    let pts = || chart.series.iter().flat_map(|s| s.points.iter());
    let xs: Vec<f64> = pts().map(|p| p.x).collect();
    let log_x = !xs.is_empty() && xs.iter().all(|&x| x > 0.0) && {
        let (lo, hi) = min_max(xs.iter().copied());
        hi / lo >= 100.0
    };
    let tx = |x: f64| if log_x { x.log10() } else { x };

    let (mut x0, mut x1) = min_max(xs.iter().map(|&x| tx(x)));
    let (mut y0, mut y1) = min_max(pts().flat_map(|p| [p.y - p.ci, p.y + p.ci]));
    if xs.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    y0 = y0.min(0.0);
    if y1 - y0 <= 0.0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (x1 - x0);
    x0 -= pad;
    x1 += pad;
    y1 += 0.05 * (y1 - y0);

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (tx(x) - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&chart.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );

    for t in nice_ticks(y0, y1, 5) {
        let y = sy(t);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let mut xticks: Vec<f64> = xs.clone();
    xticks.sort_by(f64::total_cmp);
    xticks.dedup();
    for t in xticks {
        let x = sx(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 19.0,
            tick_label(t)
        );
    }
    let x_label = if log_x {
        format!("{} (log scale)", chart.x_label)
    } else {
        chart.x_label.clone()
    };
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 14.0,
        escape(&x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    );

    for (k, s) in chart.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut sorted = s.points.clone();
        sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
        let path: Vec<String> = sorted
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<g class="series" data-name="{}" stroke="{color}" fill="{color}">"#,
            escape(&s.name)
        );
        if path.len() > 1 {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        for p in &sorted {
            let (x, y) = (sx(p.x), sy(p.y));
            if p.ci > 0.0 {
                let (lo, hi) = (sy(p.y - p.ci), sy(p.y + p.ci));
                let _ = writeln!(
                    out,
                    r#"<path fill="none" d="M{x:.2},{lo:.2}V{hi:.2}M{:.2},{lo:.2}h8M{:.2},{hi:.2}h8"/>"#,
                    x - 4.0,
                    x - 4.0
                );
            }
            let _ = writeln!(out, r#"<circle class="point" cx="{x:.2}" cy="{y:.2}" r="3"/>"#);
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke-width="2"/><text x="{:.2}" y="{:.2}" stroke="none">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.name)
        );
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}
