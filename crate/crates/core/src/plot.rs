//! Minimal SVG emission for loss curves and partitioned histograms.

use std::fmt::Write;

use crate::evaluator::{Histogram, Partition};
use crate::losses::{self, DEFAULT_CLAMP_EPS};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn partition_color(p: Partition) -> &'static str {
    match p {
        Partition::CorrectEasy => "#4c9f70",
        Partition::CorrectHard => "#a6d96a",
        Partition::IncorrectEasy => "#f4a582",
        Partition::IncorrectHard => "#ca0020",
    }
}

fn marker_color(i: usize) -> &'static str {
    ["#1f4fd8", "#d81f1f"].get(i).copied().unwrap_or("#000000")
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - y / self.y_max * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str, extra_attrs: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}"{extra_attrs}>"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (f.px(f.x_min), f.px(f.x_max), f.py(0.0), f.py(f.y_max));
    let _ = writeln!(out, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(out, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/>"#);
    let _ = writeln!(out, "</g>");
    for i in 0..=5 {
        let xv = f.x_min + (f.x_max - f.x_min) * i as f64 / 5.0;
        let yv = f.y_max * i as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            f.px(xv),
            y0 + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            f.py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="14" height="10" fill="{color}"/>"#,
            y - 9.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="11">{}</text>"#,
            x + 20.0,
            escape(label)
        );
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Loss against ground-truth probability, one curve per focusing value.
pub fn focal_curves_svg(gammas: &[f64]) -> String {
    const POINTS: usize = 199;
    const Y_MAX: f64 = 5.0;
    let f = Frame {
        x_min: 0.0,
        x_max: 1.0,
        y_max: Y_MAX,
    };
    let mut out = String::new();
    header(&mut out, "Focal loss by focusing parameter", "");
    axes(&mut out, &f, "probability of ground-truth class", "loss");
    let mut entries = Vec::new();
    for (i, &gamma) in gammas.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for k in 1..=POINTS {
            let p = k as f64 / (POINTS + 1) as f64;
            let loss = losses::focal_from_prob(p, gamma, DEFAULT_CLAMP_EPS).min(Y_MAX);
            let _ = write!(pts, "{:.2},{:.2} ", f.px(p), f.py(loss));
        }
        let _ = writeln!(
            out,
            r#"<polyline data-gamma="{gamma}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.trim_end()
        );
        entries.push((format!("gamma = {gamma}"), color));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// Stacked partition bars with dashed vertical markers. The root element
/// carries the total count in `data-total`.
pub fn histogram_svg(h: &Histogram, title: &str, x_label: &str) -> String {
    let n = h.n_bins();
    let stack: Vec<u64> = (0..n)
        .map(|b| Partition::ALL.iter().map(|p| h.counts[p.index()][b]).sum())
        .collect();
    let y_max = stack.iter().copied().max().unwrap_or(0).max(1) as f64 * 1.05;
    let f = Frame {
        x_min: h.lower,
        x_max: h.upper,
        y_max,
    };
    let mut out = String::new();
    header(&mut out, title, &format!(r#" data-total="{}""#, h.total()));
    let w = h.bin_width();
    for b in 0..n {
        let mut base = 0.0;
        for p in Partition::ALL {
            let c = h.counts[p.index()][b];
            if c == 0 {
                continue;
            }
            let lo = h.lower + w * b as f64;
            let (x0, x1) = (f.px(lo), f.px(lo + w));
            let (y_top, y_bot) = (f.py(base + c as f64), f.py(base));
            let _ = writeln!(
                out,
                r#"<rect data-count="{c}" x="{x0:.2}" y="{y_top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                (x1 - x0).max(0.5),
                y_bot - y_top,
                partition_color(p)
            );
            base += c as f64;
        }
    }
    axes(&mut out, &f, x_label, "count");
    let mut entries: Vec<(String, &str)> = Partition::ALL
        .iter()
        .map(|&p| {
            (
                format!("{} ({})", p.name().replace('_', " "), h.partition_total(p)),
                partition_color(p),
            )
        })
        .collect();
    for (i, (name, value)) in h.markers.iter().enumerate() {
        if *value < h.lower || *value > h.upper {
            continue;
        }
        let x = f.px(*value);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{}" stroke-width="2" stroke-dasharray="6,4"/>"#,
            f.py(0.0),
            f.py(y_max),
            marker_color(i)
        );
        entries.push((name.clone(), marker_color(i)));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}
