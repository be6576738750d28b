//! Minimal hand-written SVG figures: matrix heatmaps, line charts and
//! range bars. Output is a pure function of the input (no timestamps), so
//! figures from identical runs are byte-identical.

use std::fmt::Write as _;

use crate::numerics::Matrix;

const CELL: f64 = 48.0;
const MARGIN: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear blue (low) → white (mid) → red (high) ramp over `[lo, hi]`.
fn color(value: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { ((value - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (59.0 + u * (255.0 - 59.0), 76.0 + u * (255.0 - 76.0), 192.0 + u * (255.0 - 192.0))
    } else {
        let u = (t - 0.5) / 0.5;
        (255.0 - u * (255.0 - 180.0), 255.0 - u * 255.0, 255.0 - u * (255.0 - 38.0))
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Heatmap with one annotated cell per matrix entry (two decimals). Rows
/// are prompts, columns responses. The color scale is recorded in the
/// `<metadata>` element.
pub fn heatmap(title: &str, m: &Matrix) -> String {
    let (rows, cols) = (m.rows(), m.cols());
    let lo = m.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = MARGIN * 2.0 + CELL * cols as f64;
    let height = MARGIN * 2.0 + CELL * rows as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#);
    let _ = writeln!(
        s,
        r#"<metadata>{{"color_scale":"linear blue-white-red","min":{lo},"max":{hi},"rows":"prompt","cols":"response"}}</metadata>"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" font-family="monospace" font-size="14">{}</text>"#, MARGIN - 12.0, escape(title));
    for r in 0..rows {
        for c in 0..cols {
            let v = m.get(r, c);
            let (x, y) = (MARGIN + CELL * c as f64, MARGIN + CELL * r as f64);
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#888" stroke-width="0.5"/>"##,
                color(v, lo, hi)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="monospace" font-size="11" text-anchor="middle">{v:.2}</text>"#,
                x + CELL / 2.0,
                y + CELL / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Polyline per series over a shared x axis (step index) and a `[y_lo, y_hi]`
/// y range.
pub fn line_chart(title: &str, series: &[(String, Vec<f64>)], y_lo: f64, y_hi: f64) -> String {
    let (w, h) = (640.0, 360.0);
    let (pw, ph) = (w - 2.0 * MARGIN - 120.0, h - 2.0 * MARGIN);
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(2);
    let x = |i: usize| MARGIN + pw * i as f64 / (n - 1) as f64;
    let y = |v: f64| MARGIN + ph * (1.0 - ((v - y_lo) / (y_hi - y_lo)).clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="24" font-family="monospace" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for (tick, label) in [(y_lo, y_lo), (y_hi, y_hi)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="10" text-anchor="end">{label:.2}</text>"#,
            MARGIN - 4.0,
            y(tick) + 3.0
        );
    }
    for (i, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = values.iter().enumerate().map(|(j, v)| format!("{:.2},{:.2}", x(j), y(*v))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.join(" "));
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-family="monospace" font-size="11" fill="{color}">{}</text>"#,
            MARGIN + pw + 8.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Horizontal bar per entry spanning `[min, max]` with a tick at `mean`.
pub fn range_bars(title: &str, entries: &[(String, f64, f64, f64)]) -> String {
    let (w, row) = (640.0, 28.0);
    let h = 2.0 * MARGIN + row * entries.len().max(1) as f64;
    let lo = entries.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let hi = entries.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0) };
    let left = MARGIN + 140.0;
    let pw = w - left - MARGIN;
    let x = |v: f64| left + pw * (v - lo) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<metadata>{{"axis_min":{lo},"axis_max":{hi}}}</metadata>"#);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="24" font-family="monospace" font-size="14">{}</text>"#, escape(title));
    for (i, (name, min, max, mean)) in entries.iter().enumerate() {
        let yc = MARGIN + row * i as f64 + row / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="11" text-anchor="end">{}</text>"#,
            left - 6.0,
            yc + 4.0,
            escape(name)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="10" fill="#9ecae1" stroke="#3182bd"/>"##,
            x(*min),
            yc - 5.0,
            (x(*max) - x(*min)).max(1.0)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" x2="{0:.2}" y1="{1:.2}" y2="{2:.2}" stroke="#08306b" stroke-width="2"/>"##,
            x(*mean),
            yc - 8.0,
            yc + 8.0
        );
    }
    s.push_str("</svg>\n");
    s
}
