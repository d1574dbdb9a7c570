//! Static SVG figures: per-agent risk bars and training loss curves.

use std::fmt::Write as _;

use crate::cli::InferOutput;
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>"#,
        WIDTH / 2.0
    );
    let (x0, y0, y1) = (MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(out, r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#, WIDTH - MARGIN);
    let _ = writeln!(out, r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
}

/// Risk score of every candidate as a bar in its box colour, the unmasked
/// `Continue` confidence as a dashed line, and the attention-adjusted joint
/// risk as a diamond on pedestrians.
pub fn risk_bars(inference: &InferOutput) -> String {
    let mut out = String::new();
    header(&mut out, "Risk score per agent");
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let y_of = |v: f64| HEIGHT - MARGIN - v.clamp(0.0, 1.0) * plot_h;
    let n = inference.ranking.len().max(1) as f64;
    let slot = (WIDTH - 2.0 * MARGIN) / n;
    for (k, r) in inference.ranking.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let x = MARGIN + slot * (k as f64 + 0.2);
        let w = slot * 0.6;
        let y = y_of(r.s_roi);
        let _ = writeln!(
            out,
            r#"<rect class="bar" data-track="{}" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{:.2}" fill="{color}"/>"#,
            r.track_id,
            HEIGHT - MARGIN - y
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{} {}</text>"#,
            x + w / 2.0,
            HEIGHT - MARGIN + 16.0,
            r.class,
            r.track_id
        );
        if r.s_look.is_some() {
            let (cx, cy) = (x + w / 2.0, y_of(r.s_risk));
            let _ = writeln!(
                out,
                r#"<polygon class="adjusted" points="{:.2},{cy:.2} {cx:.2},{:.2} {:.2},{cy:.2} {cx:.2},{:.2}" fill="black"/>"#,
                cx - 6.0,
                cy - 6.0,
                cx + 6.0,
                cy + 6.0
            );
        }
    }
    let by = y_of(inference.intervention.baseline[0]);
    let _ = writeln!(
        out,
        r#"<line class="baseline" x1="{MARGIN}" y1="{by:.2}" x2="{}" y2="{by:.2}" stroke="gray" stroke-dasharray="6,4"/>"#,
        WIDTH - MARGIN
    );
    out.push_str("</svg>\n");
    out
}

/// One polyline per loss column of a training loss CSV.
pub fn loss_curves(csv_text: &str) -> Result<String> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::InvalidInput(format!("loss curve: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.len() < 2 {
        return Err(Error::InvalidInput("loss curve needs an iteration column and at least one loss".into()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("loss curve has no rows".into()));
    }
    let finite = |v: &f64| v.is_finite();
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let ys = rows.iter().flat_map(|r| r[1..].iter().copied()).filter(finite);
    let (x_lo, x_hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let y_hi = ys.fold(0.0f64, f64::max).max(1e-12);
    let span = (x_hi - x_lo).max(1e-12);
    let px = |x: f64| MARGIN + (x - x_lo) / span * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y / y_hi).clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    header(&mut out, "Training loss");
    for (c, name) in headers.iter().enumerate().skip(1) {
        let color = PALETTE[(c - 1) % PALETTE.len()];
        let points: Vec<String> = rows
            .iter()
            .filter(|r| r.get(c).is_some_and(finite))
            .map(|r| format!("{:.2},{:.2}", px(r[0]), py(r[c])))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="curve" data-column="{name}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let ly = MARGIN + 16.0 * c as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11" fill="{color}">{name}</text>"#,
            WIDTH - MARGIN - 90.0
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
