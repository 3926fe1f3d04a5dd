//! Static SVG plots rendered from report CSV files.

use std::fmt::Write;
use std::path::Path;

use gcstein::report::Table;

use crate::error::CliError;

const WIDTH: f64 = 640.0;
const MARGIN_LEFT: f64 = 220.0;
const MARGIN: f64 = 40.0;
const ROW: f64 = 18.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn read(path: &Path) -> Result<Table, CliError> {
    Ok(Table::read_file(path)?)
}

fn col(t: &Table, name: &str, path: &Path) -> Result<usize, CliError> {
    t.column(name).ok_or_else(|| CliError::Read {
        path: path.display().to_string(),
        message: format!("missing column `{name}`"),
    })
}

fn parse(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

/// Forest plot of `(estimate - target) / half_width` with unit bars, so a
/// bar crossing zero marks an estimate whose interval covers its target.
pub fn forest(title: &str, rows: &[(String, f64, f64, f64)]) -> String {
    let limit = 4.0;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN;
    let height = 2.0 * MARGIN + ROW * rows.len().max(1) as f64;
    let x = |z: f64| MARGIN_LEFT + plot_w * (z.clamp(-limit, limit) + limit) / (2.0 * limit);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="13">{}</text>"#,
        MARGIN_LEFT,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        x(0.0),
        MARGIN - 8.0,
        height - MARGIN + 4.0
    );
    for (i, (label, est, hw, target)) in rows.iter().enumerate() {
        let y = MARGIN + ROW * (i as f64 + 0.5);
        let z = if *hw > 0.0 {
            (est - target) / hw
        } else if est == target {
            0.0
        } else {
            limit * (est - target).signum()
        };
        let color = if z.abs() <= 1.0 { COLORS[0] } else { COLORS[1] };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 8.0,
            y + 4.0,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}"/>"#,
            x(z - 1.0),
            x(z + 1.0)
        );
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#,
            x(z)
        );
    }
    for tick in [-4.0, -2.0, 0.0, 2.0, 4.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{tick}</text>"#,
            x(tick),
            height - MARGIN + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">(estimate - target) / half-width</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        height - 6.0
    );
    s.push_str("</svg>\n");
    s
}

/// Log-log line plot of several `(x, y)` series.
pub fn loglog(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let (w, h) = (WIDTH, 420.0);
    let left = 70.0;
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.1.iter().copied())
        .filter(|(a, b)| *a > 0.0 && *b > 0.0)
        .collect();
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let lo = pts
            .iter()
            .map(f)
            .fold(f64::INFINITY, f64::min)
            .log10()
            .floor();
        let hi = pts
            .iter()
            .map(f)
            .fold(f64::NEG_INFINITY, f64::max)
            .log10()
            .ceil();
        if lo.is_finite() && hi.is_finite() {
            (lo, hi.max(lo + 1.0))
        } else {
            (-1.0, 0.0)
        }
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = bounds(|p| p.1);
    let px = |v: f64| left + (w - left - MARGIN) * (v.log10() - x0) / (x1 - x0);
    let py = |v: f64| h - MARGIN - (h - 2.0 * MARGIN) * (v.log10() - y0) / (y1 - y0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="20" font-size="13">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        w - left - MARGIN,
        h - 2.0 * MARGIN
    );
    for e in (x0 as i32)..=(x1 as i32) {
        let v = 10f64.powi(e);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">1e{e}</text>"#,
            px(v),
            h - MARGIN + 16.0
        );
    }
    for e in (y0 as i32)..=(y1 as i32) {
        let v = 10f64.powi(e);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"#,
            left - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (left + w - MARGIN) / 2.0,
        h - 6.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (k, (name, data)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = data
            .iter()
            .filter(|(a, b)| *a > 0.0 && *b > 0.0)
            .map(|(a, b)| format!("{:.2},{:.2}", px(*a), py(*b)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" points="{}"/>"#,
            path.join(" ")
        );
        for p in &path {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = MARGIN + 16.0 + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}">{}</text>"#,
            left + 10.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Forest plot of an identity table.
pub fn identities_svg(csv: &Path) -> Result<String, CliError> {
    let t = read(csv)?;
    let (id, est, hw, target) = (
        col(&t, "identity_id", csv)?,
        col(&t, "estimate", csv)?,
        col(&t, "half_width", csv)?,
        col(&t, "target", csv)?,
    );
    let rows: Vec<_> = t
        .rows
        .iter()
        .map(|r| {
            (
                r[id].clone(),
                parse(&r[est]),
                parse(&r[hw]),
                parse(&r[target]),
            )
        })
        .collect();
    Ok(forest("Identity residuals", &rows))
}

/// Forest plot of the residual rows of a term table.
pub fn residuals_svg(csv: &Path) -> Result<String, CliError> {
    let t = read(csv)?;
    let (f, term, est, hw) = (
        col(&t, "f_id", csv)?,
        col(&t, "term_id", csv)?,
        col(&t, "estimate", csv)?,
        col(&t, "half_width", csv)?,
    );
    let rows: Vec<_> = t
        .rows
        .iter()
        .filter(|r| r[term] == "residual")
        .map(|r| (r[f].clone(), parse(&r[est]), parse(&r[hw]), 0.0))
        .collect();
    Ok(forest("Adjoint-relation residuals", &rows))
}

/// W1 and bound totals against delta on log-log axes.
pub fn sweep_svg(csv: &Path) -> Result<String, CliError> {
    let t = read(csv)?;
    let (d, w, b) = (
        col(&t, "delta", csv)?,
        col(&t, "w1", csv)?,
        col(&t, "bound_total", csv)?,
    );
    let series = vec![
        (
            "empirical W1".to_string(),
            t.rows
                .iter()
                .map(|r| (parse(&r[d]), parse(&r[w])))
                .collect(),
        ),
        (
            "bound total".to_string(),
            t.rows
                .iter()
                .map(|r| (parse(&r[d]), parse(&r[b])))
                .collect(),
        ),
    ];
    Ok(loglog(
        "W1 versus spare capacity",
        "delta",
        "distance",
        &series,
    ))
}
