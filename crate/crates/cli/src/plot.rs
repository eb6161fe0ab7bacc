//! Static SVG charts rendered from result CSVs.

use std::collections::BTreeMap;
use std::fmt::Write;

use anyhow::{anyhow, Result};

use crate::config::ExperimentKind;
use crate::table::Table;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    (x0, x1, y0, y1)
}

/// Line chart with markers, axis ticks and a legend.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="15" text-anchor="middle" font-family="sans-serif">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" font-family="sans-serif">{:.3}</text>"#, sx(xv), TOP + ph + 16.0, xv);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end" font-family="sans-serif">{:.3}</text>"#, LEFT - 6.0, sy(yv) + 4.0, yv);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#dddddd"/>"##, sy(yv), LEFT + pw);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" font-family="sans-serif">{}</text>"#, LEFT + pw / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(s, r#"<text x="16" y="{0:.1}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 16 {0:.1})">{1}</text>"#, TOP + ph / 2.0, escape(ylabel));
    for (i, ser) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let dash = if ser.dashed { r#" stroke-dasharray="5,4""# } else { "" };
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"{dash}/>"#, pts.join(" "));
        for p in &pts {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{colour}"/>"#);
        }
        let ly = TOP + 12.0 + 16.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"{dash}/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" font-family="sans-serif">{}</text>"#, lx + 24.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn col_f64(t: &Table, row: usize, name: &str) -> Result<f64> {
    t.get_f64(row, name).ok_or_else(|| anyhow!("column {name} missing or not numeric in row {row}"))
}

fn col_str<'a>(t: &'a Table, row: usize, name: &str) -> Result<&'a str> {
    t.get(row, name).ok_or_else(|| anyhow!("column {name} missing"))
}

/// Groups `(x, y)` points by a series key, averaging repeated x values.
fn grouped(t: &Table, key: impl Fn(usize) -> Result<String>, x: &str, y: &str) -> Result<Vec<Series>> {
    let mut acc: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for r in 0..t.rows.len() {
        let xv = col_f64(t, r, x)?;
        let yv = col_f64(t, r, y)?;
        let e = acc.entry(key(r)?).or_default().entry(xv.to_bits()).or_insert((xv, 0.0, 0));
        e.1 += yv;
        e.2 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(name, pts)| {
            let mut points: Vec<(f64, f64)> = pts.into_values().map(|(x, s, n)| (x, s / n as f64)).collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { name, points, dashed: false }
        })
        .collect())
}

/// Chart for a benchmark CSV. Depends only on the table contents.
pub fn plot_table(kind: ExperimentKind, t: &Table) -> Result<String> {
    Ok(match kind {
        ExperimentKind::Convergence => {
            let series = grouped(
                t,
                |r| Ok(format!("{}/{}", col_str(t, r, "task")?, col_str(t, r, "score")?)),
                "dim_or_ell",
                "mean_log10_err_steps",
            )?;
            line_chart("Terminal error after the fixed steps", "dimension or length-scale", "mean log10 |S - tau|", &series)
        }
        ExperimentKind::Repulsion => {
            let mut series = grouped(t, |_| Ok("naive".into()), "p", "naive_min_pairwise")?;
            series.extend(grouped(t, |_| Ok("repulsed".into()), "p", "repulsed_min_pairwise")?);
            line_chart("Smallest pairwise distance", "p", "distance", &series)
        }
        ExperimentKind::Bands => {
            let variants: Vec<String> = {
                let mut v: Vec<String> = Vec::new();
                for r in 0..t.rows.len() {
                    let name = col_str(t, r, "variant")?.to_string();
                    if !v.contains(&name) {
                        v.push(name);
                    }
                }
                v
            };
            let mut by_method: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
            for r in 0..t.rows.len() {
                let vi = variants.iter().position(|v| v == col_str(t, r, "variant").unwrap_or("")).unwrap_or(0);
                by_method
                    .entry(col_str(t, r, "method")?.to_string())
                    .or_default()
                    .push((vi as f64, col_f64(t, r, "coverage")?));
            }
            let series: Vec<Series> =
                by_method.into_iter().map(|(name, points)| Series { name, points, dashed: false }).collect();
            line_chart(&format!("Band coverage ({})", variants.join(", ")), "variant index", "coverage", &series)
        }
        ExperimentKind::CpdAudit => {
            let mut series = grouped(t, |r| Ok(col_str(t, r, "mixing")?.to_string()), "beta", "coverage")?;
            let targets = grouped(t, |r| Ok(format!("{} target", col_str(t, r, "mixing")?)), "beta", "target")?;
            series.extend(targets.into_iter().map(|s| Series { dashed: true, ..s }));
            line_chart("Coverage of conformal sets by CPD samples", "beta", "coverage", &series)
        }
        ExperimentKind::Sample => anyhow::bail!("sample runs produce no benchmark table"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_well_formed() {
        let mut t = Table::new(&["p", "naive_min_pairwise", "repulsed_min_pairwise"]);
        t.push(vec!["10".into(), "0.5".into(), "2".into()]);
        t.push(vec!["25".into(), "0.7".into(), "2.5".into()]);
        let a = plot_table(ExperimentKind::Repulsion, &t).unwrap();
        assert_eq!(a, plot_table(ExperimentKind::Repulsion, &t).unwrap());
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 2);
    }
}
