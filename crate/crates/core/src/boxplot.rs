//! SVG boxplots of long-format score tables.
//!
//! One panel per measure, one box per feature. Boxes span the type-7
//! quartiles, whiskers reach the most extreme observations within 1.5·IQR of
//! the box, and anything beyond is drawn as an outlier dot. All coordinates
//! are printed with fixed precision so the same input always produces the
//! same bytes.

use std::fmt::Write as _;
use std::io::Read;

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

#[derive(Clone, Debug, PartialEq)]
pub struct LongRecord {
    pub replication: u64,
    pub feature: String,
    pub measure: String,
    pub score: f64,
}

/// Reads `replication,feature,measure,score` rows; `#` lines are comments.
pub fn read_long_csv<R: Read>(reader: R) -> Result<Vec<LongRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("long CSV lacks a `{name}` column")))
    };
    let (ci, cf, cm, cs) = (col("replication")?, col("feature")?, col("measure")?, col("score")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Parse {
            row: line,
            message: format!("bad {what}"),
        };
        out.push(LongRecord {
            replication: rec[ci].trim().parse().map_err(|_| bad("replication"))?,
            feature: rec[cf].to_owned(),
            measure: rec[cm].to_owned(),
            score: rec[cs].trim().parse().map_err(|_| bad("score"))?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Option<BoxStats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let median = quantile_sorted(&v, 0.5);
        let q3 = quantile_sorted(&v, 0.75);
        let fence = 1.5 * (q3 - q1);
        let (lo, hi) = (q1 - fence, q3 + fence);
        let inside: Vec<f64> = v.iter().copied().filter(|x| (lo..=hi).contains(x)).collect();
        Some(BoxStats {
            q1,
            median,
            q3,
            whisker_low: inside.first().copied().unwrap_or(q1),
            whisker_high: inside.last().copied().unwrap_or(q3),
            outliers: v.into_iter().filter(|x| !(lo..=hi).contains(x)).collect(),
        })
    }
}

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 36.0;
const GAP: f64 = 24.0;

fn ordered_unique<'a>(xs: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for x in xs {
        if !out.iter().any(|o| o == x) {
            out.push(x.to_owned());
        }
    }
    out
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let f = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    f * mag
}

/// Renders one panel per measure (in first-appearance order) with one box
/// per feature. `description` is embedded verbatim in the SVG `<desc>`.
pub fn emit_boxplot(records: &[LongRecord], description: &str) -> Result<String> {
    if records.is_empty() {
        return Err(Error::domain("no rows to plot"));
    }
    let measures = ordered_unique(records.iter().map(|r| r.measure.as_str()));
    let features = ordered_unique(records.iter().map(|r| r.feature.as_str()));
    let width = MARGIN_L + measures.len() as f64 * (PANEL_W + GAP);
    let height = MARGIN_T + PANEL_H + MARGIN_B;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, "<desc>{}</desc>", esc(description));
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    for (pi, measure) in measures.iter().enumerate() {
        let x0 = MARGIN_L + pi as f64 * (PANEL_W + GAP);
        let groups: Vec<(String, Vec<f64>)> = features
            .iter()
            .map(|f| {
                let vals = records
                    .iter()
                    .filter(|r| &r.measure == measure && &r.feature == f)
                    .map(|r| r.score)
                    .collect();
                (f.clone(), vals)
            })
            .filter(|(_, v): &(String, Vec<f64>)| !v.is_empty())
            .collect();
        let (mut lo, mut hi) = groups
            .iter()
            .flat_map(|(_, v)| v.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        lo = lo.min(0.0);
        hi = hi.max(0.0);
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;
        let y = |v: f64| MARGIN_T + PANEL_H * (hi - v) / (hi - lo);

        let _ = writeln!(svg, r#"<g class="panel" data-measure="{}">"#, esc(measure));
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.2}" y="{MARGIN_T:.2}" width="{PANEL_W:.2}" height="{PANEL_H:.2}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
            x0 + PANEL_W / 2.0,
            MARGIN_T - 12.0,
            esc(measure)
        );
        let step = nice_step(hi - lo);
        let mut tick = (lo / step).ceil() * step;
        while tick <= hi {
            let ty = y(tick);
            let label = if tick.abs() < step * 1e-9 { 0.0 } else { tick };
            let _ = writeln!(
                svg,
                r##"<line x1="{:.2}" y1="{ty:.2}" x2="{x0:.2}" y2="{ty:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                x0 - 4.0,
                x0 - 6.0,
                ty + 4.0,
                format_tick(label, step)
            );
            tick += step;
        }
        let zy = y(0.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{x0:.2}" y1="{zy:.2}" x2="{:.2}" y2="{zy:.2}" stroke="#bbb" stroke-dasharray="4 3"/>"##,
            x0 + PANEL_W
        );

        let slot = PANEL_W / groups.len().max(1) as f64;
        for (gi, (feature, vals)) in groups.iter().enumerate() {
            let b = BoxStats::of(vals).expect("non-empty group");
            let cx = x0 + slot * (gi as f64 + 0.5);
            let half = (slot * 0.3).min(24.0);
            let _ = writeln!(svg, r#"<g class="box" data-feature="{}">"#, esc(feature));
            let _ = writeln!(
                svg,
                r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#222"/>"##,
                y(b.whisker_high),
                y(b.q3)
            );
            let _ = writeln!(
                svg,
                r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#222"/>"##,
                y(b.q1),
                y(b.whisker_low)
            );
            for w in [b.whisker_low, b.whisker_high] {
                let _ = writeln!(
                    svg,
                    r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#222"/>"##,
                    cx - half / 2.0,
                    y(w),
                    cx + half / 2.0,
                    y(w)
                );
            }
            let _ = writeln!(
                svg,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#cfe0f3" stroke="#222"/>"##,
                cx - half,
                y(b.q3),
                2.0 * half,
                (y(b.q1) - y(b.q3)).max(0.0)
            );
            let _ = writeln!(
                svg,
                r##"<line class="median" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000" stroke-width="2"/>"##,
                cx - half,
                y(b.median),
                cx + half,
                y(b.median)
            );
            for o in &b.outliers {
                let _ = writeln!(
                    svg,
                    r##"<circle cx="{cx:.2}" cy="{:.2}" r="2" fill="none" stroke="#222"/>"##,
                    y(*o)
                );
            }
            let _ = writeln!(
                svg,
                r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                MARGIN_T + PANEL_H + 16.0,
                esc(feature)
            );
            let _ = writeln!(svg, "</g>");
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}
