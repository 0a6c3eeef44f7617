//! Log-y SVG rendering of a sweep table.  Presentational only.

use std::collections::BTreeMap;
use std::fmt::Write;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Columns drawn as lines (analytic) and dots (numeric), when present.
const LINES: [(&str, &str); 4] = [
    ("rate_12", "none"),
    ("rate_21", "6,3"),
    ("gap_analytic", "2,2"),
    ("reference", "8,4"),
];
const DOTS: &str = "gap";

struct Series {
    label: String,
    points: BTreeMap<&'static str, Vec<(f64, f64)>>,
}

fn column(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

/// One panel per label prefix (text before `=`), one colour per label.
pub fn render_svg(header: &[String], rows: &[Vec<String>]) -> String {
    let value = column(header, "value");
    let series_col = column(header, "series");
    let mut panels: BTreeMap<String, Vec<Series>> = BTreeMap::new();
    for row in rows {
        let label = series_col.map(|c| row[c].clone()).unwrap_or_default();
        let panel = label.split('=').next().unwrap_or("").to_string();
        let Some(x) = value.and_then(|c| row[c].parse::<f64>().ok()) else {
            continue;
        };
        let list = panels.entry(panel).or_default();
        let idx = match list.iter().position(|s| s.label == label) {
            Some(i) => i,
            None => {
                list.push(Series {
                    label: label.clone(),
                    points: BTreeMap::new(),
                });
                list.len() - 1
            }
        };
        let names = LINES.iter().map(|(n, _)| *n).chain(std::iter::once(DOTS));
        for name in names {
            if let Some(y) = column(header, name).and_then(|c| row[c].parse::<f64>().ok()) {
                if y > 0.0 && y.is_finite() {
                    list[idx].points.entry(name).or_default().push((x, y.log10()));
                }
            }
        }
    }

    let n = panels.len().max(1);
    let width = n as f64 * PANEL_W;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, (title, series)) in panels.iter().enumerate() {
        draw_panel(&mut out, k as f64 * PANEL_W, title, series);
    }
    out.push_str("</svg>\n");
    out
}

fn draw_panel(out: &mut String, x0: f64, title: &str, series: &[Series]) {
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.values().flatten().copied())
        .collect();
    let (left, right, top, bottom) = (x0 + MARGIN, x0 + PANEL_W - 15.0, 25.0, PANEL_H - 40.0);
    let _ = writeln!(
        out,
        r#"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );
    let _ = writeln!(out, r#"<text x="{:.2}" y="15">{}</text>"#, left, escape(title));
    if all.is_empty() {
        return;
    }
    let (xmin, xmax) = bounds(all.iter().map(|p| p.0));
    let (ymin, ymax) = bounds(all.iter().map(|p| p.1));
    let (ymin, ymax) = (ymin.floor(), ymax.ceil().max(ymin.floor() + 1.0));
    let sx = |x: f64| left + (x - xmin) / (xmax - xmin) * (right - left);
    let sy = |y: f64| bottom - (y - ymin) / (ymax - ymin) * (bottom - top);
    let mut decade = ymin;
    while decade <= ymax {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{}</text>"#,
            left - 4.0,
            sy(decade) + 4.0,
            decade as i64
        );
        decade += 1.0;
    }
    let _ = writeln!(
        out,
        r#"<text x="{left:.2}" y="{:.2}">{xmin:.3}</text><text x="{right:.2}" y="{:.2}" text-anchor="end">{xmax:.3}</text>"#,
        bottom + 15.0,
        bottom + 15.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for (name, dash) in LINES {
            let Some(pts) = s.points.get(name) else {
                continue;
            };
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-dasharray="{dash}"/>"#,
                path.join(" ")
            );
        }
        if let Some(pts) = s.points.get(DOTS) {
            for (x, y) in pts {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(*x), sy(*y));
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            left + 6.0,
            top + 14.0 * (i as f64 + 1.0),
            escape(&s.label)
        );
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> (Vec<String>, Vec<Vec<String>>) {
        let header = ["series", "value", "gap", "rate_12", "reference"].map(String::from).to_vec();
        let rows = vec![
            ["kerr=0.1", "1.0", "1e-3", "", "2e-3"].map(String::from).to_vec(),
            ["kerr=0.1", "2.0", "1e-5", "", "3e-5"].map(String::from).to_vec(),
            ["lambda3=0.1", "2.0", "4e-4", "", ""].map(String::from).to_vec(),
        ];
        (header, rows)
    }

    #[test]
    fn panels_and_omitted_columns() {
        let (h, r) = table();
        let svg = render_svg(&h, &r);
        assert_eq!(svg.matches("<rect x=").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 3);
        // rate_12 is empty everywhere; only the reference line is drawn
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg, render_svg(&h, &r));
    }
}
