//! Static SVG figures: event bars and score traces.

use std::fmt::Write;

const CELL_H: f64 = 10.0;
const LABEL_W: f64 = 90.0;
const GROUP_GAP: f64 = 16.0;

/// A titled block of bars, one row per series, one cell per window.
pub struct BarGroup<'a> {
    pub title: &'a str,
    /// `rows[m][t]` is an event id, or `None` for a blank cell.
    pub rows: Vec<Vec<Option<usize>>>,
}

fn color(id: usize) -> String {
    // golden-angle hue walk keeps neighbouring ids apart
    let hue = (id as f64 * 137.508) % 360.0;
    format!("hsl({hue:.1},65%,55%)")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Event bars: one colour per event id.
pub fn event_bars_svg(groups: &[BarGroup], width: f64) -> String {
    let windows = groups
        .iter()
        .flat_map(|g| g.rows.iter().map(Vec::len))
        .max()
        .unwrap_or(0)
        .max(1);
    let cell_w = (width - LABEL_W) / windows as f64;
    let height: f64 = groups
        .iter()
        .map(|g| GROUP_GAP + g.rows.len() as f64 * CELL_H)
        .sum::<f64>()
        + GROUP_GAP;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="9">"#
    );
    let mut y = 0.0;
    for g in groups {
        y += GROUP_GAP;
        let _ = writeln!(
            svg,
            r#"<text x="2" y="{:.1}" font-weight="bold">{}</text>"#,
            y - 4.0,
            escape(g.title)
        );
        for (m, row) in g.rows.iter().enumerate() {
            let _ = writeln!(
                svg,
                r#"<text x="2" y="{:.1}">series {m}</text>"#,
                y + CELL_H - 2.0
            );
            for (t, cell) in row.iter().enumerate() {
                if let Some(id) = cell {
                    let _ = writeln!(
                        svg,
                        r#"<rect x="{:.2}" y="{y:.1}" width="{:.2}" height="{CELL_H}" fill="{}"/>"#,
                        LABEL_W + t as f64 * cell_w,
                        cell_w.max(0.5),
                        color(*id)
                    );
                }
            }
            y += CELL_H;
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Score polyline with labelled segments shaded and an optional threshold.
pub fn score_trace_svg(
    scores: &[f64],
    labels: Option<&[u8]>,
    threshold: Option<f64>,
    width: f64,
    height: f64,
) -> String {
    let n = scores.len().max(2);
    let finite = scores.iter().copied().filter(|v| v.is_finite());
    let hi = finite
        .clone()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(threshold.unwrap_or(f64::NEG_INFINITY));
    let lo = finite.fold(f64::INFINITY, f64::min).min(0.0);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pad = 10.0;
    let x = |i: usize| pad + (width - 2.0 * pad) * i as f64 / (n - 1) as f64;
    let y = |v: f64| height - pad - (height - 2.0 * pad) * (v - lo) / span;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">"#
    );
    if let Some(flags) = labels {
        let mut i = 0;
        while i < flags.len() {
            if flags[i] == 0 {
                i += 1;
                continue;
            }
            let s = i;
            while i < flags.len() && flags[i] != 0 {
                i += 1;
            }
            let _ = writeln!(
                svg,
                r##"<rect x="{:.2}" y="0" width="{:.2}" height="{height}" fill="#f4a6a6" opacity="0.6"/>"##,
                x(s),
                (x(i.min(n - 1)) - x(s)).max(1.0)
            );
        }
    }
    let points: Vec<String> = scores
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="1" points="{}"/>"##,
        points.join(" ")
    );
    if let Some(th) = threshold {
        let _ = writeln!(
            svg,
            r##"<line x1="{pad}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="#2a9d3a" stroke-dasharray="4 3"/>"##,
            width - pad,
            y(th),
            y(th)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_have_one_rect_per_cell() {
        let g = BarGroup {
            title: "observed",
            rows: vec![
                vec![Some(1), Some(2), None],
                vec![Some(3), Some(3), Some(3)],
            ],
        };
        let svg = event_bars_svg(&[g], 400.0);
        assert_eq!(svg.matches("<rect").count(), 5);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn trace_shades_segments() {
        let svg = score_trace_svg(
            &[0.0, 1.0, 5.0, 1.0],
            Some(&[0, 1, 1, 0]),
            Some(2.0),
            200.0,
            100.0,
        );
        assert_eq!(svg.matches("<rect").count(), 1);
        assert!(svg.contains("<polyline") && svg.contains("<line"));
    }
}
