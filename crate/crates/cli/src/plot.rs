//! Minimal SVG output: line charts for the experiment tables and
//! importance-colored trace panels for the activation maps. No external
//! plotting dependency.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 52.0;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn axis_bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
    }
    if !x_lo.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if (x_hi - x_lo).abs() < 1e-12 {
        x_hi = x_lo + 1.0;
    }
    if (y_hi - y_lo).abs() < 1e-12 {
        y_hi = y_lo + 1.0;
    }
    (x_lo, x_hi, y_lo, y_hi)
}

/// Multi-series line chart.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x_lo, x_hi, y_lo, y_hi) = axis_bounds(series);
    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = write!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        W / 2.0,
        title
    );
    // axes
    let _ = write!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        W / 2.0,
        H - 12.0,
        x_label
    );
    let _ = write!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        y_label
    );
    // tick labels at the extremes
    for (x, anchor) in [(x_lo, "start"), (x_hi, "end")] {
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{x:.3}</text>"#,
            sx(x),
            H - MARGIN + 16.0
        );
    }
    for y in [y_lo, y_hi] {
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{y:.3}</text>"#,
            MARGIN - 6.0,
            sy(y) + 4.0
        );
    }
    // series
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut path = String::new();
        for (pi, &(x, y)) in s.points.iter().enumerate() {
            let _ = write!(path, "{}{:.2},{:.2} ", if pi == 0 { "M" } else { "L" }, sx(x), sy(y));
        }
        let _ = write!(
            svg,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            path.trim_end()
        );
        for &(x, y) in &s.points {
            let _ = write!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.6" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            W - MARGIN + 4.0,
            MARGIN + 14.0 * si as f64,
            s.name
        );
    }
    svg.push_str("</svg>");
    svg
}

/// Importance ramp from cold (low) to hot (high).
fn heat_color(v: f32) -> String {
    let v = v.clamp(0.0, 1.0);
    // dark blue -> yellow
    let r = (40.0 + 215.0 * v as f64) as u8;
    let g = (50.0 + 160.0 * v as f64) as u8;
    let b = (120.0 * (1.0 - v as f64) + 40.0) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Trace curve colored by importance, with a heat strip underneath.
/// A flagged (all-zero) map renders in neutral gray.
pub fn cam_panel(title: &str, trace: &[f32], importance: &[f32], flagged: bool) -> String {
    let n = trace.len().max(2);
    let sx = |i: usize| MARGIN + i as f64 / (n - 1) as f64 * (W - 2.0 * MARGIN);
    let strip_top = H - MARGIN + 8.0;
    let lo = trace.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = trace.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let sy = |v: f32| H - MARGIN - ((v - lo) / span) as f64 * (H - 2.0 * MARGIN - 20.0);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{}" viewBox="0 0 {W} {}">"#,
        H + 30.0,
        H + 30.0
    );
    let _ = write!(svg, r#"<rect width="{W}" height="{}" fill="white"/>"#, H + 30.0);
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        W / 2.0,
        title
    );
    if flagged {
        let _ = write!(
            svg,
            r##"<text x="{}" y="44" text-anchor="middle" font-family="sans-serif" font-size="11" fill="#888">no positive evidence (flat map)</text>"##,
            W / 2.0
        );
    }
    for i in 0..n - 1 {
        let color = if flagged {
            "#9a9a9a".to_string()
        } else {
            heat_color(importance.get(i).copied().unwrap_or(0.0))
        };
        let _ = write!(
            svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.6"/>"#,
            sx(i),
            sy(trace[i]),
            sx(i + 1),
            sy(trace[i + 1])
        );
    }
    // heat strip
    let strip_w = (W - 2.0 * MARGIN) / (n as f64);
    for i in 0..n {
        let color = if flagged {
            "#cccccc".to_string()
        } else {
            heat_color(importance.get(i).copied().unwrap_or(0.0))
        };
        let _ = write!(
            svg,
            r#"<rect x="{:.2}" y="{strip_top}" width="{:.2}" height="14" fill="{color}"/>"#,
            sx(i) - strip_w / 2.0,
            strip_w + 0.5
        );
    }
    svg.push_str("</svg>");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_valid_svgish() {
        let s = [Series {
            name: "acc".into(),
            points: vec![(1.0, 0.5), (2.0, 0.8), (3.0, 0.9)],
        }];
        let svg = line_chart("test", "n", "accuracy", &s);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>"));
        assert!(svg.contains("polyline") || svg.contains("<path"));
    }

    #[test]
    fn cam_panel_handles_flagged_maps() {
        let trace = [0.1f32, 0.5, 0.3, 0.9];
        let imp = [0.0f32; 4];
        let svg = cam_panel("cls", &trace, &imp, true);
        assert!(svg.contains("no positive evidence"));
    }

    #[test]
    fn degenerate_inputs_do_not_panic() {
        let svg = line_chart("empty", "x", "y", &[]);
        assert!(svg.contains("</svg>"));
        let one = [Series {
            name: "p".into(),
            points: vec![(1.0, 1.0)],
        }];
        assert!(line_chart("one", "x", "y", &one).contains("</svg>"));
    }
}
