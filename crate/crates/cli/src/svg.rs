//! Small deterministic SVG renderer for density and interval plots.
//!
//! Output depends only on the input numbers: coordinates are printed with
//! two decimals and element order follows input order.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const MARGIN_LEFT: f64 = 150.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const GRID_POINTS: usize = 256;
const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#edae49", "#00798c", "#66a182", "#8d6a9f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Roughly `target` round tick positions covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(x: f64) -> String {
    let s = format!("{:.4}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Gaussian kernel density estimate on `grid`, Silverman bandwidth.
pub fn kde(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return vec![0.0; grid.len()];
    }
    let bw = bandwidth(values);
    let norm = 1.0 / (n * bw * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            values
                .iter()
                .map(|&v| (-0.5 * ((g - v) / bw).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect()
}

fn bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    let iqr = (q(0.75) - q(0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    let bw = 0.9 * spread * n.powf(-0.2);
    if bw > 0.0 {
        bw
    } else {
        1e-3 * mean.abs().max(1.0)
    }
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
    height: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN_LEFT + (v - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        self.height
            - MARGIN_BOTTOM
            - (v - self.y_lo) / (self.y_hi - self.y_lo) * (self.height - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn open(out: &mut String, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn x_axis(out: &mut String, f: &Frame, label: &str) {
    let y0 = f.height - MARGIN_BOTTOM;
    let _ = writeln!(
        out,
        r#"<line x1="{:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="black"/>"#,
        MARGIN_LEFT,
        WIDTH - MARGIN_RIGHT
    );
    for t in nice_ticks(f.x_lo, f.x_hi, 6) {
        let x = f.x(t);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 16.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        f.height - 12.0,
        escape(label)
    );
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN_TOP + 4.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN_RIGHT - 150.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="3"/>"#,
            x + 20.0,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 26.0,
            y + 4.0,
            escape(name)
        );
    }
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.02 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Overlaid kernel density curves, one per series, with optional labelled
/// vertical reference lines.
pub fn density_plot(title: &str, x_label: &str, series: &[(String, Vec<f64>)], vlines: &[(f64, String)]) -> String {
    let values = series.iter().flat_map(|(_, v)| v.iter().copied());
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let max_bw = series
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(_, v)| bandwidth(v))
        .fold(0.0, f64::max);
    lo -= 3.0 * max_bw;
    hi += 3.0 * max_bw;
    for (x, _) in vlines {
        lo = lo.min(*x);
        hi = hi.max(*x);
    }
    let (lo, hi) = padded_range(lo, hi);
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let curves: Vec<Vec<f64>> = series.iter().map(|(_, v)| kde(v, &grid)).collect();
    let y_hi = curves.iter().flatten().copied().fold(0.0, f64::max);
    let frame = Frame {
        x_lo: lo,
        x_hi: hi,
        y_lo: 0.0,
        y_hi: if y_hi > 0.0 { y_hi * 1.05 } else { 1.0 },
        height: 420.0,
    };

    let mut out = String::new();
    open(&mut out, frame.height, title);
    x_axis(&mut out, &frame, x_label);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">density</text>"#,
        MARGIN_LEFT - 20.0,
        frame.height / 2.0,
        MARGIN_LEFT - 20.0,
        frame.height / 2.0
    );
    for (x, label) in vlines {
        let px = frame.x(*x);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            MARGIN_TOP,
            frame.height - MARGIN_BOTTOM
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="gray">{}</text>"#,
            px + 3.0,
            MARGIN_TOP + 10.0,
            escape(label)
        );
    }
    for (i, curve) in curves.iter().enumerate() {
        let points: Vec<String> = grid
            .iter()
            .zip(curve)
            .map(|(&g, &d)| format!("{:.2},{:.2}", frame.x(g), frame.y(d)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            points.join(" ")
        );
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// One interval drawn on a row of an [`interval_plot`].
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub point: f64,
    /// Index into the series names; selects the colour and vertical offset.
    pub series: usize,
}

/// Labelled rows of horizontal interval segments with a point marker.
pub fn interval_plot(title: &str, x_label: &str, series_names: &[&str], rows: &[(String, Vec<Interval>)]) -> String {
    let row_h = 18.0;
    let height = MARGIN_TOP + MARGIN_BOTTOM + row_h * rows.len().max(1) as f64 + 16.0 * series_names.len() as f64;
    let (lo, hi) = rows
        .iter()
        .flat_map(|(_, iv)| iv.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), i| {
            (l.min(i.lower).min(i.point), h.max(i.upper).max(i.point))
        });
    let (lo, hi) = if lo.is_finite() {
        padded_range(lo, hi)
    } else {
        (0.0, 1.0)
    };
    let frame = Frame {
        x_lo: lo,
        x_hi: hi,
        y_lo: 0.0,
        y_hi: 1.0,
        height,
    };
    let top = MARGIN_TOP + 16.0 * series_names.len() as f64;
    let n_series = series_names.len().max(1) as f64;

    let mut out = String::new();
    open(&mut out, height, title);
    x_axis(&mut out, &frame, x_label);
    for (r, (label, intervals)) in rows.iter().enumerate() {
        let y = top + row_h * (r as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            escape(label)
        );
        for iv in intervals {
            let offset = (iv.series as f64 - (n_series - 1.0) / 2.0) * (row_h / (n_series + 1.0));
            let yy = y + offset;
            let colour = PALETTE[iv.series % PALETTE.len()];
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="{colour}" stroke-width="2"/>"#,
                frame.x(iv.lower),
                frame.x(iv.upper)
            );
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{yy:.2}" r="2.5" fill="{colour}"/>"#,
                frame.x(iv.point)
            );
        }
    }
    legend(&mut out, series_names);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(
            nice_ticks(0.0, 1.0, 5),
            vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]
        );
        assert_eq!(nice_ticks(-3.0, 7.0, 5), vec![-2.0, 0.0, 2.0, 4.0, 6.0]);
        assert_eq!(fmt_tick(0.6000000000000001), "0.6");
        assert_eq!(fmt_tick(-0.0), "0");
    }

    #[test]
    fn kde_integrates_to_one() {
        let values: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let grid: Vec<f64> = (0..2001).map(|i| -4.0 + 8.0 * i as f64 / 2000.0).collect();
        let d = kde(&values, &grid);
        let integral: f64 = d.iter().sum::<f64>() * 8.0 / 2000.0;
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }

    #[test]
    fn plots_are_deterministic_and_escaped() {
        let s = vec![
            ("a<b".to_string(), vec![0.1, 0.2, 0.4]),
            ("c".to_string(), vec![0.5; 3]),
        ];
        let p1 = density_plot("t & u", "x", &s, &[(0.3, "band".into())]);
        assert_eq!(p1, density_plot("t & u", "x", &s, &[(0.3, "band".into())]));
        assert!(p1.contains("a&lt;b") && p1.contains("t &amp; u"));
        assert_eq!(p1.matches("<polyline").count(), 2);

        let rows = vec![(
            "a[w00]".to_string(),
            vec![Interval {
                lower: 0.1,
                upper: 0.3,
                point: 0.2,
                series: 0,
            }],
        )];
        let p2 = interval_plot("i", "x", &["before"], &rows);
        assert!(p2.starts_with("<svg") && p2.ends_with("</svg>\n"));
        assert_eq!(p2.matches("<circle").count(), 1);
    }

    #[test]
    fn empty_inputs_still_render() {
        assert!(density_plot("t", "x", &[], &[]).contains("</svg>"));
        assert!(interval_plot("t", "x", &[], &[]).contains("</svg>"));
    }
}
