//! Minimal SVG line and box plots, plus gnuplot-style data files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliResult;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxGroup {
    pub label: String,
    pub values: Vec<f64>,
}

/// Quartiles by linear interpolation of the sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Round tick spacing covering `[lo, hi]` with about five intervals.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, b + 0.5) };
        let y = pad(y);
        let m = 0.05 * (y.1 - y.0);
        Self { x: pad(x), y: (y.0 - m, y.1 + m) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str, ylabel: &str, x_ticks: bool) {
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
        let _ = writeln!(svg, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
        for v in ticks(self.y.0, self.y.1) {
            let y = self.py(v);
            let _ = writeln!(svg, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="12">{}</text>"#, x0 - 8.0, y + 4.0, fmt_tick(v));
        }
        if x_ticks {
            for v in ticks(self.x.0, self.x.1) {
                let x = self.px(v);
                let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/>"#, y0 + 5.0);
                let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, y0 + 20.0, fmt_tick(v));
            }
        }
        let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, (x0 + x1) / 2.0, escape(title));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 15.0, escape(xlabel));
        let _ = writeln!(
            svg,
            r#"<text x="20" y="{0}" text-anchor="middle" font-size="13" transform="rotate(-90 20 {0})">{1}</text>"#,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
    }
}

fn open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn legend(svg: &mut String, entries: &[(String, &str, bool)]) {
    for (i, (label, colour, dashed)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(svg, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{colour}" stroke-width="2"{dash}/>"#, x + 24.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12">{}</text>"#, x + 30.0, y + 4.0, escape(label));
    }
}

pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut xr, mut yr) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
    for &(x, y) in all {
        xr = (xr.0.min(x), xr.1.max(x));
        yr = (yr.0.min(y), yr.1.max(y));
    }
    if !xr.0.is_finite() {
        xr = (0.0, 1.0);
        yr = (0.0, 1.0);
    }
    let frame = Frame::new(xr, yr);
    let mut svg = open();
    frame.axes(&mut svg, title, xlabel, ylabel, true);
    let mut entries = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"{dash}/>"#, path.join(" "));
        entries.push((s.label.clone(), colour, s.dashed));
    }
    legend(&mut svg, &entries);
    svg.push_str("</svg>\n");
    svg
}

pub fn box_plot(title: &str, ylabel: &str, groups: &[BoxGroup]) -> String {
    let values = groups.iter().flat_map(|g| g.values.iter().copied()).filter(|v| v.is_finite());
    let yr = values.fold((f64::INFINITY, f64::NEG_INFINITY), |r, v| (r.0.min(v), r.1.max(v)));
    let yr = if yr.0.is_finite() { yr } else { (0.0, 1.0) };
    let frame = Frame::new((0.0, groups.len().max(1) as f64), yr);
    let mut svg = open();
    frame.axes(&mut svg, title, "", ylabel, false);
    let half = 0.3 * (frame.px(1.0) - frame.px(0.0));
    for (i, g) in groups.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let cx = frame.px(i as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            HEIGHT - BOTTOM + 20.0,
            escape(&g.label)
        );
        let mut v: Vec<f64> = g.values.iter().copied().filter(|v| v.is_finite()).collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let (q1, med, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let lo = v.iter().copied().find(|&x| x >= q1 - 1.5 * iqr).unwrap_or(q1);
        let hi = v.iter().rev().copied().find(|&x| x <= q3 + 1.5 * iqr).unwrap_or(q3);
        let (y1, ym, y3) = (frame.py(q1), frame.py(med), frame.py(q3));
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{y3:.2}" width="{:.2}" height="{:.2}" fill="{colour}" fill-opacity="0.25" stroke="{colour}"/>"#,
            cx - half,
            2.0 * half,
            (y1 - y3).max(0.5)
        );
        let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{ym:.2}" x2="{:.2}" y2="{ym:.2}" stroke="{colour}" stroke-width="2"/>"#, cx - half, cx + half);
        for (a, b) in [(q3, hi), (q1, lo)] {
            let (ya, yb) = (frame.py(a), frame.py(b));
            let _ = writeln!(svg, r#"<line x1="{cx:.2}" y1="{ya:.2}" x2="{cx:.2}" y2="{yb:.2}" stroke="{colour}"/>"#);
            let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{yb:.2}" x2="{:.2}" y2="{yb:.2}" stroke="{colour}"/>"#, cx - half / 2.0, cx + half / 2.0);
        }
        for &x in v.iter().filter(|&&x| x < lo || x > hi) {
            let _ = writeln!(svg, r#"<circle cx="{cx:.2}" cy="{:.2}" r="2.5" fill="none" stroke="{colour}"/>"#, frame.py(x));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Whitespace-separated columns with a `#` header line.
pub fn write_dat(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> CliResult<()> {
    let mut out = format!("# {}\n", header.join(" "));
    for r in rows {
        let cols: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&cols.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_small_sample() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(0.0, 100.0), vec![0.0, 20.0, 40.0, 60.0, 80.0, 100.0]);
        assert!(ticks(-0.013, 0.041).len() >= 3);
    }

    #[test]
    fn plots_are_well_formed() {
        let line = line_plot(
            "ESS",
            "t",
            "mean ESS",
            &[Series { label: "a<b".into(), points: vec![(1.0, 2.0), (2.0, 3.0)], dashed: true }],
        );
        assert!(line.starts_with("<svg") && line.ends_with("</svg>\n"));
        assert!(line.contains("a&lt;b") && line.contains("polyline"));
        let boxes = box_plot("loglik", "", &[BoxGroup { label: "x".into(), values: vec![1.0, 2.0, 3.0, 10.0] }, BoxGroup { label: "empty".into(), values: vec![] }]);
        assert_eq!(boxes.matches("<rect").count(), 3);
        assert!(boxes.contains("<circle"));
    }
}
