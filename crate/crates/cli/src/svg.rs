//! Minimal hand-written SVG plots. Coordinates are printed with fixed
//! precision so identical data gives identical files.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * (1.0 + lo.abs()) * 1e-3;
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// A plotting frame at (`ox`, `oy`) of size `w`×`h` mapping data ranges to
/// pixels.
struct Frame {
    ox: f64,
    oy: f64,
    w: f64,
    h: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.ox + (x - self.x.0) / (self.x.1 - self.x.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.oy + self.h - (y - self.y.0) / (self.y.1 - self.y.0) * self.h
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let (x0, y0, x1, y1) = (self.ox, self.oy + self.h, self.ox + self.w, self.oy);
        let _ = writeln!(
            out,
            r#"<path d="M{x0:.1},{y1:.1} V{y0:.1} H{x1:.1}" fill="none" stroke="black"/>"#
        );
        for (v, anchor, x, y) in [
            (self.x.0, "start", x0, y0 + 14.0),
            (self.x.1, "end", x1, y0 + 14.0),
        ] {
            let _ = writeln!(
                out,
                r#"<text x="{x:.1}" y="{y:.1}" font-size="10" text-anchor="{anchor}">{}</text>"#,
                fmt_tick(v)
            );
        }
        for (v, y) in [(self.y.0, y0), (self.y.1, y1 + 8.0)] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{y:.1}" font-size="10" text-anchor="end">{}</text>"#,
                x0 - 3.0,
                fmt_tick(v)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            y0 + 28.0,
            escape(xlabel)
        );
        if !ylabel.is_empty() {
            let (cx, cy) = (x0 - 34.0, (y0 + y1) / 2.0);
            let _ = writeln!(
                out,
                r#"<text x="{cx:.1}" y="{cy:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 {cx:.1} {cy:.1})">{}</text>"#,
                escape(ylabel)
            );
        }
    }
}

fn header(w: f64, h: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" font-size="13" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    s
}

fn single_frame(x: (f64, f64), y: (f64, f64)) -> Frame {
    Frame {
        ox: MARGIN + 8.0,
        oy: 30.0,
        w: W - 2.0 * MARGIN,
        h: H - 30.0 - MARGIN,
        x,
        y,
    }
}

/// Polyline with point markers; `log_y` plots log10 of positive values.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)], log_y: bool) -> String {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, y)| !log_y || *y > 0.0)
        .map(|&(x, y)| (x, if log_y { y.log10() } else { y }))
        .collect();
    let f = single_frame(
        range(pts.iter().map(|p| p.0)),
        range(pts.iter().map(|p| p.1)),
    );
    let mut s = header(W, H, title);
    let ylabel = if log_y { format!("log10 {ylabel}") } else { ylabel.to_string() };
    f.axes(&mut s, xlabel, &ylabel);
    if !pts.is_empty() {
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
            path.join(" ")
        );
        for &(x, y) in &pts {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="#1f77b4"/>"##,
                f.px(x),
                f.py(y)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One bar per value, optionally with a labelled horizontal reference line.
pub fn bar_plot(title: &str, xlabel: &str, ylabel: &str, values: &[f64], hline: Option<(f64, &str)>) -> String {
    let mut ys: Vec<f64> = values.to_vec();
    ys.push(0.0);
    if let Some((v, _)) = hline {
        ys.push(v);
    }
    let (lo, hi) = range(ys.into_iter());
    let n = values.len().max(1) as f64;
    let f = single_frame((0.0, n), (lo, hi + 0.05 * (hi - lo)));
    let mut s = header(W, H, title);
    f.axes(&mut s, xlabel, ylabel);
    let bw = f.w / n;
    for (i, &v) in values.iter().enumerate() {
        let (y0, y1) = (f.py(0.0f64.max(lo)), f.py(v));
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#4c72b0"/>"##,
            f.px(i as f64) + 0.1 * bw,
            y1.min(y0),
            0.8 * bw,
            (y0 - y1).abs()
        );
    }
    if let Some((v, label)) = hline {
        let y = f.py(v);
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#d62728" stroke-dasharray="4 3"/>"##,
            f.ox,
            f.ox + f.w
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end" fill="#d62728">{}</text>"##,
            f.ox + f.w,
            y - 3.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub struct HistPanel<'a> {
    pub name: &'a str,
    pub lo: f64,
    pub hi: f64,
    /// `(value, weight)` pairs.
    pub samples: Vec<(f64, f64)>,
    pub marker: Option<f64>,
}

/// Grid of weighted histograms over `[lo, hi]`, one panel per parameter,
/// with an optional vertical marker (e.g. the true value).
pub fn histogram_panels(title: &str, panels: &[HistPanel], bins: usize) -> String {
    let cols = 3usize;
    let rows = panels.len().div_ceil(cols).max(1);
    let (pw, ph) = (220.0, 150.0);
    let (tw, th) = (cols as f64 * pw, rows as f64 * ph + 30.0);
    let mut s = header(tw, th, title);
    for (k, p) in panels.iter().enumerate() {
        let mut counts = vec![0.0; bins];
        let total: f64 = p.samples.iter().map(|s| s.1).sum();
        for &(v, w) in &p.samples {
            let b = ((v - p.lo) / (p.hi - p.lo) * bins as f64).floor();
            counts[(b.max(0.0) as usize).min(bins - 1)] += w;
        }
        if total > 0.0 {
            counts.iter_mut().for_each(|c| *c /= total);
        }
        let top = counts.iter().cloned().fold(0.0, f64::max).max(1e-12);
        let f = Frame {
            ox: (k % cols) as f64 * pw + 40.0,
            oy: 30.0 + (k / cols) as f64 * ph + 10.0,
            w: pw - 55.0,
            h: ph - 50.0,
            x: (p.lo, p.hi),
            y: (0.0, top),
        };
        f.axes(&mut s, p.name, "");
        let bw = f.w / bins as f64;
        for (i, c) in counts.iter().enumerate() {
            if *c > 0.0 {
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="#8da0cb" stroke="white" stroke-width="0.5"/>"##,
                    f.ox + i as f64 * bw,
                    f.py(*c),
                    f.py(0.0) - f.py(*c)
                );
            }
        }
        if let Some(m) = p.marker {
            let x = f.px(m.clamp(p.lo, p.hi));
            let _ = writeln!(
                s,
                r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#d62728" stroke-width="1.5"/>"##,
                f.oy,
                f.oy + f.h
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_well_formed_and_deterministic() {
        let a = line_plot("eps", "generation", "epsilon", &[(1.0, 2.0), (2.0, 1.0), (3.0, 0.5)], true);
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<circle").count(), 3);
        assert_eq!(a, line_plot("eps", "generation", "epsilon", &[(1.0, 2.0), (2.0, 1.0), (3.0, 0.5)], true));
        let b = bar_plot("b", "x", "y", &[1.0, 0.0, 3.0], Some((2.0, "limit")));
        assert_eq!(b.matches("<rect").count(), 4);
        let h = histogram_panels(
            "h",
            &[HistPanel {
                name: "a<b",
                lo: 0.0,
                hi: 1.0,
                samples: vec![(0.1, 1.0), (0.9, 1.0), (1.0, 2.0)],
                marker: Some(0.5),
            }],
            10,
        );
        assert!(h.contains("a&lt;b"));
        assert_eq!(h.matches("<line").count(), 1);
    }

    #[test]
    fn degenerate_ranges_do_not_produce_nan() {
        let s = line_plot("t", "x", "y", &[(1.0, 1.0)], false);
        assert!(!s.contains("NaN") && !s.contains("inf"));
        let s = bar_plot("t", "x", "y", &[], None);
        assert!(!s.contains("NaN"));
    }
}
