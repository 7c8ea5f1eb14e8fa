//! Minimal static SVG charts: line charts for error-vs-horizon curves and
//! box plots for grouped error distributions. No dependencies, fully
//! deterministic output.

use std::fmt::Write as _;
use std::path::Path;

const W: f64 = 720.0;
const H: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 46.0;
const MARGIN_B: f64 = 56.0;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn axis_bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.06;
    ((lo - pad).min(0.0_f64.min(lo)), hi + pad)
}

fn svg_header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n"
        ),
        w = W,
        h = H,
        cx = W / 2.0,
        title = title
    )
}

fn axes(s: &mut String, x_label: &str, y_label: &str, y_lo: f64, y_hi: f64) {
    let x0 = MARGIN_L;
    let x1 = W - MARGIN_R;
    let y0 = H - MARGIN_B;
    let y1 = MARGIN_T;
    let _ = writeln!(
        s,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{x_label}</text>",
        (x0 + x1) / 2.0,
        H - 14.0
    );
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
         transform=\"rotate(-90 18 {})\">{y_label}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    // Horizontal grid with value ticks.
    for k in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let y = y0 - (y0 - y1) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{v:.3}</text>",
            x0 - 6.0,
            y + 3.5
        );
    }
}

/// Multi-series line chart; x values are shared per series point.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> std::io::Result<()> {
    let (y_lo, y_hi) = axis_bounds(series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.1)));
    let (x_lo, x_hi) = axis_bounds(series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.0)));
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (W - MARGIN_L - MARGIN_R);
    let sy = |y: f64| (H - MARGIN_B) - (y - y_lo) / (y_hi - y_lo) * (H - MARGIN_B - MARGIN_T);

    let mut s = svg_header(title);
    axes(&mut s, x_label, y_label, y_lo, y_hi);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            coords.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                sx(x),
                sy(y)
            );
        }
        let ly = MARGIN_T + 16.0 * i as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"11\">{name}</text>",
            W - MARGIN_R + 12.0,
            ly,
            W - MARGIN_R + 30.0,
            ly + 10.0
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)
}

/// Five-number summary per group.
pub struct BoxStat {
    pub label: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Compute a five-number summary from raw samples.
pub fn box_stat(label: &str, samples: &[f64]) -> BoxStat {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |f: f64| -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        let pos = f * (v.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < v.len() {
            v[i] * (1.0 - frac) + v[i + 1] * frac
        } else {
            v[i]
        }
    };
    BoxStat {
        label: label.to_string(),
        min: q(0.0),
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: q(1.0),
    }
}

pub fn box_plot(path: &Path, title: &str, y_label: &str, groups: &[BoxStat]) -> std::io::Result<()> {
    let (y_lo, y_hi) = axis_bounds(groups.iter().flat_map(|g| [g.min, g.max].into_iter()));
    let sy = |y: f64| (H - MARGIN_B) - (y - y_lo) / (y_hi - y_lo) * (H - MARGIN_B - MARGIN_T);
    let span = W - MARGIN_L - MARGIN_R;
    let step = span / groups.len() as f64;
    let bw = (step * 0.5).min(46.0);

    let mut s = svg_header(title);
    axes(&mut s, "group", y_label, y_lo, y_hi);
    for (i, g) in groups.iter().enumerate() {
        let cx = MARGIN_L + step * (i as f64 + 0.5);
        let color = COLORS[i % COLORS.len()];
        let (w1, w2) = (cx - bw / 2.0, cx + bw / 2.0);
        let _ = writeln!(
            s,
            "<line x1=\"{cx}\" y1=\"{:.2}\" x2=\"{cx}\" y2=\"{:.2}\" stroke=\"black\"/>",
            sy(g.min),
            sy(g.max)
        );
        let _ = writeln!(
            s,
            "<rect x=\"{w1:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" \
             fill=\"{color}\" fill-opacity=\"0.45\" stroke=\"black\"/>",
            sy(g.q3),
            (sy(g.q1) - sy(g.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            "<line x1=\"{w1:.2}\" y1=\"{:.2}\" x2=\"{w2:.2}\" y2=\"{:.2}\" \
             stroke=\"black\" stroke-width=\"2\"/>",
            sy(g.median),
            sy(g.median)
        );
        let _ = writeln!(
            s,
            "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
            H - MARGIN_B + 16.0,
            g.label
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)
}
