//! Standalone SVG charts, each paired with the CSV table it was drawn from.

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{write_file, Orientation};
use crate::error::Result;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 40.0, 70.0); // left, right, top, bottom
const FORWARD_COLOR: &str = "#3b6fb6";
const BACKWARD_COLOR: &str = "#d9822b";

/// A rendered chart and its data.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub svg: String,
    pub csv: String,
}

impl Chart {
    /// Writes `<stem>.svg` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_file(&dir.join(format!("{stem}.svg")), self.svg.as_bytes())?;
        write_file(&dir.join(format!("{stem}.csv")), self.csv.as_bytes())
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn open_svg(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    s
}

struct Frame {
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn plot_h() -> f64 {
        H - MARGIN.2 - MARGIN.3
    }

    fn plot_w() -> f64 {
        W - MARGIN.0 - MARGIN.1
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(f64::EPSILON);
        MARGIN.2 + Self::plot_h() * (1.0 - (v - self.y_min) / span)
    }

    fn axes(&self, s: &mut String, y_label: &str) {
        let (x0, y0, y1) = (MARGIN.0, MARGIN.2, H - MARGIN.3);
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{y1}" x2="{}" y2="{y1}" stroke="black"/>"#, W - MARGIN.1);
        for k in 0..=4 {
            let v = self.y_min + (self.y_max - self.y_min) * k as f64 / 4.0;
            let y = self.y(v);
            let _ = writeln!(s, r#"<line x1="{}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/>"#, x0 - 4.0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                x0 - 6.0,
                y + 4.0,
                fmt_tick(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
            H / 2.0,
            H / 2.0,
            xml_escape(y_label)
        );
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn color(dir: Option<Orientation>) -> &'static str {
    match dir {
        Some(Orientation::Backward) => BACKWARD_COLOR,
        _ => FORWARD_COLOR,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyBar {
    pub label: String,
    pub direction: Option<Orientation>,
    pub size: Option<usize>,
    pub accuracy: f64,
}

/// Accuracy per run, ordered by size then direction, with an optional
/// dashed human baseline.
pub fn accuracy_chart(bars: &[AccuracyBar], human: Option<f64>) -> Chart {
    let mut bars = bars.to_vec();
    bars.sort_by(|a, b| (a.size, a.direction.map(|d| d as u8)).cmp(&(b.size, b.direction.map(|d| d as u8))));
    let frame = Frame { y_min: 0.0, y_max: 1.0 };
    let mut s = open_svg("Forced-choice accuracy by model");
    frame.axes(&mut s, "accuracy");
    let slot = Frame::plot_w() / bars.len().max(1) as f64;
    for (i, b) in bars.iter().enumerate() {
        let x = MARGIN.0 + slot * i as f64 + slot * 0.15;
        let y = frame.y(b.accuracy.clamp(0.0, 1.0));
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{}: {:.3}</title></rect>"#,
            slot * 0.7,
            frame.y(0.0) - y,
            color(b.direction),
            xml_escape(&b.label),
            b.accuracy
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            H - MARGIN.3 + 16.0,
            xml_escape(&b.label)
        );
    }
    if let Some(h) = human {
        let y = frame.y(h.clamp(0.0, 1.0));
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="black" stroke-dasharray="6,4"/>"#,
            MARGIN.0,
            W - MARGIN.1
        );
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">human</text>"#, W - MARGIN.1, y - 4.0);
    }
    legend(&mut s);
    s.push_str("</svg>\n");

    let mut csv = String::from("label,direction,size,accuracy\n");
    for b in &bars {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            csv_field(&b.label),
            b.direction.map(|d| d.to_string()).unwrap_or_default(),
            b.size.map(|n| n.to_string()).unwrap_or_default(),
            b.accuracy
        );
    }
    if let Some(h) = human {
        let _ = writeln!(csv, "human,,,{h}");
    }
    Chart { svg: s, csv }
}

fn legend(s: &mut String) {
    for (i, (name, c)) in [("forward", FORWARD_COLOR), ("backward", BACKWARD_COLOR)].iter().enumerate() {
        let x = W - MARGIN.1 - 170.0 + 85.0 * i as f64;
        let y = H - 22.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{c}"/>"#, y - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{name}</text>"#, x + 14.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxGroup {
    pub label: String,
    pub direction: Option<Orientation>,
    pub values: Vec<f64>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Five-number summary: min, q1, median, q3, max.
pub fn five_numbers(values: &[f64]) -> Option<[f64; 5]> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some([v[0], quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75), v[v.len() - 1]])
}

/// Box plot of perplexity distributions, one box per group.
pub fn perplexity_boxplot(title: &str, groups: &[BoxGroup]) -> Chart {
    let stats: Vec<Option<[f64; 5]>> = groups.iter().map(|g| five_numbers(&g.values)).collect();
    let lo = stats.iter().flatten().map(|f| f[0]).fold(f64::INFINITY, f64::min);
    let hi = stats.iter().flatten().map(|f| f[4]).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let pad = ((hi - lo) * 0.05).max(1e-9);
    let frame = Frame {
        y_min: (lo - pad).max(0.0),
        y_max: hi + pad,
    };
    let mut s = open_svg(title);
    frame.axes(&mut s, "perplexity");
    let slot = Frame::plot_w() / groups.len().max(1) as f64;
    for (i, (g, st)) in groups.iter().zip(&stats).enumerate() {
        let cx = MARGIN.0 + slot * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            H - MARGIN.3 + 16.0,
            xml_escape(&g.label)
        );
        let Some([mn, q1, md, q3, mx]) = *st else { continue };
        let half = slot * 0.25;
        let c = color(g.direction);
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            frame.y(mx),
            frame.y(mn)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{c}" fill-opacity="0.6" stroke="black"/>"#,
            cx - half,
            frame.y(q3),
            2.0 * half,
            (frame.y(q1) - frame.y(q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            frame.y(md),
            cx + half,
            frame.y(md)
        );
    }
    legend(&mut s);
    s.push_str("</svg>\n");

    let mut csv = String::from("label,direction,n,min,q1,median,q3,max\n");
    for (g, st) in groups.iter().zip(&stats) {
        let nums = st
            .map(|f| f.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
            .unwrap_or_else(|| ",,,,".into());
        let _ = writeln!(
            csv,
            "{},{},{},{nums}",
            csv_field(&g.label),
            g.direction.map(|d| d.to_string()).unwrap_or_default(),
            g.values.len()
        );
    }
    Chart { svg: s, csv }
}

/// Diverging blue-white-red color for a correlation in [-1, 1].
fn heat(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
    } else {
        (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
    };
    format!("rgb({:.0},{:.0},{:.0})", r, g, b)
}

/// Square heatmap of a correlation matrix with values printed in cells.
pub fn correlation_heatmap(sources: &[String], matrix: &[Vec<f64>]) -> Chart {
    let n = sources.len().max(1);
    let size = (H - 120.0).min(W - 200.0);
    let cell = size / n as f64;
    let (x0, y0) = (150.0, 40.0);
    let mut s = open_svg("Spearman correlation of item difficulty");
    for (i, row) in matrix.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            y0 + cell * (i as f64 + 0.5) + 4.0,
            xml_escape(&sources[i])
        );
        for (j, &v) in row.iter().enumerate() {
            let (x, y) = (x0 + cell * j as f64, y0 + cell * i as f64);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell:.1}" height="{cell:.1}" fill="{}" stroke="white"/>"#,
                heat(v)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    for (j, name) in sources.iter().enumerate() {
        let x = x0 + cell * (j as f64 + 0.5);
        let y = y0 + size + 14.0;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="end" transform="rotate(-35 {x:.1} {y:.1})">{}</text>"#,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");

    let mut csv = format!(
        "source,{}\n",
        sources.iter().map(|x| csv_field(x)).collect::<Vec<_>>().join(",")
    );
    for (name, row) in sources.iter().zip(matrix) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(csv, "{},{}", csv_field(name), cells.join(","));
    }
    Chart { svg: s, csv }
}
