//! Minimal self-contained SVG line plots. No plotting runtime is invoked;
//! files are written directly from computed series and are byte-stable for
//! identical inputs (coordinates are formatted with fixed precision).

use crate::Result;
use std::io::Write;

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 840.0;
const H: f64 = 520.0;
const ML: f64 = 78.0;
const MR: f64 = 24.0;
const MT: f64 = 46.0;
const MB: f64 = 64.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn tick_values(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let (l, h) = (lo.log10().floor() as i32, hi.log10().ceil() as i32);
        (l..=h).map(|e| 10f64.powi(e)).filter(|v| *v >= lo * 0.999 && *v <= hi * 1.001).collect()
    } else {
        let span = (hi - lo).max(1e-300);
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| span / s <= 6.0)
            .unwrap_or(mag * 10.0);
        let start = (lo / step).ceil() * step;
        let mut v = start;
        let mut out = Vec::new();
        while v <= hi + step * 1e-9 {
            out.push(v);
            v += step;
        }
        out
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1e5 || a < 1e-3 {
        format!("{v:.0e}")
    } else if a >= 1.0 {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.3}")
    }
}

/// Write a line plot. Log axes drop nonpositive points.
pub fn line_plot(
    path: &std::path::Path,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
    logx: bool,
    logy: bool,
) -> Result<()> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if (logx && x <= 0.0) || (logy && y <= 0.0) || !x.is_finite() || !y.is_finite() {
                continue;
            }
            xs.push(x);
            ys.push(y);
        }
    }
    let (mut xlo, mut xhi) = bounds(&xs, logx);
    let (mut ylo, mut yhi) = bounds(&ys, logy);
    if xlo == xhi {
        xlo -= 0.5;
        xhi += 0.5;
    }
    if ylo == yhi {
        ylo -= 0.5;
        yhi += 0.5;
    }
    let tx = |x: f64| -> f64 {
        let (a, b, v) =
            if logx { (xlo.log10(), xhi.log10(), x.log10()) } else { (xlo, xhi, x) };
        ML + (v - a) / (b - a) * (W - ML - MR)
    };
    let ty = |y: f64| -> f64 {
        let (a, b, v) =
            if logy { (ylo.log10(), yhi.log10(), y.log10()) } else { (ylo, yhi, y) };
        H - MB - (v - a) / (b - a) * (H - MT - MB)
    };

    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="13">"#
    )?;
    writeln!(w, r#"<rect width="{W}" height="{H}" fill="white"/>"#)?;
    writeln!(
        w,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        (ML + W - MR) / 2.0,
        xml_escape(title)
    )?;

    for &v in &tick_values(xlo, xhi, logx) {
        let x = tx(v);
        writeln!(
            w,
            r##"<line x1="{x:.1}" y1="{MT}" x2="{x:.1}" y2="{:.1}" stroke="#dddddd"/>"##,
            H - MB
        )?;
        writeln!(
            w,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            H - MB + 20.0,
            fmt_tick(v)
        )?;
    }
    for &v in &tick_values(ylo, yhi, logy) {
        let y = ty(v);
        writeln!(
            w,
            r##"<line x1="{ML}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            W - MR
        )?;
        writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            ML - 8.0,
            y + 4.0,
            fmt_tick(v)
        )?;
    }
    writeln!(
        w,
        r#"<rect x="{ML}" y="{MT}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        W - ML - MR,
        H - MT - MB
    )?;
    writeln!(
        w,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (ML + W - MR) / 2.0,
        H - 16.0,
        xml_escape(xlabel)
    )?;
    writeln!(
        w,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">{}</text>"#,
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        xml_escape(ylabel)
    )?;

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| {
                x.is_finite()
                    && y.is_finite()
                    && !(logx && *x <= 0.0)
                    && !(logy && *y <= 0.0)
            })
            .map(|&(x, y)| format!("{:.2},{:.2}", tx(x), ty(y)))
            .collect();
        if pts.len() > 1 {
            writeln!(
                w,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                pts.join(" ")
            )?;
        }
        for p in &pts {
            let (px, py) = p.split_once(',').unwrap();
            writeln!(w, r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#)?;
        }
        let ly = MT + 18.0 + 18.0 * i as f64;
        writeln!(
            w,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            ML + 12.0,
            ML + 40.0
        )?;
        writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            ML + 46.0,
            ly + 4.0,
            xml_escape(&s.name)
        )?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}

fn bounds(vals: &[f64], log: bool) -> (f64, f64) {
    if vals.is_empty() {
        return if log { (0.1, 10.0) } else { (0.0, 1.0) };
    }
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if log {
        (lo / 1.5, hi * 1.5)
    } else {
        let pad = 0.06 * (hi - lo).max(1e-12);
        (lo - pad, hi + pad)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_byte_stable_svg() {
        let dir = std::env::temp_dir().join("irl_core_plot_test");
        std::fs::create_dir_all(&dir).unwrap();
        let series = vec![
            Series { name: "a".into(), points: vec![(1.0, 0.2), (10.0, 0.8), (100.0, 1.0)] },
            Series { name: "b".into(), points: vec![(1.0, 0.1), (10.0, 0.4), (100.0, 0.9)] },
        ];
        let p1 = dir.join("a.svg");
        let p2 = dir.join("b.svg");
        line_plot(&p1, "t", "N", "conf", &series, true, false).unwrap();
        line_plot(&p2, "t", "N", "conf", &series, true, false).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().contains("polyline"));
    }
}
