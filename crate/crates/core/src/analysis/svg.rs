//! Minimal SVG rendering for score histograms and similarity heatmaps.

use std::fmt::Write as _;

const PALETTE: &[&str] = &["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Overlaid histograms, one colour per group, over a shared bin range.
pub fn histogram(title: &str, groups: &[(String, Vec<f64>)], bins: usize) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let bins = bins.max(1);
    let all = groups.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title)).unwrap();
    if lo.is_finite() {
        let span = if hi > lo { hi - lo } else { 1.0 };
        let counts: Vec<Vec<usize>> = groups
            .iter()
            .map(|(_, v)| {
                let mut c = vec![0; bins];
                for x in v {
                    let b = (((x - lo) / span) * bins as f64) as usize;
                    c[b.min(bins - 1)] += 1;
                }
                c
            })
            .collect();
        let top = counts.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
        let bw = (w - 2.0 * pad) / bins as f64;
        for (g, c) in counts.iter().enumerate() {
            let colour = PALETTE[g % PALETTE.len()];
            for (b, &n) in c.iter().enumerate() {
                let bh = (h - 2.0 * pad) * n as f64 / top;
                writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{colour}" fill-opacity="0.45"/>"#,
                    pad + b as f64 * bw,
                    h - pad - bh,
                    bw,
                    bh
                )
                .unwrap();
            }
            writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" fill="{colour}">{}</text>"#,
                w - pad - 100.0,
                pad + 16.0 * g as f64,
                escape(&groups[g].0)
            )
            .unwrap();
        }
        writeln!(s, r#"<text x="{pad}" y="{}">{lo:.3}</text>"#, h - pad + 16.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{hi:.3}</text>"#, w - pad, h - pad + 16.0).unwrap();
    }
    writeln!(s, r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, h - pad, w - pad).unwrap();
    s.push_str("</svg>\n");
    s
}

/// Grid of cells shaded by value in [0, 1]; `None` cells are left blank.
pub fn heatmap(title: &str, rows: &[String], cols: &[String], values: &[Vec<Option<f64>>]) -> String {
    let (cell, left, top) = (60.0, 80.0, 60.0);
    let w = left + cell * cols.len() as f64 + 20.0;
    let h = top + cell * rows.len() as f64 + 20.0;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title)).unwrap();
    for (c, name) in cols.iter().enumerate() {
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, left + cell * (c as f64 + 0.5), top - 8.0, escape(name))
            .unwrap();
    }
    for (r, name) in rows.iter().enumerate() {
        let y = top + cell * r as f64;
        writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, left - 8.0, y + cell / 2.0 + 4.0, escape(name)).unwrap();
        for (c, v) in values[r].iter().enumerate() {
            let x = left + cell * c as f64;
            let Some(v) = v else { continue };
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="white"/>"#
            )
            .unwrap();
            writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#, x + cell / 2.0, y + cell / 2.0 + 4.0).unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}
