use std::fmt::Write as _;
use std::path::Path;

use crate::frontend::Language;

use super::{AnalysisError, PointLabel, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn color(lang: Language) -> &'static str {
    match lang {
        Language::Man => "#d62728",
        Language::Eng => "#1f77b4",
        Language::Special => "#7f7f7f",
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="black" stroke-width="1"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

/// Scatter of 2-D points coloured by language, with phoneme tooltips and a
/// legend. An empty set yields axes only.
pub fn scatter_svg(points: &[[f64; 2]], labels: &[PointLabel], title: &str) -> Result<String> {
    if points.len() != labels.len() {
        return Err(AnalysisError::Data(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    if points
        .iter()
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(AnalysisError::Data("scatter points must be finite".into()));
    }
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "t-SNE 1", "t-SNE 2");
    if !points.is_empty() {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = |k: usize| if hi[k] > lo[k] { hi[k] - lo[k] } else { 1.0 };
        let inner_w = WIDTH - 2.0 * MARGIN - 20.0;
        let inner_h = HEIGHT - 2.0 * MARGIN - 20.0;
        out.push_str("<g class=\"points\">\n");
        for (p, l) in points.iter().zip(labels) {
            let x = MARGIN + 10.0 + (p[0] - lo[0]) / span(0) * inner_w;
            let y = HEIGHT - MARGIN - 10.0 - (p[1] - lo[1]) / span(1) * inner_h;
            let _ = writeln!(
                out,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{}" fill-opacity="0.8"><title>{} ({})</title></circle>"#,
                color(l.language),
                escape(&l.phoneme),
                l.language
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("<g class=\"legend\" font-size=\"12\">\n");
    for (i, lang) in [Language::Man, Language::Eng].into_iter().enumerate() {
        let y = MARGIN + 14.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN - 80.0;
        let _ = writeln!(
            out,
            r#"<circle cx="{x}" cy="{y}" r="5" fill="{}"/><text x="{}" y="{}">{lang}</text>"#,
            color(lang),
            x + 10.0,
            y + 4.0
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

/// Attention alignment heatmap: decoder steps on x, encoder positions on y,
/// one `rect` per weight.
pub fn alignment_svg(weights: &[Vec<f64>], title: &str) -> Result<String> {
    let steps = weights.len();
    let t = weights.first().map_or(0, Vec::len);
    if weights.iter().any(|w| w.len() != t) {
        return Err(AnalysisError::Data(
            "alignment rows differ in length".into(),
        ));
    }
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "decoder step", "encoder step");
    if steps > 0 && t > 0 {
        let cw = (WIDTH - 2.0 * MARGIN) / steps as f64;
        let ch = (HEIGHT - 2.0 * MARGIN) / t as f64;
        out.push_str("<g class=\"cells\">\n");
        for (i, row) in weights.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                let shade = (255.0 * (1.0 - w.clamp(0.0, 1.0))).round() as u8;
                let _ = writeln!(
                    out,
                    r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({shade},{shade},255)"/>"#,
                    MARGIN + i as f64 * cw,
                    HEIGHT - MARGIN - (j + 1) as f64 * ch,
                    cw,
                    ch
                );
            }
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write_svg(path: impl AsRef<Path>, svg: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, svg).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })
}
