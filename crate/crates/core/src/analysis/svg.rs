use std::fmt::Write as _;
use std::path::Path;

use crate::encoders::Modality;
use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor;

/// Per-point attributes used for styling.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMeta {
    pub modality: Modality,
    pub domain: String,
    pub mean_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorBy {
    Modality,
    Domain,
    MeanDuration,
}

impl ColorBy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "modality" => Ok(ColorBy::Modality),
            "domain" => Ok(ColorBy::Domain),
            "mean_duration" => Ok(ColorBy::MeanDuration),
            other => Err(Error::Config(format!(
                "unknown color mode `{other}` (modality, domain, mean_duration)"
            ))),
        }
    }
}

const SIZE: f64 = 640.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
pub const RAMP_START: (u8, u8, u8) = (0x44, 0x01, 0x54);
pub const RAMP_END: (u8, u8, u8) = (0xfd, 0xe7, 0x25);

/// Linear ramp colour for `t` in `[0, 1]`.
pub fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(RAMP_START.0, RAMP_END.0),
        mix(RAMP_START.1, RAMP_END.1),
        mix(RAMP_START.2, RAMP_END.2)
    )
}

fn glyph(out: &mut String, class: &str, modality: Modality, x: f64, y: f64, color: &str) {
    let _ = match modality {
        Modality::Speech => writeln!(out, r#"<circle class="{class}" cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#),
        Modality::Text => writeln!(
            out,
            r#"<path class="{class}" d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" stroke="{color}" stroke-width="1.2"/>"#,
            x - 3.0,
            y - 3.0,
            x + 3.0,
            y + 3.0,
            x - 3.0,
            y + 3.0,
            x + 3.0,
            y - 3.0
        ),
    };
}

/// Self-contained SVG scatter: dots for speech, crosses for text.
pub fn scatter_svg(coords: &Tensor, meta: &[PointMeta], color_by: ColorBy, title: &str) -> Result<String> {
    if coords.shape().len() != 2 || coords.cols() != 2 || coords.rows() != meta.len() {
        return Err(dim_err("scatter_svg", coords.shape(), &[meta.len(), 2]));
    }
    let n = meta.len();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let r = coords.row(i);
        xmin = xmin.min(r[0]);
        xmax = xmax.max(r[0]);
        ymin = ymin.min(r[1]);
        ymax = ymax.max(r[1]);
    }
    let span = (xmax - xmin).max(ymax - ymin).max(1e-12);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let px = |x: f64| MARGIN + (x - xmin) * scale;
    let py = |y: f64| SIZE - MARGIN - (y - ymin) * scale;

    let mut categories: Vec<String> = Vec::new();
    let category = |m: &PointMeta| match color_by {
        ColorBy::Modality => m.modality.name().to_string(),
        _ => m.domain.clone(),
    };
    if color_by != ColorBy::MeanDuration {
        for m in meta {
            let c = category(m);
            if !categories.contains(&c) {
                categories.push(c);
            }
        }
    }
    let (dmin, dmax) = meta.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), m| {
        (a.min(m.mean_duration), b.max(m.mean_duration))
    });
    let color_of = |m: &PointMeta| -> String {
        match color_by {
            ColorBy::MeanDuration => {
                let t = if dmax > dmin { (m.mean_duration - dmin) / (dmax - dmin) } else { 0.0 };
                ramp(t)
            }
            _ => {
                let c = category(m);
                let idx = categories.iter().position(|x| *x == c).unwrap_or(0);
                PALETTE[idx % PALETTE.len()].to_string()
            }
        }
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    for (i, m) in meta.iter().enumerate() {
        let r = coords.row(i);
        glyph(&mut out, "glyph", m.modality, px(r[0]), py(r[1]), &color_of(m));
    }

    // Legend: glyph shapes, then colours.
    let lx = SIZE - 150.0;
    let mut ly = 50.0;
    let _ = writeln!(out, r#"<g font-family="sans-serif" font-size="11">"#);
    for modality in [Modality::Speech, Modality::Text] {
        glyph(&mut out, "legend", modality, lx, ly - 4.0, "#333333");
        let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 10.0, modality.name());
        ly += 16.0;
    }
    match color_by {
        ColorBy::MeanDuration => {
            for t in [0.0, 0.5, 1.0] {
                let v = dmin + (dmax - dmin) * t;
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{}"/><text x="{:.2}" y="{:.2}">{v:.2}</text>"#,
                    lx - 4.0,
                    ly - 8.0,
                    ramp(t),
                    lx + 10.0,
                    ly
                );
                ly += 14.0;
            }
        }
        _ => {
            for (k, c) in categories.iter().enumerate() {
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                    lx - 4.0,
                    ly - 8.0,
                    PALETTE[k % PALETTE.len()],
                    lx + 10.0,
                    ly,
                    escape(c)
                );
                ly += 14.0;
            }
        }
    }
    let _ = writeln!(out, "</g>\n</svg>");
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes [`scatter_svg`] output to `path`.
pub fn render_scatter(coords: &Tensor, meta: &[PointMeta], color_by: ColorBy, title: &str, path: impl AsRef<Path>) -> Result<()> {
    let svg = scatter_svg(coords, meta, color_by, title)?;
    crate::persist::atomic_write(path, svg.as_bytes())
}
