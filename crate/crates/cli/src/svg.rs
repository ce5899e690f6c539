//! Tiny hand-written SVG documents: scatter plots and lattice heatmaps.

use std::fmt::Write;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 20.0;

pub struct Frame {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Frame {
    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let span = SIZE - 2.0 * MARGIN;
        let x = MARGIN + (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * span;
        // SVG y grows downward.
        let y = SIZE - MARGIN - (p[1] - self.lo[1]) / (self.hi[1] - self.lo[1]) * span;
        (x, y)
    }

    /// Bounding box of the given point sets, padded by 5%.
    pub fn around<'a>(sets: impl IntoIterator<Item = &'a [[f64; 2]]>) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for set in sets {
            for p in set {
                for d in 0..2 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
        }
        for d in 0..2 {
            if !(hi[d] > lo[d]) {
                lo[d] -= 1.0;
                hi[d] += 1.0;
            }
            let pad = 0.05 * (hi[d] - lo[d]);
            lo[d] -= pad;
            hi[d] += pad;
        }
        Self { lo, hi }
    }
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
}

/// One circle per point; each set gets its own fill colour.
pub fn scatter(sets: &[(&[[f64; 2]], &str)]) -> String {
    let frame = Frame::around(sets.iter().map(|(s, _)| *s));
    let mut out = String::new();
    header(&mut out);
    for (points, colour) in sets {
        let _ = writeln!(out, r#"<g fill="{colour}" fill-opacity="0.5">"#);
        for &p in *points {
            let (x, y) = frame.map(p);
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5"/>"#);
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

/// Cells of an `nx × ny` lattice shaded by value in `[0, 1]`, row-major
/// from the bottom-left corner.
pub fn heatmap(nx: usize, ny: usize, values: &[f64]) -> String {
    let mut out = String::new();
    header(&mut out);
    let span = SIZE - 2.0 * MARGIN;
    let (w, h) = (span / nx as f64, span / ny as f64);
    for j in 0..ny {
        for i in 0..nx {
            let v = values[j * nx + i].clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let x = MARGIN + i as f64 * w;
            let y = SIZE - MARGIN - (j + 1) as f64 * h;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="rgb(255,{shade},{shade})"/>"#
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
