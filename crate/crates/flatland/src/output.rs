//! Image and report files.

use image::{ImageBuffer, Rgb};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::cache::LeafBudgets;
use crate::geometry::Vec2;
use crate::render::IterationReport;
use crate::scene::Scene;

/// Writes a one-row greyscale PFM, little endian.
pub fn write_pfm(path: &Path, pixels: &[f64]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "Pf\n{} 1\n-1.0\n", pixels.len())?;
    for &p in pixels {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    w.flush()
}

/// Reads back a file written by [`write_pfm`].
pub fn read_pfm(path: &Path) -> io::Result<Vec<f32>> {
    let bytes = std::fs::read(path)?;
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut lines = 0;
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            lines += 1;
            if lines == 3 {
                start = i + 1;
                break;
            }
        }
    }
    let header = std::str::from_utf8(&bytes[..start]).map_err(|_| bad("header is not text"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("Pf") {
        return Err(bad("not a greyscale PFM"));
    }
    let width: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad width"))?;
    let height: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad height"))?;
    let scale: f64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad scale"))?;
    let data = &bytes[start..];
    if data.len() != 4 * width * height {
        return Err(bad("pixel data has the wrong length"));
    }
    Ok(data
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if scale < 0.0 {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect())
}

fn to_io(e: image::ImageError) -> io::Error {
    io::Error::other(e)
}

/// Tone-mapped preview: exposure to the 99th percentile, sRGB-ish gamma, each pixel a
/// column `height` rows tall.
pub fn write_png(path: &Path, pixels: &[f64], height: u32) -> io::Result<()> {
    let mut sorted: Vec<f64> = pixels.iter().copied().filter(|p| p.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let white = sorted
        .get(((sorted.len() as f64 * 0.99) as usize).min(sorted.len().saturating_sub(1)))
        .copied()
        .filter(|w| *w > 0.0)
        .unwrap_or(1.0);
    let img = ImageBuffer::from_fn(pixels.len() as u32, height.max(1), |x, _| {
        let v = (pixels[x as usize] / white).clamp(0.0, 1.0).powf(1.0 / 2.2);
        let c = (v * 255.0).round() as u8;
        Rgb([c, c, c])
    });
    img.save(path).map_err(to_io)
}

/// Maps a budget to [0, 1] logarithmically over the clamp range.
fn budget_intensity(b: f64, clamp: (f64, f64)) -> f64 {
    ((b.ln() - clamp.0.ln()) / (clamp.1.ln() - clamp.0.ln())).clamp(0.0, 1.0)
}

/// Leaf budgets as RGB = (BSDF, NEE, GUIDED) over the scene bounds, with the geometry
/// drawn in white.
pub fn write_budget_png(
    path: &Path,
    scene: &Scene,
    leaves: &[LeafBudgets],
    clamp: (f64, f64),
    resolution: u32,
) -> io::Result<()> {
    let (lo, hi) = scene.bounds();
    let span = hi - lo;
    let scale = resolution as f64 / span.x.max(span.y);
    let w = ((span.x * scale).ceil() as u32).max(1);
    let h = ((span.y * scale).ceil() as u32).max(1);
    let mut img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::new(w, h);
    for leaf in leaves {
        let c = leaf.budgets.map(|b| (budget_intensity(b, clamp) * 255.0).round() as u8);
        let x0 = ((leaf.min.x - lo.x) * scale).floor().max(0.0) as u32;
        let x1 = (((leaf.max.x - lo.x) * scale).ceil() as u32).min(w);
        let y0 = ((leaf.min.y - lo.y) * scale).floor().max(0.0) as u32;
        let y1 = (((leaf.max.y - lo.y) * scale).ceil() as u32).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                img.put_pixel(x, h - 1 - y, Rgb(c));
            }
        }
    }
    for i in 0..scene.n_segments() {
        let s = scene.segment(i);
        let steps = (s.length() * scale * 2.0).ceil() as usize + 1;
        for k in 0..=steps {
            let p: Vec2 = s.point(k as f64 / steps as f64) - lo;
            let (x, y) = ((p.x * scale) as u32, (p.y * scale) as u32);
            if x < w && y < h {
                img.put_pixel(x, h - 1 - y, Rgb([255, 255, 255]));
            }
        }
    }
    img.save(path).map_err(to_io)
}

#[derive(serde::Serialize)]
struct ReportRow {
    iteration: usize,
    spp: u64,
    #[serde(rename = "V_I")]
    variance: f64,
    #[serde(rename = "C_I")]
    cost: f64,
    inv_efficiency: f64,
    rays_total: u64,
    mean_beta_bsdf: f64,
    mean_beta_nee: f64,
    mean_beta_guided: f64,
}

pub fn write_reports<W: Write>(out: W, reports: &[IterationReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(ReportRow {
            iteration: r.iteration,
            spp: r.spp,
            variance: r.variance,
            cost: r.cost,
            inv_efficiency: r.inv_efficiency,
            rays_total: r.rays_total,
            mean_beta_bsdf: r.mean_budgets[0],
            mean_beta_nee: r.mean_budgets[1],
            mean_beta_guided: r.mean_budgets[2],
        })?;
    }
    w.flush()?;
    Ok(())
}
