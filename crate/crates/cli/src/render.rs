//! Density rasters of 1D and 2D point clouds as binary PPM or SVG.
//!
//! Pixel darkness is `(count / max_count)^(1/gamma)`. A 1D cloud fills
//! whole columns.

use std::io::Write;

use anyhow::{bail, Result};
use moran_core::geometry::Vector;

pub struct Raster {
    pub width: usize,
    pub height: usize,
    counts: Vec<u32>,
    max: u32,
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi - lo)
    } else {
        (lo - 0.5, 1.0)
    }
}

fn bin(x: f64, lo: f64, extent: f64, n: usize) -> usize {
    (((x - lo) / extent * n as f64).floor().max(0.0) as usize).min(n - 1)
}

impl Raster {
    pub fn new(dim: usize, points: &[Vector], width: usize, height: usize) -> Result<Raster> {
        if !(1..=2).contains(&dim) {
            bail!("only 1D and 2D clouds can be rendered");
        }
        if width == 0 || height == 0 {
            bail!("width and height must be positive");
        }
        let mut counts = vec![0u32; width * height];
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for a in 0..dim {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if !points.is_empty() {
            let (x0, xe) = span(lo[0], hi[0]);
            if dim == 1 {
                for p in points {
                    let col = bin(p[0], x0, xe, width);
                    for row in 0..height {
                        counts[row * width + col] += 1;
                    }
                }
            } else {
                let (y0, ye) = span(lo[1], hi[1]);
                for p in points {
                    let col = bin(p[0], x0, xe, width);
                    let row = height - 1 - bin(p[1], y0, ye, height);
                    counts[row * width + col] += 1;
                }
            }
        }
        let max = counts.iter().copied().max().unwrap_or(0);
        Ok(Raster { width, height, counts, max })
    }

    /// Darkness in `[0, 1]` of pixel `(row, col)`.
    pub fn darkness(&self, row: usize, col: usize, gamma: f64) -> f64 {
        let c = self.counts[row * self.width + col];
        if c == 0 || self.max == 0 {
            0.0
        } else {
            (c as f64 / self.max as f64).powf(1.0 / gamma)
        }
    }

    pub fn write_ppm<W: Write>(&self, mut out: W, gamma: f64) -> Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut row_bytes = Vec::with_capacity(self.width * 3);
        for row in 0..self.height {
            row_bytes.clear();
            for col in 0..self.width {
                let v = 255 - (255.0 * self.darkness(row, col, gamma)).round() as u8;
                row_bytes.extend_from_slice(&[v, v, v]);
            }
            out.write_all(&row_bytes)?;
        }
        out.flush()?;
        Ok(())
    }

    /// One circle per occupied pixel, opacity from the density.
    pub fn write_svg<W: Write>(&self, mut out: W, gamma: f64) -> Result<()> {
        let (w, h) = (self.width, self.height);
        writeln!(out, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#)?;
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        )?;
        writeln!(out, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#)?;
        writeln!(out, r#"<g fill="black" stroke="none">"#)?;
        for row in 0..h {
            for col in 0..w {
                let d = self.darkness(row, col, gamma);
                if d > 0.0 {
                    writeln!(
                        out,
                        r#"<circle cx="{}" cy="{}" r="0.5" fill-opacity="{:.4}"/>"#,
                        col as f64 + 0.5,
                        row as f64 + 0.5,
                        d
                    )?;
                }
            }
        }
        writeln!(out, "</g>\n</svg>")?;
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_size() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        let r = Raster::new(2, &pts, 4, 3).unwrap();
        let mut buf = Vec::new();
        r.write_ppm(&mut buf, 1.0).unwrap();
        let header = b"P6\n4 3\n255\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(buf.len(), header.len() + 4 * 3 * 3);
        // (1,1) lands top right and is the densest pixel; (0,0) bottom left.
        let px = |row: usize, col: usize| buf[header.len() + (row * 4 + col) * 3];
        assert_eq!(px(0, 3), 0);
        assert_eq!(px(2, 0), 127);
        assert_eq!(px(1, 1), 255);
    }

    #[test]
    fn one_dimensional_clouds_fill_columns() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let r = Raster::new(1, &pts, 2, 5).unwrap();
        assert!((0..5).all(|row| r.darkness(row, 0, 1.0) == 1.0 && r.darkness(row, 1, 1.0) == 1.0));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let r = Raster::new(2, &[[0.5, 0.5, 0.0]], 2, 2).unwrap();
        let mut buf = Vec::new();
        r.write_svg(&mut buf, 2.2).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains(r#"version="1.1""#));
        assert_eq!(s.matches("<circle").count(), 1);
        assert!(s.trim_end().ends_with("</svg>"));
    }
}
