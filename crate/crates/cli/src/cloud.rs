//! Point clouds on disk: CSV (header row, CRLF line ends, shortest
//! round-trip decimals) or raw little-endian `f64`, row-major.

use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use moran_core::attractor::{PointCloud, Provenance};
use moran_core::geometry::{Vector, MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudFormat {
    Csv,
    Bin,
}

impl CloudFormat {
    pub fn for_path(path: &Path, explicit: Option<CloudFormat>) -> CloudFormat {
        explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("f64") => CloudFormat::Bin,
            _ => CloudFormat::Csv,
        })
    }
}

const AXES: [&str; MAX_DIM] = ["x", "y", "z"];

pub fn write_csv<W: Write>(out: W, dim: usize, points: &[Vector]) -> Result<()> {
    let mut w = BufWriter::new(out);
    w.write_all(AXES[..dim].join(",").as_bytes())?;
    w.write_all(b"\r\n")?;
    for p in points {
        for (a, x) in p[..dim].iter().enumerate() {
            if a > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{x:?}")?;
        }
        w.write_all(b"\r\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bin<W: Write>(out: W, dim: usize, points: &[Vector]) -> Result<()> {
    let mut w = BufWriter::new(out);
    for p in points {
        for x in &p[..dim] {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_cloud(path: &Path, format: CloudFormat, cloud: &PointCloud) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    match format {
        CloudFormat::Csv => write_csv(file, cloud.dim, &cloud.points),
        CloudFormat::Bin => write_bin(file, cloud.dim, &cloud.points),
    }
}

/// Reads a CSV cloud; the dimension is the number of header columns.
pub fn read_csv<R: BufRead>(input: R) -> Result<(usize, Vec<Vector>)> {
    let mut lines = input.lines();
    let header = lines.next().context("empty point file")??;
    let dim = header.trim_end_matches('\r').split(',').count();
    if dim > MAX_DIM {
        bail!("point file has {dim} columns, at most {MAX_DIM} supported");
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut p = [0.0; MAX_DIM];
        let mut n = 0;
        for (a, field) in line.split(',').enumerate() {
            if a >= dim {
                bail!("line {}: more than {dim} fields", i + 2);
            }
            p[a] = field.trim().parse().with_context(|| format!("line {}: bad number {field:?}", i + 2))?;
            n += 1;
        }
        if n != dim {
            bail!("line {}: expected {dim} fields, got {n}", i + 2);
        }
        points.push(p);
    }
    Ok((dim, points))
}

pub fn read_bin<R: Read>(mut input: R, dim: usize) -> Result<Vec<Vector>> {
    if !(1..=MAX_DIM).contains(&dim) {
        bail!("dimension must be 1, 2 or 3");
    }
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % (8 * dim) != 0 {
        bail!("binary point file length {} is not a multiple of {}", bytes.len(), 8 * dim);
    }
    Ok(bytes
        .chunks_exact(8 * dim)
        .map(|row| {
            let mut p = [0.0; MAX_DIM];
            for (a, x) in row.chunks_exact(8).enumerate() {
                p[a] = f64::from_le_bytes(x.try_into().unwrap());
            }
            p
        })
        .collect())
}

pub fn read_cloud(path: &Path, format: CloudFormat, dim: Option<usize>) -> Result<PointCloud> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (dim, points) = match format {
        CloudFormat::Csv => read_csv(std::io::BufReader::new(file))?,
        CloudFormat::Bin => {
            let dim = dim.context("--dim is required for binary point files")?;
            (dim, read_bin(file, dim)?)
        }
    };
    Ok(PointCloud { dim, points, scale: 0.0, provenance: Provenance::DeterministicCover })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_exactly() {
        let pts = vec![[0.1, 1.0 / 3.0, 0.0], [1e-300, -2.5, 0.0], [f64::MIN_POSITIVE, 7.0, 0.0]];
        let mut buf = Vec::new();
        write_csv(&mut buf, 2, &pts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y\r\n0.1,0.3333333333333333\r\n"));
        let (dim, back) = read_csv(&buf[..]).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(back, pts);
    }

    #[test]
    fn binary_is_little_endian_row_major() {
        let pts = vec![[1.0, 2.0, 0.0]];
        let mut buf = Vec::new();
        write_bin(&mut buf, 2, &pts).unwrap();
        assert_eq!(&buf[..8], &1.0f64.to_le_bytes());
        assert_eq!(&buf[8..], &2.0f64.to_le_bytes());
        assert_eq!(read_bin(&buf[..], 2).unwrap(), pts);
    }
}
