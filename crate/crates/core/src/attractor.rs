//! Point-cloud approximations of the attractor `K_1` and samples of the
//! invariant measure `μ_1`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{vector_from_slice, Aabb, Vector};
use crate::map::ContractionMap;
use crate::rng::{chunk_rng, chunks};
use crate::system::{Layer, LayerSystem, WeightSequence};
use crate::words::{max_cutset_depth, CutsetWalker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    DeterministicCover,
    MeasureSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub dim: usize,
    pub points: Vec<Vector>,
    /// Hausdorff accuracy (cover) or per-point accuracy (samples).
    pub scale: f64,
    pub provenance: Provenance,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::bounding(self.dim, self.points.iter().copied())
    }
}

fn resolve_anchor(sys: &LayerSystem, anchor: Option<&[f64]>) -> Result<Vector> {
    let x = sys.ambient();
    match anchor {
        None => Ok(x.center()),
        Some(a) => {
            if a.len() != sys.dimension() {
                return Err(Error::DimensionMismatch { expected: sys.dimension(), got: a.len() });
            }
            let v = vector_from_slice(a)?;
            if !x.contains_point(&v, 0.0) {
                return Err(invalid("anchor", "must lie in the ambient box"));
            }
            Ok(v)
        }
    }
}

/// `{φ_{1,J}(anchor) : J ∈ I_b}` in cutset order.
pub fn cover(sys: &LayerSystem, b: f64, anchor: Option<&[f64]>, limit: usize) -> Result<PointCloud> {
    let a = resolve_anchor(sys, anchor)?;
    let walker = CutsetWalker::new(sys, b)?;
    let points = walker.par_collect(limit, |w| w.map.apply_vec(&a))?;
    Ok(PointCloud {
        dim: sys.dimension(),
        points,
        scale: b * sys.ambient().diameter(),
        provenance: Provenance::DeterministicCover,
    })
}

/// Draws random words of a fixed depth and pushes the anchor through them.
pub struct MeasureSampler {
    layers: Vec<Layer>,
    cumulative: Vec<Vec<f64>>,
    anchor: Vector,
    scale: f64,
    dim: usize,
}

impl MeasureSampler {
    pub fn new(sys: &LayerSystem, weights: &WeightSequence, eps: f64, anchor: Option<&[f64]>) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid("eps", format!("must lie in (0,1), got {eps}")));
        }
        weights.validate()?;
        sys.require_contraction()?;
        let anchor = resolve_anchor(sys, anchor)?;
        let depth = max_cutset_depth(sys, eps.ln())?;
        let layers = sys.layers(depth)?;
        let cumulative = layers
            .iter()
            .map(|l| {
                let lw = weights.log_weights(l)?;
                let mut acc = 0.0;
                let mut c: Vec<f64> = lw
                    .iter()
                    .map(|w| {
                        acc += w.exp();
                        acc
                    })
                    .collect();
                let total = acc;
                c.iter_mut().for_each(|x| *x /= total);
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, cumulative, anchor, scale: eps * sys.ambient().diameter(), dim: sys.dimension() })
    }

    /// Word length `m` used for every sample.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Fills `digits` (length [`Self::depth`]) with a random word and
    /// returns the image of the anchor under it.
    pub fn draw<R: Rng>(&self, rng: &mut R, digits: &mut [u32]) -> Vector {
        for (d, cum) in digits.iter_mut().zip(&self.cumulative) {
            let u: f64 = rng.random();
            let j = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
            *d = j as u32 + 1;
        }
        let mut x = self.anchor;
        for (layer, &d) in self.layers.iter().zip(digits.iter()).rev() {
            x = layer.maps()[d as usize - 1].apply_vec(&x);
        }
        x
    }

    /// `count` samples; the first `keep` digits of each word are returned
    /// alongside the points.
    pub fn sample_with_digits(&self, count: usize, seed: u64, keep: usize) -> (PointCloud, Vec<Vec<u32>>) {
        let keep = keep.min(self.depth());
        let parts: Vec<(Vec<Vector>, Vec<Vec<u32>>)> = chunks(count)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(c, range)| {
                let mut rng = chunk_rng(seed, c);
                let mut digits = vec![0u32; self.depth()];
                let mut pts = Vec::with_capacity(range.len());
                let mut kept = Vec::new();
                for _ in range {
                    pts.push(self.draw(&mut rng, &mut digits));
                    if keep > 0 {
                        kept.push(digits[..keep].to_vec());
                    }
                }
                (pts, kept)
            })
            .collect();
        let mut points = Vec::with_capacity(count);
        let mut words = Vec::new();
        for (p, w) in parts {
            points.extend(p);
            words.extend(w);
        }
        let cloud = PointCloud { dim: self.dim, points, scale: self.scale, provenance: Provenance::MeasureSample };
        (cloud, words)
    }

    pub fn sample(&self, count: usize, seed: u64) -> PointCloud {
        self.sample_with_digits(count, seed, 0).0
    }
}

/// `count` points approximately distributed by `μ_1`, each within
/// `eps·|X|` of an exactly distributed point.
pub fn sample_measure(
    sys: &LayerSystem,
    weights: &WeightSequence,
    count: usize,
    eps: f64,
    seed: u64,
    anchor: Option<&[f64]>,
) -> Result<PointCloud> {
    if count == 0 {
        return Err(invalid("count", "must be at least 1"));
    }
    Ok(MeasureSampler::new(sys, weights, eps, anchor)?.sample(count, seed))
}

fn dist(a: &Vector, b: &Vector, dim: usize) -> f64 {
    (0..dim).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// `max_{p∈from} min_{q∈to} |p − q|`, with `to` sorted on the first axis.
fn directed(from: &[Vector], to: &[Vector], dim: usize) -> f64 {
    from.par_iter()
        .map(|p| {
            let start = to.partition_point(|q| q[0] < p[0]);
            let mut best = f64::INFINITY;
            for q in to[start..].iter() {
                if q[0] - p[0] >= best {
                    break;
                }
                best = best.min(dist(p, q, dim));
            }
            for q in to[..start].iter().rev() {
                if p[0] - q[0] >= best {
                    break;
                }
                best = best.min(dist(p, q, dim));
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// Exact Hausdorff distance between two finite point sets.
pub fn hausdorff_distance(a: &[Vector], b: &[Vector], dim: usize) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { f64::INFINITY };
    }
    let sorted = |v: &[Vector]| {
        let mut s = v.to_vec();
        s.sort_by(|p, q| p[0].total_cmp(&q[0]));
        s
    };
    let (sa, sb) = (sorted(a), sorted(b));
    directed(&sa, &sb, dim).max(directed(&sb, &sa, dim))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttractorCheck {
    pub b: f64,
    pub inner_b: f64,
    pub distance: f64,
    pub bound: f64,
    pub passed: bool,
    pub points_outer: usize,
    pub points_inner: usize,
}

/// Compares `cover(sys, b)` with `⋃_j φ_{1,j}(cover(shift(sys,1), b/c_{2,1}))`.
pub fn attractor_equation_check(sys: &LayerSystem, b: f64, limit: usize) -> Result<AttractorCheck> {
    let outer = cover(sys, b, None, limit)?;
    let first = sys.layer(1)?;
    let inner_b = (b / first.c2()).min(1.0);
    let tail = sys.shifted(1);
    let inner_points = if inner_b >= 1.0 {
        vec![tail.ambient().center()]
    } else {
        cover(&tail, inner_b, None, limit)?.points
    };
    let mapped: Vec<Vector> = first
        .maps()
        .iter()
        .flat_map(|m: &ContractionMap| inner_points.iter().map(move |p| m.apply_vec(p)))
        .collect();
    let dim = sys.dimension();
    let distance = hausdorff_distance(&outer.points, &mapped, dim);
    let bound = 2.0 * b * sys.ambient().diameter();
    Ok(AttractorCheck {
        b,
        inner_b,
        distance,
        bound,
        passed: distance <= bound,
        points_outer: outer.len(),
        points_inner: mapped.len(),
    })
}
