//! Contraction maps `x ↦ rO(x + α)` and `x ↦ D(x + α)`.
//!
//! Maps are stored in offset form `x ↦ Lx + c` with the linear part kept in
//! log scale, so that products of tiny ratios stay representable. The
//! translation `α` is recovered on demand as `L⁻¹c`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    identity, is_identity, is_orthogonal, is_signed_permutation, mat_mul, mat_t_vec, mat_vec,
    Aabb, Matrix, Vector, MAX_DIM,
};
use crate::numeric::close;

/// Relative tolerance used when deciding that two composed maps coincide.
pub const DEDUP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Similarity,
    DiagonalAffine,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Linear {
    /// `r·O`; `None` means `O = I`.
    Similarity {
        log_ratio: f64,
        orthogonal: Option<Matrix>,
    },
    /// `diag(exp(log_diag))`.
    Diagonal { log_diag: Vector },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionMap {
    dim: usize,
    linear: Linear,
    offset: Vector,
}

fn check_dim(dim: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(invalid("dimension", format!("must be 1, 2 or 3, got {dim}")))
    }
}

fn check_len(dim: usize, got: usize) -> Result<()> {
    if got == dim {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: dim, got })
    }
}

impl ContractionMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            linear: Linear::Similarity {
                log_ratio: 0.0,
                orthogonal: None,
            },
            offset: [0.0; MAX_DIM],
        }
    }

    /// `x ↦ ratio·(x + translation)`.
    pub fn similarity(ratio: f64, translation: &[f64]) -> Result<Self> {
        Self::similarity_with(ratio, None, translation)
    }

    /// `x ↦ ratio·O·(x + translation)`.
    pub fn similarity_with(ratio: f64, orthogonal: Option<Matrix>, translation: &[f64]) -> Result<Self> {
        let dim = translation.len();
        check_dim(dim)?;
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(invalid("ratio", format!("must lie in (0,1), got {ratio}")));
        }
        let orthogonal = match orthogonal {
            Some(m) if !is_orthogonal(&m, dim) => {
                return Err(invalid("orthogonal", "matrix is not orthogonal within 1e-12"));
            }
            Some(m) if is_identity(&m, dim) => None,
            other => other,
        };
        let mut alpha = [0.0; MAX_DIM];
        alpha[..dim].copy_from_slice(translation);
        let rotated = match &orthogonal {
            Some(m) => mat_vec(m, &alpha, dim),
            None => alpha,
        };
        let mut offset = [0.0; MAX_DIM];
        for a in 0..dim {
            offset[a] = ratio * rotated[a];
        }
        Ok(Self {
            dim,
            linear: Linear::Similarity {
                log_ratio: ratio.ln(),
                orthogonal,
            },
            offset,
        })
    }

    /// Similarity with identity orthogonal part given directly in offset form
    /// `x ↦ exp(log_ratio)·x + offset`.
    pub fn similarity_log(log_ratio: f64, offset: &[f64]) -> Result<Self> {
        let dim = offset.len();
        check_dim(dim)?;
        if !(log_ratio < 0.0) || !log_ratio.is_finite() {
            return Err(invalid("ratio", format!("log ratio must be finite and < 0, got {log_ratio}")));
        }
        let mut c = [0.0; MAX_DIM];
        c[..dim].copy_from_slice(offset);
        Ok(Self {
            dim,
            linear: Linear::Similarity {
                log_ratio,
                orthogonal: None,
            },
            offset: c,
        })
    }

    /// `x ↦ diag(diag)·(x + translation)`.
    pub fn diagonal(diag: &[f64], translation: &[f64]) -> Result<Self> {
        let dim = translation.len();
        check_dim(dim)?;
        check_len(dim, diag.len())?;
        let mut log_diag = [0.0; MAX_DIM];
        let mut offset = [0.0; MAX_DIM];
        for a in 0..dim {
            if !(diag[a] > 0.0 && diag[a] < 1.0) {
                return Err(invalid(format!("diag/{a}"), format!("must lie in (0,1), got {}", diag[a])));
            }
            log_diag[a] = diag[a].ln();
            offset[a] = diag[a] * translation[a];
        }
        Ok(Self {
            dim,
            linear: Linear::Diagonal { log_diag },
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn linear(&self) -> &Linear {
        &self.linear
    }

    pub fn kind(&self) -> MapKind {
        match self.linear {
            Linear::Similarity { .. } => MapKind::Similarity,
            Linear::Diagonal { .. } => MapKind::DiagonalAffine,
        }
    }

    /// Image of the origin.
    pub fn offset(&self) -> &Vector {
        &self.offset
    }

    pub fn orthogonal(&self) -> Option<&Matrix> {
        match &self.linear {
            Linear::Similarity { orthogonal, .. } => orthogonal.as_ref(),
            Linear::Diagonal { .. } => None,
        }
    }

    /// Per-axis log contraction. For a similarity every axis carries the ratio.
    pub fn log_scales(&self) -> Vector {
        match &self.linear {
            Linear::Similarity { log_ratio, .. } => {
                let mut v = [0.0; MAX_DIM];
                v[..self.dim].iter_mut().for_each(|x| *x = *log_ratio);
                v
            }
            Linear::Diagonal { log_diag } => *log_diag,
        }
    }

    /// `log R`: log of the largest contraction factor (operator norm).
    pub fn log_r_max(&self) -> f64 {
        let s = self.log_scales();
        s[..self.dim].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `log r`: log of the smallest contraction factor.
    pub fn log_r_min(&self) -> f64 {
        let s = self.log_scales();
        s[..self.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Similarity ratio (or the largest diagonal factor).
    pub fn ratio(&self) -> f64 {
        self.log_r_max().exp()
    }

    pub fn diag(&self) -> Vec<f64> {
        let s = self.log_scales();
        s[..self.dim].iter().map(|x| x.exp()).collect()
    }

    /// `α = L⁻¹c`. Not meaningful once the linear part has underflowed.
    pub fn translation(&self) -> Vec<f64> {
        let v = self.apply_linear_inverse(&self.offset);
        v[..self.dim].to_vec()
    }

    fn apply_linear(&self, x: &Vector) -> Vector {
        match &self.linear {
            Linear::Similarity {
                log_ratio,
                orthogonal,
            } => {
                let r = log_ratio.exp();
                let y = match orthogonal {
                    Some(m) => mat_vec(m, x, self.dim),
                    None => *x,
                };
                let mut out = [0.0; MAX_DIM];
                for a in 0..self.dim {
                    out[a] = r * y[a];
                }
                out
            }
            Linear::Diagonal { log_diag } => {
                let mut out = [0.0; MAX_DIM];
                for a in 0..self.dim {
                    out[a] = log_diag[a].exp() * x[a];
                }
                out
            }
        }
    }

    fn apply_linear_inverse(&self, y: &Vector) -> Vector {
        match &self.linear {
            Linear::Similarity {
                log_ratio,
                orthogonal,
            } => {
                let inv = (-log_ratio).exp();
                let mut z = [0.0; MAX_DIM];
                for a in 0..self.dim {
                    z[a] = inv * y[a];
                }
                match orthogonal {
                    Some(m) => mat_t_vec(m, &z, self.dim),
                    None => z,
                }
            }
            Linear::Diagonal { log_diag } => {
                let mut out = [0.0; MAX_DIM];
                for a in 0..self.dim {
                    out[a] = y[a] * (-log_diag[a]).exp();
                }
                out
            }
        }
    }

    pub fn apply_vec(&self, x: &Vector) -> Vector {
        let mut y = self.apply_linear(x);
        for a in 0..self.dim {
            y[a] += self.offset[a];
        }
        y
    }

    pub fn apply_inverse_vec(&self, y: &Vector) -> Vector {
        let mut z = [0.0; MAX_DIM];
        for a in 0..self.dim {
            z[a] = y[a] - self.offset[a];
        }
        self.apply_linear_inverse(&z)
    }

    /// Evaluates the map at `x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x.len())?;
        let mut v = [0.0; MAX_DIM];
        v[..self.dim].copy_from_slice(x);
        Ok(self.apply_vec(&v)[..self.dim].to_vec())
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &ContractionMap) -> Result<ContractionMap> {
        check_len(self.dim, inner.dim)?;
        let dim = self.dim;
        let linear = match (&self.linear, &inner.linear) {
            (
                Linear::Similarity {
                    log_ratio: a,
                    orthogonal: oa,
                },
                Linear::Similarity {
                    log_ratio: b,
                    orthogonal: ob,
                },
            ) => {
                let orthogonal = match (oa, ob) {
                    (None, None) => None,
                    (Some(m), None) | (None, Some(m)) => Some(*m),
                    (Some(m), Some(n)) => {
                        let p = mat_mul(m, n, dim);
                        if is_identity(&p, dim) {
                            None
                        } else {
                            Some(p)
                        }
                    }
                };
                Linear::Similarity {
                    log_ratio: a + b,
                    orthogonal,
                }
            }
            (Linear::Similarity { orthogonal: Some(_), .. }, Linear::Diagonal { .. })
            | (Linear::Diagonal { .. }, Linear::Similarity { orthogonal: Some(_), .. }) => {
                return Err(Error::UnsupportedComposition(
                    "orthogonal part combined with a diagonal-affine map gives a non-diagonal linear part".into(),
                ));
            }
            (
                Linear::Similarity {
                    log_ratio,
                    orthogonal: None,
                },
                Linear::Diagonal { log_diag },
            )
            | (
                Linear::Diagonal { log_diag },
                Linear::Similarity {
                    log_ratio,
                    orthogonal: None,
                },
            ) => {
                let mut d = *log_diag;
                for x in d[..dim].iter_mut() {
                    *x += log_ratio;
                }
                Linear::Diagonal { log_diag: d }
            }
            (Linear::Diagonal { log_diag: a }, Linear::Diagonal { log_diag: b }) => {
                let mut d = [0.0; MAX_DIM];
                for i in 0..dim {
                    d[i] = a[i] + b[i];
                }
                Linear::Diagonal { log_diag: d }
            }
        };
        let mut offset = self.apply_linear(&inner.offset);
        for a in 0..dim {
            offset[a] += self.offset[a];
        }
        Ok(ContractionMap {
            dim,
            linear,
            offset,
        })
    }

    /// Whether images of axis-aligned boxes are axis-aligned boxes.
    pub fn preserves_axis_alignment(&self) -> bool {
        match self.orthogonal() {
            None => true,
            Some(m) => is_signed_permutation(m, self.dim),
        }
    }

    /// Exact image of an axis-aligned box. Refuses maps whose image would
    /// not be axis-aligned.
    pub fn image_box(&self, b: &Aabb) -> Result<Aabb> {
        if !self.preserves_axis_alignment() {
            return Err(Error::UnsupportedGeometry(
                "rotation maps the box to a non-axis-aligned set".into(),
            ));
        }
        Ok(self.bounding_image(b))
    }

    /// Axis-aligned bounding box of the image (exact when
    /// [`Self::preserves_axis_alignment`] holds).
    pub fn bounding_image(&self, b: &Aabb) -> Aabb {
        Aabb::bounding(self.dim, b.corners().map(|c| self.apply_vec(&c)))
            .expect("a box has at least one corner")
    }

    /// Parameter equality within [`DEDUP_TOL`] (relative).
    pub fn approx_eq(&self, other: &ContractionMap) -> bool {
        if self.dim != other.dim || self.kind() != other.kind() {
            return false;
        }
        let (sa, sb) = (self.log_scales(), other.log_scales());
        if !(0..self.dim).all(|a| close(sa[a], sb[a], DEDUP_TOL)) {
            return false;
        }
        let oa = self.orthogonal().copied().unwrap_or_else(identity);
        let ob = other.orthogonal().copied().unwrap_or_else(identity);
        for i in 0..self.dim {
            for j in 0..self.dim {
                if !close(oa[i][j], ob[i][j], DEDUP_TOL) {
                    return false;
                }
            }
        }
        (0..self.dim).all(|a| close(self.offset[a], other.offset[a], DEDUP_TOL))
    }

    /// Lexicographic sort key over the canonical parameters.
    pub(crate) fn sort_key(&self) -> Vec<f64> {
        let mut key = Vec::with_capacity(4 * MAX_DIM + MAX_DIM * MAX_DIM);
        key.push(match self.kind() {
            MapKind::Similarity => 0.0,
            MapKind::DiagonalAffine => 1.0,
        });
        let s = self.log_scales();
        key.extend_from_slice(&s[..self.dim]);
        let o = self.orthogonal().copied().unwrap_or_else(identity);
        for row in o.iter().take(self.dim) {
            key.extend_from_slice(&row[..self.dim]);
        }
        key.extend_from_slice(&self.offset[..self.dim]);
        key
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_2d;

    #[test]
    fn halving_map_at_zero() {
        let m = ContractionMap::similarity(0.5, &[1.0]).unwrap();
        assert_eq!(m.apply(&[0.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn fixed_point_of_pure_scaling() {
        let m = ContractionMap::similarity(1.0 / 3.0, &[0.0]).unwrap();
        assert_eq!(m.apply(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn diagonal_map_of_the_unit_corner() {
        let m = ContractionMap::diagonal(&[0.5, 0.4], &[0.0, 0.0]).unwrap();
        let y = m.apply(&[1.0, 1.0]).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15 && (y[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn apply_rejects_wrong_dimension() {
        let m = ContractionMap::similarity(0.5, &[0.0]).unwrap();
        assert!(matches!(
            m.apply(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn ratio_out_of_range_is_rejected() {
        assert!(ContractionMap::similarity(1.2, &[0.0]).is_err());
        assert!(ContractionMap::similarity(0.0, &[0.0]).is_err());
        assert!(ContractionMap::diagonal(&[0.5, 1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn translation_round_trips() {
        let m = ContractionMap::similarity_with(0.25, Some(rotation_2d(0.7)), &[1.5, -2.0]).unwrap();
        let t = m.translation();
        assert!((t[0] - 1.5).abs() < 1e-12 && (t[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_with_diagonal_does_not_compose() {
        let rot = ContractionMap::similarity_with(0.5, Some(rotation_2d(0.3)), &[0.0, 0.0]).unwrap();
        let d = ContractionMap::diagonal(&[0.5, 0.4], &[0.0, 0.0]).unwrap();
        assert!(matches!(rot.compose(&d), Err(Error::UnsupportedComposition(_))));
        assert!(matches!(d.compose(&rot), Err(Error::UnsupportedComposition(_))));
    }

    #[test]
    fn composition_matches_pointwise_evaluation() {
        let a = ContractionMap::similarity_with(0.6, Some(rotation_2d(1.1)), &[0.3, 0.1]).unwrap();
        let b = ContractionMap::similarity(0.3, &[-0.2, 0.5]).unwrap();
        let ab = a.compose(&b).unwrap();
        let x = [0.7, -0.4];
        let direct = a.apply(&b.apply(&x).unwrap()).unwrap();
        let composed = ab.apply(&x).unwrap();
        for i in 0..2 {
            assert!((direct[i] - composed[i]).abs() < 1e-14);
        }
        let back = ab.apply_inverse_vec(&[composed[0], composed[1], 0.0]);
        assert!((back[0] - x[0]).abs() < 1e-12 && (back[1] - x[1]).abs() < 1e-12);
    }

    #[test]
    fn rotated_boxes_are_refused() {
        let rot = ContractionMap::similarity_with(0.5, Some(rotation_2d(0.3)), &[0.0, 0.0]).unwrap();
        assert!(rot.image_box(&Aabb::unit(2)).is_err());
        let flip = ContractionMap::similarity_with(0.5, Some(rotation_2d(std::f64::consts::PI)), &[0.0, 0.0]).unwrap();
        let img = flip.image_box(&Aabb::unit(2)).unwrap();
        assert!((img.lo[0] + 0.5).abs() < 1e-12 && img.hi[0].abs() < 1e-12);
    }
}
