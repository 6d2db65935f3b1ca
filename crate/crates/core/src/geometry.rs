//! Fixed-capacity vectors, orthogonal matrices and axis-aligned boxes for
//! d ∈ {1, 2, 3}. Unused trailing coordinates are kept at zero.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MAX_DIM: usize = 3;

pub type Vector = [f64; MAX_DIM];
pub type Matrix = [[f64; MAX_DIM]; MAX_DIM];

pub const ORTHO_TOL: f64 = 1e-12;

pub fn vector_from_slice(xs: &[f64]) -> Result<Vector> {
    if xs.is_empty() || xs.len() > MAX_DIM {
        return Err(Error::DimensionMismatch {
            expected: MAX_DIM,
            got: xs.len(),
        });
    }
    let mut v = [0.0; MAX_DIM];
    v[..xs.len()].copy_from_slice(xs);
    Ok(v)
}

pub fn identity() -> Matrix {
    let mut m = [[0.0; MAX_DIM]; MAX_DIM];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn rotation_2d(angle: f64) -> Matrix {
    let (s, c) = angle.sin_cos();
    let mut m = identity();
    m[0][0] = c;
    m[0][1] = -s;
    m[1][0] = s;
    m[1][1] = c;
    m
}

pub fn mat_vec(m: &Matrix, v: &Vector, dim: usize) -> Vector {
    let mut out = [0.0; MAX_DIM];
    for i in 0..dim {
        out[i] = (0..dim).map(|j| m[i][j] * v[j]).sum();
    }
    out
}

pub fn mat_t_vec(m: &Matrix, v: &Vector, dim: usize) -> Vector {
    let mut out = [0.0; MAX_DIM];
    for i in 0..dim {
        out[i] = (0..dim).map(|j| m[j][i] * v[j]).sum();
    }
    out
}

pub fn mat_mul(a: &Matrix, b: &Matrix, dim: usize) -> Matrix {
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..dim {
        for j in 0..dim {
            out[i][j] = (0..dim).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn is_orthogonal(m: &Matrix, dim: usize) -> bool {
    let p = mat_mul(m, &transpose(m, dim), dim);
    (0..dim).all(|i| {
        (0..dim).all(|j| {
            let target = if i == j { 1.0 } else { 0.0 };
            (p[i][j] - target).abs() <= ORTHO_TOL
        })
    })
}

pub fn transpose(m: &Matrix, dim: usize) -> Matrix {
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..dim {
        for j in 0..dim {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn is_identity(m: &Matrix, dim: usize) -> bool {
    (0..dim).all(|i| {
        (0..dim).all(|j| {
            let target = if i == j { 1.0 } else { 0.0 };
            (m[i][j] - target).abs() <= ORTHO_TOL
        })
    })
}

/// Signed permutation matrices map axis-aligned boxes to axis-aligned boxes.
pub fn is_signed_permutation(m: &Matrix, dim: usize) -> bool {
    (0..dim).all(|i| {
        let mut ones = 0;
        for j in 0..dim {
            let a = m[i][j].abs();
            if (a - 1.0).abs() <= ORTHO_TOL {
                ones += 1;
            } else if a > ORTHO_TOL {
                return false;
            }
        }
        ones == 1
    })
}

pub fn norm(v: &Vector, dim: usize) -> f64 {
    v[..dim].iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Closed axis-aligned box. Openness is a property of how callers compare
/// boxes, not of the box itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub dim: usize,
    pub lo: Vector,
    pub hi: Vector,
}

impl Aabb {
    pub fn new(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        let dim = lo.len();
        let lo_v = vector_from_slice(lo)?;
        let hi_v = vector_from_slice(hi)?;
        for a in 0..dim {
            if !(lo_v[a].is_finite() && hi_v[a].is_finite()) || lo_v[a] > hi_v[a] {
                return Err(invalid(
                    format!("box axis {a}"),
                    format!("need finite lo <= hi, got [{}, {}]", lo_v[a], hi_v[a]),
                ));
            }
        }
        Ok(Self {
            dim,
            lo: lo_v,
            hi: hi_v,
        })
    }

    pub fn unit(dim: usize) -> Self {
        let mut hi = [0.0; MAX_DIM];
        hi[..dim].iter_mut().for_each(|h| *h = 1.0);
        Self {
            dim,
            lo: [0.0; MAX_DIM],
            hi,
        }
    }

    pub fn center(&self) -> Vector {
        let mut c = [0.0; MAX_DIM];
        for a in 0..self.dim {
            c[a] = 0.5 * (self.lo[a] + self.hi[a]);
        }
        c
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Euclidean diameter `|X|`.
    pub fn diameter(&self) -> f64 {
        (0..self.dim)
            .map(|a| self.extent(a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.extent(a)).product()
    }

    pub fn contains_point(&self, p: &Vector, slack: f64) -> bool {
        (0..self.dim).all(|a| p[a] >= self.lo[a] - slack && p[a] <= self.hi[a] + slack)
    }

    /// `other ⊆ self` up to an absolute slack.
    pub fn contains_box(&self, other: &Aabb, slack: f64) -> bool {
        (0..self.dim).all(|a| other.lo[a] >= self.lo[a] - slack && other.hi[a] <= self.hi[a] + slack)
    }

    /// Closed-set intersection test; boxes touching within `slack` intersect.
    pub fn intersects_closed(&self, other: &Aabb, slack: f64) -> bool {
        (0..self.dim).all(|a| self.lo[a] <= other.hi[a] + slack && other.lo[a] <= self.hi[a] + slack)
    }

    /// Open-set intersection test; shared faces (within `slack`) do not count.
    pub fn intersects_open(&self, other: &Aabb, slack: f64) -> bool {
        (0..self.dim).all(|a| self.lo[a] < other.hi[a] - slack && other.lo[a] < self.hi[a] - slack)
    }

    pub fn corners(&self) -> impl Iterator<Item = Vector> + '_ {
        (0..(1usize << self.dim)).map(move |mask| {
            let mut c = [0.0; MAX_DIM];
            for a in 0..self.dim {
                c[a] = if mask & (1 << a) == 0 {
                    self.lo[a]
                } else {
                    self.hi[a]
                };
            }
            c
        })
    }

    pub fn bounding(dim: usize, points: impl IntoIterator<Item = Vector>) -> Option<Self> {
        let mut lo = [f64::INFINITY; MAX_DIM];
        let mut hi = [f64::NEG_INFINITY; MAX_DIM];
        let mut any = false;
        for p in points {
            any = true;
            for a in 0..dim {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if !any {
            return None;
        }
        for a in dim..MAX_DIM {
            lo[a] = 0.0;
            hi[a] = 0.0;
        }
        Some(Self { dim, lo, hi })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_and_closed_intersection_differ_on_shared_faces() {
        let a = Aabb::new(&[0.0], &[0.5]).unwrap();
        let b = Aabb::new(&[0.5], &[1.0]).unwrap();
        assert!(a.intersects_closed(&b, 0.0));
        assert!(!a.intersects_open(&b, 0.0));
    }

    #[test]
    fn rotation_is_orthogonal_but_not_a_signed_permutation() {
        let r = rotation_2d(0.3);
        assert!(is_orthogonal(&r, 2));
        assert!(!is_signed_permutation(&r, 2));
        let quarter = rotation_2d(std::f64::consts::FRAC_PI_2);
        assert!(is_signed_permutation(&quarter, 2));
    }

    #[test]
    fn box_rejects_inverted_bounds() {
        assert!(Aabb::new(&[1.0], &[0.0]).is_err());
        assert!(Aabb::new(&[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn unit_square_diameter() {
        assert!((Aabb::unit(2).diameter() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Aabb::unit(3).corners().count(), 8);
    }
}
