//! Neighbor counting for large families of axis-aligned boxes.
//!
//! Boxes belong to owners (words), and owners carry labels (the word
//! itself, or the class of its composed map). For every owner we count the
//! distinct labels of owners having a box that meets one of its boxes.

use rayon::prelude::*;

use crate::geometry::{Aabb, MAX_DIM};

/// Relative slack for closed intersections, scaled by the query box size.
pub const TOUCH_SLACK: f64 = 1e-9;

fn slack_for(b: &Aabb) -> f64 {
    TOUCH_SLACK * (0..b.dim).map(|a| b.extent(a)).fold(0.0, f64::max)
}

/// Uniform grid over box lower corners with cell side at least the largest
/// box extent, stored as a sorted key list.
pub struct BoxIndex<'a> {
    boxes: &'a [Aabb],
    dim: usize,
    cell: f64,
    origin: [f64; MAX_DIM],
    entries: Vec<([i64; MAX_DIM], usize)>,
}

impl<'a> BoxIndex<'a> {
    pub fn new(boxes: &'a [Aabb]) -> Self {
        let dim = boxes.first().map_or(1, |b| b.dim);
        let mut cell = boxes
            .iter()
            .flat_map(|b| (0..dim).map(move |a| b.extent(a)))
            .fold(0.0f64, f64::max);
        let mut origin = [f64::INFINITY; MAX_DIM];
        for b in boxes {
            for a in 0..dim {
                origin[a] = origin[a].min(b.lo[a]);
            }
        }
        for o in origin.iter_mut() {
            if !o.is_finite() {
                *o = 0.0;
            }
        }
        if !(cell > 0.0) {
            cell = 1.0;
        }
        // Keys must stay well inside i64; coarsen the grid for degenerate spreads.
        let reach = boxes
            .iter()
            .flat_map(|b| (0..dim).map(move |a| (a, b.hi[a])))
            .fold(0.0f64, |m, (a, h)| m.max(h - origin[a]));
        if reach / cell > 1e15 {
            cell = reach / 1e15;
        }
        let mut entries: Vec<([i64; MAX_DIM], usize)> = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| (sort_key(cell_of(&b.lo, &origin, cell, dim), dim), i))
            .collect();
        entries.sort_unstable();
        Self { boxes, dim, cell, origin, entries }
    }

    /// Calls `f` with every box index whose closed box meets `q` within `slack`.
    pub fn query(&self, q: &Aabb, slack: f64, mut f: impl FnMut(usize)) {
        let dim = self.dim;
        let mut lo_q = [0.0; MAX_DIM];
        let mut hi_q = [0.0; MAX_DIM];
        for a in 0..dim {
            lo_q[a] = q.lo[a] - self.cell - slack;
            hi_q[a] = q.hi[a] + slack;
        }
        let lo = cell_of(&lo_q, &self.origin, self.cell, dim);
        let hi = cell_of(&hi_q, &self.origin, self.cell, dim);
        // Rows run along axis 0, which is the least significant sort key.
        let mut cur = lo;
        loop {
            let mut row_lo = cur;
            row_lo[0] = lo[0];
            let mut row_hi = cur;
            row_hi[0] = hi[0];
            let (row_lo, row_hi) = (sort_key(row_lo, dim), sort_key(row_hi, dim));
            let start = self.entries.partition_point(|e| e.0 < row_lo);
            for e in &self.entries[start..] {
                if e.0 > row_hi {
                    break;
                }
                if self.boxes[e.1].intersects_closed(q, slack) {
                    f(e.1);
                }
            }
            let mut axis = 1;
            loop {
                if axis >= dim {
                    return;
                }
                if cur[axis] < hi[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = lo[axis];
                axis += 1;
            }
        }
    }
}

fn cell_of(p: &[f64; MAX_DIM], origin: &[f64; MAX_DIM], cell: f64, dim: usize) -> [i64; MAX_DIM] {
    let mut k = [0i64; MAX_DIM];
    for a in 0..dim {
        k[a] = ((p[a] - origin[a]) / cell).floor() as i64;
    }
    k
}

fn sort_key(mut cell: [i64; MAX_DIM], dim: usize) -> [i64; MAX_DIM] {
    cell[..dim].reverse();
    cell
}

/// For every owner, the number of distinct labels among owners with a box
/// meeting one of its boxes (itself included).
///
/// `owner_of[i]` is the owner of `boxes[i]`; `label_of[o]` the label of owner `o`.
pub fn neighbor_counts(boxes: &[Aabb], owner_of: &[usize], label_of: &[usize]) -> Vec<usize> {
    let owners = label_of.len();
    if boxes.is_empty() {
        return vec![0; owners];
    }
    let single = owner_of.len() == owners && owner_of.iter().enumerate().all(|(i, &o)| i == o);
    if single && boxes[0].dim == 1 {
        return interval_counts(boxes, label_of);
    }
    let index = BoxIndex::new(boxes);
    let mut by_owner: Vec<Vec<usize>> = vec![Vec::new(); owners];
    for (i, &o) in owner_of.iter().enumerate() {
        by_owner[o].push(i);
    }
    by_owner
        .par_iter()
        .map(|mine| {
            let mut labels = Vec::new();
            for &i in mine {
                let q = &boxes[i];
                index.query(q, slack_for(q), |j| labels.push(label_of[owner_of[j]]));
            }
            labels.sort_unstable();
            labels.dedup();
            labels.len()
        })
        .collect()
}

/// Exact 1D counts with one interval per owner: the intervals meeting
/// `[lo, hi]` are those starting at or before `hi` minus those ending before `lo`.
fn interval_counts(boxes: &[Aabb], label_of: &[usize]) -> Vec<usize> {
    let labels = label_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut rep: Vec<Option<usize>> = vec![None; labels];
    for (i, &l) in label_of.iter().enumerate() {
        rep[l].get_or_insert(i);
    }
    let reps: Vec<usize> = rep.into_iter().flatten().collect();
    let mut los: Vec<f64> = reps.iter().map(|&i| boxes[i].lo[0]).collect();
    let mut his: Vec<f64> = reps.iter().map(|&i| boxes[i].hi[0]).collect();
    los.par_sort_unstable_by(f64::total_cmp);
    his.par_sort_unstable_by(f64::total_cmp);
    boxes
        .par_iter()
        .map(|q| {
            let s = slack_for(q);
            let started = los.partition_point(|&x| x <= q.hi[0] + s);
            let ended = his.partition_point(|&x| x < q.lo[0] - s);
            started - ended
        })
        .collect()
}

/// Reference all-pairs version of [`neighbor_counts`].
pub fn neighbor_counts_bruteforce(boxes: &[Aabb], owner_of: &[usize], label_of: &[usize]) -> Vec<usize> {
    let owners = label_of.len();
    let mut out = vec![0; owners];
    for (o, slot) in out.iter_mut().enumerate() {
        let mut labels = Vec::new();
        for (i, q) in boxes.iter().enumerate() {
            if owner_of[i] != o {
                continue;
            }
            for (j, b) in boxes.iter().enumerate() {
                if b.intersects_closed(q, slack_for(q)) {
                    labels.push(label_of[owner_of[j]]);
                }
            }
        }
        labels.sort_unstable();
        labels.dedup();
        *slot = labels.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn interval(lo: f64, hi: f64) -> Aabb {
        Aabb::new(&[lo], &[hi]).unwrap()
    }

    #[test]
    fn touching_intervals_are_neighbors() {
        let boxes = vec![interval(0.0, 0.25), interval(0.25, 0.5), interval(0.5, 0.75), interval(0.8, 1.0)];
        let ids: Vec<usize> = (0..4).collect();
        assert_eq!(neighbor_counts(&boxes, &ids, &ids), vec![2, 3, 2, 1]);
    }

    #[test]
    fn labels_collapse_duplicates() {
        let boxes = vec![interval(0.0, 0.5), interval(0.0, 0.5), interval(0.4, 0.9)];
        let ids: Vec<usize> = (0..3).collect();
        assert_eq!(neighbor_counts(&boxes, &ids, &[0, 0, 1]), vec![2, 2, 2]);
        assert_eq!(neighbor_counts(&boxes, &ids, &ids), vec![3, 3, 3]);
    }

    fn arb_boxes(dim: usize) -> impl Strategy<Value = Vec<Aabb>> {
        prop::collection::vec(
            (prop::collection::vec(0.0f64..1.0, dim), prop::collection::vec(0.0f64..0.2, dim)),
            1..60,
        )
        .prop_map(move |v| {
            v.into_iter()
                .map(|(lo, ext)| {
                    let hi: Vec<f64> = lo.iter().zip(&ext).map(|(l, e)| l + e).collect();
                    Aabb::new(&lo, &hi).unwrap()
                })
                .collect()
        })
    }

    fn arb_any_boxes() -> impl Strategy<Value = Vec<Aabb>> {
        (1usize..=3).prop_flat_map(arb_boxes)
    }

    proptest! {
        #[test]
        fn grid_matches_all_pairs(boxes in arb_any_boxes()) {
            let ids: Vec<usize> = (0..boxes.len()).collect();
            prop_assert_eq!(neighbor_counts(&boxes, &ids, &ids), neighbor_counts_bruteforce(&boxes, &ids, &ids));
        }

        #[test]
        fn grouped_owners_match_all_pairs(boxes in arb_any_boxes()) {
            let owners: Vec<usize> = (0..boxes.len()).map(|i| i / 2).collect();
            let labels: Vec<usize> = (0..boxes.len().div_ceil(2)).map(|o| o % 3).collect();
            prop_assert_eq!(
                neighbor_counts(&boxes, &owners, &labels),
                neighbor_counts_bruteforce(&boxes, &owners, &labels)
            );
        }
    }
}
