//! Finite-depth separation diagnostics: the open set condition on candidate
//! box sequences, strong separation, weak homogeneity (`γ₂`), bounded
//! distortion (`γ₃`), neighbor counts (`γ₁`, `γ₄`, `γ₄′`) and the
//! near-identity overlap detector.
//!
//! "Holds" always means "no violation found up to the examined depth".

use rayon::slice::ParallelSliceMut;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Aabb, Vector, MAX_DIM};
use crate::map::{ContractionMap, MapKind};
use crate::numeric::CompensatedSum;
use crate::spatial::{neighbor_counts, TOUCH_SLACK};
use crate::system::{Layer, LayerSystem};
use crate::words::{CutsetWalker, WordView};

/// Candidate open sets `V_n`, each a union of pairwise disjoint open boxes.
#[derive(Debug, Clone, PartialEq)]
pub enum BoxSequence {
    Constant(Vec<Aabb>),
    Explicit { prefix: Vec<Vec<Aabb>>, cycle: Vec<Vec<Aabb>> },
    /// The open set shipped with the system's built-in family.
    Family,
}

impl BoxSequence {
    pub fn boxes(&self, sys: &LayerSystem, n: usize) -> Result<Vec<Aabb>> {
        let boxes = match self {
            BoxSequence::Constant(b) => b.clone(),
            BoxSequence::Explicit { prefix, cycle } => {
                if cycle.is_empty() {
                    return Err(invalid("V/cycle", "must not be empty"));
                }
                if n <= prefix.len() {
                    prefix[n - 1].clone()
                } else {
                    cycle[(n - prefix.len() - 1) % cycle.len()].clone()
                }
            }
            BoxSequence::Family => {
                let fam = sys
                    .family()
                    .ok_or_else(|| invalid("V", "explicit systems ship no open sets; pass boxes"))?;
                vec![fam
                    .open_set(n + sys.offset())
                    .ok_or_else(|| invalid("V", format!("family {} ships no open sets", fam.name())))?]
            }
        };
        if boxes.is_empty() {
            return Err(invalid("V", format!("V_{n} is empty")));
        }
        for b in &boxes {
            if b.dim != sys.dimension() {
                return Err(Error::DimensionMismatch { expected: sys.dimension(), got: b.dim });
            }
            if b.volume() <= 0.0 {
                return Err(invalid("V", format!("V_{n} has a box with empty interior")));
            }
        }
        for (i, a) in boxes.iter().enumerate() {
            for b in &boxes[i + 1..] {
                if a.intersects_open(b, 0.0) {
                    return Err(invalid("V", format!("boxes of V_{n} overlap")));
                }
            }
        }
        Ok(boxes)
    }
}

/// Evidence that a condition fails; [`Witness::verify`] recomputes it.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// `φ_{n,map}(V_{n+1}) ⊄ V_n`.
    NotContained { layer: usize, map: usize, image: Aabb },
    /// Open images of `V_{n+1}` under two maps of layer `n` overlap.
    OpenOverlap { layer: usize, first: usize, second: usize, a: Aabb, b: Aabb },
    /// Closed covers of `φ_{n,first}∘φ_{first_word}(K)` and
    /// `φ_{n,second}∘φ_{second_word}(K)` still meet at the finest scale.
    CoverOverlap {
        layer: usize,
        first: usize,
        first_word: Vec<u32>,
        second: usize,
        second_word: Vec<u32>,
        a: Aabb,
        b: Aabb,
    },
}

impl Witness {
    /// Recomputes the cited images directly from the system.
    pub fn verify(&self, sys: &LayerSystem, v: Option<&BoxSequence>) -> Result<bool> {
        match self {
            Witness::NotContained { layer, map, .. } => {
                let v = v.ok_or_else(|| invalid("V", "needed to verify"))?;
                let l = sys.layer(*layer)?;
                let m = &l.maps()[map - 1];
                let outer = v.boxes(sys, *layer)?;
                let inner = v.boxes(sys, layer + 1)?;
                let slack = containment_slack(sys);
                for b in &inner {
                    let img = m.image_box(b)?;
                    if !outer.iter().any(|o| o.contains_box(&img, slack)) {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Witness::OpenOverlap { layer, first, second, .. } => {
                let v = v.ok_or_else(|| invalid("V", "needed to verify"))?;
                let l = sys.layer(*layer)?;
                let inner = v.boxes(sys, layer + 1)?;
                let (m1, m2) = (&l.maps()[first - 1], &l.maps()[second - 1]);
                for a in &inner {
                    for b in &inner {
                        if m1.image_box(a)?.intersects_open(&m2.image_box(b)?, 0.0) {
                            return Ok(true);
                        }
                    }
                }
                Ok(false)
            }
            Witness::CoverOverlap { layer, first, first_word, second, second_word, .. } => {
                let tail = sys.shifted(*layer);
                let l = sys.layer(*layer)?;
                let a = cover_box(&tail, &l.maps()[first - 1], first_word)?;
                let b = cover_box(&tail, &l.maps()[second - 1], second_word)?;
                Ok(a.intersects_closed(&b, TOUCH_SLACK * a.diameter().max(b.diameter())))
            }
        }
    }
}

fn cover_box(tail: &LayerSystem, head: &ContractionMap, word: &[u32]) -> Result<Aabb> {
    let mut m = head.clone();
    for (i, &d) in word.iter().enumerate() {
        let l = tail.layer(i + 1)?;
        let next = l
            .maps()
            .get(d as usize - 1)
            .ok_or_else(|| Error::InvalidWord(format!("symbol {d} at layer {}", i + 1)))?;
        m = m.compose(next)?;
    }
    Ok(m.bounding_image(tail.ambient()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    HoldsUpToDepth { depth: usize },
    FailsAt { witness: Witness },
    Inconclusive { reason: String },
}

fn containment_slack(sys: &LayerSystem) -> f64 {
    1e-12 * sys.ambient().diameter().max(1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct MoscReport {
    pub verdict: Verdict,
    /// `L^d(V_n)` for `n = 1..=nmax+1`.
    pub measure: Vec<f64>,
    /// Running infimum of `measure`.
    pub running_inf: Vec<f64>,
    /// The trace suggests `inf L^d(V_n) = 0` (trailing minimum below 3/4 of the leading one).
    pub measure_decays: bool,
}

/// Checks `φ_{n,j}(V_{n+1}) ⊆ V_n` and pairwise disjointness of the open
/// images for `n ≤ nmax`, and traces `L^d(V_n)`.
pub fn check_mosc(sys: &LayerSystem, v: &BoxSequence, nmax: usize) -> Result<MoscReport> {
    if nmax == 0 {
        return Err(invalid("depth", "must be at least 1"));
    }
    let slack = containment_slack(sys);
    let mut measure = Vec::with_capacity(nmax + 1);
    let mut verdict = None;
    let mut current = v.boxes(sys, 1)?;
    let x = sys.ambient();
    for n in 1..=nmax {
        measure.push(current.iter().map(Aabb::volume).sum::<f64>());
        let next = v.boxes(sys, n + 1)?;
        if verdict.is_none() {
            for b in current.iter() {
                if !x.contains_box(b, slack) {
                    return Err(invalid("V", format!("V_{n} is not contained in the ambient box")));
                }
            }
            let layer = sys.layer(n)?;
            verdict = mosc_layer(&layer, &current, &next, slack)?;
        }
        current = next;
    }
    measure.push(current.iter().map(Aabb::volume).sum::<f64>());
    let mut running_inf = Vec::with_capacity(measure.len());
    let mut inf = f64::INFINITY;
    for &m in &measure {
        inf = inf.min(m);
        running_inf.push(inf);
    }
    let half = measure.len() / 2;
    let lead = measure[..half.max(1)].iter().copied().fold(f64::INFINITY, f64::min);
    let trail = measure[half..].iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MoscReport {
        verdict: verdict.unwrap_or(Verdict::HoldsUpToDepth { depth: nmax }),
        measure,
        running_inf,
        measure_decays: trail < 0.75 * lead,
    })
}

fn mosc_layer(layer: &Layer, outer: &[Aabb], inner: &[Aabb], slack: f64) -> Result<Option<Verdict>> {
    let n = layer.index();
    let mut images: Vec<(usize, Aabb)> = Vec::with_capacity(layer.len() * inner.len());
    for (j, m) in layer.maps().iter().enumerate() {
        for b in inner {
            let img = m.image_box(b)?;
            if !outer.iter().any(|o| o.contains_box(&img, slack)) {
                return Ok(Some(Verdict::FailsAt {
                    witness: Witness::NotContained { layer: n, map: j + 1, image: img },
                }));
            }
            images.push((j, img));
        }
    }
    // Sweep along axis 0 in order of lower bounds; only boxes whose axis-0
    // projections overlap can have overlapping interiors.
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.sort_by(|&a, &b| images[a].1.lo[0].total_cmp(&images[b].1.lo[0]).then(a.cmp(&b)));
    let mut active: Vec<usize> = Vec::new();
    let mut best: Option<(usize, usize)> = None;
    for &i in &order {
        let bi = &images[i].1;
        active.retain(|&k| images[k].1.hi[0] > bi.lo[0]);
        for &k in &active {
            if images[k].0 != images[i].0 && images[k].1.intersects_open(bi, 0.0) {
                let (p, q) = (images[k].0.min(images[i].0), images[k].0.max(images[i].0));
                if best.is_none_or(|b| (p, q) < b) {
                    best = Some((p, q));
                }
            }
        }
        active.push(i);
    }
    Ok(best.map(|(p, q)| {
        let a = images.iter().find(|im| im.0 == p).unwrap().1;
        let b = images.iter().find(|im| im.0 == q).unwrap().1;
        Verdict::FailsAt { witness: Witness::OpenOverlap { layer: n, first: p + 1, second: q + 1, a, b } }
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct MsscReport {
    pub verdict: Verdict,
    /// Smallest cover box size examined, relative to `|X|`.
    pub eps_min: f64,
    /// Largest number of live candidate pairs in any layer.
    pub max_pairs: usize,
}

struct CoverPiece {
    head: usize,
    word: Vec<u32>,
    map: ContractionMap,
    bbox: Aabb,
}

/// Strong separation per layer: for `n ≤ nmax`, the sets `φ_{n,j}(K_{n+1})`
/// are covered by images of ever finer cylinders until covers of different
/// maps separate (holds), still meet at `eps_min·|X|` (fails), or more than
/// `limit` candidate pairs are alive (inconclusive).
pub fn check_mssc(sys: &LayerSystem, nmax: usize, eps_min: f64, limit: usize) -> Result<MsscReport> {
    if nmax == 0 {
        return Err(invalid("depth", "must be at least 1"));
    }
    if !(eps_min > 0.0 && eps_min < 1.0) {
        return Err(invalid("eps", "must lie in (0,1)"));
    }
    let diam = sys.ambient().diameter();
    let mut max_pairs = 0;
    for n in 1..=nmax {
        let layer = sys.layer(n)?;
        let tail = sys.shifted(n);
        let x = *tail.ambient();
        let mut tail_layers: Vec<Layer> = Vec::new();
        let mut pieces: Vec<CoverPiece> = layer
            .maps()
            .iter()
            .enumerate()
            .map(|(j, m)| CoverPiece { head: j, word: Vec::new(), map: m.clone(), bbox: m.bounding_image(&x) })
            .collect();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for a in 0..pieces.len() {
            for b in a + 1..pieces.len() {
                pairs.push((a, b));
            }
        }
        loop {
            let touching: Vec<(usize, usize)> = pairs
                .iter()
                .copied()
                .filter(|&(a, b)| {
                    let (pa, pb) = (&pieces[a], &pieces[b]);
                    pa.head != pb.head
                        && pa.bbox.intersects_closed(&pb.bbox, TOUCH_SLACK * pa.bbox.diameter().max(pb.bbox.diameter()))
                })
                .collect();
            max_pairs = max_pairs.max(touching.len());
            if touching.is_empty() {
                break;
            }
            if touching.len() > limit {
                return Ok(MsscReport {
                    verdict: Verdict::Inconclusive {
                        reason: format!("layer {n}: more than {limit} overlapping cover pairs"),
                    },
                    eps_min,
                    max_pairs,
                });
            }
            // Pairs whose pieces are already below the resolution are witnesses.
            if let Some(&(a, b)) = touching.iter().find(|&&(a, b)| {
                pieces[a].bbox.diameter() <= eps_min * diam && pieces[b].bbox.diameter() <= eps_min * diam
            }) {
                let (pa, pb) = (&pieces[a], &pieces[b]);
                let (first, second) = if pa.head < pb.head { (pa, pb) } else { (pb, pa) };
                return Ok(MsscReport {
                    verdict: Verdict::FailsAt {
                        witness: Witness::CoverOverlap {
                            layer: n,
                            first: first.head + 1,
                            first_word: first.word.clone(),
                            second: second.head + 1,
                            second_word: second.word.clone(),
                            a: first.bbox,
                            b: second.bbox,
                        },
                    },
                    eps_min,
                    max_pairs,
                });
            }
            // Split the larger piece of every live pair.
            let mut split: Vec<bool> = vec![false; pieces.len()];
            for &(a, b) in &touching {
                let big = if pieces[a].bbox.diameter() >= pieces[b].bbox.diameter() { a } else { b };
                split[big] = true;
            }
            let mut children_of: Vec<Vec<usize>> = vec![Vec::new(); pieces.len()];
            let old = pieces.len();
            for p in 0..old {
                if !split[p] {
                    continue;
                }
                let depth = pieces[p].word.len() + 1;
                while tail_layers.len() < depth {
                    tail_layers.push(tail.layer(tail_layers.len() + 1)?);
                }
                let l = &tail_layers[depth - 1];
                for (j, m) in l.maps().iter().enumerate() {
                    let map = pieces[p].map.compose(m)?;
                    let bbox = map.bounding_image(&x);
                    let mut word = pieces[p].word.clone();
                    word.push(j as u32 + 1);
                    children_of[p].push(pieces.len());
                    pieces.push(CoverPiece { head: pieces[p].head, word, map, bbox });
                }
            }
            let expand = |p: usize| -> Vec<usize> {
                if children_of[p].is_empty() {
                    vec![p]
                } else {
                    children_of[p].clone()
                }
            };
            let mut next = Vec::new();
            for &(a, b) in &touching {
                for ca in expand(a) {
                    for cb in expand(b) {
                        next.push((ca, cb));
                    }
                }
            }
            pairs = next;
            if pairs.len() > limit.saturating_mul(16) {
                return Ok(MsscReport {
                    verdict: Verdict::Inconclusive {
                        reason: format!("layer {n}: candidate pairs exceed the limit {limit}"),
                    },
                    eps_min,
                    max_pairs,
                });
            }
        }
    }
    Ok(MsscReport { verdict: Verdict::HoldsUpToDepth { depth: nmax }, eps_min, max_pairs })
}

/// Verdict on a sequence of samples that should stay bounded.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "growth", rename_all = "snake_case")]
pub enum Growth {
    Bounded { sup: f64 },
    Unbounded { last: f64 },
    Inconclusive { reason: String },
}

/// Samples at or above this value count as unbounded.
pub const GROWTH_CEILING: f64 = 1e3;

/// `Unbounded` when the last sample reaches [`GROWTH_CEILING`], or the
/// trailing half increases strictly and grows by at least half; otherwise
/// `Bounded` with the observed supremum.
pub fn classify_growth(values: &[f64]) -> Growth {
    let Some(&last) = values.last() else {
        return Growth::Inconclusive { reason: "no samples".into() };
    };
    if last >= GROWTH_CEILING {
        return Growth::Unbounded { last };
    }
    let tail = &values[values.len() / 2..];
    if tail.len() >= 2 && tail.windows(2).all(|w| w[1] > w[0]) && last >= 1.5 * tail[0] {
        return Growth::Unbounded { last };
    }
    Growth::Bounded { sup: values.iter().copied().fold(f64::NEG_INFINITY, f64::max) }
}

#[derive(Debug, Clone, Serialize)]
pub struct Sample {
    pub log_b: f64,
    pub words: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub samples: Vec<Sample>,
    pub growth: Growth,
    /// Set when the grid stopped early.
    pub stopped: Option<String>,
}

fn run_grid<F>(log_grid: &[f64], mut f: F) -> Result<GrowthReport>
where
    F: FnMut(f64) -> Result<(usize, f64)>,
{
    let mut samples = Vec::new();
    let mut stopped = None;
    for &log_b in log_grid {
        match f(log_b) {
            Ok((words, value)) => samples.push(Sample { log_b, words, value }),
            Err(e @ (Error::LimitExceeded { .. } | Error::ProviderCapability { .. })) => {
                stopped = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
    Ok(GrowthReport { growth: classify_growth(&values), samples, stopped })
}

fn axis_extremes(walker: &CutsetWalker, dim: usize, limit: usize) -> Result<(usize, Vector, Vector)> {
    let mut hi = [f64::NEG_INFINITY; MAX_DIM];
    let mut lo = [f64::INFINITY; MAX_DIM];
    let count = walker.visit(limit, |w: WordView<'_>| {
        for a in 0..dim {
            hi[a] = hi[a].max(w.log_scales[a]);
            lo[a] = lo[a].min(w.log_scales[a]);
        }
        Ok(())
    })?;
    Ok((count, lo, hi))
}

/// `γ₂(b) = sup_{I,J ∈ I_b} sup_{x≠y} |φ_J x − φ_J y| / |φ_I x − φ_I y|`.
/// For diagonal linear parts the inner supremum is attained on a coordinate
/// axis, giving `max_a max_J L_{J,a} / min_I L_{I,a}`.
pub fn gamma2_mwhp(sys: &LayerSystem, log_grid: &[f64], limit: usize) -> Result<GrowthReport> {
    let dim = sys.dimension();
    run_grid(log_grid, |log_b| {
        let walker = CutsetWalker::from_log_scale(sys, log_b)?;
        let (count, lo, hi) = axis_extremes(&walker, dim, limit)?;
        let v = (0..dim).map(|a| hi[a] - lo[a]).fold(f64::NEG_INFINITY, f64::max).exp();
        Ok((count, v))
    })
}

/// `γ₃(n) = max_{|I| ≤ n} R_I / r_I`, computed layer by layer as
/// `max_{a,b} ∏_i max_j L_{i,j,a} / L_{i,j,b}` without enumerating words.
pub fn gamma3_mbdp(sys: &LayerSystem, depth: usize) -> Result<GrowthReport> {
    if depth == 0 {
        return Err(invalid("depth", "must be at least 1"));
    }
    let dim = sys.dimension();
    let mut acc = vec![vec![CompensatedSum::new(); dim]; dim];
    let mut best = 0.0f64;
    let mut cum_c2 = CompensatedSum::new();
    let mut samples = Vec::with_capacity(depth);
    for n in 1..=depth {
        let p = sys.profile(n)?;
        cum_c2.add(p.log_c2);
        for a in 0..dim {
            for b in 0..dim {
                if a == b {
                    continue;
                }
                let m = p
                    .groups
                    .iter()
                    .map(|g| g.log_scales[a] - g.log_scales[b])
                    .fold(f64::NEG_INFINITY, f64::max);
                acc[a][b].add(m);
                best = best.max(acc[a][b].value());
            }
        }
        samples.push(Sample { log_b: cum_c2.value(), words: n, value: best.exp() });
    }
    let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
    Ok(GrowthReport { growth: classify_growth(&values), samples, stopped: None })
}

/// Image boxes of the cutset words: `φ_J(X)`, or `φ_J(U_{|J|+1})` when `u` is given.
fn cutset_boxes(
    sys: &LayerSystem,
    log_b: f64,
    limit: usize,
    u: Option<&BoxSequence>,
) -> Result<(Vec<Aabb>, Vec<usize>, Vec<ContractionMap>)> {
    let walker = CutsetWalker::from_log_scale(sys, log_b)?;
    let x = *sys.ambient();
    let items = walker.par_collect(limit, |w| (w.digits.len(), w.map.clone()))?;
    let mut u_cache: Vec<Option<Vec<Aabb>>> = Vec::new();
    let mut boxes = Vec::with_capacity(items.len());
    let mut owner_of = Vec::with_capacity(items.len());
    for (o, (len, m)) in items.iter().enumerate() {
        match u {
            None => {
                boxes.push(m.bounding_image(&x));
                owner_of.push(o);
            }
            Some(seq) => {
                if u_cache.len() <= *len {
                    u_cache.resize(len + 1, None);
                }
                if u_cache[*len].is_none() {
                    u_cache[*len] = Some(seq.boxes(sys, len + 1)?);
                }
                for b in u_cache[*len].as_ref().unwrap() {
                    boxes.push(m.bounding_image(b));
                    owner_of.push(o);
                }
            }
        }
    }
    let maps = items.into_iter().map(|(_, m)| m).collect();
    Ok((boxes, owner_of, maps))
}

/// `γ₄′(b)` (words, `dedup = false`) or `γ₄(b)` (distinct maps,
/// `dedup = true`): the largest number of cutset images meeting one image.
/// With `u`, images of `U_{|J|+1}` replace images of `X`, which is `γ₁(b)`.
pub fn gamma4_neighbors(
    sys: &LayerSystem,
    log_grid: &[f64],
    limit: usize,
    dedup: bool,
    u: Option<&BoxSequence>,
) -> Result<GrowthReport> {
    run_grid(log_grid, |log_b| {
        let (boxes, owner_of, maps) = cutset_boxes(sys, log_b, limit, u)?;
        let labels: Vec<usize> = if dedup {
            crate::words::dedup_maps(&maps, sys.ambient().diameter()).1
        } else {
            (0..maps.len()).collect()
        };
        let counts = neighbor_counts(&boxes, &owner_of, &labels);
        Ok((maps.len(), counts.into_iter().max().unwrap_or(0) as f64))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMethod {
    /// All cutset maps share one linear part; gaps are offset differences.
    SharedLinearPart,
    PairEnumeration,
}

#[derive(Debug, Clone, Serialize)]
pub struct NearIdentitySample {
    pub log_b: f64,
    pub words: usize,
    /// Unordered pairs of distinct words with meeting images and gap `≤ θ`.
    pub qualifying_pairs: u64,
    /// Smallest gap over pairs with meeting images.
    pub min_gap: Option<f64>,
    pub method: GapMethod,
    /// Pair enumeration stopped at the limit.
    pub truncated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NearIdentityReport {
    pub theta: f64,
    pub samples: Vec<NearIdentitySample>,
    pub stopped: Option<String>,
}

/// `sup_{x ∈ X} ‖φ_I⁻¹∘φ_J(x) − x‖`, attained at a corner of `X`.
pub fn identity_gap(i: &ContractionMap, j: &ContractionMap, x: &Aabb) -> f64 {
    let dim = x.dim;
    x.corners()
        .map(|c| {
            let y = i.apply_inverse_vec(&j.apply_vec(&c));
            (0..dim).map(|a| (y[a] - c[a]).powi(2)).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

/// `(ln L, c)` of every cutset map when all of them are unreflected 1D
/// similarities sharing one ratio; `None` when the fast path does not apply.
fn shared_scale_offsets(walker: &CutsetWalker, dim: usize, limit: usize) -> Result<Option<(f64, Vec<f64>)>> {
    let plain = dim == 1
        && walker
            .layers()
            .iter()
            .all(|l| l.maps().iter().all(|m| m.kind() == MapKind::Similarity && m.orthogonal().is_none()));
    if !plain {
        return Ok(None);
    }
    let items = walker.par_collect(limit, |w| (w.map.log_r_max(), w.map.offset()[0]))?;
    let Some(&(s0, _)) = items.first() else { return Ok(None) };
    if items.iter().any(|&(s, _)| (s - s0).abs() > 1e-12 * s0.abs().max(1.0)) {
        return Ok(None);
    }
    Ok(Some((s0, items.into_iter().map(|(_, c)| c).collect())))
}

/// Pairs of distinct cutset words whose images meet and whose relative map
/// `φ_I⁻¹∘φ_J` moves no point of `X` by more than `theta`.
pub fn near_identity_gap(
    sys: &LayerSystem,
    log_grid: &[f64],
    limit: usize,
    theta: Option<f64>,
) -> Result<NearIdentityReport> {
    let x = *sys.ambient();
    let theta = theta.unwrap_or(0.01 * x.diameter());
    let mut samples = Vec::new();
    let mut stopped = None;
    for &log_b in log_grid {
        let walker = match CutsetWalker::from_log_scale(sys, log_b) {
            Ok(w) => w,
            Err(e @ Error::ProviderCapability { .. }) => {
                stopped = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let sample = shared_scale_offsets(&walker, sys.dimension(), limit).and_then(|shared| match shared {
            Some((log_scale, offsets)) => Ok(shared_linear_gaps(log_scale, offsets, &x, theta, log_b)),
            None => {
                let maps = walker.par_collect(limit, |w| w.map.clone())?;
                Ok(enumerate_gaps(&maps, &x, theta, log_b, limit))
            }
        });
        match sample {
            Ok(s) => samples.push(s),
            Err(e @ Error::LimitExceeded { .. }) => {
                stopped = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(NearIdentityReport { theta, samples, stopped })
}

/// Maps `x ↦ Lx + c_J` with a common `L`: `φ_I⁻¹φ_J(x) − x = (c_J − c_I)/L`
/// and the images meet iff `|c_J − c_I| ≤ L·|X|`.
fn shared_linear_gaps(log_scale: f64, mut offsets: Vec<f64>, x: &Aabb, theta: f64, log_b: f64) -> NearIdentitySample {
    let scale = log_scale.exp();
    let words = offsets.len();
    offsets.par_sort_unstable_by(f64::total_cmp);
    let meet = scale * x.extent(0) * (1.0 + TOUCH_SLACK);
    let window = (scale * theta).min(meet);
    let mut pairs = 0u64;
    let mut lo = 0usize;
    for i in 0..offsets.len() {
        while offsets[i] - offsets[lo] > window {
            lo += 1;
        }
        pairs += (i - lo) as u64;
    }
    let min_gap = offsets
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d <= meet)
        .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))))
        .map(|d| d / scale);
    NearIdentitySample {
        log_b,
        words,
        qualifying_pairs: pairs,
        min_gap,
        method: GapMethod::SharedLinearPart,
        truncated: false,
    }
}

fn enumerate_gaps(maps: &[ContractionMap], x: &Aabb, theta: f64, log_b: f64, limit: usize) -> NearIdentitySample {
    let boxes: Vec<Aabb> = maps.iter().map(|m| m.bounding_image(x)).collect();
    let index = crate::spatial::BoxIndex::new(&boxes);
    let mut pairs = 0u64;
    let mut examined = 0usize;
    let mut min_gap: Option<f64> = None;
    let mut truncated = false;
    'outer: for (i, q) in boxes.iter().enumerate() {
        let mut hits = Vec::new();
        index.query(q, TOUCH_SLACK * q.diameter(), |j| {
            if j > i {
                hits.push(j);
            }
        });
        hits.sort_unstable();
        for j in hits {
            examined += 1;
            if examined > limit {
                truncated = true;
                break 'outer;
            }
            let g = identity_gap(&maps[i], &maps[j], x);
            min_gap = Some(min_gap.map_or(g, |m| m.min(g)));
            if g <= theta {
                pairs += 1;
            }
        }
    }
    NearIdentitySample {
        log_b,
        words: maps.len(),
        qualifying_pairs: pairs,
        min_gap,
        method: GapMethod::PairEnumeration,
        truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimension::natural_log_scales;
    use crate::family::Family;
    use serde_json::json;

    fn family(name: &str, params: serde_json::Value) -> LayerSystem {
        let f = Family::from_params(name, params.as_object().unwrap()).unwrap();
        LayerSystem::from_family(f, None).unwrap()
    }

    fn constant(r: f64, offsets: &[f64]) -> LayerSystem {
        let maps = offsets
            .iter()
            .map(|&c| ContractionMap::similarity_log(r.ln(), &[c]).unwrap())
            .collect();
        LayerSystem::explicit(Aabb::unit(1), vec![], vec![maps]).unwrap()
    }

    fn unit_v() -> BoxSequence {
        BoxSequence::Constant(vec![Aabb::unit(1)])
    }

    #[test]
    fn ex55_mosc_holds_with_unit_interval() {
        let sys = family("ex55", json!({"rule": "increasing"}));
        let r = check_mosc(&sys, &BoxSequence::Family, 50).unwrap();
        assert_eq!(r.verdict, Verdict::HoldsUpToDepth { depth: 50 });
        assert_eq!(*r.running_inf.last().unwrap(), 1.0);
        assert!(!r.measure_decays);
    }

    #[test]
    fn ex53_phi_mosc_holds_but_measure_decays() {
        let sys = family("ex53", json!({"rho": 1.0, "form": "phi"}));
        let r = check_mosc(&sys, &BoxSequence::Family, 30).unwrap();
        assert_eq!(r.verdict, Verdict::HoldsUpToDepth { depth: 30 });
        assert!(r.measure_decays);
    }

    #[test]
    fn overlapping_toy_fails_at_first_layer() {
        let sys = constant(0.5, &[0.0, 0.25]);
        let v = unit_v();
        let r = check_mosc(&sys, &v, 5).unwrap();
        match &r.verdict {
            Verdict::FailsAt { witness } => {
                assert!(matches!(witness, Witness::OpenOverlap { layer: 1, first: 1, second: 2, .. }));
                assert!(witness.verify(&sys, Some(&v)).unwrap());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mssc_on_cantor_and_unit_interval() {
        let cantor = constant(1.0 / 3.0, &[0.0, 2.0 / 3.0]);
        let r = check_mssc(&cantor, 5, 1e-6, 100_000).unwrap();
        assert_eq!(r.verdict, Verdict::HoldsUpToDepth { depth: 5 });
        let unit = constant(0.5, &[0.0, 0.5]);
        let r = check_mssc(&unit, 5, 1e-6, 100_000).unwrap();
        match &r.verdict {
            Verdict::FailsAt { witness } => {
                assert!(matches!(witness, Witness::CoverOverlap { layer: 1, .. }));
                assert!(witness.verify(&unit, None).unwrap());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ex53_phi_images_of_attractor_are_separated() {
        let sys = family("ex53", json!({"rho": 1.0, "form": "phi"}));
        let r = check_mssc(&sys, 6, 1e-9, 1_000_000).unwrap();
        assert_eq!(r.verdict, Verdict::HoldsUpToDepth { depth: 6 });
    }

    #[test]
    fn gamma2_and_gamma3_for_ex51() {
        let sys = family("ex51", json!({}));
        let grid: Vec<f64> = (1..=10).map(|n| -(n as f64) * std::f64::consts::LN_2).collect();
        let g2 = gamma2_mwhp(&sys, &grid, 1 << 20).unwrap();
        for (n, s) in g2.samples.iter().enumerate() {
            assert!((s.value - 1.25f64.powi(n as i32 + 1)).abs() < 1e-9 * s.value);
        }
        let g3 = gamma3_mbdp(&sys, 10).unwrap();
        for (n, s) in g3.samples.iter().enumerate() {
            assert!((s.value - 1.25f64.powi(n as i32 + 1)).abs() < 1e-9 * s.value);
        }
        assert!(matches!(g3.growth, Growth::Unbounded { .. }));
    }

    #[test]
    fn similarity_systems_have_trivial_distortion() {
        let sys = family("ex55", json!({"rule": "convergent"}));
        let g3 = gamma3_mbdp(&sys, 20).unwrap();
        assert!(g3.samples.iter().all(|s| s.value == 1.0));
        let grid = natural_log_scales(&sys, &(1..=8).collect::<Vec<_>>()).unwrap();
        let g2 = gamma2_mwhp(&sys, &grid, 1 << 20).unwrap();
        assert!(g2.samples.iter().all(|s| (s.value - 1.0).abs() < 1e-12));
    }

    #[test]
    fn diagonal_isotropic_layer_has_no_distortion() {
        let maps = vec![
            ContractionMap::diagonal(&[0.5, 0.5], &[0.0, 0.0]).unwrap(),
            ContractionMap::diagonal(&[0.5, 0.5], &[1.0, 1.0]).unwrap(),
        ];
        let sys = LayerSystem::explicit(Aabb::unit(2), vec![], vec![maps]).unwrap();
        let g3 = gamma3_mbdp(&sys, 5).unwrap();
        assert!(g3.samples.iter().all(|s| s.value == 1.0));
    }

    #[test]
    fn cantor_images_only_meet_themselves() {
        let sys = constant(1.0 / 3.0, &[0.0, 2.0 / 3.0]);
        let grid: Vec<f64> = (1..=8).map(|k| -(k as f64) * 3f64.ln()).collect();
        let g = gamma4_neighbors(&sys, &grid, 1 << 20, false, None).unwrap();
        assert!(g.samples.iter().all(|s| s.value == 1.0));
        let ni = near_identity_gap(&sys, &grid, 1 << 20, None).unwrap();
        assert!(ni.samples.iter().all(|s| s.qualifying_pairs == 0));
    }

    #[test]
    fn ex58_neighbors_at_most_three() {
        let sys = family("ex58", json!({"digits": "full"}));
        let ln2 = std::f64::consts::LN_2;
        let grid: Vec<f64> = [1.0, 2.0, 3.0, 6.0, 7.0, 14.0].iter().map(|e| -e * ln2).collect();
        let g = gamma4_neighbors(&sys, &grid, 1 << 20, true, None).unwrap();
        assert_eq!(g.samples.len(), grid.len());
        assert!(g.samples.iter().all(|s| s.value <= 3.0), "{:?}", g.samples);
    }

    #[test]
    fn gamma4_never_exceeds_gamma4_prime() {
        let sys = family("ex53", json!({"rho": 1.0, "form": "phi"}));
        let grid: Vec<f64> = (1..=6).map(|n| -2.0 * n as f64 * std::f64::consts::LN_2).collect();
        let a = gamma4_neighbors(&sys, &grid, 1 << 20, true, None).unwrap();
        let b = gamma4_neighbors(&sys, &grid, 1 << 20, false, None).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!(x.value <= y.value);
            assert!(x.value >= 1.0);
        }
    }

    #[test]
    fn shared_linear_part_matches_pair_enumeration() {
        let sys = family("ex53", json!({"rho": 0.5, "form": "phi"}));
        let x = *sys.ambient();
        for n in 1..=5 {
            let log_b = -2.0 * n as f64 * std::f64::consts::LN_2;
            let walker = CutsetWalker::from_log_scale(&sys, log_b).unwrap();
            let maps = walker.par_collect(1 << 20, |w| w.map.clone()).unwrap();
            let (log_scale, offsets) = shared_scale_offsets(&walker, 1, 1 << 20).unwrap().unwrap();
            let fast = shared_linear_gaps(log_scale, offsets, &x, 0.005, log_b);
            let slow = enumerate_gaps(&maps, &x, 0.005, log_b, usize::MAX);
            assert_eq!(fast.qualifying_pairs, slow.qualifying_pairs, "n={n}");
            let (f, s) = (fast.min_gap.unwrap(), slow.min_gap.unwrap());
            assert!((f - s).abs() <= 1e-6 * s, "n={n}: {f} vs {s}");
        }
    }

    #[test]
    fn ex56_is_not_weakly_homogeneous() {
        let sys = family("ex56", json!({}));
        let grid: Vec<f64> = (2..=7)
            .map(|n| -(n as f64) * std::f64::consts::LN_2 - (1..n).map(|k| (k as f64).ln()).sum::<f64>())
            .collect();
        let g = gamma2_mwhp(&sys, &grid, 1 << 22).unwrap();
        let v: Vec<f64> = g.samples.iter().map(|s| s.value).collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]), "{v:?}");
        assert!(matches!(g.growth, Growth::Unbounded { .. }), "{v:?}");
    }

    #[test]
    fn ex53_rho_one_neighbor_counts_grow() {
        let sys = family("ex53", json!({"rho": 1.0, "form": "phi"}));
        let grid: Vec<f64> = (1..=7).map(|n| -2.0 * n as f64 * std::f64::consts::LN_2).collect();
        let g = gamma4_neighbors(&sys, &grid, 1 << 20, true, None).unwrap();
        let v: Vec<f64> = g.samples.iter().map(|s| s.value).collect();
        assert!(v.windows(2).all(|w| w[1] >= w[0]) && v[v.len() - 1] > v[0], "{v:?}");
    }

    #[test]
    fn open_set_bounds_weak_separation_count() {
        let sys = family("ex55", json!({"rule": "decreasing"}));
        let v = BoxSequence::Family;
        let m = check_mosc(&sys, &v, 30).unwrap();
        assert_eq!(m.verdict, Verdict::HoldsUpToDepth { depth: 30 });
        let grid = natural_log_scales(&sys, &(1..=10).collect::<Vec<_>>()).unwrap();
        let g = gamma4_neighbors(&sys, &grid, 1 << 20, false, Some(&v)).unwrap();
        assert!(matches!(g.growth, Growth::Bounded { sup } if sup <= 3.0), "{:?}", g.growth);
    }

    #[test]
    fn growth_classification() {
        assert!(matches!(classify_growth(&[1.0, 1.0, 1.0]), Growth::Bounded { sup } if sup == 1.0));
        assert!(matches!(classify_growth(&[1.0, 2.0, 4.0, 8.0]), Growth::Unbounded { .. }));
        assert!(matches!(classify_growth(&[1.0, 2e3]), Growth::Unbounded { .. }));
    }
}
