//! Words over the layer alphabets, composed maps and the scale cutsets
//! `I_b = {J : R_J ≤ b < R_{J⁻}}` with their map families `A_b`.

use std::cmp::Ordering;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Vector, MAX_DIM};
use crate::map::{ContractionMap, DEDUP_TOL};
use crate::numeric::CompensatedSum;
use crate::system::{Layer, LayerSystem, WeightSequence};

/// Deepest word the enumerators will consider.
pub const MAX_WORD_DEPTH: usize = 1 << 20;

/// Most digits [`cutset`] will hold across all stored words (256 MiB).
pub const STORED_DIGIT_BUDGET: usize = 1 << 26;

/// A finite word `j_n j_{n+1} … j_{n+k−1}` with 1-based symbols.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Word {
    pub start: usize,
    pub digits: Vec<u32>,
    #[serde(skip)]
    dim: usize,
    #[serde(skip)]
    log_scales: Vector,
}

impl Word {
    pub fn empty(start: usize, dim: usize) -> Self {
        Self { start, digits: Vec::new(), dim, log_scales: [0.0; MAX_DIM] }
    }

    /// Validates `digits` against the layers of `sys` starting at `start`.
    pub fn new(sys: &LayerSystem, start: usize, digits: Vec<u32>) -> Result<Self> {
        if start == 0 {
            return Err(Error::InvalidWord("words start at layer 1 or later".into()));
        }
        let dim = sys.dimension();
        let mut log_scales = [0.0; MAX_DIM];
        for (i, &d) in digits.iter().enumerate() {
            let layer = sys.layer(start + i)?;
            let m = layer_map(&layer, d)?;
            let s = m.log_scales();
            for a in 0..dim {
                log_scales[a] += s[a];
            }
        }
        Ok(Self { start, digits, dim, log_scales })
    }

    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    pub fn log_scales(&self) -> &Vector {
        &self.log_scales
    }

    /// `log R_J`.
    pub fn log_r_max(&self) -> f64 {
        if self.digits.is_empty() {
            return 0.0;
        }
        self.log_scales[..self.dim].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `log r_J`.
    pub fn log_r_min(&self) -> f64 {
        if self.digits.is_empty() {
            return 0.0;
        }
        self.log_scales[..self.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_prefix_of(&self, other: &Word) -> bool {
        self.start == other.start && other.digits.starts_with(&self.digits)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.digits.is_empty() {
            return write!(f, "ϑ");
        }
        let wide = self.digits.iter().any(|&d| d > 9);
        for (i, d) in self.digits.iter().enumerate() {
            if wide && i > 0 {
                write!(f, ".")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

fn layer_map(layer: &Layer, digit: u32) -> Result<&ContractionMap> {
    let idx = (digit as usize).checked_sub(1);
    idx.and_then(|i| layer.maps().get(i)).ok_or_else(|| {
        Error::InvalidWord(format!(
            "symbol {digit} out of range 1..={} at layer {}",
            layer.len(),
            layer.index()
        ))
    })
}

/// `φ_{n,J} = φ_{n,j_n} ∘ φ_{n+1,j_{n+1}} ∘ ⋯`; the empty word gives the identity.
pub fn compose(sys: &LayerSystem, word: &Word) -> Result<ContractionMap> {
    let mut acc = ContractionMap::identity(sys.dimension());
    for (i, &d) in word.digits.iter().enumerate() {
        let layer = sys.layer(word.start + i)?;
        acc = acc.compose(layer_map(&layer, d)?)?;
    }
    Ok(acc)
}

/// `ln ν(J) = Σ ln p_{i,j_i}` along the word.
pub fn cylinder_weight(sys: &LayerSystem, weights: &WeightSequence, word: &Word) -> Result<f64> {
    let mut total = CompensatedSum::new();
    for (i, &d) in word.digits.iter().enumerate() {
        let layer = sys.layer(word.start + i)?;
        layer_map(&layer, d)?;
        total.add(weights.log_weights(&layer)?[d as usize - 1]);
    }
    Ok(total.value())
}

/// Right-side slack of the cutset predicate `log R_J ≤ log b`, so that grid
/// scales equal to some `R_J` in exact arithmetic emit that word.
pub fn tie_tolerance(log_b: f64) -> f64 {
    1e-9 * log_b.abs().max(1.0)
}

fn check_scale(b: f64) -> Result<f64> {
    if b > 0.0 && b < 1.0 {
        Ok(b.ln())
    } else {
        Err(invalid("b", format!("scale must lie in (0,1), got {b}")))
    }
}

/// Smallest `k` with `Σ_{i≤k} log c_{2,i} ≤ threshold`: no cutset word is longer.
pub fn max_cutset_depth(sys: &LayerSystem, threshold: f64) -> Result<usize> {
    let mut sum = CompensatedSum::new();
    let mut k = 0;
    while sum.value() > threshold {
        k += 1;
        if k > MAX_WORD_DEPTH {
            return Err(Error::NumericGuard {
                guard: "max_word_depth",
                detail: format!("products of c2 stay above the scale after {MAX_WORD_DEPTH} layers"),
            });
        }
        sum.add(sys.profile(k)?.log_c2);
    }
    Ok(k)
}

/// A cutset word as seen during enumeration.
#[derive(Debug, Clone, Copy)]
pub struct WordView<'a> {
    pub digits: &'a [u32],
    pub log_scales: &'a Vector,
    pub map: &'a ContractionMap,
    pub dim: usize,
}

impl WordView<'_> {
    pub fn log_r_max(&self) -> f64 {
        self.log_scales[..self.dim].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn log_r_min(&self) -> f64 {
        self.log_scales[..self.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_word(&self) -> Word {
        Word { start: 1, digits: self.digits.to_vec(), dim: self.dim, log_scales: *self.log_scales }
    }
}

/// Depth-first cutset enumerator over pre-materialized layers.
pub struct CutsetWalker {
    layers: Vec<Layer>,
    dim: usize,
    log_b: f64,
    threshold: f64,
}

impl CutsetWalker {
    pub fn new(sys: &LayerSystem, b: f64) -> Result<Self> {
        Self::from_log_scale(sys, check_scale(b)?)
    }

    /// Walker for the scale `b = exp(log_b)`, usable below `f64::MIN_POSITIVE`.
    pub fn from_log_scale(sys: &LayerSystem, log_b: f64) -> Result<Self> {
        if !(log_b < 0.0) {
            return Err(invalid("b", format!("log scale must be negative, got {log_b}")));
        }
        let threshold = log_b + tie_tolerance(log_b);
        let depth = max_cutset_depth(sys, threshold)?;
        Ok(Self { layers: sys.layers(depth)?, dim: sys.dimension(), log_b, threshold })
    }

    pub fn log_b(&self) -> f64 {
        self.log_b
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn is_leaf(&self, depth: usize, scales: &Vector) -> bool {
        let log_r = scales[..self.dim].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log_r <= self.threshold || depth == self.layers.len()
    }

    /// Path stacks hold the word, its log scales and its composed map at
    /// every depth, so enumeration depth is not bounded by the call stack.
    fn push_child(&self, digits: &mut Vec<u32>, scales: &mut Vec<Vector>, maps: &mut Vec<ContractionMap>, j: u32) -> Result<()> {
        let depth = digits.len();
        let m = layer_map(&self.layers[depth], j)?;
        let s = m.log_scales();
        let mut next = scales[depth - 1];
        for a in 0..self.dim {
            next[a] += s[a];
        }
        maps.push(maps[depth - 1].compose(m)?);
        scales.push(next);
        digits.push(j);
        Ok(())
    }

    /// Visits the words below first-layer symbol `first` (1-based), in
    /// lexicographic order.
    pub fn visit_from<F>(&self, first: u32, f: &mut F) -> Result<()>
    where
        F: FnMut(WordView<'_>) -> Result<()>,
    {
        let m = layer_map(&self.layers[0], first)?;
        let mut digits = vec![first];
        let mut scales = vec![m.log_scales()];
        let mut maps = vec![m.clone()];
        loop {
            let depth = digits.len();
            if !self.is_leaf(depth, &scales[depth - 1]) {
                self.push_child(&mut digits, &mut scales, &mut maps, 1)?;
                continue;
            }
            f(WordView { digits: &digits, log_scales: &scales[depth - 1], map: &maps[depth - 1], dim: self.dim })?;
            loop {
                if digits.len() == 1 {
                    return Ok(());
                }
                let j = digits.pop().unwrap();
                scales.pop();
                maps.pop();
                if (j as usize) < self.layers[digits.len()].len() {
                    self.push_child(&mut digits, &mut scales, &mut maps, j + 1)?;
                    break;
                }
            }
        }
    }

    /// Visits every cutset word in lexicographic order. Stops with
    /// `LimitExceeded` once more than `limit` words would be visited.
    pub fn visit<F>(&self, limit: usize, mut f: F) -> Result<usize>
    where
        F: FnMut(WordView<'_>) -> Result<()>,
    {
        let mut count = 0usize;
        let mut guarded = |w: WordView<'_>| {
            if count >= limit {
                return Err(Error::LimitExceeded { limit, reached: count });
            }
            count += 1;
            f(w)
        };
        for first in 1..=self.layers[0].len() as u32 {
            self.visit_from(first, &mut guarded)?;
        }
        Ok(count)
    }
}

impl CutsetWalker {
    /// Maps every cutset word through `f`, in parallel over first-layer
    /// symbols; results come back in lexicographic word order.
    pub fn par_collect<T, F>(&self, limit: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(WordView<'_>) -> T + Sync,
    {
        self.par_collect_within(limit, usize::MAX, f)
    }

    /// [`par_collect`](Self::par_collect) that also fails with
    /// `StorageExceeded` once the visited words hold more than `digit_budget`
    /// digits in total.
    pub fn par_collect_within<T, F>(&self, limit: usize, digit_budget: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(WordView<'_>) -> T + Sync,
    {
        if limit == 0 {
            return Err(invalid("limit", "must be at least 1"));
        }
        let counter = AtomicUsize::new(0);
        let digits = AtomicUsize::new(0);
        let firsts: Vec<u32> = (1..=self.layers[0].len() as u32).collect();
        let parts: Vec<Result<Vec<T>>> = firsts
            .par_iter()
            .map(|&first| {
                let mut out = Vec::new();
                self.visit_from(first, &mut |w: WordView<'_>| {
                    let reached = counter.fetch_add(1, AtomicOrdering::Relaxed);
                    if reached >= limit {
                        return Err(Error::LimitExceeded { limit, reached });
                    }
                    if digits.fetch_add(w.digits.len(), AtomicOrdering::Relaxed) + w.digits.len() > digit_budget {
                        return Err(Error::StorageExceeded { budget: digit_budget });
                    }
                    out.push(f(w));
                    Ok(())
                })?;
                Ok(out)
            })
            .collect();
        if parts.iter().any(|p| matches!(p, Err(Error::StorageExceeded { .. }))) {
            return Err(Error::StorageExceeded { budget: digit_budget });
        }
        let mut all = Vec::new();
        for part in parts {
            match part {
                Ok(items) => all.extend(items),
                Err(Error::LimitExceeded { .. }) => return Err(Error::LimitExceeded { limit, reached: limit }),
                Err(e) => return Err(e),
            }
        }
        Ok(all)
    }
}

/// The cutset `I_b` with the composed map of each word and the deduplicated
/// family `A_b`.
#[derive(Debug, Clone)]
pub struct Cutset {
    pub b: f64,
    pub words: Vec<Word>,
    /// `φ_{1,J}` for each word, in word order.
    pub word_maps: Vec<ContractionMap>,
    /// The distinct maps `A_b`.
    pub maps: Vec<ContractionMap>,
    /// Index into `maps` for each word.
    pub class_of: Vec<usize>,
}

impl Cutset {
    pub fn count_words(&self) -> usize {
        self.words.len()
    }

    pub fn count_maps(&self) -> usize {
        self.maps.len()
    }

    pub fn min_len(&self) -> usize {
        self.words.iter().map(Word::len).min().unwrap_or(0)
    }

    pub fn max_len(&self) -> usize {
        self.words.iter().map(Word::len).max().unwrap_or(0)
    }
}

/// Enumerates `I_b` in lexicographic order, in parallel over first-layer
/// symbols.
pub fn cutset(sys: &LayerSystem, b: f64, limit: usize) -> Result<Cutset> {
    cutset_log(sys, check_scale(b)?, limit)
}

/// [`cutset`] at the scale `exp(log_b)`.
pub fn cutset_log(sys: &LayerSystem, log_b: f64, limit: usize) -> Result<Cutset> {
    let walker = CutsetWalker::from_log_scale(sys, log_b)?;
    let b = log_b.exp();
    let items = walker.par_collect_within(limit, STORED_DIGIT_BUDGET, |w| (w.to_word(), w.map.clone()))?;
    let (words, word_maps): (Vec<Word>, Vec<ContractionMap>) = items.into_iter().unzip();
    let (maps, class_of) = dedup_maps(&word_maps, sys.ambient().diameter());
    Ok(Cutset { b, words, word_maps, maps, class_of })
}

/// Whether two composed maps agree to [`DEDUP_TOL`]. Offsets are compared
/// relative to the larger of their magnitude and the image size `R·|X|`.
pub fn same_map(a: &ContractionMap, b: &ContractionMap, diameter: f64) -> bool {
    if a.dim() != b.dim() || a.kind() != b.kind() || a.orthogonal() != b.orthogonal() {
        return false;
    }
    let (sa, sb) = (a.log_scales(), b.log_scales());
    let dim = a.dim();
    if !(0..dim).all(|i| (sa[i] - sb[i]).abs() <= DEDUP_TOL * sa[i].abs().max(1.0)) {
        return false;
    }
    let size = a.log_r_max().exp() * diameter.max(f64::MIN_POSITIVE);
    let (oa, ob) = (a.offset(), b.offset());
    (0..dim).all(|i| (oa[i] - ob[i]).abs() <= DEDUP_TOL * oa[i].abs().max(ob[i].abs()).max(size))
}

fn cmp_keys(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Groups equal maps. Returns the distinct maps (in order of first
/// appearance) and the class index of every input.
pub fn dedup_maps(maps: &[ContractionMap], diameter: f64) -> (Vec<ContractionMap>, Vec<usize>) {
    let keys: Vec<Vec<f64>> = maps.iter().map(|m| m.sort_key()).collect();
    let mut order: Vec<usize> = (0..maps.len()).collect();
    order.sort_by(|&i, &j| cmp_keys(&keys[i], &keys[j]).then(i.cmp(&j)));
    let mut group_of = vec![0usize; maps.len()];
    let mut leader: Option<usize> = None;
    let mut groups = 0usize;
    for &i in &order {
        match leader {
            Some(l) if same_map(&maps[l], &maps[i], diameter) => {}
            _ => {
                leader = Some(i);
                groups += 1;
            }
        }
        group_of[i] = groups - 1;
    }
    // Renumber groups by first appearance.
    let mut renumber = vec![usize::MAX; groups];
    let mut distinct = Vec::with_capacity(groups);
    let mut class_of = Vec::with_capacity(maps.len());
    for (i, &g) in group_of.iter().enumerate() {
        if renumber[g] == usize::MAX {
            renumber[g] = distinct.len();
            distinct.push(maps[i].clone());
        }
        class_of.push(renumber[g]);
    }
    (distinct, class_of)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMethod {
    /// Words enumerated and maps deduplicated.
    Enumerated,
    /// Every layer has a single ratio, so `I_b` is all words of one length;
    /// maps are assumed distinct.
    UniformLayers,
}

/// Cardinalities of `I_b` and `A_b` in log scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutsetCount {
    pub log_b: f64,
    pub log_words: f64,
    pub log_maps: f64,
    pub method: CountMethod,
    pub min_len: usize,
    pub max_len: usize,
}

/// `ln #I_b` and `ln #A_b`, enumerating when the cutset fits under `limit`
/// and falling back to the closed form for single-ratio layers.
pub fn count_cutset(sys: &LayerSystem, log_b: f64, limit: usize) -> Result<CutsetCount> {
    if !(log_b < 0.0) {
        return Err(invalid("b", format!("log scale must be negative, got {log_b}")));
    }
    let threshold = log_b + tie_tolerance(log_b);
    let depth = max_cutset_depth(sys, threshold)?;
    let profiles = sys.profiles(depth)?;
    let uniform = profiles.iter().all(|p| p.equal_ratio());
    let log_words_uniform: f64 = if uniform {
        profiles.iter().map(|p| p.log_count).collect::<CompensatedSum>().value()
    } else {
        f64::INFINITY
    };
    let fits = !uniform || log_words_uniform <= (limit as f64).ln();
    if fits {
        let collected = CutsetWalker::from_log_scale(sys, log_b)
            .and_then(|w| w.par_collect(limit, |v| (v.digits.len(), v.map.clone())));
        match collected {
            Ok(items) => {
                let (lens, maps): (Vec<usize>, Vec<ContractionMap>) = items.into_iter().unzip();
                let distinct = dedup_maps(&maps, sys.ambient().diameter()).0.len();
                return Ok(CutsetCount {
                    log_b,
                    log_words: (maps.len() as f64).ln(),
                    log_maps: (distinct as f64).ln(),
                    method: CountMethod::Enumerated,
                    min_len: lens.iter().copied().min().unwrap_or(0),
                    max_len: lens.iter().copied().max().unwrap_or(0),
                });
            }
            Err(e @ (Error::LimitExceeded { .. } | Error::ProviderCapability { .. })) if !uniform => return Err(e),
            Err(Error::LimitExceeded { .. } | Error::ProviderCapability { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(CutsetCount {
        log_b,
        log_words: log_words_uniform,
        log_maps: log_words_uniform,
        method: CountMethod::UniformLayers,
        min_len: depth,
        max_len: depth,
    })
}
