//! Moran equations `∏_{i≤k} Σ_j r_{i,j}^s = 1`, Hausdorff and box dimension
//! estimates, empirical box counting and the Hausdorff-measure trichotomy.
//!
//! Every limit is estimated over a finite range: `liminf`/`limsup` become
//! minima/maxima over the trailing half of the computed samples.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::attractor::PointCloud;
use crate::error::{invalid, Error, Result};
use crate::numeric::{ls_slope, CompensatedSum};
use crate::system::{LayerProfile, LayerSystem, CONTRACTION_CHECK_DEPTH};
use crate::words::{count_cutset, CountMethod};

/// Target for `|F_k(s_k)|`.
pub const MORAN_TOL: f64 = 1e-10;
pub const DEFAULT_KMAX: usize = 4096;
pub const DEFAULT_NMAX: usize = 1 << 16;
/// Up to this `k` every `s_k` is computed; beyond it, geometric subsampling.
pub const DENSE_PREFIX: usize = 256;
const GEOMETRIC_STEP: f64 = 1.02;
const MAX_RUN_ENDS: usize = 4096;

fn require_similarity(p: &LayerProfile) -> Result<()> {
    if p.is_similarity() {
        Ok(())
    } else {
        Err(Error::NotSimilarity { layer: p.index })
    }
}

/// `F_k(s) = Σ_{i≤k} ln Σ_j r_{i,j}^s` and `F_k'(s)`.
pub fn moran_function(profiles: &[LayerProfile], s: f64) -> (f64, f64) {
    let mut v = CompensatedSum::new();
    let mut d = CompensatedSum::new();
    for p in profiles {
        let (a, b) = p.log_moran_with_slope(s);
        v.add(a);
        d.add(b);
    }
    (v.value(), d.value())
}

/// Root of the convex decreasing `F_k` over `profiles`. It exceeds the
/// ambient dimension when overlaps are heavy.
pub fn solve_moran(profiles: &[LayerProfile]) -> Result<f64> {
    if profiles.is_empty() {
        return Err(invalid("k", "must be at least 1"));
    }
    for p in profiles {
        require_similarity(p)?;
    }
    if profiles.iter().all(LayerProfile::equal_ratio) {
        let num: CompensatedSum = profiles.iter().map(|p| p.log_count).collect();
        let den: CompensatedSum = profiles.iter().map(|p| -p.log_c2).collect();
        return Ok(num.value() / den.value());
    }
    // Newton from the left of the root increases monotonically for convex
    // decreasing F; bisection is the fallback.
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut s = 0.0;
    for _ in 0..200 {
        let (f, df) = moran_function(profiles, s);
        if f.abs() <= 0.01 * MORAN_TOL {
            return Ok(s);
        }
        if f > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - f / df;
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * s.max(1.0)
        };
        if (next - s).abs() <= 1e-15 * s.abs().max(1e-300) {
            break;
        }
        s = next;
    }
    let (f, _) = moran_function(profiles, s);
    if f.abs() > MORAN_TOL {
        return Err(Error::NumericGuard {
            guard: "moran_residual",
            detail: format!("|F_k(s)| = {:e} at s = {s}", f.abs()),
        });
    }
    Ok(s)
}

/// `s_k` for layers `1..=k`.
pub fn solve_sk(sys: &LayerSystem, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    if let Some(m) = sys.max_layer() {
        if k > m {
            return Err(Error::ProviderCapability { layer: k, reason: format!("layers beyond {m} are not representable") });
        }
    }
    solve_moran(&sys.profiles(k)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct HausdorffEstimate {
    pub kmax: usize,
    /// Computed `(k, s_k)` pairs.
    pub s_seq: Vec<(usize, f64)>,
    /// Minimum of `s_k` over the window, capped at the ambient dimension.
    pub dim_h_est: f64,
    /// Maximum of `s_k` over the window.
    pub s_sup: f64,
    pub window: (usize, usize),
    /// Least-squares slope of `s_k` against `ln k` over the window.
    pub trend_slope: Option<f64>,
    /// Largest `|F_k(s_k)|` seen.
    pub max_residual: f64,
    /// Ends of runs of identical layers, evaluated exactly.
    pub run_ends: usize,
}

/// Sample set: `1..=DENSE_PREFIX`, a geometric sequence to `kmax`, the ends
/// of runs of identical layers (when there are few) and `kmax` itself.
fn sample_ks(profiles: &[LayerProfile]) -> (Vec<usize>, usize) {
    let kmax = profiles.len();
    let mut ks: BTreeSet<usize> = (1..=kmax.min(DENSE_PREFIX)).collect();
    let mut x = DENSE_PREFIX as f64;
    while (x as usize) < kmax {
        ks.insert(x as usize);
        x = (x * GEOMETRIC_STEP).max(x + 1.0);
    }
    ks.insert(kmax);
    let ends: Vec<usize> = (1..kmax).filter(|&k| profiles[k - 1].groups != profiles[k].groups).collect();
    let run_ends = if ends.len() <= MAX_RUN_ENDS {
        for &k in &ends {
            ks.insert(k);
            ks.insert(k + 1);
        }
        ends.len()
    } else {
        0
    };
    (ks.into_iter().collect(), run_ends)
}

/// `s_k` over the sample set and the windowed liminf.
pub fn hausdorff_dim(sys: &LayerSystem, kmax: usize) -> Result<HausdorffEstimate> {
    if kmax == 0 {
        return Err(invalid("kmax", "must be at least 1"));
    }
    let kmax = sys.max_layer().map_or(kmax, |m| kmax.min(m));
    let profiles = sys.profiles(kmax)?;
    for p in &profiles {
        require_similarity(p)?;
    }
    let uniform = profiles.iter().all(LayerProfile::equal_ratio);
    let (ks, run_ends) = if uniform {
        ((1..=kmax).collect(), 0)
    } else {
        sample_ks(&profiles)
    };
    let mut s_seq = Vec::with_capacity(ks.len());
    let mut max_residual = 0.0f64;
    if uniform {
        let mut num = CompensatedSum::new();
        let mut den = CompensatedSum::new();
        for (i, p) in profiles.iter().enumerate() {
            num.add(p.log_count);
            den.add(-p.log_c2);
            let s = num.value() / den.value();
            max_residual = max_residual.max((num.value() - s * den.value()).abs());
            s_seq.push((i + 1, s));
        }
    } else {
        use rayon::prelude::*;
        let solved: Vec<Result<(usize, f64, f64)>> = ks
            .par_iter()
            .map(|&k| {
                let s = solve_moran(&profiles[..k])?;
                Ok((k, s, moran_function(&profiles[..k], s).0.abs()))
            })
            .collect();
        for r in solved {
            let (k, s, res) = r?;
            max_residual = max_residual.max(res);
            s_seq.push((k, s));
        }
    }
    let from = kmax / 2 + 1;
    let window: Vec<&(usize, f64)> = s_seq.iter().filter(|(k, _)| *k >= from.min(kmax)).collect();
    let dim_h_est = window.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).min(profiles[0].dim as f64);
    let s_sup = window.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let xs: Vec<f64> = window.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = window.iter().map(|p| p.1).collect();
    let trend_slope = ls_slope(&xs, &ys);
    let s_seq = if uniform { thin(&s_seq) } else { s_seq };
    Ok(HausdorffEstimate {
        kmax,
        s_seq,
        dim_h_est,
        s_sup,
        window: (from.min(kmax), kmax),
        trend_slope,
        max_residual,
        run_ends,
    })
}

/// Keeps the dense prefix and a geometric subsequence.
fn thin(seq: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let n = seq.len();
    let mut keep: BTreeSet<usize> = (1..=n.min(DENSE_PREFIX)).collect();
    let mut x = DENSE_PREFIX as f64;
    while (x as usize) < n {
        keep.insert(x as usize);
        x *= GEOMETRIC_STEP;
    }
    keep.insert(n);
    seq.iter().filter(|(k, _)| keep.contains(k)).copied().collect()
}

/// Natural scales `ln ∏_{i≤n} c_{2,i}` for the given layer counts.
pub fn natural_log_scales(sys: &LayerSystem, ns: &[usize]) -> Result<Vec<f64>> {
    let nmax = ns.iter().copied().max().unwrap_or(0);
    let mut cum = Vec::with_capacity(nmax);
    let mut s = CompensatedSum::new();
    for n in 1..=nmax {
        s.add(sys.profile(n)?.log_c2);
        cum.push(s.value());
    }
    ns.iter()
        .map(|&n| {
            if n == 0 {
                Err(invalid("bgrid", "layer counts start at 1"))
            } else {
                Ok(cum[n - 1])
            }
        })
        .collect()
}

/// `{2^j − 1, 2^j : j ≤ log2 nmax}`: both sides of every dyadic block boundary.
pub fn block_boundary_layers(nmax: usize) -> Vec<usize> {
    let mut out = BTreeSet::new();
    let mut p = 1usize;
    while p <= nmax {
        if p > 1 {
            out.insert(p - 1);
        }
        out.insert(p);
        p = match p.checked_mul(2) {
            Some(q) => q,
            None => break,
        };
    }
    out.into_iter().collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BoxSample {
    pub log_b: f64,
    pub log_words: f64,
    pub log_maps: f64,
    /// `ln #A_b / (−ln b)`
    pub ratio: f64,
    pub method: CountMethod,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoxDimEstimate {
    pub samples: Vec<BoxSample>,
    pub lower: f64,
    pub upper: f64,
    /// Samples `window.0..samples.len()` enter `lower`/`upper`.
    pub window_start: usize,
    /// Set when the grid stopped early.
    pub stopped: Option<String>,
}

/// `ln #A_b / (−ln b)` along a strictly decreasing grid of `ln b` values.
pub fn box_dim_formula(sys: &LayerSystem, log_grid: &[f64], limit: usize) -> Result<BoxDimEstimate> {
    if log_grid.is_empty() {
        return Err(invalid("bgrid", "grid is empty"));
    }
    if log_grid.iter().any(|&l| !(l < 0.0)) || log_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("bgrid", "grid values must lie in (0,1) and decrease strictly"));
    }
    let mut samples = Vec::new();
    let mut stopped = None;
    for &log_b in log_grid {
        match count_cutset(sys, log_b, limit) {
            Ok(c) => samples.push(BoxSample {
                log_b,
                log_words: c.log_words,
                log_maps: c.log_maps,
                ratio: c.log_maps / -log_b,
                method: c.method,
            }),
            Err(e @ (Error::LimitExceeded { .. } | Error::ProviderCapability { .. } | Error::NumericGuard { .. })) => {
                stopped = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let window_start = samples.len() / 2;
    let tail = &samples[window_start..];
    let lower = tail.iter().map(|s| s.ratio).fold(f64::INFINITY, f64::min);
    let upper = tail.iter().map(|s| s.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(BoxDimEstimate { samples, lower, upper, window_start, stopped })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoxCount {
    pub delta: f64,
    pub count: Option<usize>,
    pub refused: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoxCountResult {
    pub counts: Vec<BoxCount>,
    /// Slope of `ln N` against `−ln δ` over the accepted deltas.
    pub slope: Option<f64>,
}

/// Occupied cells of the origin-anchored grid of side `δ`.
pub fn box_count_empirical(cloud: &PointCloud, deltas: &[f64]) -> BoxCountResult {
    let mut counts = Vec::with_capacity(deltas.len());
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &delta in deltas {
        if !(delta > 0.0 && delta.is_finite()) {
            counts.push(BoxCount { delta, count: None, refused: Some("delta must be positive".into()) });
            continue;
        }
        if delta < 2.0 * cloud.scale {
            counts.push(BoxCount {
                delta,
                count: None,
                refused: Some(format!("finer than twice the cloud accuracy {:e}", cloud.scale)),
            });
            continue;
        }
        let mut cells: Vec<[i64; 3]> = cloud
            .points
            .iter()
            .map(|p| {
                let mut c = [0i64; 3];
                for a in 0..cloud.dim {
                    c[a] = (p[a] / delta).floor() as i64;
                }
                c
            })
            .collect();
        cells.sort_unstable();
        cells.dedup();
        let n = cells.len();
        if n > 0 {
            xs.push(-delta.ln());
            ys.push((n as f64).ln());
        }
        counts.push(BoxCount { delta, count: Some(n), refused: None });
    }
    let slope = if xs.len() >= 2 { ls_slope(&xs, &ys) } else { None };
    let slope = match (slope, ys.first()) {
        (None, Some(_)) if xs.len() == 1 => Some(0.0),
        (s, _) => s,
    };
    BoxCountResult { counts, slope }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureClass {
    Zero,
    PositiveFinite,
    Infinite,
    Inconclusive,
}

/// Thresholds for [`measure_class`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct MeasureClassConfig {
    /// Minimum change of the window extrema per dyadic window that counts as a trend.
    pub delta: f64,
    /// Band for "bounded" and the escape level, as a factor on `Π_n`.
    pub band: f64,
    /// Number of trailing dyadic windows examined.
    pub windows: usize,
}

impl Default for MeasureClassConfig {
    fn default() -> Self {
        Self { delta: 0.05, band: 1e6, windows: 4 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowStat {
    pub from: usize,
    pub to: usize,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureClassReport {
    pub s: f64,
    pub nmax: usize,
    pub class: MeasureClass,
    /// Whether `limsup Π_n` looks finite (trailing window maxima flat).
    pub limsup_bounded: bool,
    /// `ln Π_n` extrema over dyadic windows `[2^w, 2^(w+1))`.
    pub windows: Vec<WindowStat>,
    pub last_log_pi: f64,
    pub config: MeasureClassConfig,
}

/// Classifies `Π_n = ∏_{i≤n} Σ_j r_{i,j}^s` as tending to 0, staying
/// bounded away from 0 and ∞ (through its liminf), or tending to ∞.
pub fn measure_class(sys: &LayerSystem, s: f64, nmax: usize, config: MeasureClassConfig) -> Result<MeasureClassReport> {
    if nmax < 2 {
        return Err(invalid("nmax", "must be at least 2"));
    }
    let nmax = sys.max_layer().map_or(nmax, |m| nmax.min(m));
    let mut windows: Vec<WindowStat> = Vec::new();
    let mut sum = CompensatedSum::new();
    for n in 1..=nmax {
        let p = sys.profile(n)?;
        require_similarity(&p)?;
        sum.add(p.log_moran(s));
        let v = sum.value();
        let w = (usize::BITS - 1 - n.leading_zeros()) as usize;
        if windows.len() <= w {
            windows.push(WindowStat { from: n, to: n, min: v, max: v });
        } else {
            let cur = &mut windows[w];
            cur.to = n;
            cur.min = cur.min.min(v);
            cur.max = cur.max.max(v);
        }
    }
    let last_log_pi = sum.value();
    // A partially filled last window is only used if it covers half its span.
    let full: Vec<&WindowStat> = windows
        .iter()
        .filter(|w| 2 * (w.to - w.from + 1) >= w.from)
        .collect();
    let k = config.windows.max(2).min(full.len());
    let tail = &full[full.len() - k..];
    let mins: Vec<f64> = tail.iter().map(|w| w.min).collect();
    let maxs: Vec<f64> = tail.iter().map(|w| w.max).collect();
    let dmin: Vec<f64> = mins.windows(2).map(|p| p[1] - p[0]).collect();
    let dmax: Vec<f64> = maxs.windows(2).map(|p| p[1] - p[0]).collect();
    let band = config.band.ln();
    let escape_up = *mins.last().unwrap() > band;
    let escape_down = *maxs.last().unwrap() < -band;
    let class = if k < 2 {
        MeasureClass::Inconclusive
    } else if dmin.iter().all(|&d| d > config.delta) || (escape_up && dmin.iter().all(|&d| d > 0.0)) {
        MeasureClass::Infinite
    } else if dmax.iter().all(|&d| d < -config.delta) || (escape_down && dmax.iter().all(|&d| d < 0.0)) {
        MeasureClass::Zero
    } else if dmin.iter().all(|d| d.abs() <= config.delta)
        && mins.iter().all(|m| m.abs() < band)
    {
        MeasureClass::PositiveFinite
    } else {
        MeasureClass::Inconclusive
    };
    let limsup_bounded = k >= 2 && dmax.iter().all(|d| d.abs() <= config.delta) && maxs.iter().all(|m| m.abs() < band);
    Ok(MeasureClassReport { s, nmax, class, limsup_bounded, windows, last_log_pi, config })
}

/// Hypothesis checks stamped on dimension reports.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub layers_checked: usize,
    pub similarity: bool,
    pub equal_ratio_per_layer: bool,
    /// `inf r_{n,j} > 0`, judged by the smallest ratio not decaying between
    /// the leading and trailing halves of the checked layers.
    pub r0_positive: bool,
    pub min_log_ratio_leading: f64,
    pub min_log_ratio_trailing: f64,
    /// `ln r_n / ln(r_1⋯r_{n−1}) → 0`, observed up to `layers_checked`.
    pub contra_ra_observed: bool,
    pub contra_ra_last: f64,
    pub contraction_eps: f64,
    pub contraction_ok: bool,
}

pub fn diagnostics(sys: &LayerSystem, depth: usize) -> Result<Diagnostics> {
    let depth = sys.max_layer().map_or(depth, |m| depth.min(m)).max(2);
    let profiles = sys.profiles(depth)?;
    let half = depth / 2;
    let lead = profiles[..half].iter().map(|p| p.log_c1).fold(f64::INFINITY, f64::min);
    let trail = profiles[half..].iter().map(|p| p.log_c1).fold(f64::INFINITY, f64::min);
    let mut cum = CompensatedSum::new();
    let mut q = Vec::with_capacity(depth);
    for p in &profiles {
        if cum.value() < 0.0 {
            q.push(p.log_c1 / cum.value());
        }
        cum.add(p.log_c1);
    }
    let q_last = q.last().copied().unwrap_or(f64::NAN);
    let q_tail = &q[q.len() / 2..];
    let q_tail_max = q_tail.iter().copied().fold(0.0f64, f64::max);
    let q_head_max = q[..q.len() / 2].iter().copied().fold(0.0f64, f64::max);
    let contraction = sys.contraction_check(CONTRACTION_CHECK_DEPTH)?;
    Ok(Diagnostics {
        layers_checked: depth,
        similarity: profiles.iter().all(LayerProfile::is_similarity),
        equal_ratio_per_layer: profiles.iter().all(LayerProfile::equal_ratio),
        r0_positive: trail >= lead + 0.9f64.ln(),
        min_log_ratio_leading: lead,
        min_log_ratio_trailing: trail,
        contra_ra_observed: q_last < 0.1 && q_tail_max <= q_head_max.max(0.1),
        contra_ra_last: q_last,
        contraction_eps: contraction.eps_c,
        contraction_ok: contraction.passed,
    })
}

/// Settings for [`dimension_report`].
#[derive(Debug, Clone)]
pub struct DimensionConfig {
    pub kmax: usize,
    /// `ln b` grid; `None` uses the natural scales of layers `1..=grid_layers`.
    pub log_grid: Option<Vec<f64>>,
    pub grid_layers: usize,
    pub limit: usize,
    /// Exponent for the trichotomy; `None` uses the Hausdorff estimate.
    pub s: Option<f64>,
    pub nmax: usize,
    pub measure: MeasureClassConfig,
}

impl Default for DimensionConfig {
    fn default() -> Self {
        Self {
            kmax: DEFAULT_KMAX,
            log_grid: None,
            grid_layers: 64,
            limit: 1 << 20,
            s: None,
            nmax: DEFAULT_NMAX,
            measure: MeasureClassConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionReport {
    pub hausdorff: HausdorffEstimate,
    pub box_dim: BoxDimEstimate,
    pub measure: MeasureClassReport,
    pub diagnostics: Diagnostics,
}

pub fn dimension_report(sys: &LayerSystem, config: &DimensionConfig) -> Result<DimensionReport> {
    let hausdorff = hausdorff_dim(sys, config.kmax)?;
    let grid = match &config.log_grid {
        Some(g) => g.clone(),
        None => {
            let n = sys.max_layer().map_or(config.grid_layers, |m| config.grid_layers.min(m));
            natural_log_scales(sys, &(1..=n).collect::<Vec<_>>())?
        }
    };
    let box_dim = box_dim_formula(sys, &grid, config.limit)?;
    let s = config.s.unwrap_or(hausdorff.dim_h_est);
    let measure = measure_class(sys, s, config.nmax, config.measure)?;
    let diagnostics = diagnostics(sys, config.kmax.min(config.nmax).max(2))?;
    Ok(DimensionReport { hausdorff, box_dim, measure, diagnostics })
}
