//! Layers, layer providers, whole systems and probability weights.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::family::Family;
use crate::geometry::{Aabb, Vector, MAX_DIM};
use crate::map::ContractionMap;
use crate::numeric::{log_sum_exp, CompensatedSum};

/// One layer `Φ_n = {φ_{n,1}, …, φ_{n,N_n}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    index: usize,
    dim: usize,
    maps: Vec<ContractionMap>,
    log_c1: f64,
    log_c2: f64,
}

impl Layer {
    pub fn new(index: usize, maps: Vec<ContractionMap>) -> Result<Self> {
        if maps.len() < 2 {
            return Err(invalid(
                format!("layer {index}"),
                format!("needs at least 2 maps, got {}", maps.len()),
            ));
        }
        let dim = maps[0].dim();
        let mut log_c1 = f64::INFINITY;
        let mut log_c2 = f64::NEG_INFINITY;
        for m in &maps {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: m.dim() });
            }
            log_c1 = log_c1.min(m.log_r_min());
            log_c2 = log_c2.max(m.log_r_max());
        }
        if !(log_c1.is_finite() && log_c2 < 0.0) {
            return Err(invalid(
                format!("layer {index}"),
                "contraction factors must lie in (0,1)",
            ));
        }
        Ok(Self { index, dim, maps, log_c1, log_c2 })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn maps(&self) -> &[ContractionMap] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn log_c1(&self) -> f64 {
        self.log_c1
    }

    pub fn log_c2(&self) -> f64 {
        self.log_c2
    }

    pub fn c1(&self) -> f64 {
        self.log_c1.exp()
    }

    pub fn c2(&self) -> f64 {
        self.log_c2.exp()
    }

    pub fn is_similarity(&self) -> bool {
        self.maps.iter().all(|m| m.kind() == crate::map::MapKind::Similarity)
    }

    fn reindexed(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn profile(&self) -> LayerProfile {
        let groups = self
            .maps
            .iter()
            .map(|m| RatioGroup {
                log_scales: m.log_scales(),
                log_mult: 0.0,
                similarity: m.kind() == crate::map::MapKind::Similarity,
            })
            .collect();
        LayerProfile::from_groups(self.index, self.dim, groups)
    }
}

/// A block of `exp(log_mult)` maps sharing the same per-axis log scales.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioGroup {
    pub log_scales: Vector,
    pub log_mult: f64,
    pub similarity: bool,
}

impl RatioGroup {
    pub fn similarity(dim: usize, log_ratio: f64, log_mult: f64) -> Self {
        let mut s = [0.0; MAX_DIM];
        s[..dim].iter_mut().for_each(|x| *x = log_ratio);
        Self { log_scales: s, log_mult, similarity: true }
    }

    pub fn log_r_max(&self, dim: usize) -> f64 {
        self.log_scales[..dim].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn log_r_min(&self, dim: usize) -> f64 {
        self.log_scales[..dim].iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Contraction profile of a layer: its ratios with multiplicities, in log
/// scale. Available even when the layer is too large to materialize.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub index: usize,
    pub dim: usize,
    pub groups: Vec<RatioGroup>,
    /// `ln N_n`
    pub log_count: f64,
    pub log_c1: f64,
    pub log_c2: f64,
}

impl LayerProfile {
    pub fn from_groups(index: usize, dim: usize, groups: Vec<RatioGroup>) -> Self {
        let mut merged: Vec<RatioGroup> = Vec::with_capacity(groups.len());
        for g in groups {
            match merged
                .iter_mut()
                .find(|m| m.log_scales == g.log_scales && m.similarity == g.similarity)
            {
                Some(m) => m.log_mult = log_sum_exp([m.log_mult, g.log_mult]),
                None => merged.push(g),
            }
        }
        let log_count = log_sum_exp(merged.iter().map(|g| g.log_mult));
        let log_c1 = merged.iter().map(|g| g.log_r_min(dim)).fold(f64::INFINITY, f64::min);
        let log_c2 = merged.iter().map(|g| g.log_r_max(dim)).fold(f64::NEG_INFINITY, f64::max);
        Self { index, dim, groups: merged, log_count, log_c1, log_c2 }
    }

    pub fn is_similarity(&self) -> bool {
        self.groups.iter().all(|g| g.similarity)
    }

    /// All maps of the layer share one ratio.
    pub fn equal_ratio(&self) -> bool {
        self.is_similarity() && self.groups.len() == 1
    }

    /// `ln Σ_j r_{n,j}^s`.
    pub fn log_moran(&self, s: f64) -> f64 {
        log_sum_exp(self.groups.iter().map(|g| g.log_mult + s * g.log_r_max(self.dim)))
    }

    /// `ln Σ_j r^s` and its derivative in `s`.
    pub fn log_moran_with_slope(&self, s: f64) -> (f64, f64) {
        let terms: Vec<(f64, f64)> = self
            .groups
            .iter()
            .map(|g| {
                let lr = g.log_r_max(self.dim);
                (g.log_mult + s * lr, lr)
            })
            .collect();
        let v = log_sum_exp(terms.iter().map(|t| t.0));
        let slope = terms.iter().map(|(e, lr)| (e - v).exp() * lr).sum();
        (v, slope)
    }

    pub fn similarity_ratio(&self) -> Option<f64> {
        self.equal_ratio().then(|| self.groups[0].log_r_max(self.dim))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provider {
    /// Layers `1..=prefix.len()` come from `prefix`; later layers repeat `cycle`.
    Explicit { prefix: Vec<Layer>, cycle: Vec<Layer> },
    Family(Family),
}

impl Provider {
    fn layer(&self, n: usize) -> Result<Layer> {
        match self {
            Provider::Explicit { prefix, cycle } => {
                let l = if n <= prefix.len() {
                    &prefix[n - 1]
                } else {
                    &cycle[(n - prefix.len() - 1) % cycle.len()]
                };
                Ok(l.clone().reindexed(n))
            }
            Provider::Family(f) => f.layer(n),
        }
    }

    fn profile(&self, n: usize) -> Result<LayerProfile> {
        match self {
            Provider::Explicit { .. } => {
                let mut p = self.layer(n)?.profile();
                p.index = n;
                Ok(p)
            }
            Provider::Family(f) => f.profile(n),
        }
    }
}

/// Outcome of the finite-depth check that `Σ_{i≤n} log c_{2,i} → −∞`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ContractionCheck {
    pub depth: usize,
    /// Mean of `−log c_{2,i}` over the trailing half of `1..=depth`.
    pub eps_c: f64,
    pub threshold: f64,
    pub passed: bool,
}

pub const CONTRACTION_CHECK_DEPTH: usize = 256;
pub const CONTRACTION_EPS_MIN: f64 = 1e-6;

/// A Moran-type system `{Φ_n}` acting on the ambient box `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSystem {
    dim: usize,
    ambient: Aabb,
    provider: Arc<Provider>,
    shift: usize,
}

impl LayerSystem {
    /// Builds a system from explicit layers. An empty `cycle` makes the
    /// last prefix layer repeat.
    pub fn explicit(
        ambient: Aabb,
        prefix: Vec<Vec<ContractionMap>>,
        cycle: Vec<Vec<ContractionMap>>,
    ) -> Result<Self> {
        let (mut prefix, mut cycle) = (prefix, cycle);
        if cycle.is_empty() {
            cycle.push(prefix.pop().ok_or_else(|| invalid("cycle", "at least one layer is required"))?);
        }
        let build = |offset: usize, layers: Vec<Vec<ContractionMap>>| -> Result<Vec<Layer>> {
            layers
                .into_iter()
                .enumerate()
                .map(|(i, maps)| Layer::new(offset + i + 1, maps))
                .collect()
        };
        let np = prefix.len();
        let prefix = build(0, prefix)?;
        let cycle = build(np, cycle)?;
        let sys = Self {
            dim: ambient.dim,
            ambient,
            provider: Arc::new(Provider::Explicit { prefix, cycle }),
            shift: 0,
        };
        if let Provider::Explicit { prefix, cycle } = sys.provider.as_ref() {
            for l in prefix.iter().chain(cycle) {
                sys.check_layer(l)?;
            }
        }
        Ok(sys)
    }

    pub fn from_family(family: Family, ambient: Option<Aabb>) -> Result<Self> {
        let ambient = ambient.unwrap_or_else(|| family.default_ambient());
        if ambient.dim != family.dimension() {
            return Err(Error::DimensionMismatch {
                expected: family.dimension(),
                got: ambient.dim,
            });
        }
        Ok(Self {
            dim: ambient.dim,
            ambient,
            provider: Arc::new(Provider::Family(family)),
            shift: 0,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn ambient(&self) -> &Aabb {
        &self.ambient
    }

    pub fn provider(&self) -> &Provider {
        &self.provider
    }

    pub fn family(&self) -> Option<&Family> {
        match self.provider.as_ref() {
            Provider::Family(f) => Some(f),
            Provider::Explicit { .. } => None,
        }
    }

    /// Number of leading layers dropped by [`Self::shifted`].
    pub fn offset(&self) -> usize {
        self.shift
    }

    /// The system `{Φ_n}_{n>k}`, re-indexed from 1.
    pub fn shifted(&self, k: usize) -> Self {
        Self { shift: self.shift + k, ..self.clone() }
    }

    /// Highest layer the provider can describe, if bounded.
    pub fn max_layer(&self) -> Option<usize> {
        self.family()
            .and_then(|f| f.max_layer())
            .map(|m| m.saturating_sub(self.shift))
    }

    fn ambient_slack(&self) -> f64 {
        1e-12 * self.ambient.diameter().max(1.0)
    }

    fn check_layer(&self, layer: &Layer) -> Result<()> {
        let slack = self.ambient_slack();
        for (j, m) in layer.maps().iter().enumerate() {
            if m.dim() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: m.dim() });
            }
            if !self.ambient.contains_box(&m.bounding_image(&self.ambient), slack) {
                return Err(Error::AmbientViolation { layer: layer.index(), map: j + 1 });
            }
        }
        Ok(())
    }

    /// Layer `n ≥ 1`, checked against the ambient box.
    pub fn layer(&self, n: usize) -> Result<Layer> {
        if n == 0 {
            return Err(invalid("layer", "layer indices start at 1"));
        }
        let layer = self.provider.layer(n + self.shift)?;
        self.check_layer(&layer)?;
        Ok(layer.reindexed(n))
    }

    /// Layers `1..=k`.
    pub fn layers(&self, k: usize) -> Result<Vec<Layer>> {
        (1..=k).map(|n| self.layer(n)).collect()
    }

    pub fn profile(&self, n: usize) -> Result<LayerProfile> {
        if n == 0 {
            return Err(invalid("layer", "layer indices start at 1"));
        }
        let mut p = self.provider.profile(n + self.shift)?;
        p.index = n;
        Ok(p)
    }

    pub fn profiles(&self, k: usize) -> Result<Vec<LayerProfile>> {
        (1..=k).map(|n| self.profile(n)).collect()
    }

    /// Operational form of `lim ∏ c_{2,i} = 0`: the mean of `−log c_{2,i}`
    /// over the trailing half of the first `depth` layers must exceed
    /// `CONTRACTION_EPS_MIN`.
    pub fn contraction_check(&self, depth: usize) -> Result<ContractionCheck> {
        let depth = match self.max_layer() {
            Some(m) => depth.min(m),
            None => depth,
        }
        .max(1);
        let from = depth / 2 + 1;
        let mut tail = CompensatedSum::new();
        for n in from..=depth {
            tail.add(-self.profile(n)?.log_c2);
        }
        let eps_c = tail.value() / (depth - from + 1) as f64;
        Ok(ContractionCheck {
            depth,
            eps_c,
            threshold: CONTRACTION_EPS_MIN,
            passed: eps_c >= CONTRACTION_EPS_MIN,
        })
    }

    /// Like [`Self::contraction_check`] at the default depth, but failing is an error.
    pub fn require_contraction(&self) -> Result<ContractionCheck> {
        let c = self.contraction_check(CONTRACTION_CHECK_DEPTH)?;
        if c.passed {
            Ok(c)
        } else {
            Err(Error::ContractionGuard(format!(
                "mean -log c2 over layers {}..{} is {:e} < {:e}",
                c.depth / 2 + 1,
                c.depth,
                c.eps_c,
                c.threshold
            )))
        }
    }

    /// Short human-readable description.
    pub fn label(&self) -> String {
        let base = match self.provider.as_ref() {
            Provider::Family(f) => {
                let params: Vec<String> = f.params().iter().map(|(k, v)| format!("{k}={v}")).collect();
                if params.is_empty() {
                    f.name().to_string()
                } else {
                    format!("{}{{{}}}", f.name(), params.join(","))
                }
            }
            Provider::Explicit { prefix, cycle } => {
                format!("explicit(prefix={}, cycle={})", prefix.len(), cycle.len())
            }
        };
        if self.shift > 0 {
            format!("{base}+{}", self.shift)
        } else {
            base
        }
    }
}

/// Probability weights `(p_{n,1}, …, p_{n,N_n})` per layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum WeightSequence {
    #[default]
    Uniform,
    Explicit { prefix: Vec<Vec<f64>>, cycle: Vec<Vec<f64>> },
    /// `p_{n,j} ∝ r_{n,j}^s`.
    RatioPower { s: f64 },
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl WeightSequence {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightSequence::Uniform => Ok(()),
            WeightSequence::RatioPower { s } => {
                if s.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("/weights/s", "must be finite"))
                }
            }
            WeightSequence::Explicit { prefix, cycle } => {
                if cycle.is_empty() {
                    return Err(invalid("/weights/cycle", "must not be empty"));
                }
                for (name, list) in [("prefix", prefix), ("cycle", cycle)] {
                    for (i, p) in list.iter().enumerate() {
                        if p.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                            return Err(invalid(format!("/weights/{name}/{i}"), "entries must be positive"));
                        }
                        let s: f64 = p.iter().sum();
                        if (s - 1.0).abs() > WEIGHT_SUM_TOL {
                            return Err(invalid(format!("/weights/{name}/{i}"), format!("sums to {s}, not 1")));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// `ln p_{n,j}` for every map of `layer` (whose index is `n`).
    pub fn log_weights(&self, layer: &Layer) -> Result<Vec<f64>> {
        let n = layer.index();
        let count = layer.len();
        match self {
            WeightSequence::Uniform => Ok(vec![-(count as f64).ln(); count]),
            WeightSequence::RatioPower { s } => {
                let raw: Vec<f64> = layer.maps().iter().map(|m| s * m.log_r_max()).collect();
                let norm = log_sum_exp(raw.iter().copied());
                Ok(raw.into_iter().map(|x| x - norm).collect())
            }
            WeightSequence::Explicit { prefix, cycle } => {
                let p = if n <= prefix.len() {
                    &prefix[n - 1]
                } else {
                    &cycle[(n - prefix.len() - 1) % cycle.len()]
                };
                if p.len() != count {
                    return Err(invalid(
                        format!("/weights (layer {n})"),
                        format!("{} weights for {count} maps", p.len()),
                    ));
                }
                Ok(p.iter().map(|x| x.ln()).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halves() -> Vec<ContractionMap> {
        vec![
            ContractionMap::similarity(0.5, &[0.0]).unwrap(),
            ContractionMap::similarity(0.5, &[1.0]).unwrap(),
        ]
    }

    fn thirds() -> Vec<ContractionMap> {
        vec![
            ContractionMap::similarity(1.0 / 3.0, &[0.0]).unwrap(),
            ContractionMap::similarity(1.0 / 3.0, &[2.0]).unwrap(),
        ]
    }

    #[test]
    fn single_layer_cycle_repeats() {
        let sys = LayerSystem::explicit(Aabb::unit(1), vec![], vec![thirds()]).unwrap();
        let a = sys.layer(1).unwrap();
        let b = sys.layer(5).unwrap();
        assert_eq!(a.maps(), b.maps());
        assert_eq!(b.index(), 5);
    }

    #[test]
    fn prefix_then_cycle() {
        let sys = LayerSystem::explicit(Aabb::unit(1), vec![halves()], vec![thirds(), halves()]).unwrap();
        let r = |n| sys.layer(n).unwrap().c2();
        assert!((r(1) - 0.5).abs() < 1e-15);
        assert!((r(2) - 1.0 / 3.0).abs() < 1e-15);
        assert!((r(3) - 0.5).abs() < 1e-15);
        assert!((r(4) - 1.0 / 3.0).abs() < 1e-15);
        assert!((sys.shifted(1).layer(1).unwrap().c2() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ambient_violation_is_reported() {
        let maps = vec![
            ContractionMap::similarity(0.5, &[0.0]).unwrap(),
            ContractionMap::similarity(0.5, &[1.5]).unwrap(),
        ];
        let err = LayerSystem::explicit(Aabb::unit(1), vec![], vec![maps]).unwrap_err();
        assert_eq!(err, Error::AmbientViolation { layer: 1, map: 2 });
    }

    #[test]
    fn layer_needs_two_maps() {
        let one = vec![ContractionMap::similarity(0.5, &[0.0]).unwrap()];
        assert!(Layer::new(1, one).is_err());
    }

    #[test]
    fn profile_merges_equal_ratios() {
        let l = Layer::new(1, thirds()).unwrap();
        let p = l.profile();
        assert_eq!(p.groups.len(), 1);
        assert!((p.log_count - 2f64.ln()).abs() < 1e-15);
        assert!(p.equal_ratio());
        let s = 2f64.ln() / 3f64.ln();
        assert!(p.log_moran(s).abs() < 1e-15);
    }

    #[test]
    fn ratio_power_weights_are_uniform_for_equal_ratios() {
        let l = Layer::new(1, thirds()).unwrap();
        let w = WeightSequence::RatioPower { s: 2f64.ln() / 3f64.ln() };
        for lw in w.log_weights(&l).unwrap() {
            assert!((lw - 0.5f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn explicit_weights_are_validated() {
        let bad = WeightSequence::Explicit { prefix: vec![], cycle: vec![vec![0.5, 0.6]] };
        assert!(bad.validate().is_err());
        let neg = WeightSequence::Explicit { prefix: vec![], cycle: vec![vec![1.5, -0.5]] };
        assert!(neg.validate().is_err());
        let ok = WeightSequence::Explicit { prefix: vec![], cycle: vec![vec![0.25, 0.75]] };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn contraction_check_passes_for_cantor() {
        let sys = LayerSystem::explicit(Aabb::unit(1), vec![], vec![thirds()]).unwrap();
        let c = sys.contraction_check(64).unwrap();
        assert!(c.passed);
        assert!((c.eps_c - 3f64.ln()).abs() < 1e-12);
    }
}
