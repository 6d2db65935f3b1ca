//! Built-in closed-form layer generators.
//!
//! Each family evaluates layer `n` directly from its formula, so any layer
//! can be produced without materializing the ones before it. Families also
//! know their log-ratio profile (used by the dimension solvers without
//! building maps) and, where one is known, a candidate open-box sequence
//! `V_n` for the open set condition.

use std::f64::consts::LN_2;

use serde_json::{Map, Value};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Aabb, MAX_DIM};
use crate::map::ContractionMap;
use crate::system::{Layer, LayerProfile, RatioGroup};

/// Largest layer a provider will materialize as an explicit map list.
pub const MAX_LAYER_MAPS: usize = 1 << 20;

const LN_3: f64 = 1.098_612_288_668_109_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ex53Form {
    /// `φ_{n,0}(x) = x/2`, `φ_{n,1}(x) = (x + ρⁿ/n)/2`.
    Overlapping,
    /// `ψ_{n,j}(x) = r_n(x + j)` with `r_1 = ρ/2`, `r_n = (n-1)ρ/(2n)`.
    Separated,
}

/// Rule for the layer factor `a_n` of the `ex55` family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleRule {
    /// `a_n = (n+3)/(n+2)`
    Increasing,
    /// `a_n = (n+2)/(n+3)`
    Decreasing,
    /// `a_n = (3/2)^(2^-n)`
    Convergent,
    Constant(f64),
}

impl ScaleRule {
    /// `ln a_n`.
    pub fn log_a(&self, n: usize) -> f64 {
        let n = n as f64;
        match *self {
            ScaleRule::Increasing => ((n + 3.0) / (n + 2.0)).ln(),
            ScaleRule::Decreasing => ((n + 2.0) / (n + 3.0)).ln(),
            ScaleRule::Convergent => (-n).exp2() * 1.5f64.ln(),
            ScaleRule::Constant(c) => c.ln(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            ScaleRule::Increasing => "increasing",
            ScaleRule::Decreasing => "decreasing",
            ScaleRule::Convergent => "convergent",
            ScaleRule::Constant(_) => "constant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DigitSet {
    /// `D_n = {0, …, 2^(2^n) − 1}`
    Full,
    /// `D_n = {0, 2^(2^n) − 1}`
    Endpoints,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// Planar pair: `diag(0.5, 0.4)·x` and `0.5·(x + (1,1))`.
    Ex51,
    Ex53 { rho: f64, form: Ex53Form },
    /// Four planar maps `((x + i/(2ⁿn))/2, (y + j/2)/2)`.
    Ex54,
    /// `x/(3a_n)` and `(x−1)/(3a_n) + 1`.
    Ex55 { rule: ScaleRule },
    /// `n² + 3` planar maps of ratios `1/(2n)` and `1/2`.
    Ex56,
    /// Two maps fixing 0 and 1 with ratio 1/3 or 1/2 on alternating dyadic blocks.
    Ex57,
    /// `2^(−2ⁿ)(x + α)`, `α ∈ D_n`.
    Ex58 { digits: DigitSet },
    /// `(x+1)/2` and `(x+j−1)/(2n)` for `1 ≤ j ≤ n`; `margin` widens `X` to `[−m, 1+m]`.
    Ex59 { margin: f64 },
    /// Same `N` maps `r(x + j·gap)` on every layer.
    Constant { ratio: f64, count: usize, gap: f64 },
}

fn num_param(params: &Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match params.get(key) {
        None => Ok(None),
        Some(Value::Number(n)) => Ok(n.as_f64()),
        Some(Value::String(s)) => parse_ratio_literal(s)
            .map(Some)
            .ok_or_else(|| invalid(format!("/family/params/{key}"), format!("not a number: {s:?}"))),
        Some(other) => Err(invalid(format!("/family/params/{key}"), format!("expected a number, got {other}"))),
    }
}

fn str_param<'a>(params: &'a Map<String, Value>, key: &str) -> Result<Option<&'a str>> {
    match params.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.as_str())),
        Some(other) => Err(invalid(format!("/family/params/{key}"), format!("expected a string, got {other}"))),
    }
}

/// Accepts `"0.25"` or `"1/4"`.
pub fn parse_ratio_literal(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.trim().parse().ok()?;
        let b: f64 = b.trim().parse().ok()?;
        Some(a / b)
    } else {
        s.parse().ok()
    }
}

impl Family {
    pub fn names() -> &'static [&'static str] {
        &[
            "ex51", "ex53", "ex54", "ex55", "ex56", "ex57", "ex58", "ex59", "constant",
        ]
    }

    pub fn from_params(name: &str, params: &Map<String, Value>) -> Result<Family> {
        let fam = match name {
            "ex51" => Family::Ex51,
            "ex53" => {
                let rho = num_param(params, "rho")?.unwrap_or(1.0);
                if !(rho > 0.0 && rho <= 1.0) {
                    return Err(invalid("/family/params/rho", format!("must lie in (0,1], got {rho}")));
                }
                let form = match str_param(params, "form")?.unwrap_or("phi") {
                    "phi" | "overlapping" => Ex53Form::Overlapping,
                    "psi" | "separated" => Ex53Form::Separated,
                    other => {
                        return Err(invalid("/family/params/form", format!("expected \"phi\" or \"psi\", got {other:?}")));
                    }
                };
                Family::Ex53 { rho, form }
            }
            "ex54" => Family::Ex54,
            "ex55" => {
                let rule = match str_param(params, "rule")?.unwrap_or("increasing") {
                    "increasing" | "a" => ScaleRule::Increasing,
                    "decreasing" | "b" => ScaleRule::Decreasing,
                    "convergent" | "c" => ScaleRule::Convergent,
                    "constant" => {
                        let c = num_param(params, "c")?.unwrap_or(1.0);
                        if !(c >= 2.0 / 3.0 && c <= 1.5) {
                            return Err(invalid("/family/params/c", format!("must lie in [2/3, 3/2], got {c}")));
                        }
                        ScaleRule::Constant(c)
                    }
                    other => return Err(invalid("/family/params/rule", format!("unknown rule {other:?}"))),
                };
                Family::Ex55 { rule }
            }
            "ex56" => Family::Ex56,
            "ex57" => Family::Ex57,
            "ex58" => {
                let digits = match str_param(params, "digits")?.unwrap_or("full") {
                    "full" => DigitSet::Full,
                    "endpoints" => DigitSet::Endpoints,
                    other => return Err(invalid("/family/params/digits", format!("expected \"full\" or \"endpoints\", got {other:?}"))),
                };
                Family::Ex58 { digits }
            }
            "ex59" => {
                let margin = num_param(params, "margin")?.unwrap_or(0.0);
                if !(margin >= 0.0 && margin.is_finite()) {
                    return Err(invalid("/family/params/margin", format!("must be finite and >= 0, got {margin}")));
                }
                Family::Ex59 { margin }
            }
            "constant" => {
                let ratio = num_param(params, "r")?
                    .or(num_param(params, "ratio")?)
                    .ok_or_else(|| invalid("/family/params/r", "missing contraction ratio"))?;
                if !(ratio > 0.0 && ratio < 1.0) {
                    return Err(invalid("/family/params/r", format!("must lie in (0,1), got {ratio}")));
                }
                let count = num_param(params, "N")?.or(num_param(params, "n")?).unwrap_or(2.0);
                if !(count >= 2.0 && count.fract() == 0.0 && count <= MAX_LAYER_MAPS as f64) {
                    return Err(invalid("/family/params/N", format!("must be an integer >= 2, got {count}")));
                }
                let count = count as usize;
                let gap = num_param(params, "gap")?.unwrap_or((1.0 / ratio - 1.0) / (count - 1) as f64);
                if !(gap >= 0.0 && gap.is_finite()) {
                    return Err(invalid("/family/params/gap", format!("must be finite and >= 0, got {gap}")));
                }
                Family::Constant { ratio, count, gap }
            }
            other => {
                return Err(invalid(
                    "/family/name",
                    format!("unknown family {other:?}; expected one of {:?}", Family::names()),
                ))
            }
        };
        Ok(fam)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Ex51 => "ex51",
            Family::Ex53 { .. } => "ex53",
            Family::Ex54 => "ex54",
            Family::Ex55 { .. } => "ex55",
            Family::Ex56 => "ex56",
            Family::Ex57 => "ex57",
            Family::Ex58 { .. } => "ex58",
            Family::Ex59 { .. } => "ex59",
            Family::Constant { .. } => "constant",
        }
    }

    /// Canonical parameter map (for reports).
    pub fn params(&self) -> Map<String, Value> {
        let mut m = Map::new();
        match self {
            Family::Ex53 { rho, form } => {
                m.insert("rho".into(), (*rho).into());
                m.insert(
                    "form".into(),
                    match form {
                        Ex53Form::Overlapping => "phi",
                        Ex53Form::Separated => "psi",
                    }
                    .into(),
                );
            }
            Family::Ex55 { rule } => {
                m.insert("rule".into(), rule.name().into());
                if let ScaleRule::Constant(c) = rule {
                    m.insert("c".into(), (*c).into());
                }
            }
            Family::Ex58 { digits } => {
                m.insert(
                    "digits".into(),
                    match digits {
                        DigitSet::Full => "full",
                        DigitSet::Endpoints => "endpoints",
                    }
                    .into(),
                );
            }
            Family::Ex59 { margin } => {
                m.insert("margin".into(), (*margin).into());
            }
            Family::Constant { ratio, count, gap } => {
                m.insert("r".into(), (*ratio).into());
                m.insert("N".into(), (*count).into());
                m.insert("gap".into(), (*gap).into());
            }
            _ => {}
        }
        m
    }

    pub fn dimension(&self) -> usize {
        match self {
            Family::Ex51 | Family::Ex54 | Family::Ex56 => 2,
            _ => 1,
        }
    }

    pub fn default_ambient(&self) -> Aabb {
        match *self {
            Family::Ex51 | Family::Ex56 => Aabb::unit(2),
            Family::Ex54 => Aabb::new(&[0.0, 0.0], &[0.5, 0.5]).unwrap(),
            Family::Ex53 { rho, form } => {
                let hi = match form {
                    Ex53Form::Overlapping => rho,
                    Ex53Form::Separated => rho / (2.0 - rho),
                };
                Aabb::new(&[0.0], &[hi]).unwrap()
            }
            Family::Ex59 { margin } => Aabb::new(&[-margin], &[1.0 + margin]).unwrap(),
            Family::Constant { ratio, count, gap } => {
                let amax = gap * (count - 1) as f64;
                let hi = (ratio * amax / (1.0 - ratio)).max(1.0);
                Aabb::new(&[0.0], &[hi]).unwrap()
            }
            _ => Aabb::unit(1),
        }
    }

    /// Highest layer index the closed form can represent in f64.
    pub fn max_layer(&self) -> Option<usize> {
        match self {
            // 2^(-2^n) has a finite logarithm up to n = 1023.
            Family::Ex58 { .. } => Some(1000),
            _ => None,
        }
    }

    /// Number of maps in layer `n`, in log scale.
    fn log_count(&self, n: usize) -> f64 {
        match self {
            Family::Ex58 { digits: DigitSet::Full } => (n as f64).exp2() * LN_2,
            _ => (self.count(n).unwrap_or(usize::MAX) as f64).ln(),
        }
    }

    /// Number of maps in layer `n` when it fits in `usize`.
    pub fn count(&self, n: usize) -> Option<usize> {
        match self {
            Family::Ex51 | Family::Ex57 | Family::Ex55 { .. } | Family::Ex53 { .. } => Some(2),
            Family::Ex54 => Some(4),
            Family::Ex56 => n.checked_mul(n)?.checked_add(3),
            Family::Ex58 { digits: DigitSet::Endpoints } => Some(2),
            Family::Ex58 { digits: DigitSet::Full } => {
                if n < 6 {
                    Some(1usize << (1usize << n))
                } else {
                    None
                }
            }
            Family::Ex59 { .. } => n.checked_add(1),
            Family::Constant { count, .. } => Some(*count),
        }
    }

    fn log_ex58_ratio(n: usize) -> f64 {
        -(n as f64).exp2() * LN_2
    }

    fn log_ex57_ratio(n: usize) -> f64 {
        // 2^(2k) <= n < 2^(2k+1)  <=>  floor(log2 n) even.
        let block = usize::BITS - 1 - n.leading_zeros();
        if block % 2 == 0 {
            -LN_3
        } else {
            -LN_2
        }
    }

    fn log_ex55_ratio(rule: &ScaleRule, n: usize) -> f64 {
        -LN_3 - rule.log_a(n)
    }

    fn log_ex53_psi_ratio(rho: f64, n: usize) -> f64 {
        if n == 1 {
            (rho / 2.0).ln()
        } else {
            let n = n as f64;
            ((n - 1.0) / n).ln() + (rho / 2.0).ln()
        }
    }

    /// Log-ratio profile of layer `n` without materializing its maps.
    pub fn profile(&self, n: usize) -> Result<LayerProfile> {
        self.check_layer(n)?;
        let dim = self.dimension();
        let sim = |log_ratio: f64, log_mult: f64| RatioGroup::similarity(dim, log_ratio, log_mult);
        let groups = match self {
            Family::Ex51 => {
                let mut d = [0.0; MAX_DIM];
                d[0] = 0.5f64.ln();
                d[1] = 0.4f64.ln();
                vec![
                    RatioGroup {
                        log_scales: d,
                        log_mult: 0.0,
                        similarity: false,
                    },
                    sim(0.5f64.ln(), 0.0),
                ]
            }
            Family::Ex53 { rho, form } => {
                let lr = match form {
                    Ex53Form::Overlapping => -LN_2,
                    Ex53Form::Separated => Self::log_ex53_psi_ratio(*rho, n),
                };
                vec![sim(lr, LN_2)]
            }
            Family::Ex54 => vec![sim(-LN_2, 4f64.ln())],
            Family::Ex55 { rule } => vec![sim(Self::log_ex55_ratio(rule, n), LN_2)],
            Family::Ex56 => {
                let nf = n as f64;
                vec![sim(-(2.0 * nf).ln(), 2.0 * nf.ln()), sim(-LN_2, 3f64.ln())]
            }
            Family::Ex57 => vec![sim(Self::log_ex57_ratio(n), LN_2)],
            Family::Ex58 { .. } => vec![sim(Self::log_ex58_ratio(n), self.log_count(n))],
            Family::Ex59 { .. } => {
                let nf = n as f64;
                vec![sim(-LN_2, 0.0), sim(-(2.0 * nf).ln(), nf.ln())]
            }
            Family::Constant { ratio, count, .. } => vec![sim(ratio.ln(), (*count as f64).ln())],
        };
        Ok(LayerProfile::from_groups(n, dim, groups))
    }

    fn check_layer(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(invalid("layer", "layer indices start at 1"));
        }
        if let Some(max) = self.max_layer() {
            if n > max {
                return Err(Error::ProviderCapability {
                    layer: n,
                    reason: format!("family {} is representable only up to layer {max}", self.name()),
                });
            }
        }
        Ok(())
    }

    /// Materializes layer `n`.
    pub fn layer(&self, n: usize) -> Result<Layer> {
        self.check_layer(n)?;
        let count = self.count(n).filter(|&c| c <= MAX_LAYER_MAPS).ok_or_else(|| Error::ProviderCapability {
            layer: n,
            reason: format!("more than {MAX_LAYER_MAPS} maps; only the ratio profile is available"),
        })?;
        let nf = n as f64;
        let mut maps = Vec::with_capacity(count);
        match *self {
            Family::Ex51 => {
                maps.push(ContractionMap::diagonal(&[0.5, 0.4], &[0.0, 0.0])?);
                maps.push(ContractionMap::similarity(0.5, &[1.0, 1.0])?);
            }
            Family::Ex53 { rho, form } => match form {
                Ex53Form::Overlapping => {
                    maps.push(ContractionMap::similarity_log(-LN_2, &[0.0])?);
                    let shift = (nf * rho.ln()).exp() / nf;
                    maps.push(ContractionMap::similarity_log(-LN_2, &[shift / 2.0])?);
                }
                Ex53Form::Separated => {
                    let lr = Self::log_ex53_psi_ratio(rho, n);
                    maps.push(ContractionMap::similarity_log(lr, &[0.0])?);
                    maps.push(ContractionMap::similarity_log(lr, &[lr.exp()])?);
                }
            },
            Family::Ex54 => {
                for j in 0..2 {
                    for i in 0..2 {
                        let tx = i as f64 / (nf.exp2() * nf);
                        let ty = j as f64 / 2.0;
                        maps.push(ContractionMap::similarity_log(-LN_2, &[tx / 2.0, ty / 2.0])?);
                    }
                }
            }
            Family::Ex55 { rule } => {
                let lr = Self::log_ex55_ratio(&rule, n);
                maps.push(ContractionMap::similarity_log(lr, &[0.0])?);
                maps.push(ContractionMap::similarity_log(lr, &[-lr.exp_m1()])?);
            }
            Family::Ex56 => {
                let small = -(2.0 * nf).ln();
                for j in 0..n {
                    for i in 0..n {
                        maps.push(ContractionMap::similarity_log(
                            small,
                            &[i as f64 / (2.0 * nf), j as f64 / (2.0 * nf)],
                        )?);
                    }
                }
                for (i, j) in [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                    maps.push(ContractionMap::similarity_log(-LN_2, &[i / 2.0, j / 2.0])?);
                }
            }
            Family::Ex57 => {
                let lr = Self::log_ex57_ratio(n);
                maps.push(ContractionMap::similarity_log(lr, &[0.0])?);
                maps.push(ContractionMap::similarity_log(lr, &[-lr.exp_m1()])?);
            }
            Family::Ex58 { digits } => {
                let lr = Self::log_ex58_ratio(n);
                let r = lr.exp();
                match digits {
                    DigitSet::Endpoints => {
                        maps.push(ContractionMap::similarity_log(lr, &[0.0])?);
                        maps.push(ContractionMap::similarity_log(lr, &[-lr.exp_m1()])?);
                    }
                    DigitSet::Full => {
                        for alpha in 0..count {
                            maps.push(ContractionMap::similarity_log(lr, &[alpha as f64 * r])?);
                        }
                    }
                }
            }
            Family::Ex59 { .. } => {
                maps.push(ContractionMap::similarity_log(-LN_2, &[0.5])?);
                let small = -(2.0 * nf).ln();
                for j in 1..=n {
                    maps.push(ContractionMap::similarity_log(small, &[(j - 1) as f64 / (2.0 * nf)])?);
                }
            }
            Family::Constant { ratio, count, gap } => {
                for j in 0..count {
                    maps.push(ContractionMap::similarity(ratio, &[j as f64 * gap])?);
                }
            }
        }
        Layer::new(n, maps)
    }

    /// Candidate open set `V_n` for the open set condition, when the family
    /// ships one.
    pub fn open_set(&self, n: usize) -> Option<Aabb> {
        let nf = n as f64;
        match *self {
            Family::Ex51 | Family::Ex56 => Some(Aabb::unit(2)),
            Family::Ex53 { rho, form } => {
                let hi = match form {
                    Ex53Form::Overlapping => ex53_open_set_length(rho, n),
                    Ex53Form::Separated => rho / (2.0 - rho),
                };
                Some(Aabb::new(&[0.0], &[hi]).unwrap())
            }
            Family::Ex54 => {
                // Σ_k 1 / (2^(n+2k−1) (n+k−1))
                let mut w = 0.0;
                for k in 1..=80 {
                    let kf = k as f64;
                    w += (-(nf + 2.0 * kf - 1.0)).exp2() / (nf + kf - 1.0);
                }
                Some(Aabb::new(&[0.0, 0.0], &[w, 0.5]).unwrap())
            }
            Family::Ex55 { .. } | Family::Ex57 | Family::Ex58 { .. } | Family::Ex59 { .. } => Some(Aabb::unit(1)),
            Family::Constant { .. } => Some(self.default_ambient()),
        }
    }
}

/// `Σ_{k≥1} ρ^(n+k−1) / (2^k (n+k−1))`, summed directly (terms shrink by at
/// least a factor 2).
pub fn ex53_open_set_length(rho: f64, n: usize) -> f64 {
    let mut total = 0.0;
    let ln_rho = rho.ln();
    for k in 1..=120usize {
        let m = (n + k - 1) as f64;
        let term = (m * ln_rho - k as f64 * LN_2).exp() / m;
        total += term;
        if term < total * 1e-18 {
            break;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn fam(name: &str, params: Value) -> Family {
        Family::from_params(name, params.as_object().unwrap()).unwrap()
    }

    #[test]
    fn ex55_first_layer_ratio_is_a_quarter() {
        let f = fam("ex55", json!({"rule": "increasing"}));
        let layer = f.layer(1).unwrap();
        assert_eq!(layer.maps().len(), 2);
        for m in layer.maps() {
            assert!((m.ratio() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn ex57_alternates_on_dyadic_blocks() {
        let f = fam("ex57", json!({}));
        let r = |n| f.layer(n).unwrap().maps()[0].ratio();
        assert!((r(1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((r(2) - 0.5).abs() < 1e-15);
        assert!((r(3) - 0.5).abs() < 1e-15);
        assert!((r(4) - 1.0 / 3.0).abs() < 1e-15);
        assert!((r(7) - 1.0 / 3.0).abs() < 1e-15);
        assert!((r(8) - 0.5).abs() < 1e-15);
        assert!((r(16) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ex53_rejects_rho_out_of_range() {
        for rho in [0.0, -0.5, 1.5] {
            let err = Family::from_params("ex53", json!({ "rho": rho }).as_object().unwrap()).unwrap_err();
            assert!(err.to_string().contains("rho"));
        }
    }

    #[test]
    fn ex58_full_layer_sizes() {
        let f = fam("ex58", json!({"digits": "full"}));
        assert_eq!(f.layer(1).unwrap().maps().len(), 4);
        assert_eq!(f.layer(3).unwrap().maps().len(), 256);
        assert!(matches!(f.layer(5), Err(Error::ProviderCapability { .. })));
        let p = f.profile(12).unwrap();
        assert!((p.log_count - 4096.0 * LN_2).abs() < 1e-9);
        assert!(matches!(f.profile(1001), Err(Error::ProviderCapability { .. })));
    }

    #[test]
    fn ex56_has_n_squared_plus_three_maps() {
        let f = fam("ex56", json!({}));
        for n in 1..6 {
            assert_eq!(f.layer(n).unwrap().maps().len(), n * n + 3);
        }
    }

    #[test]
    fn ex53_open_set_satisfies_its_recursion() {
        // v_n = ρⁿ/(2n) + v_{n+1}/2
        for rho in [1.0, 0.5, 0.25] {
            for n in 1..30 {
                let lhs = ex53_open_set_length(rho, n);
                let rhs = rho.powi(n as i32) / (2.0 * n as f64) + ex53_open_set_length(rho, n + 1) / 2.0;
                assert!((lhs - rhs).abs() <= 1e-14 * lhs, "{lhs} vs {rhs}");
            }
        }
        assert!((ex53_open_set_length(1.0, 1) - LN_2).abs() < 1e-15);
    }

    #[test]
    fn ratio_literals_parse() {
        assert_eq!(parse_ratio_literal("1/4"), Some(0.25));
        assert_eq!(parse_ratio_literal(" 0.5 "), Some(0.5));
        assert_eq!(parse_ratio_literal("x"), None);
    }
}
