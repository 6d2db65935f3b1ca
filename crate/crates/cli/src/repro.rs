//! Canonical example pipelines checked against the values stored in
//! `fixtures/repro.json`.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use anyhow::{bail, Context, Result};
use moran_core::attractor::cover;
use moran_core::dimension::{
    block_boundary_layers, box_count_empirical, box_dim_formula, hausdorff_dim, measure_class, natural_log_scales,
    MeasureClassConfig, DEFAULT_NMAX,
};
use moran_core::separation::{gamma2_mwhp, gamma3_mbdp, gamma4_neighbors, near_identity_gap, Growth};
use moran_core::{Family, LayerSystem};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

const FIXTURES: &str = include_str!("../fixtures/repro.json");
const LIMIT: usize = 1 << 24;

#[derive(Debug, Deserialize)]
struct Fixtures {
    targets: Vec<Target>,
}

#[derive(Debug, Deserialize)]
struct Target {
    id: String,
    description: String,
    checks: Vec<Check>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    quantity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    equals: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    at_least: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    at_most: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    formula: Option<String>,
    provenance: String,
}

#[derive(Debug, Serialize)]
pub struct CheckOutcome {
    #[serde(flatten)]
    check: Check,
    observed: Value,
    passed: bool,
}

#[derive(Debug, Serialize)]
pub struct Outcome {
    pub id: String,
    pub description: String,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
    /// Everything the pipeline computed, including quantities without checks.
    pub quantities: BTreeMap<String, Value>,
}

fn fixtures() -> Result<Fixtures> {
    serde_json::from_str(FIXTURES).context("parsing the built-in fixtures")
}

pub fn targets() -> Result<Vec<(String, String)>> {
    Ok(fixtures()?.targets.into_iter().map(|t| (t.id, t.description)).collect())
}

impl Check {
    fn judge(&self, observed: &Value) -> bool {
        if let Some(e) = &self.equals {
            return observed == e;
        }
        let Some(x) = observed.as_f64() else { return false };
        if let Some(v) = self.near {
            return (x - v).abs() <= self.tolerance.unwrap_or(0.0);
        }
        self.at_least.is_none_or(|lo| x >= lo) && self.at_most.is_none_or(|hi| x <= hi)
    }
}

pub fn run(id: &str) -> Result<Outcome> {
    let fx = fixtures()?;
    let Some(target) = fx.targets.into_iter().find(|t| t.id == id) else {
        bail!("unknown repro target {id:?}; see `moran repro --list`");
    };
    let quantities = compute(id)?;
    let checks: Vec<CheckOutcome> = target
        .checks
        .into_iter()
        .map(|check| {
            let observed = quantities.get(&check.quantity).cloned().unwrap_or(Value::Null);
            let passed = check.judge(&observed);
            CheckOutcome { check, observed, passed }
        })
        .collect();
    let passed = checks.iter().all(|c| c.passed);
    Ok(Outcome { id: target.id, description: target.description, checks, passed, quantities })
}

fn family(name: &str, params: Value) -> Result<LayerSystem> {
    let f = Family::from_params(name, params.as_object().context("params")?)?;
    Ok(LayerSystem::from_family(f, None)?)
}

fn growth_label(g: &Growth) -> &'static str {
    match g {
        Growth::Bounded { .. } => "bounded",
        Growth::Unbounded { .. } => "unbounded",
        Growth::Inconclusive { .. } => "inconclusive",
    }
}

fn compute(id: &str) -> Result<BTreeMap<String, Value>> {
    let mut q = BTreeMap::new();
    let ln2_ln3 = LN_2 / 3f64.ln();
    match id {
        "constant" => {
            let sys = family("constant", json!({"r": "1/3", "N": 2}))?;
            q.insert("dim_h".into(), json!(hausdorff_dim(&sys, 100)?.dim_h_est));
        }
        "ex51" => {
            let sys = family("ex51", json!({}))?;
            let grid: Vec<f64> = (1..=10).map(|n| -(n as f64) * LN_2).collect();
            let g2 = gamma2_mwhp(&sys, &grid, LIMIT)?;
            let steps = g2.samples.windows(2).map(|w| w[1].value / w[0].value);
            q.insert("gamma2_min_step".into(), json!(steps.fold(f64::INFINITY, f64::min)));
            q.insert("gamma2".into(), json!(g2.samples.iter().map(|s| s.value).collect::<Vec<_>>()));
            let g3 = gamma3_mbdp(&sys, 10)?;
            q.insert("gamma3_depth_10".into(), json!(g3.samples.last().map(|s| s.value)));
            q.insert("gamma3_verdict".into(), json!(growth_label(&g3.growth)));
        }
        "ex53-psi" => {
            for (key, rho) in [("dim_h_rho_1", 1.0), ("dim_h_rho_1_2", 0.5), ("dim_h_rho_1_4", 0.25)] {
                let sys = family("ex53", json!({"rho": rho, "form": "psi"}))?;
                q.insert(key.into(), json!(hausdorff_dim(&sys, 100_000)?.dim_h_est));
            }
        }
        "ex53-near-identity" => {
            let rho: f64 = 0.5;
            let sys = family("ex53", json!({"rho": rho, "form": "phi"}))?;
            let s = LN_2 / (LN_2 - rho.ln());
            let grid: Vec<f64> = (1..=12).map(|n| -2.0 * n as f64 * LN_2).collect();
            let r = near_identity_gap(&sys, &grid, LIMIT, None)?;
            if let Some(reason) = &r.stopped {
                bail!("near-identity scan stopped early: {reason}");
            }
            let pairs: Vec<u64> = r.samples.iter().map(|s| s.qualifying_pairs).collect();
            let excess = pairs
                .iter()
                .enumerate()
                .map(|(i, &p)| p as f64 - (i + 1) as f64 * (1.0 - s) / 2.0)
                .fold(f64::INFINITY, f64::min);
            q.insert("min_pairs_minus_bound".into(), json!(excess));
            q.insert("pairs".into(), json!(pairs));
            q.insert("min_gap".into(), json!(r.samples.iter().map(|s| s.min_gap).collect::<Vec<_>>()));
            q.insert("theta".into(), json!(r.theta));
        }
        "ex55-zero" | "ex55-infinite" | "ex55-positive" => {
            let rule = match id {
                "ex55-zero" => "increasing",
                "ex55-infinite" => "decreasing",
                _ => "convergent",
            };
            let sys = family("ex55", json!({ "rule": rule }))?;
            let m = measure_class(&sys, ln2_ln3, DEFAULT_NMAX, MeasureClassConfig::default())?;
            q.insert("measure_class".into(), serde_json::to_value(m.class)?);
            q.insert("limsup_bounded".into(), json!(m.limsup_bounded));
            q.insert("dim_h".into(), json!(hausdorff_dim(&sys, 1 << 18)?.dim_h_est));
        }
        "ex57" => {
            let sys = family("ex57", json!({}))?;
            let grid = natural_log_scales(&sys, &block_boundary_layers(1 << 14))?;
            let b = box_dim_formula(&sys, &grid, LIMIT)?;
            q.insert("lower_box".into(), json!(b.lower));
            q.insert("upper_box".into(), json!(b.upper));
            q.insert("dim_h".into(), json!(hausdorff_dim(&sys, 1 << 14)?.dim_h_est));
        }
        "ex58" => {
            let sys = family("ex58", json!({"digits": "full"}))?;
            let mut grid = natural_log_scales(&sys, &(1..=12).collect::<Vec<_>>())?;
            grid.extend((1..=12).map(|n| -(((1u64 << n) - 1) as f64) * LN_2));
            grid.sort_by(|a, b| b.total_cmp(a));
            grid.dedup();
            let b = box_dim_formula(&sys, &grid, LIMIT)?;
            let sup = b.samples.iter().map(|s| s.ratio).fold(f64::NEG_INFINITY, f64::max);
            q.insert("sup_ratio".into(), json!(sup));
            let cloud = cover(&sys, (-14.0 * LN_2).exp(), None, LIMIT)?;
            let deltas: Vec<f64> = (2..=12).map(|k| (-(k as f64) * LN_2).exp()).collect();
            q.insert("empirical_slope".into(), json!(box_count_empirical(&cloud, &deltas).slope));
            let g4_grid: Vec<f64> = [1u32, 2, 3, 6, 7, 14].iter().map(|&e| -(e as f64) * LN_2).collect();
            let g4 = gamma4_neighbors(&sys, &g4_grid, LIMIT, true, None)?;
            q.insert(
                "gamma4_max".into(),
                json!(g4.samples.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max)),
            );
        }
        "ex58-endpoints" => {
            let sys = family("ex58", json!({"digits": "endpoints"}))?;
            q.insert("dim_h".into(), json!(hausdorff_dim(&sys, 1000)?.dim_h_est));
        }
        other => bail!("no pipeline for target {other:?}"),
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fixture_has_a_pipeline() {
        for t in fixtures().unwrap().targets {
            assert!(!t.checks.is_empty(), "{}", t.id);
            for c in &t.checks {
                let kinds = [c.equals.is_some(), c.near.is_some(), c.at_least.is_some() || c.at_most.is_some()];
                assert_eq!(kinds.iter().filter(|&&k| k).count(), 1, "{}:{}", t.id, c.quantity);
                assert!(c.near.is_none() || c.tolerance.is_some(), "{}:{}", t.id, c.quantity);
            }
        }
    }

    #[test]
    fn constant_target_passes() {
        let o = run("constant").unwrap();
        assert!(o.passed, "{o:?}");
    }

    #[test]
    fn unknown_target_is_an_error() {
        assert!(run("ex99").is_err());
    }
}
