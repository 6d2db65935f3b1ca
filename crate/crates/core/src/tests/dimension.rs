use crate::attractor::cover;
use crate::dimension::{
    box_count_empirical, box_dim_formula, diagnostics, hausdorff_dim, measure_class, moran_function,
    natural_log_scales, solve_sk, MeasureClass, MeasureClassConfig, DEFAULT_NMAX, MORAN_TOL,
};
use crate::{Family, LayerSystem};
use proptest::prelude::*;
use serde_json::{json, Value};

fn family(name: &str, params: Value) -> LayerSystem {
    LayerSystem::from_family(Family::from_params(name, params.as_object().unwrap()).unwrap(), None).unwrap()
}

/// Similarity families whose attractors satisfy MOSC.
fn separated_families() -> Vec<(String, LayerSystem)> {
    let mut out = vec![
        ("cantor".to_string(), family("constant", json!({"r": "1/3", "N": 2}))),
        ("five-fifths".to_string(), family("constant", json!({"r": 0.2, "N": 3}))),
    ];
    for rule in ["increasing", "decreasing", "convergent"] {
        out.push((format!("ex55-{rule}"), family("ex55", json!({ "rule": rule }))));
    }
    for rho in [0.5, 0.25] {
        out.push((format!("ex53-psi-{rho}"), family("ex53", json!({"rho": rho, "form": "psi"}))));
    }
    out
}

#[test]
fn empirical_slope_matches_the_formula_on_constant_systems() {
    for (r, n) in [(1.0 / 3.0, 2.0), (0.2, 3.0), (0.25, 2.0)] {
        let sys = family("constant", json!({"r": r, "N": n}));
        let grid = natural_log_scales(&sys, &(1..=12).collect::<Vec<_>>()).unwrap();
        let formula = box_dim_formula(&sys, &grid, 1 << 20).unwrap();
        let cloud = cover(&sys, 1e-5, None, 1 << 22).unwrap();
        // Sixteen deltas per decade from 1e-2 down to 4e-5, above the cloud accuracy.
        let deltas: Vec<f64> = (0..=38).map(|k| 1e-2 * 10f64.powf(-(k as f64) / 16.0)).collect();
        let slope = box_count_empirical(&cloud, &deltas).slope.unwrap();
        assert!((slope - formula.upper).abs() <= 0.03, "r={r} N={n}: slope {slope} vs {}", formula.upper);
        assert!((slope - formula.lower).abs() <= 0.03, "r={r} N={n}: slope {slope} vs {}", formula.lower);
    }
}

#[test]
fn measure_class_points_the_right_way_off_the_dimension() {
    for (name, sys) in separated_families() {
        let dim = hausdorff_dim(&sys, 4096).unwrap().dim_h_est;
        let above = measure_class(&sys, dim + 0.05, DEFAULT_NMAX, MeasureClassConfig::default()).unwrap();
        let below = measure_class(&sys, dim - 0.05, DEFAULT_NMAX, MeasureClassConfig::default()).unwrap();
        assert_eq!(above.class, MeasureClass::Zero, "{name} above {dim}");
        assert_eq!(below.class, MeasureClass::Infinite, "{name} below {dim}");
    }
}

#[test]
fn positive_finite_measure_pins_the_box_dimensions() {
    let mut checked = 0;
    for (name, sys) in separated_families() {
        let dim = hausdorff_dim(&sys, 1 << 16).unwrap().dim_h_est;
        let m = measure_class(&sys, dim, DEFAULT_NMAX, MeasureClassConfig::default()).unwrap();
        if m.class != MeasureClass::PositiveFinite || !diagnostics(&sys, 256).unwrap().r0_positive {
            continue;
        }
        let grid = natural_log_scales(&sys, &(1..=40).collect::<Vec<_>>()).unwrap();
        let b = box_dim_formula(&sys, &grid, 1 << 22).unwrap();
        assert!((b.lower - dim).abs() <= 0.02, "{name}: lower {} vs {dim}", b.lower);
        assert!((b.upper - dim).abs() <= 0.02, "{name}: upper {} vs {dim}", b.upper);
        checked += 1;
    }
    assert!(checked >= 2, "only {checked} systems had positive finite measure");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn moran_root_zeroes_the_moran_function(
        layers in prop::collection::vec(prop::collection::vec(0.05f64..0.6, 2..=4), 1..=6),
        k in 1usize..=24,
    ) {
        let maps = layers
            .iter()
            .map(|l| {
                l.iter()
                    .enumerate()
                    .map(|(j, &r)| {
                        let u = j as f64 / (l.len() - 1) as f64;
                        crate::ContractionMap::similarity(r, &[u * (1.0 / r - 1.0)]).unwrap()
                    })
                    .collect()
            })
            .collect();
        let sys = LayerSystem::explicit(crate::Aabb::unit(1), vec![], maps).unwrap();
        let s = solve_sk(&sys, k).unwrap();
        let (f, _) = moran_function(&sys.profiles(k).unwrap(), s);
        prop_assert!(f.abs() <= MORAN_TOL, "F_k(s_k) = {}", f);
    }
}
