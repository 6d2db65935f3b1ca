use crate::dimension::solve_sk;
use crate::separation::{gamma2_mwhp, gamma3_mbdp, gamma4_neighbors};
use crate::words::{cutset, max_cutset_depth};
use crate::{compose, cylinder_weight, Aabb, ContractionMap, LayerSystem, WeightSequence, Word};
use proptest::prelude::*;

/// Layers of `(ratio, translation fraction)`; translations keep images in `[0,1]`.
fn arb_layers(max_layers: usize) -> impl Strategy<Value = Vec<Vec<(f64, f64)>>> {
    prop::collection::vec(prop::collection::vec((0.2f64..0.75, 0.0f64..1.0), 2..=3), 1..=max_layers)
}

fn build(layers: &[Vec<(f64, f64)>]) -> LayerSystem {
    let maps = layers
        .iter()
        .map(|l| {
            l.iter()
                .map(|&(r, u)| ContractionMap::similarity(r, &[u * (1.0 / r - 1.0)]).unwrap())
                .collect()
        })
        .collect();
    LayerSystem::explicit(Aabb::unit(1), maps, vec![]).unwrap()
}

/// Advances `word` to the next word of the same length; false after the last.
fn next_word(sys: &LayerSystem, word: &mut [u32]) -> bool {
    for i in (0..word.len()).rev() {
        if word[i] < sys.layer(i + 1).unwrap().len() as u32 {
            word[i] += 1;
            return true;
        }
        word[i] = 1;
    }
    false
}

fn is_prefix(a: &[u32], b: &[u32]) -> bool {
    a.len() <= b.len() && b[..a.len()] == *a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cutsets_are_prefix_free_and_exhaustive(layers in arb_layers(6), t in 0.05f64..0.95) {
        let sys = build(&layers);
        let depth_floor: f64 = (1..=8).map(|n| sys.layer(n).unwrap().log_c2()).sum();
        let b = (t * depth_floor).exp();
        let c = cutset(&sys, b, 1 << 20).unwrap();
        let words: Vec<&[u32]> = c.words.iter().map(|w| w.digits.as_slice()).collect();
        for (i, a) in words.iter().enumerate() {
            for (j, w) in words.iter().enumerate() {
                prop_assert!(i == j || !is_prefix(a, w));
            }
        }
        // Every word of the maximal depth has exactly one cutset prefix.
        let depth = max_cutset_depth(&sys, b.ln()).unwrap();
        let mut word = vec![1u32; depth];
        loop {
            prop_assert_eq!(words.iter().filter(|p| is_prefix(p, &word)).count(), 1);
            if !next_word(&sys, &mut word) {
                break;
            }
        }
    }

    #[test]
    fn cutset_words_meet_the_scale(layers in arb_layers(6), t in 0.05f64..0.95) {
        let sys = build(&layers);
        let floor: f64 = (1..=8).map(|n| sys.layer(n).unwrap().log_c2()).sum();
        let b = (t * floor).exp();
        for w in cutset(&sys, b, 1 << 20).unwrap().words {
            let map = compose(&sys, &w).unwrap();
            prop_assert!(map.ratio() <= b * (1.0 + 1e-9));
            let parent = Word::new(&sys, 1, w.digits[..w.len() - 1].to_vec()).unwrap();
            prop_assert!(compose(&sys, &parent).unwrap().ratio() > b * (1.0 - 1e-9));
        }
    }

    #[test]
    fn cylinder_probabilities_sum_to_one(layers in arb_layers(4), len in 1usize..=4, s in -2.0f64..2.0) {
        let sys = build(&layers);
        for weights in [WeightSequence::Uniform, WeightSequence::RatioPower { s }] {
            let mut total = 0.0;
            let mut word = vec![1u32; len];
            loop {
                let w = Word::new(&sys, 1, word.clone()).unwrap();
                total += cylinder_weight(&sys, &weights, &w).unwrap().exp();
                if !next_word(&sys, &mut word) {
                    break;
                }
            }
            prop_assert!((total - 1.0).abs() < 1e-12, "{}", total);
        }
    }

    #[test]
    fn moran_root_ignores_map_order(layers in arb_layers(5), k in 1usize..=12) {
        let sys = build(&layers);
        let reversed: Vec<Vec<(f64, f64)>> = layers.iter().map(|l| l.iter().rev().copied().collect()).collect();
        let a = solve_sk(&sys, k).unwrap();
        let b = solve_sk(&build(&reversed), k).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn moran_root_grows_with_ratios(layers in arb_layers(5), k in 1usize..=12, grow in 1.01f64..1.3) {
        let sys = build(&layers);
        let bigger: Vec<Vec<(f64, f64)>> = layers
            .iter()
            .map(|l| l.iter().map(|&(r, _)| ((r * grow).min(0.99), 0.0)).collect())
            .collect();
        let a = solve_sk(&sys, k).unwrap();
        let b = solve_sk(&build(&bigger), k).unwrap();
        prop_assert!(b > a);
    }

    #[test]
    fn separation_quantities_are_ordered(layers in arb_layers(5), t in 0.1f64..0.9) {
        let sys = build(&layers);
        let floor: f64 = (1..=8).map(|n| sys.layer(n).unwrap().log_c2()).sum();
        let grid = [t * floor];
        let g4 = gamma4_neighbors(&sys, &grid, 1 << 20, true, None).unwrap().samples[0].value;
        let g4w = gamma4_neighbors(&sys, &grid, 1 << 20, false, None).unwrap().samples[0].value;
        prop_assert!(1.0 <= g4 && g4 <= g4w);
        prop_assert!(gamma2_mwhp(&sys, &grid, 1 << 20).unwrap().samples[0].value >= 1.0);
        prop_assert!(gamma3_mbdp(&sys, 6).unwrap().samples.iter().all(|s| s.value == 1.0));
    }

    #[test]
    fn word_neighbor_count_matches_all_pairs(layers in arb_layers(4), t in 0.1f64..0.9) {
        let sys = build(&layers);
        let floor: f64 = (1..=6).map(|n| sys.layer(n).unwrap().log_c2()).sum();
        let b = (t * floor).exp();
        let c = cutset(&sys, b, 1 << 16).unwrap();
        let x = *sys.ambient();
        let boxes: Vec<Aabb> = c.word_maps.iter().map(|m| m.bounding_image(&x)).collect();
        let brute = boxes
            .iter()
            .map(|q| {
                let slack = 1e-9 * q.diameter();
                boxes.iter().filter(|o| o.intersects_closed(q, slack)).count()
            })
            .max()
            .unwrap() as f64;
        let fast = gamma4_neighbors(&sys, &[b.ln()], 1 << 16, false, None).unwrap().samples[0].value;
        prop_assert_eq!(fast, brute);
    }
}
