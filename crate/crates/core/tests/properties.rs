//! Randomized invariants over the pure building blocks.

use proptest::prelude::*;
use synthsurv::domain::{default_answer_scale, AnswerScale, ScaleBin};
use synthsurv::prompting::{format_rate, scramble_options};

proptest! {
    // one decimal up to ten in magnitude, integer beyond
    #[test]
    fn rate_formatting_boundary(rate in -500.0f64..500.0) {
        let s = format_rate(rate);
        prop_assert!(s.ends_with('%'));
        if rate.abs() > 10.0 {
            prop_assert!(!s.contains('.'), "{rate} -> {s}");
        } else {
            prop_assert!(s.contains('.'), "{rate} -> {s}");
        }
    }

    #[test]
    fn scramble_is_a_permutation(n in 1usize..30, seed in any::<u64>()) {
        let labels: Vec<String> = (0..n).map(|i| format!("opt{i}")).collect();
        let scrambled = scramble_options(&labels, seed);
        let mut sorted = scrambled.clone();
        sorted.sort();
        let mut orig = labels.clone();
        orig.sort();
        prop_assert_eq!(sorted, orig);
        prop_assert_eq!(scramble_options(&labels, seed), scrambled);
    }

    // snapping always returns the option whose value is closest to the
    // latent input
    #[test]
    fn snap_picks_nearest_option(latent in -20.0f64..30.0) {
        let scale = default_answer_scale();
        let chosen = scale.snap(latent);
        let chosen_dist = (chosen.value.unwrap() - latent).abs();
        for option in scale.options() {
            if let Some(v) = option.value {
                prop_assert!(chosen_dist <= (v - latent).abs() + 1e-12);
            }
        }
    }

    // closed bins map to midpoints regardless of bounds
    #[test]
    fn closed_bins_map_to_midpoints(low in -50.0f64..50.0, width in 0.0f64..20.0) {
        let high = low + width;
        let scale = AnswerScale::from_bins(vec![
            ("bin".to_string(), ScaleBin::Closed { low, high }),
            ("none".to_string(), ScaleBin::Missing),
        ]).unwrap();
        prop_assert_eq!(scale.options()[0].value, Some((low + high) / 2.0));
    }
}
