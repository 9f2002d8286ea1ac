mod common;

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forms_are_multilinear(seed in any::<u64>(), arity in 1usize..=4, n in 1usize..=3) {
        prop_assert_eq!(common::multilinearity(seed, arity, n), Ok(()));
    }

    #[test]
    fn identity_composition_is_neutral(seed in any::<u64>(), arity in 1usize..=4, n in 1usize..=3) {
        prop_assert_eq!(common::identity_composition(seed, arity, n), Ok(()));
    }

    #[test]
    fn needles_are_local(seed in any::<u64>(), start in 0usize..64, len in 0usize..64) {
        prop_assert_eq!(common::spike_locality(seed, start, len), Ok(()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn terminal_conditions_are_exact(seed in any::<u64>()) {
        prop_assert_eq!(common::terminal_exactness(seed), Ok(()));
    }

    #[test]
    fn tests_vanish_at_the_base_control(seed in any::<u64>()) {
        prop_assert_eq!(common::zero_at_ubar(seed), Ok(()));
    }

    #[test]
    fn fixed_seed_is_reproducible(seed in any::<u64>()) {
        prop_assert_eq!(common::determinism(seed), Ok(()));
    }
}
