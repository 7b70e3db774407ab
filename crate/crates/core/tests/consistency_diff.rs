//! Differential fuzzing: the production consistency checker and the naive
//! quantifier-expansion oracle must agree exactly, across graph shapes,
//! arbitrary (not necessarily consistent) states, and both rule settings.

mod common;

use common::{random_dag, random_tree};
use mlakit::consistency::{check_global, LabelState, RuleConfig};
use mlakit::oracle::exhaustive_consistency;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn production_checker_agrees_with_oracle_on_10k_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for case in 0..10_000 {
        let g = if case % 3 == 0 {
            random_tree(&mut rng, 14)
        } else {
            random_dag(&mut rng, 14)
        };
        let signs: Vec<i8> = (0..g.node_count())
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        let s = LabelState::new(signs).unwrap();
        let upward = rng.random::<bool>();
        let ours = check_global(&g, &s, RuleConfig { upward }).unwrap();
        let oracle = exhaustive_consistency(&g, &s, upward);
        assert_eq!(
            ours, oracle,
            "disagreement on case {case} (upward = {upward})\ngraph: {}\nstate: {:?}",
            g.to_json(),
            s.signs()
        );
    }
}
