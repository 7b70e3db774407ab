//! Bundled data: a 35-label PASCAL-style taxonomy (20 original dataset
//! labels under 15 abstract ones) and a small multi-parent candidate list for
//! exercising tree-ification. The same files ship in `data/` for CLI use.

use crate::hierarchy::{candidates_from_json, LabelGraph, TaxonomyCandidate};
use crate::model::{SyntheticDatasetConfig, TrainConfig};

pub const TAXONOMY35_JSON: &str = include_str!("../data/taxonomy35.json");
pub const CANDIDATES_DEMO_JSON: &str = include_str!("../data/candidates_demo.json");

/// The default experiment graph: 35 labels, 20 of them original.
pub fn pascal_style_graph() -> LabelGraph {
    LabelGraph::from_json(TAXONOMY35_JSON).expect("bundled taxonomy is valid")
}

pub fn demo_candidates() -> Vec<TaxonomyCandidate> {
    candidates_from_json(CANDIDATES_DEMO_JSON).expect("bundled candidates are valid")
}

/// Default synthetic pool: 10000 samples in 64 dimensions; the last
/// [`DEFAULT_HOLDOUT`] are split off as the held-out set. One config (and one
/// seed) for both halves keeps them on the same prototypes.
pub fn default_data_config() -> SyntheticDatasetConfig {
    SyntheticDatasetConfig {
        samples: 10_000,
        dim: 64,
        leaf_activation: 0.2,
        prototype_scale: 1.0,
        noise_sigma: 0.1,
        seed: 7,
    }
}

/// Held-out sample count of the default experiment.
pub const DEFAULT_HOLDOUT: usize = 2000;

/// Generates the default experiment data: (training set, held-out set).
pub fn default_experiment_data(
    g: &crate::hierarchy::LabelGraph,
) -> (crate::model::Dataset, crate::model::Dataset) {
    let mut train = crate::model::generate_synthetic(g, &default_data_config())
        .expect("default config is valid");
    let test = train
        .split_off(train.len() - DEFAULT_HOLDOUT)
        .expect("holdout fits");
    (train, test)
}

pub fn default_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 40,
        learning_rate: 5.0,
        batch_size: 64,
        seed: 40,
    }
}

/// The epsilon sweep used by the default experiment, in feature units.
pub const DEFAULT_EPSILONS: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 0.8];

/// Default PGD iteration count; the step size defaults to epsilon / 4.
pub const DEFAULT_PGD_STEPS: usize = 10;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_taxonomy_has_expected_shape() {
        let g = pascal_style_graph();
        assert_eq!(g.node_count(), 35);
        let originals = g.ids().filter(|&n| g.is_original(n)).count();
        assert_eq!(originals, 20);
        // Exactly the original labels are leaves of this taxonomy.
        assert_eq!(g.leaves().len(), 20);
        assert!(g.leaves().iter().all(|&n| g.is_original(n)));
        assert_eq!(g.roots().len(), 1);
        assert_eq!(g.name(g.roots()[0]), "entity");
    }

    #[test]
    fn demo_candidates_treeify_cleanly() {
        // Build the raw multi-parent graph from the candidate edges, then
        // reduce it: every child keeps exactly one parent.
        let cands = demo_candidates();
        let mut names: Vec<String> = Vec::new();
        let mut edges: Vec<(String, String)> = Vec::new();
        for c in &cands {
            if !names.contains(&c.child) {
                names.push(c.child.clone());
            }
            for p in &c.parents {
                if !names.contains(p) {
                    names.push(p.clone());
                }
                edges.push((p.clone(), c.child.clone()));
            }
        }
        let raw = LabelGraph::build(&names, &edges).unwrap();
        assert!(raw.ids().any(|n| raw.parents(n).len() > 1));
        let tree = raw.treeify(&cands).unwrap();
        for n in tree.ids() {
            assert!(tree.parents(n).len() <= 1);
        }
        // "mammal" picks the deeper of its two candidates.
        let mammal = tree.id_of("mammal").unwrap();
        assert_eq!(tree.name(tree.parents(mammal)[0]), "animal");
    }
}
