// Scratch diagnostic probe; removed before release.
use mlakit::attack::*;
use mlakit::consistency::{check_global, RuleConfig};
use mlakit::eval::{derive_seed, sample_targets, TargetsMode};
use mlakit::fixtures;
use mlakit::model::*;

fn main() {
    let g = fixtures::pascal_style_graph();
    let args: Vec<String> = std::env::args().collect();
    let pi: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.25);
    let noise: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.03);
    let scale: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.3);
    let steps: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(10);
    let frac: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.25);
    let eps = 0.8f64;
    println!("pi={pi} noise={noise} scale={scale} steps={steps} frac={frac} eps={eps}");

    let dcfg = SyntheticDatasetConfig { leaf_activation: pi, noise_sigma: noise, prototype_scale: scale, dim: 128, ..fixtures::default_data_config() };
    let mut train_data = generate_synthetic(&g, &dcfg).unwrap();
    let test_data = train_data.split_off(train_data.len() - 500).unwrap();
    let init = ClassifierParams::random_init(Architecture::OneHiddenLayer, 128, 35, 64, 1234).unwrap();
    let (params, _) = train(init, &train_data, &TrainConfig { epochs: 10, learning_rate: 1.0, batch_size: 64, seed: 40 }).unwrap();

    for variant in [AttackVariant::MlaBeta, AttackVariant::GmlaBeta] {
        let mut n = 0; let mut succ = 0; let mut early = 0; let mut keep_ok = 0;
        let mut det = 0; let mut det_gamma_len = std::collections::BTreeMap::<usize, usize>::new();
        let mut fail_gamma_len = std::collections::BTreeMap::<usize, usize>::new();
        for (i, x) in test_data.features.iter().enumerate() {
            let pre = params.predict(x).unwrap();
            if !check_global(&g, &pre, RuleConfig::default()).unwrap().consistent() { continue; }
            let Ok(omega) = sample_targets(&pre, TargetsMode::Single, derive_seed(99, i as u64), g.original_mask()) else { continue; };
            let mut spec = AttackSpec::new(variant, eps, steps);
            spec.step_size = eps * frac;
            let r = pgd_attack(&params, x, &pre, &spec, &omega, &g).unwrap();
            n += 1;
            let glen = if variant.is_graph_based() { r.gamma.len() } else {
                mlakit::expansion::expand(&g, &pre, &omega).unwrap().len() };
            if r.success {
                succ += 1;
                if r.early_stopped { early += 1; }
                if r.keep_set_preserved { keep_ok += 1; }
                let d = !check_global(&g, &r.post_state, RuleConfig::default()).unwrap().consistent();
                if d { det += 1; *det_gamma_len.entry(glen).or_default() += 1; }
            } else {
                *fail_gamma_len.entry(glen).or_default() += 1;
            }
        }
        println!("\n{variant}: n={n} succ={succ} early={early} keep_ok={keep_ok} detected={det}");
        println!("  failures by |gamma|: {fail_gamma_len:?}");
        println!("  detections by |gamma|: {det_gamma_len:?}");
    }
}
