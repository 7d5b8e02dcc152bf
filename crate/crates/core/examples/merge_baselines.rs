//! The five merge baselines on the two-task classification suite.
//!
//! `cargo run --release --example merge_baselines`

use pwe_fusion::experiment::evaluate_point;
use pwe_fusion::merge::{
    fisher_merge, param_distance_matrix, regmean_checkpoints, simple_average, task_arithmetic, task_vectors,
    ties_merging, MergeConfig, MergeMethod,
};
use pwe_fusion::tasks::{CheckpointSet, ClusterParams, GdConfig, TaskSuite};

fn main() -> pwe_fusion::Result<()> {
    let suite = TaskSuite::cluster_classification(ClusterParams::new(2, 256), 0)?;
    let real = suite.realization(16)?;
    let gd = GdConfig {
        steps: 300,
        lr: 0.1,
        batch_size: None,
        seed: 0,
    };
    let set = CheckpointSet::build(&suite, &real, 0, &gd, &gd)?;
    let (pre, ft) = (&set.pretrained, &set.finetuned);
    let dict = task_vectors(pre, ft)?;

    let show = |name: &str, p: &pwe_fusion::nn::ParamVector| -> pwe_fusion::Result<()> {
        let e = evaluate_point(&suite, &real, p, None)?;
        println!("{name:<18} losses {:.4?} accuracies {:.4?}", e.losses, e.metrics.unwrap_or_default());
        Ok(())
    };
    show("pretrained", pre)?;
    show("finetuned_0", &ft[0])?;
    show("finetuned_1", &ft[1])?;

    show("average", &simple_average(ft)?)?;
    let ta = MergeConfig::defaults(MergeMethod::TaskArithmetic, 2);
    show("task arithmetic", &task_arithmetic(pre, &dict, ta.lambda)?)?;
    let ties = MergeConfig::defaults(MergeMethod::Ties, 2);
    show("ties", &ties_merging(pre, &dict, ties.trim_fraction, ties.lambda)?)?;

    let fishers = (0..2)
        .map(|t| suite.empirical_fisher(t, &real, &ft[t], 256, 0))
        .collect::<pwe_fusion::Result<Vec<_>>>()?;
    let fisher = fisher_merge(ft, &fishers)?;
    show("fisher", &fisher.params)?;
    println!("{:<18} {} coordinates used the plain-average fallback", "", fisher.fallback_coordinates);

    let grams = (0..2)
        .map(|t| suite.layer_grams(t, &real, &ft[t]))
        .collect::<pwe_fusion::Result<Vec<_>>>()?;
    show("regmean", &regmean_checkpoints(ft, &grams)?)?;

    for layer in ["fc0", "fc1"] {
        let d = param_distance_matrix(ft, &[layer.to_string()])?;
        println!("‖φ_0 - φ_1‖ on {layer}: {:.4}", d[0][1]);
    }
    Ok(())
}
