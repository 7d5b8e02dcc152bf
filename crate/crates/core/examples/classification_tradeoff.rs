//! The trained MoE front against naive weight interpolation and task
//! arithmetic on the two-task classification suite.
//!
//! `cargo run --release --example classification_tradeoff [seed]`

use pwe_fusion::experiment::{evaluate_point, interpolation_front, moe_front, reference_point, summarize};
use pwe_fusion::merge::{task_arithmetic, task_vectors};
use pwe_fusion::moe::{upscale, UpscaleConfig, UpscaleStrategy};
use pwe_fusion::pareto::{preference_grid, FrontPoint};
use pwe_fusion::tasks::{CheckpointSet, ClusterParams, GdConfig, TaskSuite};
use pwe_fusion::train::{train_routers, TrainConfig};

fn main() -> pwe_fusion::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let suite = TaskSuite::cluster_classification(ClusterParams::new(2, 256), seed)?;
    let real = suite.realization(16)?;
    let gd = GdConfig {
        steps: 300,
        lr: 0.1,
        batch_size: None,
        seed,
    };
    let set = CheckpointSet::build(&suite, &real, seed, &gd, &gd)?;
    let dict = task_vectors(&set.pretrained, &set.finetuned)?;
    let ta = evaluate_point(&suite, &real, &task_arithmetic(&set.pretrained, &dict, 0.6)?, None)?;

    let model = upscale(
        &real,
        &set.pretrained,
        &set.finetuned,
        &UpscaleConfig::new(UpscaleStrategy::AllLayers, 0.6, seed),
    )?;
    let cfg = TrainConfig {
        steps: 4000,
        batch_size: 128,
        seed,
        ..TrainConfig::default()
    };
    let (model, _) = train_routers(model, &suite, &cfg)?;

    let moe = moe_front(&model, &suite, &preference_grid(2, 101)?)?;
    let naive = interpolation_front(&suite, &real, &set.finetuned[0], &set.finetuned[1], 11)?;
    let all: Vec<&[f64]> = moe
        .iter()
        .chain(&naive)
        .chain(std::iter::once(&ta))
        .map(|p| p.losses.as_slice())
        .collect();
    let reference = reference_point(&all, 1.1)?;
    let hv = |pts: &[FrontPoint]| summarize(pts, &reference, 1, 0).map(|s| s.hypervolume.value);
    println!("reference point {reference:.4?}");
    println!("hypervolume: MoE {:.4}, interpolation {:.4}, task arithmetic {:.4}", hv(&moe)?, hv(&naive)?, hv(&[ta.clone()])?);

    for (label, p) in [("MoE r = e_1", &moe[0]), ("MoE r = (.5,.5)", &moe[50]), ("MoE r = e_2", &moe[100]), ("task arithmetic", &ta)] {
        println!("{label:<16} losses {:.4?} accuracies {:.4?}", p.losses, p.metrics.as_deref().unwrap_or_default());
    }
    Ok(())
}
