//! Router training on the two-task quadratic suite, where the whole Pareto
//! set is known: for `l_t(φ) = ‖φ - c_t‖²` it is the segment between the
//! centers, and linear scalarization at `r` is minimized by `Σ r_t c_t`.
//!
//! `cargo run --release --example quadratic_front`

use pwe_fusion::experiment::moe_front;
use pwe_fusion::moe::{upscale, UpscaleConfig, UpscaleStrategy};
use pwe_fusion::nn::ParamVector;
use pwe_fusion::pareto::{extract_front, front_distance, preference_grid, FrontPoint};
use pwe_fusion::tasks::{finetune, GdConfig, TaskSuite};
use pwe_fusion::train::{train_routers, TrainConfig};

fn main() -> pwe_fusion::Result<()> {
    let (c1, c2) = (vec![1.0, 0.0, 0.5], vec![-0.5, 2.0, 0.0]);
    let suite = TaskSuite::quadratic(vec![c1.clone(), c2.clone()])?;
    let real = suite.realization(0)?;
    let pretrained = ParamVector::zeros(real.layout());
    let gd = GdConfig {
        steps: 500,
        lr: 0.1,
        batch_size: None,
        seed: 0,
    };
    let finetuned = (0..2)
        .map(|t| finetune(&suite, &real, &pretrained, t, &gd).map(|r| r.params))
        .collect::<pwe_fusion::Result<Vec<_>>>()?;

    let model = upscale(&real, &pretrained, &finetuned, &UpscaleConfig::new(UpscaleStrategy::AllLayers, 0.6, 0))?;
    let (model, log) = train_routers(model, &suite, &TrainConfig::default())?;
    let (first, last) = log.trend(0.1).expect("nonempty log");
    println!("aggregate loss: {first:.4} over the first 10% of steps, {last:.4} over the last 10%");

    let gap: f64 = c1.iter().zip(&c2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    for r in preference_grid(2, 5)? {
        let phi = model.unload(&r)?;
        let target: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| r[0] * a + r[1] * b).collect();
        let err: f64 = phi.values().iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        println!("r = ({:.2}, {:.2}): unloaded φ off the LS optimum by {:.4} of ‖c_2 - c_1‖", r[0], r[1], err / gap);
    }

    // the analytic front: φ = (1 - t) c_1 + t c_2 gives l = (t² d², (1 - t)² d²)
    let d2 = gap * gap;
    let analytic = extract_front(
        (0..=1000)
            .map(|i| {
                let t = i as f64 / 1000.0;
                FrontPoint::new(vec![t * t * d2, (1.0 - t) * (1.0 - t) * d2])
            })
            .collect(),
    )?;
    let moe = extract_front(moe_front(&model, &suite, &preference_grid(2, 101)?)?)?;
    println!(
        "front distance to the analytic front: {:.5} = {:.4} of ‖c_2 - c_1‖²",
        front_distance(&moe, &analytic)?,
        front_distance(&moe, &analytic)? / d2
    );
    Ok(())
}
