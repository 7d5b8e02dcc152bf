//! Routing weights of a trained classification model: which expert each
//! layer favours as the preference moves across the simplex.
//!
//! `cargo run --release --example routing_analysis`

use pwe_fusion::export::write_routing;
use pwe_fusion::moe::{routing_table, upscale, with_unit_preferences, UpscaleConfig, UpscaleStrategy};
use pwe_fusion::tasks::{CheckpointSet, ClusterParams, GdConfig, TaskSuite};
use pwe_fusion::train::{train_routers, TrainConfig};

fn main() -> pwe_fusion::Result<()> {
    let suite = TaskSuite::cluster_classification(ClusterParams::new(2, 256), 1)?;
    let real = suite.realization(16)?;
    let gd = GdConfig {
        steps: 300,
        lr: 0.1,
        batch_size: None,
        seed: 1,
    };
    let set = CheckpointSet::build(&suite, &real, 1, &gd, &gd)?;
    let fresh = upscale(
        &real,
        &set.pretrained,
        &set.finetuned,
        &UpscaleConfig::new(UpscaleStrategy::AllLayers, 0.6, 1),
    )?;
    println!(
        "{} MoE layers, {} trainable router parameters",
        fresh.moe_layers().len(),
        fresh.trainable_param_count()
    );
    let cfg = TrainConfig {
        steps: 4000,
        batch_size: 128,
        seed: 1,
        ..TrainConfig::default()
    };
    let (model, _) = train_routers(fresh, &suite, &cfg)?;

    let prefs = with_unit_preferences(2, &[vec![0.5, 0.5]]);
    for (i, r) in prefs.iter().enumerate() {
        let weights = model.routing_weights(r)?;
        let per_layer: Vec<String> = model
            .moe_layers()
            .iter()
            .zip(&weights)
            .map(|(m, w)| format!("{}: {:.3?}", m.name(), w))
            .collect();
        println!("preference {i} {:?} -> {}", r, per_layer.join("  "));
    }
    let mut out = Vec::new();
    write_routing(&mut out, 2, &routing_table(&model, &prefs)?)?;
    print!("\nrouting.csv\n{}", String::from_utf8_lossy(&out));
    Ok(())
}
