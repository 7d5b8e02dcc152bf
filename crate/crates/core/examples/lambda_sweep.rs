//! The λ sweep for task arithmetic and Ties, with λ picked by the lowest
//! mean held-out loss.
//!
//! `cargo run --release --example lambda_sweep`

use pwe_fusion::experiment::{lambda_sweep, sweep_lambdas};
use pwe_fusion::export::{select_lambda, write_sweep};
use pwe_fusion::tasks::{CheckpointSet, ClusterParams, GdConfig, TaskSuite};

fn main() -> pwe_fusion::Result<()> {
    let gd = GdConfig {
        steps: 300,
        lr: 0.1,
        batch_size: None,
        seed: 0,
    };
    let quadratic = TaskSuite::quadratic(vec![vec![1.0, 0.0], vec![0.0, 1.0]])?;
    let classification = TaskSuite::cluster_classification(ClusterParams::new(2, 256), 0)?;
    for (name, suite, pretrain_steps) in [("quadratic", quadratic, 0), ("classification", classification, 300)] {
        let real = suite.realization(16)?;
        let pre = GdConfig {
            steps: pretrain_steps,
            ..gd.clone()
        };
        let set = CheckpointSet::build(&suite, &real, 0, &pre, &gd)?;
        let rows = lambda_sweep(&suite, &real, &set.pretrained, &set.finetuned, &sweep_lambdas(), 0.2)?;
        let mut csv = Vec::new();
        write_sweep(&mut csv, 2, &rows)?;
        println!("{name} suite:");
        for row in &rows {
            println!("  {:<16} λ = {:.1}: mean loss {:.4}", row.method, row.lambda, row.mean_loss);
        }
        for method in ["task-arithmetic", "ties"] {
            println!("  selected λ for {method}: {}", select_lambda(&csv[..], Some(method))?);
        }
    }
    Ok(())
}
