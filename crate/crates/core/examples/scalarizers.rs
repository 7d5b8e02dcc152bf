//! Linear scalarization, EPO and MGDA: step weights on hand-picked inputs,
//! then full-model baselines on a two-task quadratic suite.
//!
//! `cargo run --release --example scalarizers`

use pwe_fusion::scalarize::{
    epo_step_weights, frank_wolfe_min_norm, ls_scalarize, mgda_weights, non_uniformity, ObjectiveVector, Preference,
    Scalarization,
};
use pwe_fusion::tasks::TaskSuite;
use pwe_fusion::train::{train_joint, TrainConfig};

fn main() -> pwe_fusion::Result<()> {
    let l = ObjectiveVector::new(vec![0.5, 0.1])?;
    let r = Preference::new(vec![0.3, 0.7])?;
    println!("LS value {:.4}", ls_scalarize(&l, &r)?);
    println!("non-uniformity {:.4}", non_uniformity(&l, &r)?);
    println!("EPO weights {:?}", epo_step_weights(&l, &r, 1e-3)?);

    let opposing = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
    println!("MGDA on opposing gradients {:?}", mgda_weights(&opposing)?);
    let three = vec![vec![1.0, 0.2], vec![0.0, 1.0], vec![-0.5, -0.3]];
    let fw = frank_wolfe_min_norm(&three, 10_000, 1e-8)?;
    println!(
        "Frank-Wolfe on three gradients: {:?} after {} iterations (gap {:.1e})",
        fw.weights, fw.iterations, fw.duality_gap
    );

    let suite = TaskSuite::quadratic(vec![vec![1.0, 0.0], vec![0.0, 1.0]])?;
    let real = suite.realization(0)?;
    let start = pwe_fusion::nn::ParamVector::new(real.layout(), vec![2.0, 2.0])?;
    let r = Preference::new(vec![0.2, 0.8])?;
    for mode in [Scalarization::Ls, Scalarization::Epo, Scalarization::Mgda] {
        let cfg = TrainConfig {
            steps: 3000,
            lr: 0.01,
            mode,
            ..TrainConfig::default()
        };
        let (params, log) = train_joint(&suite, &real, &start, mode, &r, &cfg)?;
        let last = log.records.last().expect("at least one step");
        println!(
            "{mode:>4} at r = (0.2, 0.8): φ = {:?}, losses {:?}",
            params.values(),
            last.losses
        );
    }
    Ok(())
}
