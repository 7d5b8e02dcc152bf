//! Dominance, front extraction and hypervolume on a random point cloud.
//!
//! `cargo run --example pareto_tools`

use pwe_fusion::pareto::{dominates, extract_front, hypervolume, preference_grid, FrontPoint, HypervolumeMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pwe_fusion::Result<()> {
    println!("(1, 2) dominates (1, 3): {}", dominates(&[1.0, 2.0], &[1.0, 3.0])?);
    println!("(1, 2) dominates itself: {}", dominates(&[1.0, 2.0], &[1.0, 2.0])?);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud: Vec<FrontPoint> = (0..500)
        .map(|_| {
            // points scattered above the curve x + y = 1
            let x: f64 = rng.random_range(0.0..1.0);
            let slack: f64 = rng.random_range(0.0..0.5);
            FrontPoint::new(vec![x, 1.0 - x + slack])
        })
        .collect();
    let front = extract_front(cloud)?;
    println!("{} of 500 points are non-dominated", front.points.len());

    let reference = [1.5, 2.0];
    let exact = hypervolume(&front.losses(), &reference, HypervolumeMethod::Exact2d)?;
    let mc = hypervolume(
        &front.losses(),
        &reference,
        HypervolumeMethod::MonteCarlo {
            samples: 200_000,
            seed: 3,
        },
    )?;
    println!("hypervolume: exact {:.5}, Monte Carlo {:.5} ± {:.5}", exact.value, mc.value, mc.std_error);

    let grid = preference_grid(3, 4)?;
    println!("3-task grid with 4 points per edge has {} preferences:", grid.len());
    for r in &grid {
        println!("  {:?}", r.as_slice());
    }
    Ok(())
}
