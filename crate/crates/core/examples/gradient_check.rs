//! Exact reverse-mode gradients of a small network against central finite
//! differences.
//!
//! `cargo run --example gradient_check`

use pwe_fusion::nn::{
    finite_difference_grad, max_relative_error, Activation, Architecture, Batch, LossKind, Selector, Targets,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pwe_fusion::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let arch = Architecture::chain(&[3, 8, 8, 4], Activation::Relu, Activation::Softmax)?;
    let model = arch.init(&mut rng);
    let inputs: Vec<Vec<f64>> = (0..16)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let batch = Batch {
        inputs,
        targets: Targets::Classes((0..16).map(|i| i % 4).collect()),
    };

    for selector in [Selector::All, Selector::layers(["fc1"])] {
        let exact = model.loss_and_grad(&batch, LossKind::SoftmaxCrossEntropy, &selector)?;
        let fd = finite_difference_grad(&model, &batch, LossKind::SoftmaxCrossEntropy, &selector, 1e-6)?;
        println!(
            "layers {:?}: loss {:.6}, {} gradient entries, max relative error {:.2e}",
            exact.selector,
            exact.loss,
            exact.grad.len(),
            max_relative_error(exact.grad.values(), fd.values(), 1e-8)
        );
    }
    Ok(())
}
