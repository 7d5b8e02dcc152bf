//! Central finite differences, used as an independent check on
//! [`MlpModel::loss_and_grad`]. Only forward evaluation is used here.

use super::mlp::{Batch, LossKind, MlpModel, Selector};
use super::params::ParamVector;
use crate::error::Result;

/// Central-difference gradient of the batch loss w.r.t. the selected layers,
/// laid out like the corresponding [`GradientReport`](super::GradientReport).
pub fn finite_difference_grad(
    model: &MlpModel,
    batch: &Batch,
    kind: LossKind,
    selector: &Selector,
    step: f64,
) -> Result<ParamVector> {
    let arch = model.architecture();
    let base = model.flatten();
    let names: Vec<String> = match selector {
        Selector::All => base.layout().names().map(str::to_string).collect(),
        Selector::Layers(names) => names.clone(),
    };
    let mut grad = ParamVector::zeros(base.layout().subset(&names)?);
    let mut probe = base.clone();
    let mut out_pos = 0;
    for name in grad.layout().names().map(str::to_string).collect::<Vec<_>>() {
        let range = base.layout().range_of(&name)?;
        for i in range {
            let orig = base.values()[i];
            probe.values_mut()[i] = orig + step;
            let up = arch.unflatten(&probe)?.loss(batch, kind)?;
            probe.values_mut()[i] = orig - step;
            let down = arch.unflatten(&probe)?.loss(batch, kind)?;
            probe.values_mut()[i] = orig;
            grad.values_mut()[out_pos] = (up - down) / (2.0 * step);
            out_pos += 1;
        }
    }
    Ok(grad)
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Architecture, Targets};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(seed: u64) -> (MlpModel, Batch, LossKind) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = rng.random_range(1..=3);
        let mut dims = vec![rng.random_range(1..=4)];
        for _ in 0..depth {
            dims.push(rng.random_range(1..=5));
        }
        let ce = rng.random_bool(0.5);
        if ce {
            *dims.last_mut().unwrap() = rng.random_range(2..=4);
        }
        let out = if ce { Activation::Softmax } else { Activation::Identity };
        let arch = Architecture::chain(&dims, Activation::Relu, out).unwrap();
        let mut model = arch.init(&mut rng);
        for l in model.layers_mut() {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let n = rng.random_range(1..=6);
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let k = *dims.last().unwrap();
        let targets = if ce {
            Targets::Classes((0..n).map(|_| rng.random_range(0..k)).collect())
        } else {
            Targets::Values((0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
        };
        let kind = if ce { LossKind::SoftmaxCrossEntropy } else { LossKind::Mse };
        (model, Batch { inputs, targets }, kind)
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut worst: f64 = 0.0;
        for seed in 0..25 {
            let (model, batch, kind) = random_case(seed);
            let rep = model.loss_and_grad(&batch, kind, &Selector::All).unwrap();
            let fd = finite_difference_grad(&model, &batch, kind, &Selector::All, 1e-6).unwrap();
            worst = worst.max(max_relative_error(rep.grad.values(), fd.values(), 1e-8));
        }
        assert!(worst <= 1e-5, "worst relative error {worst:e}");
    }
}
