//! Dense feed-forward networks.
//!
//! A layer computes `a = act(W x + b)` with `W` stored row-major as
//! `(out_dim, in_dim)`. In a [`ParamVector`] each layer occupies one segment of
//! shape `[out_dim, in_dim + 1]`: row `o` holds `W[o, ..]` followed by `b[o]`,
//! i.e. the augmented matrix `[W | b]`.
//!
//! Gradients are computed analytically per layer. The architecture set is
//! closed (dense + ReLU/identity/softmax), so there is no general tape.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{Layout, LayoutEntry, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
    /// Row-wise softmax. As the last layer its pre-activations are the logits
    /// consumed by [`LossKind::SoftmaxCrossEntropy`].
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean over batch rows and output columns of the squared error.
    Mse,
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values(Vec<Vec<f64>>),
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(v) => v.len(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Targets,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Which layers a gradient is taken with respect to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    All,
    Layers(Vec<String>),
}

impl Selector {
    pub fn layers<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Selector::Layers(names.into_iter().map(Into::into).collect())
    }

    /// Layer indices in ascending order.
    fn resolve(&self, model: &MlpModel) -> Result<Vec<usize>> {
        match self {
            Selector::All => Ok((0..model.layers.len()).collect()),
            Selector::Layers(names) => {
                let mut idx = Vec::with_capacity(names.len());
                for name in names {
                    let i = model
                        .layers
                        .iter()
                        .position(|l| &l.name == name)
                        .ok_or_else(|| Error::Selector(name.clone()))?;
                    if !idx.contains(&i) {
                        idx.push(i);
                    }
                }
                idx.sort_unstable();
                Ok(idx)
            }
        }
    }
}

/// Loss plus gradient restricted to the selected layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub loss: f64,
    pub grad: ParamVector,
    pub selector: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Shapes and activations of a network without its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Layout("architecture has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape(
                    &pair[1].name,
                    format!(
                        "input dim {} does not match previous output dim {}",
                        pair[1].in_dim, pair[0].out_dim
                    ),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Layers `fc0, fc1, ...` with `dims[i] -> dims[i+1]`, `hidden` activation on
    /// every layer but the last.
    pub fn chain(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Layout("need at least input and output dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| LayerSpec {
                name: format!("fc{i}"),
                in_dim: dims[i],
                out_dim: dims[i + 1],
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layout(&self) -> Layout {
        Layout::new(
            self.layers
                .iter()
                .map(|l| LayoutEntry::new(l.name.clone(), vec![l.out_dim, l.in_dim + 1]))
                .collect(),
        )
        .expect("layer names validated at construction")
    }

    pub fn unflatten(&self, params: &ParamVector) -> Result<MlpModel> {
        self.layout().ensure_same(params.layout())?;
        let layers = self
            .layers
            .iter()
            .map(|spec| {
                let seg = params.segment(&spec.name)?;
                let cols = spec.in_dim + 1;
                let mut weight = Vec::with_capacity(spec.out_dim * spec.in_dim);
                let mut bias = Vec::with_capacity(spec.out_dim);
                for row in seg.chunks_exact(cols) {
                    weight.extend_from_slice(&row[..spec.in_dim]);
                    bias.push(row[spec.in_dim]);
                }
                Ok(Dense {
                    name: spec.name.clone(),
                    in_dim: spec.in_dim,
                    out_dim: spec.out_dim,
                    activation: spec.activation,
                    weight,
                    bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MlpModel { layers })
    }

    /// He-normal weights for ReLU layers, LeCun-normal otherwise; zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> MlpModel {
        let layers = self
            .layers
            .iter()
            .map(|spec| {
                let gain = if spec.activation == Activation::Relu { 2.0 } else { 1.0 };
                let std = (gain / spec.in_dim as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Dense {
                    name: spec.name.clone(),
                    in_dim: spec.in_dim,
                    out_dim: spec.out_dim,
                    activation: spec.activation,
                    weight: (0..spec.out_dim * spec.in_dim)
                        .map(|_| normal.sample(rng))
                        .collect(),
                    bias: vec![0.0; spec.out_dim],
                }
            })
            .collect();
        MlpModel { layers }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `(out_dim, in_dim)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn affine(&self, x: &[f64], z: &mut [f64]) {
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            *zo = self.bias[o] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
    }
}

fn activate(act: Activation, z: &[f64]) -> Vec<f64> {
    match act {
        Activation::Identity => z.to_vec(),
        Activation::Relu => z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        Activation::Softmax => softmax(z),
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient w.r.t. pre-activation given gradient w.r.t. the activation output.
fn activation_vjp(act: Activation, z: &[f64], a: &[f64], da: &[f64]) -> Vec<f64> {
    match act {
        Activation::Identity => da.to_vec(),
        // subgradient 0 at z == 0
        Activation::Relu => z
            .iter()
            .zip(da)
            .map(|(&zi, &g)| if zi > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::Softmax => {
            let dot: f64 = a.iter().zip(da).map(|(p, g)| p * g).sum();
            a.iter().zip(da).map(|(p, g)| p * (g - dot)).collect()
        }
    }
}

/// Per-sample forward trace: `pre[l]` and `post[l]` for every layer.
struct Trace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

enum Upstream {
    /// Gradient w.r.t. the output of the last layer.
    Output(Vec<f64>),
    /// Gradient w.r.t. the pre-activation of the last layer.
    Logits(Vec<f64>),
}

/// A dense feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
}

impl MlpModel {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Layout("model has no layers".into()));
        }
        for l in &layers {
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::shape(&l.name, "parameter buffers do not match dims"));
            }
        }
        let model = Self { layers };
        Architecture::new(model.architecture_specs())?;
        Ok(model)
    }

    fn architecture_specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec {
                name: l.name.clone(),
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                activation: l.activation,
            })
            .collect()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            layers: self.architecture_specs(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn flatten(&self) -> ParamVector {
        let layout = self.architecture().layout();
        let mut values = Vec::with_capacity(layout.total_len());
        for l in &self.layers {
            for o in 0..l.out_dim {
                values.extend_from_slice(&l.weight[o * l.in_dim..(o + 1) * l.in_dim]);
                values.push(l.bias[o]);
            }
        }
        ParamVector::new(layout, values).expect("flatten matches layout")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                &self.layers[0].name,
                format!("expected input width {}, got {}", self.input_dim(), x.len()),
            ));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map(Vec::as_slice).unwrap_or(x);
            let mut z = vec![0.0; layer.out_dim];
            layer.affine(input, &mut z);
            let a = activate(layer.activation, &z);
            if a.iter().chain(&z).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite activation in layer `{}`",
                    layer.name
                )));
            }
            pre.push(z);
            post.push(a);
        }
        Ok(Trace {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut t = self.trace(x)?;
        Ok(t.post.pop().expect("at least one layer"))
    }

    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|x| self.forward_one(x)).collect()
    }

    /// Inputs seen by each layer: `result[l][n]` is the input of layer `l` for
    /// sample `n`.
    pub fn layer_inputs(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut out = vec![Vec::with_capacity(inputs.len()); self.layers.len()];
        for x in inputs {
            let t = self.trace(x)?;
            out[0].push(t.input);
            for (l, a) in t.post.into_iter().enumerate().take(self.layers.len() - 1) {
                out[l + 1].push(a);
            }
        }
        Ok(out)
    }

    fn check_batch(&self, batch: &Batch, kind: LossKind) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        if batch.targets.len() != batch.len() {
            return Err(Error::Domain(format!(
                "{} inputs but {} targets",
                batch.len(),
                batch.targets.len()
            )));
        }
        let last = &self.layers[self.layers.len() - 1];
        match (&batch.targets, kind) {
            (Targets::Values(v), LossKind::Mse) => {
                if let Some(t) = v.iter().find(|t| t.len() != last.out_dim) {
                    return Err(Error::shape(
                        &last.name,
                        format!("target width {} vs output width {}", t.len(), last.out_dim),
                    ));
                }
            }
            (Targets::Classes(c), LossKind::SoftmaxCrossEntropy) => {
                if let Some(&k) = c.iter().find(|&&k| k >= last.out_dim) {
                    return Err(Error::shape(
                        &last.name,
                        format!("class {k} out of range for {} outputs", last.out_dim),
                    ));
                }
            }
            _ => {
                return Err(Error::Domain(
                    "target kind does not match loss kind".into(),
                ))
            }
        }
        Ok(())
    }

    /// Per-sample loss and upstream gradient (already divided by batch size).
    fn sample_loss(
        &self,
        t: &Trace,
        batch: &Batch,
        n: usize,
        scale: f64,
    ) -> (f64, Upstream) {
        let last = self.layers.len() - 1;
        match &batch.targets {
            Targets::Values(v) => {
                let y = &t.post[last];
                let k = y.len() as f64;
                let mut loss = 0.0;
                let grad = y
                    .iter()
                    .zip(&v[n])
                    .map(|(yi, ti)| {
                        let d = yi - ti;
                        loss += d * d / k;
                        2.0 * d / k * scale
                    })
                    .collect();
                (loss, Upstream::Output(grad))
            }
            Targets::Classes(c) => {
                let logits = if self.layers[last].activation == Activation::Softmax {
                    &t.pre[last]
                } else {
                    &t.post[last]
                };
                let p = softmax(logits);
                let class = c[n];
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                let loss = lse - logits[class];
                let mut grad: Vec<f64> = p.iter().map(|pi| pi * scale).collect();
                grad[class] -= scale;
                let up = if self.layers[last].activation == Activation::Softmax {
                    Upstream::Logits(grad)
                } else {
                    Upstream::Output(grad)
                };
                (loss, up)
            }
        }
    }

    /// Accumulates parameter gradients of one sample into `grads`, which holds
    /// one `[out, in+1]` buffer per layer index in `selected`.
    fn backprop(&self, t: &Trace, upstream: Upstream, selected: &[usize], grads: &mut [Vec<f64>]) {
        let Some(&lowest) = selected.first() else {
            return;
        };
        let last = self.layers.len() - 1;
        let mut dz = match upstream {
            Upstream::Logits(g) => g,
            Upstream::Output(g) => {
                let l = &self.layers[last];
                activation_vjp(l.activation, &t.pre[last], &t.post[last], &g)
            }
        };
        for li in (lowest..=last).rev() {
            let layer = &self.layers[li];
            let input: &[f64] = if li == 0 { &t.input } else { &t.post[li - 1] };
            if let Ok(slot) = selected.binary_search(&li) {
                let g = &mut grads[slot];
                let cols = layer.in_dim + 1;
                for (o, &d) in dz.iter().enumerate() {
                    let row = &mut g[o * cols..(o + 1) * cols];
                    for (gi, xi) in row[..layer.in_dim].iter_mut().zip(input) {
                        *gi += d * xi;
                    }
                    row[layer.in_dim] += d;
                }
            }
            if li > lowest {
                let mut da = vec![0.0; layer.in_dim];
                for (o, &d) in dz.iter().enumerate() {
                    let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (dai, w) in da.iter_mut().zip(row) {
                        *dai += w * d;
                    }
                }
                let below = &self.layers[li - 1];
                dz = activation_vjp(below.activation, &t.pre[li - 1], &t.post[li - 1], &da);
            }
        }
    }

    fn grad_buffers(&self, selected: &[usize]) -> Vec<Vec<f64>> {
        selected
            .iter()
            .map(|&i| vec![0.0; self.layers[i].out_dim * (self.layers[i].in_dim + 1)])
            .collect()
    }

    fn pack(&self, selected: &[usize], grads: Vec<Vec<f64>>) -> Result<(ParamVector, Vec<String>)> {
        let names: Vec<String> = selected.iter().map(|&i| self.layers[i].name.clone()).collect();
        let layout = self.architecture().layout().subset(&names)?;
        let grad = ParamVector::new(layout, grads.into_iter().flatten().collect())?;
        Ok((grad, names))
    }

    /// Batch-mean loss.
    pub fn loss(&self, batch: &Batch, kind: LossKind) -> Result<f64> {
        self.check_batch(batch, kind)?;
        let mut total = 0.0;
        for (n, x) in batch.inputs.iter().enumerate() {
            let t = self.trace(x)?;
            total += self.sample_loss(&t, batch, n, 0.0).0;
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        Ok(loss)
    }

    /// Batch-mean loss and its exact gradient w.r.t. the selected layers.
    pub fn loss_and_grad(
        &self,
        batch: &Batch,
        kind: LossKind,
        selector: &Selector,
    ) -> Result<GradientReport> {
        self.check_batch(batch, kind)?;
        let selected = selector.resolve(self)?;
        let mut grads = self.grad_buffers(&selected);
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (n, x) in batch.inputs.iter().enumerate() {
            let t = self.trace(x)?;
            let (l, up) = self.sample_loss(&t, batch, n, scale);
            total += l;
            self.backprop(&t, up, &selected, &mut grads);
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        let (grad, selector) = self.pack(&selected, grads)?;
        Ok(GradientReport {
            loss,
            grad,
            selector,
        })
    }

    /// Vector-Jacobian product: gradient of `Σ_n <forward(x_n), g_n>` w.r.t. the
    /// selected layers.
    pub fn vjp(
        &self,
        inputs: &[Vec<f64>],
        output_grads: &[Vec<f64>],
        selector: &Selector,
    ) -> Result<ParamVector> {
        if inputs.len() != output_grads.len() {
            return Err(Error::Domain("inputs and output gradients differ in count".into()));
        }
        let selected = selector.resolve(self)?;
        let mut grads = self.grad_buffers(&selected);
        for (x, g) in inputs.iter().zip(output_grads) {
            if g.len() != self.output_dim() {
                return Err(Error::shape(
                    &self.layers[self.layers.len() - 1].name,
                    format!("output gradient width {} vs {}", g.len(), self.output_dim()),
                ));
            }
            let t = self.trace(x)?;
            self.backprop(&t, Upstream::Output(g.clone()), &selected, &mut grads);
        }
        Ok(self.pack(&selected, grads)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(name: &str, w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> Dense {
        Dense {
            name: name.into(),
            in_dim: w[0].len(),
            out_dim: w.len(),
            activation: act,
            weight: w.into_iter().flatten().collect(),
            bias: b,
        }
    }

    #[test]
    fn zero_weights_output_bias() {
        let m = MlpModel::new(vec![dense(
            "fc0",
            vec![vec![0.0; 3]; 2],
            vec![0.25, -1.5],
            Activation::Identity,
        )])
        .unwrap();
        let out = m.forward(&[vec![1.0, 2.0, 3.0], vec![-4.0, 0.5, 9.0]]).unwrap();
        assert_eq!(out, vec![vec![0.25, -1.5], vec![0.25, -1.5]]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let m = MlpModel::new(vec![dense(
            "fc0",
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            Activation::Identity,
        )])
        .unwrap();
        assert_eq!(m.forward_one(&[3.5, -2.0]).unwrap(), vec![3.5, -2.0]);
    }

    #[test]
    fn two_layer_relu_hand_value() {
        let m = MlpModel::new(vec![
            dense("fc0", vec![vec![1.0, -1.0]], vec![0.0], Activation::Relu),
            dense("fc1", vec![vec![2.0]], vec![0.5], Activation::Identity),
        ])
        .unwrap();
        assert_eq!(m.forward_one(&[1.0, -1.0]).unwrap(), vec![4.5]);
    }

    #[test]
    fn input_width_mismatch_names_layer() {
        let m = MlpModel::new(vec![dense("first", vec![vec![1.0, 1.0]], vec![0.0], Activation::Relu)])
            .unwrap();
        match m.forward_one(&[1.0]) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, "first"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn chain_incompatible_layers_rejected() {
        let err = MlpModel::new(vec![
            dense("a", vec![vec![1.0, 1.0]], vec![0.0], Activation::Relu),
            dense("b", vec![vec![1.0, 1.0]], vec![0.0], Activation::Identity),
        ]);
        assert!(matches!(err, Err(Error::Shape { layer, .. }) if layer == "b"));
    }

    #[test]
    fn mse_of_zero_model_against_ones() {
        let m = MlpModel::new(vec![dense("fc0", vec![vec![0.0; 2]; 2], vec![0.0; 2], Activation::Identity)])
            .unwrap();
        let batch = Batch {
            inputs: vec![vec![0.3, 0.1], vec![-1.0, 2.0], vec![5.0, 5.0]],
            targets: Targets::Values(vec![vec![1.0, 1.0]; 3]),
        };
        assert_eq!(m.loss(&batch, LossKind::Mse).unwrap(), 1.0);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        for k in [2usize, 3, 7] {
            let m = MlpModel::new(vec![dense("fc0", vec![vec![0.0; 2]; k], vec![0.0; k], Activation::Softmax)])
                .unwrap();
            let batch = Batch {
                inputs: vec![vec![1.0, 2.0], vec![0.0, -3.0]],
                targets: Targets::Classes(vec![0, k - 1]),
            };
            let loss = m.loss(&batch, LossKind::SoftmaxCrossEntropy).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_selector_rejected() {
        let arch = Architecture::chain(&[2, 3, 2], Activation::Relu, Activation::Softmax).unwrap();
        let m = arch.init(&mut ChaCha8Rng::seed_from_u64(0));
        let batch = Batch {
            inputs: vec![vec![1.0, 2.0]],
            targets: Targets::Classes(vec![1]),
        };
        let err = m.loss_and_grad(&batch, LossKind::SoftmaxCrossEntropy, &Selector::layers(["fc9"]));
        assert!(matches!(err, Err(Error::Selector(n)) if n == "fc9"));
    }

    #[test]
    fn non_finite_activation_reported() {
        let m = MlpModel::new(vec![dense("fc0", vec![vec![f64::MAX, f64::MAX]], vec![0.0], Activation::Identity)])
            .unwrap();
        assert!(matches!(m.forward_one(&[2.0, 2.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn flatten_unflatten_roundtrip() {
        let arch = Architecture::chain(&[3, 5, 4, 2], Activation::Relu, Activation::Softmax).unwrap();
        let m = arch.init(&mut ChaCha8Rng::seed_from_u64(7));
        let flat = m.flatten();
        assert_eq!(flat.len(), 5 * 4 + 4 * 6 + 2 * 5);
        assert_eq!(arch.unflatten(&flat).unwrap(), m);

        let short = ParamVector::new(
            Layout::new(vec![LayoutEntry::new("x", vec![flat.len() - 1])]).unwrap(),
            flat.values()[1..].to_vec(),
        )
        .unwrap();
        assert!(matches!(arch.unflatten(&short), Err(Error::Layout(_))));
    }

    #[test]
    fn augmented_layout_places_bias_last_in_row() {
        let m = MlpModel::new(vec![dense(
            "fc0",
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            vec![10.0, 20.0],
            Activation::Identity,
        )])
        .unwrap();
        assert_eq!(m.flatten().values(), &[1.0, 2.0, 10.0, 3.0, 4.0, 20.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let arch = Architecture::chain(&[2, 16, 2], Activation::Relu, Activation::Softmax).unwrap();
        let m = arch.init(&mut ChaCha8Rng::seed_from_u64(3));
        let x = vec![vec![0.123, -4.5]; 4];
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (p, q) in ra.iter().zip(rb) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn identity_layer_is_linear_in_parameters() {
        let arch = Architecture::chain(&[3, 2], Activation::Identity, Activation::Identity).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p1 = arch.init(&mut rng).flatten();
        let p2 = arch.init(&mut rng).flatten();
        let alpha = 0.3;
        let mix: Vec<f64> = p1
            .values()
            .iter()
            .zip(p2.values())
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        let pm = ParamVector::new(p1.layout().clone(), mix).unwrap();
        let x = [0.5, -1.0, 2.0];
        let y1 = arch.unflatten(&p1).unwrap().forward_one(&x).unwrap();
        let y2 = arch.unflatten(&p2).unwrap().forward_one(&x).unwrap();
        let ym = arch.unflatten(&pm).unwrap().forward_one(&x).unwrap();
        for k in 0..2 {
            assert!((ym[k] - (alpha * y1[k] + (1.0 - alpha) * y2[k])).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_subset_layout_matches_selection() {
        let arch = Architecture::chain(&[2, 4, 3, 2], Activation::Relu, Activation::Softmax).unwrap();
        let m = arch.init(&mut ChaCha8Rng::seed_from_u64(5));
        let batch = Batch {
            inputs: vec![vec![1.0, -0.5], vec![0.2, 0.9]],
            targets: Targets::Classes(vec![0, 1]),
        };
        let rep = m
            .loss_and_grad(&batch, LossKind::SoftmaxCrossEntropy, &Selector::layers(["fc2", "fc0"]))
            .unwrap();
        assert_eq!(rep.selector, vec!["fc0", "fc2"]);
        assert_eq!(rep.grad.layout(), &arch.layout().subset(&["fc0", "fc2"]).unwrap());
        let full = m
            .loss_and_grad(&batch, LossKind::SoftmaxCrossEntropy, &Selector::All)
            .unwrap();
        assert_eq!(rep.grad.segment("fc0").unwrap(), full.grad.segment("fc0").unwrap());
        assert_eq!(rep.loss, full.loss);
    }
}
