//! Preference-conditioned weight-ensembling MoE layers.
//!
//! A [`PweMoeLayer`] owns a frozen dictionary of task vectors for one layer
//! and a small [`Router`] mapping a preference `r` to routing weights `w`.
//! The layer's parameters at `r` are `φ0 + D w`. An [`UpscaledModel`] holds
//! one such layer per selected segment and merges every other segment with
//! task arithmetic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::{task_arithmetic, task_vectors, TaskVectorDictionary};
use crate::nn::{Activation, Architecture, Dense, Layout, LayerSpec, MlpModel, ParamVector, Selector};
use crate::scalarize::check_simplex;
use crate::tasks::Realization;

/// Default standard deviation of the router weight initialization.
pub const ROUTER_INIT_STD: f64 = 0.01;

const HIDDEN: &str = "hidden";
const OUTPUT: &str = "output";

/// `R(r) = W2 · ReLU(W1 r + b1) + b2` with hidden width `2T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Router {
    net: MlpModel,
}

fn router_architecture(num_tasks: usize) -> Architecture {
    Architecture::new(vec![
        LayerSpec {
            name: HIDDEN.into(),
            in_dim: num_tasks,
            out_dim: 2 * num_tasks,
            activation: Activation::Relu,
        },
        LayerSpec {
            name: OUTPUT.into(),
            in_dim: 2 * num_tasks,
            out_dim: num_tasks,
            activation: Activation::Identity,
        },
    ])
    .expect("router shapes chain")
}

impl Router {
    /// Weights drawn from `N(0, σ²)`, `b1 = 0`, `b2 = λ·1`.
    pub fn init(num_tasks: usize, lambda: f64, sigma: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(num_tasks, lambda, sigma, &mut rng)
    }

    fn init_with(num_tasks: usize, lambda: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if num_tasks < 2 {
            return Err(Error::Domain(format!("router needs at least two tasks, got {num_tasks}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) || !lambda.is_finite() {
            return Err(Error::Domain(format!(
                "router init needs σ > 0 and finite λ, got σ = {sigma}, λ = {lambda}"
            )));
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
        let t = num_tasks;
        let w1 = (0..2 * t * t).map(|_| normal.sample(rng)).collect();
        let w2 = (0..2 * t * t).map(|_| normal.sample(rng)).collect();
        Self::from_parts(t, w1, vec![0.0; 2 * t], w2, vec![lambda; t])
    }

    /// Router from explicit row-major `W1 (2T×T)`, `b1`, `W2 (T×2T)`, `b2`.
    pub fn from_parts(num_tasks: usize, w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64>) -> Result<Self> {
        let t = num_tasks;
        for (name, got, want) in [
            ("W1", w1.len(), 2 * t * t),
            ("b1", b1.len(), 2 * t),
            ("W2", w2.len(), 2 * t * t),
            ("b2", b2.len(), t),
        ] {
            if got != want {
                return Err(Error::shape(name, format!("expected {want} values, got {got}")));
            }
        }
        let net = MlpModel::new(vec![
            Dense {
                name: HIDDEN.into(),
                in_dim: t,
                out_dim: 2 * t,
                activation: Activation::Relu,
                weight: w1,
                bias: b1,
            },
            Dense {
                name: OUTPUT.into(),
                in_dim: 2 * t,
                out_dim: t,
                activation: Activation::Identity,
                weight: w2,
                bias: b2,
            },
        ])?;
        Ok(Self { net })
    }

    /// Router parameters packed as `[W1 | b1]` and `[W2 | b2]` rows.
    pub fn from_params(num_tasks: usize, params: &ParamVector) -> Result<Self> {
        let net = router_architecture(num_tasks).unflatten(params)?;
        Ok(Self { net })
    }

    pub fn params(&self) -> ParamVector {
        self.net.flatten()
    }

    /// Layout of [`Router::params`] for `T` tasks.
    pub fn layout(num_tasks: usize) -> Layout {
        router_architecture(num_tasks).layout()
    }

    pub fn num_tasks(&self) -> usize {
        self.net.output_dim()
    }

    /// `4T² + 3T`.
    pub fn param_count(&self) -> usize {
        let t = self.num_tasks();
        4 * t * t + 3 * t
    }

    pub fn w1(&self) -> &[f64] {
        &self.net.layers()[0].weight
    }

    pub fn b1(&self) -> &[f64] {
        &self.net.layers()[0].bias
    }

    pub fn w2(&self) -> &[f64] {
        &self.net.layers()[1].weight
    }

    pub fn b2(&self) -> &[f64] {
        &self.net.layers()[1].bias
    }

    /// Routing weights for a preference on the simplex. The weights are not
    /// normalized and may be negative.
    pub fn route(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_preference(r)?;
        self.net.forward_one(r)
    }

    fn check_preference(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.num_tasks() {
            return Err(Error::Domain(format!(
                "preference of length {} for a {}-task router",
                r.len(),
                self.num_tasks()
            )));
        }
        check_simplex(r)
    }

    /// Gradient of `<R(r), dw>` with respect to the router parameters.
    pub fn backward(&self, r: &[f64], dw: &[f64]) -> Result<ParamVector> {
        self.check_preference(r)?;
        self.net.vjp(&[r.to_vec()], &[dw.to_vec()], &Selector::All)
    }

    /// `θ ← θ - lr · grad`.
    pub fn apply_step(&mut self, grad: &ParamVector, lr: f64) -> Result<()> {
        let mut p = self.params();
        p.layout().ensure_same(grad.layout())?;
        for (x, g) in p.values_mut().iter_mut().zip(grad.values()) {
            *x -= lr * g;
        }
        self.net = router_architecture(self.num_tasks()).unflatten(&p)?;
        Ok(())
    }
}

/// One up-scaled layer: frozen `φ0`, frozen task vectors and its own router.
#[derive(Debug, Clone, PartialEq)]
pub struct PweMoeLayer {
    name: String,
    dictionary: TaskVectorDictionary,
    router: Router,
}

impl PweMoeLayer {
    pub fn new(name: impl Into<String>, dictionary: TaskVectorDictionary, router: Router) -> Result<Self> {
        let name = name.into();
        if dictionary.num_tasks() != router.num_tasks() {
            return Err(Error::shape(
                &name,
                format!(
                    "{} task vectors but the router emits {} weights",
                    dictionary.num_tasks(),
                    router.num_tasks()
                ),
            ));
        }
        if dictionary.base().layout().len() != 1 || !dictionary.base().layout().contains(&name) {
            return Err(Error::shape(&name, "dictionary must cover exactly this layer"));
        }
        Ok(Self {
            name,
            dictionary,
            router,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dictionary(&self) -> &TaskVectorDictionary {
        &self.dictionary
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn router_mut(&mut self) -> &mut Router {
        &mut self.router
    }

    /// `φ0 + D w`.
    pub fn decode(&self, w: &[f64]) -> Result<ParamVector> {
        self.dictionary.decode(w)
    }

    pub fn route(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.router.route(r)
    }
}

/// Which layers become MoE layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpscaleStrategy {
    AllLayers,
    /// Layers at odd positions of the layout (second, fourth, ...).
    OddLayersOnly,
    Layers(Vec<String>),
}

impl UpscaleStrategy {
    /// Selected layer names, in layout order.
    pub fn select(&self, layout: &Layout) -> Result<Vec<String>> {
        let names: Vec<String> = match self {
            Self::AllLayers => layout.names().map(str::to_string).collect(),
            Self::OddLayersOnly => layout
                .names()
                .enumerate()
                .filter(|(i, _)| i % 2 == 1)
                .map(|(_, n)| n.to_string())
                .collect(),
            Self::Layers(wanted) => layout.subset(wanted)?.names().map(str::to_string).collect(),
        };
        if names.is_empty() {
            return Err(Error::Strategy(format!("{self} selects no layer of this model")));
        }
        Ok(names)
    }
}

impl std::str::FromStr for UpscaleStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-layers" => Ok(Self::AllLayers),
            "odd-layers-only" => Ok(Self::OddLayersOnly),
            other if !other.trim().is_empty() => Ok(Self::Layers(
                other.split(',').map(|n| n.trim().to_string()).collect(),
            )),
            _ => Err(Error::Strategy("empty strategy".into())),
        }
    }
}

impl std::fmt::Display for UpscaleStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::AllLayers => f.write_str("all-layers"),
            Self::OddLayersOnly => f.write_str("odd-layers-only"),
            Self::Layers(names) => f.write_str(&names.join(",")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpscaleConfig {
    pub strategy: UpscaleStrategy,
    pub lambda: f64,
    pub router_std: f64,
    pub seed: u64,
}

impl UpscaleConfig {
    pub fn new(strategy: UpscaleStrategy, lambda: f64, seed: u64) -> Self {
        Self {
            strategy,
            lambda,
            router_std: ROUTER_INIT_STD,
            seed,
        }
    }
}

/// A model whose selected layers are PWE-MoE layers.
#[derive(Debug, Clone, PartialEq)]
pub struct UpscaledModel {
    realization: Realization,
    moe_layers: Vec<PweMoeLayer>,
    static_params: ParamVector,
    lambda: f64,
}

/// Builds an up-scaled model from `θ0` and the fine-tuned checkpoints.
pub fn upscale(
    realization: &Realization,
    pretrained: &ParamVector,
    checkpoints: &[ParamVector],
    cfg: &UpscaleConfig,
) -> Result<UpscaledModel> {
    if checkpoints.len() < 2 {
        return Err(Error::Domain(format!(
            "up-scaling needs at least two checkpoints, got {}",
            checkpoints.len()
        )));
    }
    realization.layout().ensure_same(pretrained.layout())?;
    let full = task_vectors(pretrained, checkpoints)?;
    let selected = cfg.strategy.select(pretrained.layout())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let moe_layers = selected
        .iter()
        .map(|name| {
            let router = Router::init_with(checkpoints.len(), cfg.lambda, cfg.router_std, &mut rng)?;
            PweMoeLayer::new(name.clone(), full.restrict(&[name])?, router)
        })
        .collect::<Result<Vec<_>>>()?;
    let rest: Vec<String> = pretrained
        .layout()
        .names()
        .filter(|n| !selected.iter().any(|s| s == n))
        .map(str::to_string)
        .collect();
    let merged = task_arithmetic(pretrained, &full, cfg.lambda)?;
    Ok(UpscaledModel {
        realization: realization.clone(),
        moe_layers,
        static_params: merged.restrict(&rest)?,
        lambda: cfg.lambda,
    })
}

impl UpscaledModel {
    /// Reassembles a model from stored parts, checking that every layout
    /// segment is covered exactly once.
    pub fn from_parts(
        realization: Realization,
        moe_layers: Vec<PweMoeLayer>,
        static_params: ParamVector,
        lambda: f64,
    ) -> Result<Self> {
        let layout = realization.layout();
        if moe_layers.is_empty() {
            return Err(Error::Strategy("an up-scaled model needs at least one MoE layer".into()));
        }
        let t = moe_layers[0].router.num_tasks();
        for entry in layout.entries() {
            let in_moe = moe_layers.iter().filter(|m| m.name == entry.name).count();
            let in_static = usize::from(static_params.layout().contains(&entry.name));
            if in_moe + in_static != 1 {
                return Err(Error::Layout(format!(
                    "layer `{}` must be either MoE or static",
                    entry.name
                )));
            }
        }
        for m in &moe_layers {
            if m.router.num_tasks() != t {
                return Err(Error::shape(&m.name, "routers disagree on the task count"));
            }
            let expected = layout.subset(&[m.name.as_str()])?;
            expected.ensure_same(m.dictionary.base().layout())?;
        }
        let expected_static = layout.subset(&static_params.layout().names().collect::<Vec<_>>())?;
        expected_static.ensure_same(static_params.layout())?;
        let mut moe_layers = moe_layers;
        moe_layers.sort_by_key(|m| layout.position(&m.name));
        Ok(Self {
            realization,
            moe_layers,
            static_params,
            lambda,
        })
    }

    pub fn realization(&self) -> &Realization {
        &self.realization
    }

    pub fn layout(&self) -> Layout {
        self.realization.layout()
    }

    pub fn moe_layers(&self) -> &[PweMoeLayer] {
        &self.moe_layers
    }

    pub fn moe_layers_mut(&mut self) -> &mut [PweMoeLayer] {
        &mut self.moe_layers
    }

    pub fn static_params(&self) -> &ParamVector {
        &self.static_params
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn num_tasks(&self) -> usize {
        self.moe_layers[0].router.num_tasks()
    }

    /// Router parameters across all MoE layers.
    pub fn trainable_param_count(&self) -> usize {
        self.moe_layers.iter().map(|m| m.router.param_count()).sum()
    }

    /// Digest of everything that is not a router parameter: `φ0`, the task
    /// vectors and the statically merged segments.
    pub fn frozen_checksum(&self) -> u64 {
        let mut h: u64 = self.static_params.checksum();
        let mut mix = |x: u64| h = (h ^ x).wrapping_mul(0x0000_0100_0000_01b3);
        for m in &self.moe_layers {
            mix(m.dictionary.base().checksum());
            for c in m.dictionary.columns() {
                mix(c.checksum());
            }
        }
        h
    }

    /// Routing weights of every MoE layer at `r`, in layout order.
    pub fn routing_weights(&self, r: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.moe_layers.iter().map(|m| m.route(r)).collect()
    }

    /// Plain parameters at preference `r`.
    pub fn unload(&self, r: &[f64]) -> Result<ParamVector> {
        let weights = self.routing_weights(r)?;
        self.unload_with_weights(&weights)
    }

    /// Plain parameters for explicit per-layer routing weights.
    pub fn unload_with_weights(&self, weights: &[Vec<f64>]) -> Result<ParamVector> {
        if weights.len() != self.moe_layers.len() {
            return Err(Error::Domain(format!(
                "{} routing vectors for {} MoE layers",
                weights.len(),
                self.moe_layers.len()
            )));
        }
        let mut out = ParamVector::zeros(self.layout());
        for (m, w) in self.moe_layers.iter().zip(weights) {
            out.set_segment(&m.name, m.decode(w)?.values())?;
        }
        for (entry, values) in self.static_params.segments() {
            out.set_segment(&entry.name, values)?;
        }
        Ok(out)
    }

    /// The unloaded network at `r`.
    pub fn unload_model(&self, r: &[f64]) -> Result<MlpModel> {
        self.realization.model(&self.unload(r)?)
    }

    /// Forward pass that keeps the MoE structure: each layer is decoded from
    /// its router's weights just before it is applied.
    pub fn forward(&self, r: &[f64], inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let Realization::Mlp { architecture } = &self.realization else {
            return Err(Error::Domain("the identity realization has no forward pass".into()));
        };
        let mut acts = inputs.to_vec();
        for spec in architecture.layers() {
            let segment = match self.moe_layers.iter().find(|m| m.name == spec.name) {
                Some(m) => m.decode(&m.route(r)?)?,
                None => self.static_params.restrict(&[spec.name.as_str()])?,
            };
            let layer = Architecture::new(vec![spec.clone()])?.unflatten(&segment)?;
            acts = layer.forward(&acts)?;
        }
        Ok(acts)
    }
}

/// One row of a routing-weight dump.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingRow {
    pub layer: String,
    pub expert: usize,
    pub pref_id: usize,
    pub preference: Vec<f64>,
    pub weight: f64,
}

/// The unit vectors `e_1..e_T` followed by `extra`.
pub fn with_unit_preferences(num_tasks: usize, extra: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut prefs: Vec<Vec<f64>> = (0..num_tasks)
        .map(|i| (0..num_tasks).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    prefs.extend(extra.iter().cloned());
    prefs
}

/// Routing weights for every (layer, expert, preference), grouped by layer
/// then preference.
pub fn routing_table(model: &UpscaledModel, preferences: &[Vec<f64>]) -> Result<Vec<RoutingRow>> {
    let mut rows = Vec::with_capacity(model.moe_layers.len() * model.num_tasks() * preferences.len());
    for m in &model.moe_layers {
        for (pref_id, r) in preferences.iter().enumerate() {
            for (expert, &weight) in m.route(r)?.iter().enumerate() {
                rows.push(RoutingRow {
                    layer: m.name.clone(),
                    expert,
                    pref_id,
                    preference: r.clone(),
                    weight,
                });
            }
        }
    }
    Ok(rows)
}
