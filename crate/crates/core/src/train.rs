//! Router fine-tuning over sampled preferences, and the single-preference
//! joint baselines.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::UpscaledModel;
use crate::nn::ParamVector;
use crate::scalarize::{
    combine, epo_step_weights, ls_scalarize, mgda_weights, non_uniformity, ObjectiveVector,
    Preference, Scalarization,
};
use crate::tasks::{Realization, TaskSuite};

/// Default switch point between EPO descent and balancing, as a fraction of
/// the largest possible non-uniformity `ln T`.
pub const DEFAULT_EPO_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub mode: Scalarization,
    pub dirichlet_alpha: f64,
    pub seed: u64,
    pub epo_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.05,
            batch_size: 32,
            mode: Scalarization::Ls,
            dirichlet_alpha: 1.0,
            seed: 0,
            epo_tol: DEFAULT_EPO_TOL,
        }
    }
}

impl TrainConfig {
    /// Collects every violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.steps == 0 {
            problems.push("train.steps must be at least 1".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("train.lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            problems.push("train.batch_size must be at least 1".to_string());
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            problems.push(format!(
                "train.dirichlet_alpha must be positive, got {}",
                self.dirichlet_alpha
            ));
        }
        if !(self.epo_tol > 0.0 && self.epo_tol.is_finite()) {
            problems.push(format!("train.epo_tol must be positive, got {}", self.epo_tol));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub preference: Vec<f64>,
    pub losses: Vec<f64>,
    pub aggregate: f64,
    pub non_uniformity: f64,
}

/// One record per executed step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub num_tasks: usize,
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn header(num_tasks: usize) -> Vec<String> {
        let mut h = vec!["step".to_string()];
        h.extend((0..num_tasks).map(|t| format!("r_{t}")));
        h.extend((0..num_tasks).map(|t| format!("loss_{t}")));
        h.push("aggregate".into());
        h.push("non_uniformity".into());
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        crate::export::write_trainlog(out, self)
    }

    /// Mean aggregate loss over the first and last `fraction` of the steps.
    pub fn trend(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.records.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        if n == 0 {
            return None;
        }
        let mean = |recs: &[StepRecord]| recs.iter().map(|r| r.aggregate).sum::<f64>() / recs.len() as f64;
        Some((mean(&self.records[..k]), mean(&self.records[n - k..])))
    }
}

/// A Dirichlet(α·1) draw from normalized Gamma variates, floored at `1e-9`
/// and renormalized.
pub fn sample_preference<R: rand::Rng + ?Sized>(num_tasks: usize, alpha: f64, rng: &mut R) -> Result<Preference> {
    if num_tasks < 2 {
        return Err(Error::Domain(format!("need at least two tasks, got {num_tasks}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Domain(format!("Dirichlet α = {alpha}: {e}")))?;
    let draws: Vec<f64> = (0..num_tasks).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        Preference::clamped(&draws)
    } else {
        // every variate underflowed; only reachable for tiny α
        Ok(Preference::uniform(num_tasks))
    }
}

/// Step weights over the tasks and the resulting aggregate loss.
fn aggregate(
    mode: Scalarization,
    losses: &ObjectiveVector,
    r: &Preference,
    tol: f64,
    grads: &[Vec<f64>],
) -> Result<(Vec<f64>, f64, f64)> {
    let mu = non_uniformity(losses, r).unwrap_or(0.0);
    let (weights, agg) = match mode {
        Scalarization::Ls => (r.to_vec(), ls_scalarize(losses, r)?),
        Scalarization::Epo => {
            let a = match epo_step_weights(losses, r, tol) {
                Ok(a) => a,
                // all weighted losses are zero: nothing to balance
                Err(Error::Domain(_)) => r.to_vec(),
                Err(e) => return Err(e),
            };
            let agg = a.iter().zip(losses.iter()).map(|(a, l)| a * l).sum();
            (a, agg)
        }
        Scalarization::Mgda => {
            let g = mgda_weights(grads)?;
            let agg = g.iter().zip(losses.iter()).map(|(a, l)| a * l).sum();
            (g, agg)
        }
    };
    Ok((weights, agg, mu))
}

fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let prefs = ChaCha8Rng::seed_from_u64(seed);
    let mut batches = ChaCha8Rng::seed_from_u64(seed);
    batches.set_stream(1);
    (prefs, batches)
}

fn diverged(step: usize, r: &[f64], what: &str) -> Error {
    Error::Training {
        step,
        detail: format!("non-finite {what} at preference {r:?}"),
    }
}

/// Per-task losses and full-layout gradients at `params`.
fn task_terms(
    suite: &TaskSuite,
    realization: &Realization,
    params: &ParamVector,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut losses = Vec::with_capacity(suite.num_tasks());
    let mut grads = Vec::with_capacity(suite.num_tasks());
    for t in 0..suite.num_tasks() {
        let batch = suite.sample_batch(t, batch_size, rng);
        let (l, g) = suite.task_loss_grad(t, realization, params, batch.as_deref())?;
        losses.push(l);
        grads.push(g.into_values());
    }
    Ok((losses, grads))
}

/// Trains the routers of `model` over Dirichlet-sampled preferences.
///
/// Each step samples `r`, unloads the model at `r`, takes one fresh batch per
/// task, combines the task gradients with LS or EPO weights (held constant)
/// and pulls the result back through `φ = φ0 + D w` and each router. Only
/// router parameters change.
pub fn train_routers(
    mut model: UpscaledModel,
    suite: &TaskSuite,
    cfg: &TrainConfig,
) -> Result<(UpscaledModel, TrainLog)> {
    cfg.validate()?;
    let t = suite.num_tasks();
    if model.num_tasks() != t {
        return Err(Error::Domain(format!(
            "model routes over {} tasks but the suite has {t}",
            model.num_tasks()
        )));
    }
    if cfg.mode == Scalarization::Mgda {
        return Err(Error::Config(vec![
            "train.mode must be ls or epo for router training".into(),
        ]));
    }
    let realization = model.realization().clone();
    let (mut pref_rng, mut batch_rng) = streams(cfg.seed);
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let r = sample_preference(t, cfg.dirichlet_alpha, &mut pref_rng)?;
        let routing = model.routing_weights(&r)?;
        if routing.iter().flatten().any(|w| !w.is_finite()) {
            return Err(diverged(step, &r, "routing weight"));
        }
        let params = model.unload_with_weights(&routing)?;
        let (losses, grads) = task_terms(suite, &realization, &params, cfg.batch_size, &mut batch_rng)
            .map_err(|e| match e {
                Error::Numeric(_) => diverged(step, &r, "loss"),
                other => other,
            })?;
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(diverged(step, &r, "loss"));
        }
        let objective = ObjectiveVector::new(losses.clone())?;
        let (weights, agg, mu) = aggregate(cfg.mode, &objective, &r, cfg.epo_tol, &grads)?;
        let combined = ParamVector::new(params.layout().clone(), combine(&weights, &grads))?;

        let mut updates = Vec::with_capacity(model.moe_layers().len());
        for layer in model.moe_layers() {
            let dw = layer.dictionary().transpose_apply(combined.segment(layer.name())?)?;
            updates.push(layer.router().backward(&r, &dw)?);
        }
        if updates.iter().any(|u| u.values().iter().any(|v| !v.is_finite())) {
            return Err(diverged(step, &r, "router gradient"));
        }
        for (layer, grad) in model.moe_layers_mut().iter_mut().zip(&updates) {
            layer.router_mut().apply_step(grad, cfg.lr)?;
        }
        records.push(StepRecord {
            step,
            preference: r.to_vec(),
            losses,
            aggregate: agg,
            non_uniformity: mu,
        });
    }
    Ok((model, TrainLog { num_tasks: t, records }))
}

/// Trains all parameters for one preference (LS, EPO) or towards Pareto
/// stationarity (MGDA, which ignores `r`).
pub fn train_joint(
    suite: &TaskSuite,
    realization: &Realization,
    start: &ParamVector,
    mode: Scalarization,
    r: &Preference,
    cfg: &TrainConfig,
) -> Result<(ParamVector, TrainLog)> {
    cfg.validate()?;
    let t = suite.num_tasks();
    if r.len() != t {
        return Err(Error::Domain(format!("preference of length {} for {t} tasks", r.len())));
    }
    let (_, mut batch_rng) = streams(cfg.seed);
    let mut params = start.clone();
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (losses, grads) = task_terms(suite, realization, &params, cfg.batch_size, &mut batch_rng)
            .map_err(|e| match e {
                Error::Numeric(_) => diverged(step, r, "loss"),
                other => other,
            })?;
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(diverged(step, r, "loss"));
        }
        let objective = ObjectiveVector::new(losses.clone())?;
        let (weights, agg, mu) = aggregate(mode, &objective, r, cfg.epo_tol, &grads)?;
        let g = combine(&weights, &grads);
        for (p, gi) in params.values_mut().iter_mut().zip(&g) {
            *p -= cfg.lr * gi;
        }
        records.push(StepRecord {
            step,
            preference: r.to_vec(),
            losses,
            aggregate: agg,
            non_uniformity: mu,
        });
    }
    Ok((params, TrainLog { num_tasks: t, records }))
}
