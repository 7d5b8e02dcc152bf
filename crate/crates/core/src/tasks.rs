//! Synthetic multi-task suites and the pre-train / fine-tune pipeline that
//! produces the checkpoints everything else consumes.
//!
//! Two suites are provided. The quadratic suite has losses `‖φ - c_t‖²` on the
//! parameter vector itself, so every downstream quantity has a closed form.
//! The cluster-classification suite asks one small network to separate
//! Gaussian clusters whose axis is rotated from task to task, which makes the
//! tasks conflict.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::Gram;
use crate::nn::{
    Activation, Architecture, Batch, Layout, LayoutEntry, LossKind, MlpModel, ParamVector,
    Selector, Targets,
};

/// How a parameter vector becomes a function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Realization {
    /// The parameters are the solution; one segment named `phi`.
    Identity { dim: usize },
    Mlp { architecture: Architecture },
}

pub const IDENTITY_SEGMENT: &str = "phi";

impl Realization {
    pub fn layout(&self) -> Layout {
        match self {
            Realization::Identity { dim } => {
                Layout::new(vec![LayoutEntry::new(IDENTITY_SEGMENT, vec![*dim])])
                    .expect("single entry")
            }
            Realization::Mlp { architecture } => architecture.layout(),
        }
    }

    /// Fresh parameters: zeros for the identity realization, seeded
    /// He/LeCun-normal weights for networks.
    pub fn init(&self, seed: u64) -> ParamVector {
        match self {
            Realization::Identity { .. } => ParamVector::zeros(self.layout()),
            Realization::Mlp { architecture } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                architecture.init(&mut rng).flatten()
            }
        }
    }

    pub fn model(&self, params: &ParamVector) -> Result<MlpModel> {
        match self {
            Realization::Mlp { architecture } => architecture.unflatten(params),
            Realization::Identity { .. } => Err(Error::Domain(
                "the identity realization has no network form".into(),
            )),
        }
    }
}

/// Labelled 2-D points for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn batch(&self, indices: Option<&[usize]>) -> Batch {
        match indices {
            None => Batch {
                inputs: self.inputs.clone(),
                targets: Targets::Classes(self.labels.clone()),
            },
            Some(idx) => Batch {
                inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
                targets: Targets::Classes(idx.iter().map(|&i| self.labels[i]).collect()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub num_tasks: usize,
    pub n_per_task: usize,
    /// Distance of each cluster centre from the origin.
    pub separation: f64,
    /// Standard deviation of the isotropic cluster noise.
    pub noise: f64,
}

impl ClusterParams {
    pub fn new(num_tasks: usize, n_per_task: usize) -> Self {
        Self {
            num_tasks,
            n_per_task,
            separation: 1.5,
            noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskData {
    Quadratic {
        centers: Vec<Vec<f64>>,
    },
    ClusterClassification {
        params: ClusterParams,
        train: Vec<Dataset>,
        test: Vec<Dataset>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteKind {
    Quadratic,
    ClusterClassification,
}

impl std::str::FromStr for SuiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Self::Quadratic),
            "cluster-classification" => Ok(Self::ClusterClassification),
            other => Err(Error::Domain(format!("unknown suite kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Quadratic => "quadratic",
            Self::ClusterClassification => "cluster-classification",
        })
    }
}

/// Which split a loss is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Per-task losses, plus accuracies for classification suites.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub losses: Vec<f64>,
    pub accuracies: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    seed: u64,
    data: TaskData,
}

impl TaskSuite {
    /// Quadratic suite with losses `‖φ - c_t‖²`.
    pub fn quadratic(centers: Vec<Vec<f64>>) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::DegenerateSuite(format!(
                "need at least two tasks, got {}",
                centers.len()
            )));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::DegenerateSuite("centers must share a nonzero dimension".into()));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateSuite("centers must be finite".into()));
        }
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                if centers[i] == centers[j] {
                    return Err(Error::DegenerateSuite(format!(
                        "centers {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(Self {
            seed: 0,
            data: TaskData::Quadratic { centers },
        })
    }

    /// Two-class Gaussian clusters in the plane. Task `t` places its clusters
    /// at `±separation · u_t` with `u_t = (cos(tπ/T), sin(tπ/T))`; labels
    /// alternate so each task is balanced to within one sample. The test split
    /// is drawn from the same distribution with an independent stream.
    pub fn cluster_classification(params: ClusterParams, seed: u64) -> Result<Self> {
        if params.num_tasks < 2 {
            return Err(Error::Domain(format!(
                "need at least two tasks, got {}",
                params.num_tasks
            )));
        }
        if params.n_per_task < 32 {
            return Err(Error::Domain(format!(
                "n_per_task must be at least 32, got {}",
                params.n_per_task
            )));
        }
        if !(params.noise > 0.0 && params.noise.is_finite() && params.separation.is_finite()) {
            return Err(Error::Domain("cluster noise must be positive and finite".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = |t: usize| {
            let angle = t as f64 * PI / params.num_tasks as f64;
            let u = [angle.cos(), angle.sin()];
            let mut inputs = Vec::with_capacity(params.n_per_task);
            let mut labels = Vec::with_capacity(params.n_per_task);
            for n in 0..params.n_per_task {
                let label = n % 2;
                let sign = if label == 1 { 1.0 } else { -1.0 };
                let x: Vec<f64> = (0..2)
                    .map(|k| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        sign * params.separation * u[k] + params.noise * z
                    })
                    .collect();
                inputs.push(x);
                labels.push(label);
            }
            Dataset { inputs, labels }
        };
        let train: Vec<Dataset> = (0..params.num_tasks).map(&mut gen).collect();
        let test: Vec<Dataset> = (0..params.num_tasks).map(&mut gen).collect();
        Ok(Self {
            seed,
            data: TaskData::ClusterClassification {
                params,
                train,
                test,
            },
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data(&self) -> &TaskData {
        &self.data
    }

    pub fn kind(&self) -> SuiteKind {
        match self.data {
            TaskData::Quadratic { .. } => SuiteKind::Quadratic,
            TaskData::ClusterClassification { .. } => SuiteKind::ClusterClassification,
        }
    }

    pub fn num_tasks(&self) -> usize {
        match &self.data {
            TaskData::Quadratic { centers } => centers.len(),
            TaskData::ClusterClassification { train, .. } => train.len(),
        }
    }

    pub fn centers(&self) -> Option<&[Vec<f64>]> {
        match &self.data {
            TaskData::Quadratic { centers } => Some(centers),
            _ => None,
        }
    }

    /// The realization this suite is trained with. `hidden` is the hidden
    /// width of the classification network and is ignored for quadratics.
    pub fn realization(&self, hidden: usize) -> Result<Realization> {
        match &self.data {
            TaskData::Quadratic { centers } => Ok(Realization::Identity {
                dim: centers[0].len(),
            }),
            TaskData::ClusterClassification { .. } => Ok(Realization::Mlp {
                architecture: Architecture::chain(&[2, hidden, 2], Activation::Relu, Activation::Softmax)?,
            }),
        }
    }

    fn check(&self, realization: &Realization, params: &ParamVector, task: usize) -> Result<()> {
        if task >= self.num_tasks() {
            return Err(Error::Domain(format!(
                "task index {task} out of range for {} tasks",
                self.num_tasks()
            )));
        }
        realization.layout().ensure_same(params.layout())?;
        match (&self.data, realization) {
            (TaskData::Quadratic { .. }, Realization::Identity { .. })
            | (TaskData::ClusterClassification { .. }, Realization::Mlp { .. }) => Ok(()),
            _ => Err(Error::Domain("realization does not fit this suite".into())),
        }
    }

    /// Indices of a fresh training batch drawn with replacement, or `None`
    /// when the task has no data (quadratic losses are exact).
    pub fn sample_batch<R: Rng + ?Sized>(&self, task: usize, size: usize, rng: &mut R) -> Option<Vec<usize>> {
        match &self.data {
            TaskData::Quadratic { .. } => None,
            TaskData::ClusterClassification { train, .. } => {
                let n = train[task].len();
                Some((0..size.max(1)).map(|_| rng.random_range(0..n)).collect())
            }
        }
    }

    /// Training loss of `task` and its gradient over the full layout.
    /// `batch` selects training rows; `None` means the whole split.
    pub fn task_loss_grad(
        &self,
        task: usize,
        realization: &Realization,
        params: &ParamVector,
        batch: Option<&[usize]>,
    ) -> Result<(f64, ParamVector)> {
        self.check(realization, params, task)?;
        match &self.data {
            TaskData::Quadratic { centers } => {
                let c = &centers[task];
                let mut grad = ParamVector::zeros(params.layout().clone());
                let mut loss = 0.0;
                for ((g, p), c) in grad.values_mut().iter_mut().zip(params.values()).zip(c) {
                    loss += (p - c) * (p - c);
                    *g = 2.0 * (p - c);
                }
                if !loss.is_finite() {
                    return Err(Error::Numeric("non-finite quadratic loss".into()));
                }
                Ok((loss, grad))
            }
            TaskData::ClusterClassification { train, .. } => {
                let model = realization.model(params)?;
                let report = model.loss_and_grad(
                    &train[task].batch(batch),
                    LossKind::SoftmaxCrossEntropy,
                    &Selector::All,
                )?;
                Ok((report.loss, report.grad))
            }
        }
    }

    pub fn task_loss(
        &self,
        task: usize,
        realization: &Realization,
        params: &ParamVector,
        split: Split,
    ) -> Result<f64> {
        self.check(realization, params, task)?;
        match &self.data {
            TaskData::Quadratic { centers } => Ok(params
                .values()
                .iter()
                .zip(&centers[task])
                .map(|(p, c)| (p - c) * (p - c))
                .sum()),
            TaskData::ClusterClassification { train, test, .. } => {
                let data = if split == Split::Train { &train[task] } else { &test[task] };
                realization
                    .model(params)?
                    .loss(&data.batch(None), LossKind::SoftmaxCrossEntropy)
            }
        }
    }

    /// Held-out losses for every task; for classification also accuracies.
    pub fn evaluate(&self, realization: &Realization, params: &ParamVector) -> Result<Evaluation> {
        let losses = (0..self.num_tasks())
            .map(|t| self.task_loss(t, realization, params, Split::Test))
            .collect::<Result<Vec<_>>>()?;
        let accuracies = match &self.data {
            TaskData::Quadratic { .. } => None,
            TaskData::ClusterClassification { test, .. } => {
                let model = realization.model(params)?;
                Some(
                    test.iter()
                        .map(|d| accuracy(&model, d))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
        };
        Ok(Evaluation { losses, accuracies })
    }

    /// Diagonal empirical Fisher of `task` at `params`: the mean of squared
    /// per-sample gradients over `samples` rows drawn with replacement.
    pub fn empirical_fisher(
        &self,
        task: usize,
        realization: &Realization,
        params: &ParamVector,
        samples: usize,
        seed: u64,
    ) -> Result<ParamVector> {
        self.check(realization, params, task)?;
        let mut fisher = ParamVector::zeros(params.layout().clone());
        match &self.data {
            TaskData::Quadratic { .. } => {
                let (_, g) = self.task_loss_grad(task, realization, params, None)?;
                for (f, g) in fisher.values_mut().iter_mut().zip(g.values()) {
                    *f = g * g;
                }
            }
            TaskData::ClusterClassification { .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let count = samples.max(1);
                for _ in 0..count {
                    let idx = self.sample_batch(task, 1, &mut rng).expect("classification data");
                    let (_, g) = self.task_loss_grad(task, realization, params, Some(&idx))?;
                    for (f, g) in fisher.values_mut().iter_mut().zip(g.values()) {
                        *f += g * g / count as f64;
                    }
                }
            }
        }
        Ok(fisher)
    }

    /// Per-layer Gram matrices of the augmented inputs `[x, 1]` on the task's
    /// training split. Identity realizations have no linear layers and yield
    /// `None` for their single segment.
    pub fn layer_grams(
        &self,
        task: usize,
        realization: &Realization,
        params: &ParamVector,
    ) -> Result<Vec<Option<Gram>>> {
        self.check(realization, params, task)?;
        match &self.data {
            TaskData::Quadratic { .. } => Ok(vec![None]),
            TaskData::ClusterClassification { train, .. } => {
                let model = realization.model(params)?;
                model
                    .layer_inputs(&train[task].inputs)?
                    .into_iter()
                    .map(|rows| {
                        let augmented: Vec<Vec<f64>> = rows
                            .into_iter()
                            .map(|mut r| {
                                r.push(1.0);
                                r
                            })
                            .collect();
                        Gram::from_rows(&augmented).map(Some)
                    })
                    .collect()
            }
        }
    }
}

fn accuracy(model: &MlpModel, data: &Dataset) -> Result<f64> {
    let outputs = model.forward(&data.inputs)?;
    let correct = outputs
        .iter()
        .zip(&data.labels)
        .filter(|(o, &y)| argmax(o) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Plain gradient descent settings. `batch_size = None` is full-batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: Option<usize>,
    pub seed: u64,
}

/// A trained parameter vector with its per-step training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedParams {
    pub params: ParamVector,
    pub losses: Vec<f64>,
}

fn descend(
    suite: &TaskSuite,
    realization: &Realization,
    start: ParamVector,
    tasks: &[usize],
    cfg: &GdConfig,
) -> Result<TrainedParams> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Domain(format!("learning rate {} must be positive", cfg.lr)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = start;
    let mut losses = Vec::with_capacity(cfg.steps);
    let weight = 1.0 / tasks.len() as f64;
    for step in 0..cfg.steps {
        let mut total = 0.0;
        let mut grad = vec![0.0; params.len()];
        for &t in tasks {
            let batch = cfg
                .batch_size
                .and_then(|b| suite.sample_batch(t, b, &mut rng));
            let (l, g) = suite
                .task_loss_grad(t, realization, &params, batch.as_deref())
                .map_err(|e| Error::Training {
                    step,
                    detail: e.to_string(),
                })?;
            total += weight * l;
            for (a, b) in grad.iter_mut().zip(g.values()) {
                *a += weight * b;
            }
        }
        if !total.is_finite() {
            return Err(Error::Training {
                step,
                detail: "non-finite loss".into(),
            });
        }
        losses.push(total);
        for (p, g) in params.values_mut().iter_mut().zip(&grad) {
            *p -= cfg.lr * g;
        }
    }
    Ok(TrainedParams { params, losses })
}

/// Minimizes the equal-weight mean of all task losses from a seeded init.
/// `init_seed` seeds the initial parameters, `cfg.seed` the batch stream.
pub fn pretrain(
    suite: &TaskSuite,
    realization: &Realization,
    init_seed: u64,
    cfg: &GdConfig,
) -> Result<TrainedParams> {
    let tasks: Vec<usize> = (0..suite.num_tasks()).collect();
    descend(suite, realization, realization.init(init_seed), &tasks, cfg)
}

/// Minimizes one task's loss starting from `pretrained`.
pub fn finetune(
    suite: &TaskSuite,
    realization: &Realization,
    pretrained: &ParamVector,
    task: usize,
    cfg: &GdConfig,
) -> Result<TrainedParams> {
    if task >= suite.num_tasks() {
        return Err(Error::Domain(format!("task index {task} out of range")));
    }
    descend(suite, realization, pretrained.clone(), &[task], cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointProvenance {
    pub suite_seed: u64,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub lr: f64,
}

/// `θ_0` and the per-task fine-tuned `θ_1..θ_T` on one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSet {
    pub realization: Realization,
    pub pretrained: ParamVector,
    pub finetuned: Vec<ParamVector>,
    pub provenance: CheckpointProvenance,
}

impl CheckpointSet {
    /// Pre-trains and then fine-tunes every task with the same step size.
    pub fn build(
        suite: &TaskSuite,
        realization: &Realization,
        init_seed: u64,
        pretrain_cfg: &GdConfig,
        finetune_cfg: &GdConfig,
    ) -> Result<Self> {
        let pretrained = pretrain(suite, realization, init_seed, pretrain_cfg)?.params;
        let finetuned = (0..suite.num_tasks())
            .map(|t| finetune(suite, realization, &pretrained, t, finetune_cfg).map(|r| r.params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            realization: realization.clone(),
            pretrained,
            finetuned,
            provenance: CheckpointProvenance {
                suite_seed: suite.seed(),
                pretrain_steps: pretrain_cfg.steps,
                finetune_steps: finetune_cfg.steps,
                lr: finetune_cfg.lr,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> TaskSuite {
        TaskSuite::quadratic(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    fn phi(v: &[f64]) -> ParamVector {
        ParamVector::new(Realization::Identity { dim: v.len() }.layout(), v.to_vec()).unwrap()
    }

    #[test]
    fn quadratic_losses() {
        let s = unit_square();
        let r = s.realization(0).unwrap();
        assert_eq!(s.task_loss(0, &r, &phi(&[1.0, 0.0]), Split::Train).unwrap(), 0.0);
        assert_eq!(s.task_loss(1, &r, &phi(&[1.0, 0.0]), Split::Train).unwrap(), 2.0);
        let mid = s.evaluate(&r, &phi(&[0.5, 0.5])).unwrap();
        assert_eq!(mid.losses, vec![0.5, 0.5]);
        assert!(mid.accuracies.is_none());
    }

    #[test]
    fn duplicate_centers_rejected() {
        assert!(matches!(
            TaskSuite::quadratic(vec![vec![1.0, 2.0], vec![1.0, 2.0]]),
            Err(Error::DegenerateSuite(_))
        ));
    }

    #[test]
    fn scalarized_minimizer_is_the_weighted_center() {
        // gradient descent on Σ r_t ‖φ - c_t‖² against the closed form Σ r_t c_t
        let s = unit_square();
        let real = s.realization(0).unwrap();
        let r = [0.3, 0.7];
        let mut p = phi(&[4.0, -2.0]);
        for _ in 0..2000 {
            let mut g = vec![0.0; 2];
            for (t, rt) in r.iter().enumerate() {
                let (_, gt) = s.task_loss_grad(t, &real, &p, None).unwrap();
                g.iter_mut().zip(gt.values()).for_each(|(a, b)| *a += rt * b);
            }
            p.values_mut().iter_mut().zip(&g).for_each(|(x, g)| *x -= 0.05 * g);
        }
        assert!((p.values()[0] - 0.3).abs() < 1e-9);
        assert!((p.values()[1] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn quadratic_finetune_converges() {
        let s = unit_square();
        let real = s.realization(0).unwrap();
        let cfg = GdConfig {
            steps: 500,
            lr: 0.1,
            batch_size: None,
            seed: 0,
        };
        for start in [[0.0, 0.0], [5.0, -3.0], [-10.0, 10.0]] {
            let out = finetune(&s, &real, &phi(&start), 1, &cfg).unwrap();
            let d = out.params.distance(&phi(&[0.0, 1.0]), None).unwrap();
            assert!(d <= 1e-3, "{d}");
            assert!(out.losses.last().unwrap() <= out.losses.first().unwrap());
        }
    }

    #[test]
    fn divergence_reports_step() {
        let s = unit_square();
        let real = s.realization(0).unwrap();
        let cfg = GdConfig {
            steps: 5000,
            lr: 5.0,
            batch_size: None,
            seed: 0,
        };
        match finetune(&s, &real, &phi(&[0.0, 0.0]), 0, &cfg) {
            Err(Error::Training { step, .. }) => assert!(step > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn classification_is_deterministic_and_balanced() {
        let p = ClusterParams::new(3, 65);
        let a = TaskSuite::cluster_classification(p.clone(), 9).unwrap();
        let b = TaskSuite::cluster_classification(p, 9).unwrap();
        assert_eq!(a, b);
        let TaskData::ClusterClassification { train, test, .. } = a.data() else {
            unreachable!()
        };
        for d in train.iter().chain(test) {
            let ones = d.labels.iter().filter(|&&y| y == 1).count();
            assert!((ones as i64 - (d.len() - ones) as i64).abs() <= 1);
        }
        assert!(TaskSuite::cluster_classification(ClusterParams::new(2, 31), 0).is_err());
        assert!(TaskSuite::cluster_classification(ClusterParams::new(1, 64), 0).is_err());
    }

    #[test]
    fn checkpoints_share_layout_and_are_reproducible() {
        let s = TaskSuite::cluster_classification(ClusterParams::new(2, 64), 3).unwrap();
        let real = s.realization(8).unwrap();
        let cfg = GdConfig {
            steps: 20,
            lr: 0.1,
            batch_size: Some(16),
            seed: 4,
        };
        let a = CheckpointSet::build(&s, &real, 1, &cfg, &cfg).unwrap();
        let b = CheckpointSet::build(&s, &real, 1, &cfg, &cfg).unwrap();
        assert_eq!(a, b);
        for f in &a.finetuned {
            assert_eq!(f.layout(), a.pretrained.layout());
        }
    }

    #[test]
    fn fisher_and_grams_have_expected_shapes() {
        let s = TaskSuite::cluster_classification(ClusterParams::new(2, 40), 3).unwrap();
        let real = s.realization(4).unwrap();
        let p = real.init(0);
        let f = s.empirical_fisher(0, &real, &p, 10, 1).unwrap();
        assert_eq!(f.len(), p.len());
        assert!(f.values().iter().all(|v| *v >= 0.0));
        let g = s.layer_grams(1, &real, &p).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].as_ref().unwrap().dim, 3);
        assert_eq!(g[1].as_ref().unwrap().dim, 5);
    }

    #[test]
    fn suite_serde_roundtrip() {
        let s = TaskSuite::cluster_classification(ClusterParams::new(2, 32), 5).unwrap();
        let back: TaskSuite = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
