//! Experiment configuration files.
//!
//! The grammar is line oriented:
//!
//! ```text
//! file    := line*
//! line    := blank | comment | section | entry
//! blank   := WS*
//! comment := WS* ('#' | ';') ANY*
//! section := WS* '[' WS* NAME WS* ']' WS*
//! entry   := WS* KEY WS* '=' WS* VALUE WS*
//! NAME    := [A-Za-z0-9_-]+
//! KEY     := [A-Za-z0-9_-]+
//! VALUE   := ANY+   (trimmed; must not be empty)
//! ```
//!
//! Comments occupy whole lines; a `#` inside a value is part of the value.
//! Every entry must follow a section header. A key may appear once per
//! section, a section may be reopened, and section and key names are case
//! sensitive. Unknown sections and keys are errors, and every problem in a
//! file is reported at once.
//!
//! Overrides given as `section.key=value` replace file values. Only
//! `suite.kind` and `suite.T` lack defaults; see [`ExperimentConfig`] for the
//! rest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::merge::{MergeConfig, MergeMethod};
use crate::moe::{UpscaleConfig, UpscaleStrategy, ROUTER_INIT_STD};
use crate::scalarize::{Preference, Scalarization};
use crate::tasks::{ClusterParams, GdConfig, SuiteKind, TaskSuite};
use crate::train::{TrainConfig, DEFAULT_EPO_TOL};

/// Every accepted `(section, key)` pair.
pub const KEYS: &[(&str, &[&str])] = &[
    (
        "suite",
        &[
            "kind",
            "T",
            "dim",
            "seed",
            "centers",
            "n_per_task",
            "separation",
            "noise",
            "hidden",
            "pretrain_steps",
            "pretrain_lr",
            "finetune_steps",
            "finetune_lr",
            "finetune_batch_size",
        ],
    ),
    (
        "train",
        &["steps", "lr", "batch_size", "mode", "dirichlet_alpha", "seed", "epo_tol", "preference"],
    ),
    ("merge", &["method", "lambda", "trim_fraction", "fisher_samples"]),
    ("upscale", &["strategy", "lambda", "router_std", "seed"]),
    ("eval", &["grid_resolution", "reference", "mc_samples", "hv_seed"]),
    ("paths", &["workdir"]),
];

/// Keys that `--seed` sets together.
pub const SEED_KEYS: &[&str] = &["suite.seed", "train.seed", "upscale.seed", "eval.hv_seed"];

fn known(section: &str, key: &str) -> bool {
    KEYS.iter().any(|(s, keys)| *s == section && keys.contains(&key))
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    /// Source line, or `None` for overrides.
    line: Option<usize>,
}

/// Parsed but untyped `section.key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        let mut problems = Vec::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
                continue;
            }
            if let Some(inner) = s.strip_prefix('[') {
                match inner.strip_suffix(']').map(str::trim) {
                    Some(name) if is_name(name) => section = Some(name.to_string()),
                    _ => {
                        problems.push(format!("line {line}: malformed section header `{s}`"));
                        section = None;
                    }
                }
                continue;
            }
            let Some((key, value)) = s.split_once('=') else {
                problems.push(format!("line {line}: expected `key = value`, found `{s}`"));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if !is_name(key) {
                problems.push(format!("line {line}: invalid key `{key}`"));
                continue;
            }
            if value.is_empty() {
                problems.push(format!("line {line}: key `{key}` has an empty value"));
                continue;
            }
            let Some(sec) = &section else {
                problems.push(format!("line {line}: key `{key}` appears before any section header"));
                continue;
            };
            let full = format!("{sec}.{key}");
            if !known(sec, key) {
                problems.push(format!("line {line}: unknown key `{full}`"));
                continue;
            }
            if let Some(prev) = entries.get(&full) {
                problems.push(format!(
                    "line {line}: duplicate key `{full}` (first set on line {})",
                    prev.line.unwrap_or(0)
                ));
                continue;
            }
            entries.insert(
                full,
                Entry {
                    value: value.to_string(),
                    line: Some(line),
                },
            );
        }
        if problems.is_empty() {
            Ok(Self { entries })
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    /// Applies `section.key=value`, replacing any earlier value.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let bad = || Error::Config(vec![format!("override `{assignment}` is not of the form section.key=value")]);
        let (path, value) = assignment.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        let value = value.trim();
        if value.is_empty() {
            return Err(bad());
        }
        if !known(section, key) {
            return Err(Error::Config(vec![format!("unknown key `{section}.{key}` in override")]));
        }
        self.entries.insert(
            format!("{section}.{key}"),
            Entry {
                value: value.to_string(),
                line: None,
            },
        );
        Ok(())
    }

    /// Applies several overrides and reports every bad one.
    pub fn set_all<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<()> {
        let mut problems = Vec::new();
        for a in assignments {
            if let Err(Error::Config(p)) = self.set(a.as_ref()) {
                problems.extend(p);
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    /// Stable digest of the effective key/value pairs.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, e) in &self.entries {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(e.value.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Typed lookup that records failures instead of stopping at the first.
struct Reader<'a> {
    raw: &'a RawConfig,
    problems: Vec<String>,
}

impl Reader<'_> {
    fn where_(&self, key: &str) -> String {
        match self.raw.entries.get(key).and_then(|e| e.line) {
            Some(line) => format!("line {line}: `{key}`"),
            None => format!("`{key}`"),
        }
    }

    fn parsed<T>(&mut self, key: &str, what: &str, f: impl FnOnce(&str) -> Option<T>) -> Option<T> {
        let value = self.raw.get(key)?;
        match f(value) {
            Some(v) => Some(v),
            None => {
                self.problems.push(format!("{}: `{value}` is not {what}", self.where_(key)));
                None
            }
        }
    }

    fn uint(&mut self, key: &str, default: usize) -> usize {
        self.parsed(key, "a non-negative integer", |v| v.parse().ok()).unwrap_or(default)
    }

    fn seed(&mut self, key: &str) -> u64 {
        self.parsed(key, "a non-negative integer", |v| v.parse().ok()).unwrap_or(0)
    }

    fn real(&mut self, key: &str, default: f64) -> f64 {
        self.parsed(key, "a finite number", |v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .unwrap_or(default)
    }

    fn list(&mut self, key: &str) -> Option<Vec<f64>> {
        self.parsed(key, "a comma-separated list of numbers", parse_list)
    }

    fn from_str<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        self.parsed(key, what, |v| v.parse().ok())
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.problems.push(msg());
        }
    }
}

fn parse_list(v: &str) -> Option<Vec<f64>> {
    v.split(',')
        .map(|x| x.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect()
}

/// Task-suite settings. `dim` and `centers` apply to quadratic suites; the
/// cluster fields to classification suites.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub kind: SuiteKind,
    pub num_tasks: usize,
    pub seed: u64,
    pub centers: Vec<Vec<f64>>,
    pub cluster: ClusterParams,
    pub hidden: usize,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    pub finetune_batch_size: Option<usize>,
}

impl SuiteConfig {
    pub fn build(&self) -> Result<TaskSuite> {
        match self.kind {
            SuiteKind::Quadratic => TaskSuite::quadratic(self.centers.clone()),
            SuiteKind::ClusterClassification => TaskSuite::cluster_classification(self.cluster.clone(), self.seed),
        }
    }

    pub fn pretrain_gd(&self) -> GdConfig {
        GdConfig {
            steps: self.pretrain_steps,
            lr: self.pretrain_lr,
            batch_size: None,
            seed: self.seed,
        }
    }

    pub fn finetune_gd(&self) -> GdConfig {
        GdConfig {
            steps: self.finetune_steps,
            lr: self.finetune_lr,
            batch_size: self.finetune_batch_size,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Points per simplex edge of the evaluation grid.
    pub grid_resolution: usize,
    /// Hypervolume reference; derived from the evaluated points when absent.
    pub reference: Option<Vec<f64>>,
    pub mc_samples: usize,
    pub hv_seed: u64,
}

/// A fully resolved experiment.
///
/// | key                         | default                                          |
/// |-----------------------------|--------------------------------------------------|
/// | `suite.kind`                | required: `quadratic` or `cluster-classification` |
/// | `suite.T`                   | required, at least 2                             |
/// | `suite.dim`                 | `T`                                              |
/// | `suite.seed`                | 0                                                |
/// | `suite.centers`             | unit vectors `e_1..e_T`, written `1,0; 0,1`      |
/// | `suite.n_per_task`          | 256                                              |
/// | `suite.separation`          | 1.5                                              |
/// | `suite.noise`               | 1.0                                              |
/// | `suite.hidden`              | 16                                               |
/// | `suite.pretrain_steps`      | 0 (quadratic), 300 (classification)              |
/// | `suite.pretrain_lr`         | 0.1                                              |
/// | `suite.finetune_steps`      | 500 (quadratic), 300 (classification)            |
/// | `suite.finetune_lr`         | 0.1                                              |
/// | `suite.finetune_batch_size` | full batch                                       |
/// | `train.steps`               | 2000 (quadratic), 4000 (classification)          |
/// | `train.lr`                  | 0.05                                             |
/// | `train.batch_size`          | 32 (quadratic), 128 (classification)             |
/// | `train.mode`                | `ls`                                             |
/// | `train.dirichlet_alpha`     | 1                                                |
/// | `train.seed`                | 0                                                |
/// | `train.epo_tol`             | 1e-3                                             |
/// | `train.preference`          | uniform                                          |
/// | `merge.method`              | `task-arithmetic`                                |
/// | `merge.lambda`              | 1.0 for Ties on two tasks, else 0.6              |
/// | `merge.trim_fraction`       | 0.2                                              |
/// | `merge.fisher_samples`      | 256                                              |
/// | `upscale.strategy`          | `all-layers`                                     |
/// | `upscale.lambda`            | 0.6                                              |
/// | `upscale.router_std`        | 0.01                                             |
/// | `upscale.seed`              | 0                                                |
/// | `eval.grid_resolution`      | 11                                               |
/// | `eval.reference`            | 1.1 × component-wise maximum of evaluated losses |
/// | `eval.mc_samples`           | 100000                                           |
/// | `eval.hv_seed`              | 0                                                |
/// | `paths.workdir`             | `.`                                              |
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub suite: SuiteConfig,
    pub train: TrainConfig,
    /// Preference for joint baselines.
    pub preference: Preference,
    pub merge: MergeConfig,
    pub upscale: UpscaleConfig,
    pub eval: EvalConfig,
    pub workdir: PathBuf,
    /// Digest of the effective raw configuration.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::resolve(&RawConfig::parse(text)?)
    }

    /// Reads a file, applies overrides, and resolves.
    pub fn load<S: AsRef<str>>(path: &Path, overrides: &[S]) -> Result<Self> {
        let mut raw = RawConfig::load(path)?;
        raw.set_all(overrides)?;
        Self::resolve(&raw)
    }

    pub fn resolve(raw: &RawConfig) -> Result<Self> {
        let mut r = Reader {
            raw,
            problems: Vec::new(),
        };
        if raw.get("suite.kind").is_none() {
            r.problems.push("`suite.kind` is required".into());
        }
        if raw.get("suite.T").is_none() {
            r.problems.push("`suite.T` is required".into());
        }
        let kind: SuiteKind = r
            .from_str("suite.kind", "`quadratic` or `cluster-classification`")
            .unwrap_or(SuiteKind::Quadratic);
        let quadratic = kind == SuiteKind::Quadratic;
        let t = r.uint("suite.T", 2);
        r.check(raw.get("suite.T").is_none() || t >= 2, || format!("{}: need at least 2 tasks", r_where(raw, "suite.T")));
        let t = t.max(2);

        let dim = r.uint("suite.dim", t);
        let centers = match raw.get("suite.centers") {
            Some(text) => {
                let rows: Option<Vec<Vec<f64>>> = text.split(';').map(parse_list).collect();
                match rows {
                    Some(rows) => {
                        let ok = rows.len() == t && rows.iter().all(|c| c.len() == dim);
                        r.check(ok, || {
                            format!(
                                "{}: expected {t} centers of dimension {dim}",
                                r_where(raw, "suite.centers")
                            )
                        });
                        rows
                    }
                    None => {
                        r.problems.push(format!(
                            "{}: `{text}` is not a `;`-separated list of vectors",
                            r_where(raw, "suite.centers")
                        ));
                        Vec::new()
                    }
                }
            }
            None => {
                r.check(!quadratic || dim >= t, || {
                    format!("`suite.dim` = {dim} is too small for {t} unit-vector centers")
                });
                (0..t)
                    .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                    .collect()
            }
        };
        let cluster = ClusterParams {
            num_tasks: t,
            n_per_task: r.uint("suite.n_per_task", 256),
            separation: r.real("suite.separation", 1.5),
            noise: r.real("suite.noise", 1.0),
        };
        r.check(cluster.noise >= 0.0, || "`suite.noise` must be non-negative".into());
        let hidden = r.uint("suite.hidden", 16);
        r.check(hidden >= 1, || "`suite.hidden` must be at least 1".into());
        let finetune_batch_size = r.parsed("suite.finetune_batch_size", "a positive integer", |v| {
            v.parse::<usize>().ok().filter(|&b| b > 0)
        });
        let suite = SuiteConfig {
            kind,
            num_tasks: t,
            seed: r.seed("suite.seed"),
            centers,
            cluster,
            hidden,
            pretrain_steps: r.uint("suite.pretrain_steps", if quadratic { 0 } else { 300 }),
            pretrain_lr: r.real("suite.pretrain_lr", 0.1),
            finetune_steps: r.uint("suite.finetune_steps", if quadratic { 500 } else { 300 }),
            finetune_lr: r.real("suite.finetune_lr", 0.1),
            finetune_batch_size,
        };
        r.check(suite.pretrain_lr > 0.0, || "`suite.pretrain_lr` must be positive".into());
        r.check(suite.finetune_lr > 0.0, || "`suite.finetune_lr` must be positive".into());

        let train = TrainConfig {
            steps: r.uint("train.steps", if quadratic { 2000 } else { 4000 }),
            lr: r.real("train.lr", 0.05),
            batch_size: r.uint("train.batch_size", if quadratic { 32 } else { 128 }),
            mode: r.from_str("train.mode", "one of `ls`, `epo`, `mgda`").unwrap_or(Scalarization::Ls),
            dirichlet_alpha: r.real("train.dirichlet_alpha", 1.0),
            seed: r.seed("train.seed"),
            epo_tol: r.real("train.epo_tol", DEFAULT_EPO_TOL),
        };
        if let Err(Error::Config(p)) = train.validate() {
            r.problems.extend(p);
        }
        let preference = match r.list("train.preference") {
            Some(v) if v.len() == t => match Preference::new(v) {
                Ok(p) => p,
                Err(e) => {
                    r.problems.push(format!("{}: {e}", r_where(raw, "train.preference")));
                    Preference::uniform(t)
                }
            },
            Some(v) => {
                r.problems.push(format!(
                    "{}: has {} entries, expected {t}",
                    r_where(raw, "train.preference"),
                    v.len()
                ));
                Preference::uniform(t)
            }
            None => Preference::uniform(t),
        };

        let method = r
            .from_str("merge.method", "one of `average`, `task-arithmetic`, `ties`, `fisher`, `regmean`")
            .unwrap_or(MergeMethod::TaskArithmetic);
        let defaults = MergeConfig::defaults(method, t);
        let merge = MergeConfig {
            method,
            lambda: r.real("merge.lambda", defaults.lambda),
            trim_fraction: r.real("merge.trim_fraction", defaults.trim_fraction),
            fisher_samples: r.uint("merge.fisher_samples", defaults.fisher_samples),
        };
        if let Err(Error::Config(p)) = merge.validate() {
            r.problems.extend(p);
        }

        let upscale = UpscaleConfig {
            strategy: r
                .from_str("upscale.strategy", "a strategy")
                .unwrap_or(UpscaleStrategy::AllLayers),
            lambda: r.real("upscale.lambda", 0.6),
            router_std: r.real("upscale.router_std", ROUTER_INIT_STD),
            seed: r.seed("upscale.seed"),
        };
        r.check(upscale.router_std > 0.0, || "`upscale.router_std` must be positive".into());

        let eval = EvalConfig {
            grid_resolution: r.uint("eval.grid_resolution", 11),
            reference: r.list("eval.reference"),
            mc_samples: r.uint("eval.mc_samples", 100_000),
            hv_seed: r.seed("eval.hv_seed"),
        };
        r.check(eval.grid_resolution >= 2, || "`eval.grid_resolution` must be at least 2".into());
        r.check(eval.mc_samples >= 1, || "`eval.mc_samples` must be at least 1".into());
        if let Some(reference) = &eval.reference {
            r.check(reference.len() == t, || {
                format!("`eval.reference` has {} entries, expected {t}", reference.len())
            });
        }

        let workdir = PathBuf::from(raw.get("paths.workdir").unwrap_or("."));
        if r.problems.is_empty() {
            Ok(Self {
                suite,
                train,
                preference,
                merge,
                upscale,
                eval,
                workdir,
                hash: raw.hash(),
            })
        } else {
            Err(Error::Config(r.problems))
        }
    }
}

fn r_where(raw: &RawConfig, key: &str) -> String {
    Reader {
        raw,
        problems: Vec::new(),
    }
    .where_(key)
}
