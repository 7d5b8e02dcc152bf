//! The `pwe` command line: one subcommand per pipeline stage, all reading and
//! writing files under the work directory.
//!
//! | subcommand      | reads                               | writes                                   |
//! |-----------------|-------------------------------------|------------------------------------------|
//! | `gen-tasks`     |                                     | `suite.json`                             |
//! | `finetune`      | `suite.json`                        | `pretrained.ckpt`, `finetuned_{t}.ckpt`  |
//! | `merge`         | fine-tuned checkpoints              | `merged_{method}.ckpt`, `distances.csv`  |
//! | `upscale`       | fine-tuned checkpoints              | `upscaled.ckpt`                          |
//! | `train-routers` | `upscaled.ckpt`                     | `trained.ckpt`, `trainlog.csv`           |
//! | `baseline`      | `pretrained.ckpt`                   | `baseline_{mode}.ckpt`, `baseline_{mode}_trainlog.csv` |
//! | `eval-front`    | any checkpoint (`trained.ckpt`)     | `front.csv`                              |
//! | `dump-routing`  | an up-scaled checkpoint             | `routing.csv`                            |
//! | `sweep-lambda`  | fine-tuned checkpoints              | `sweep.csv`                              |
//!
//! Exit status is 0 on success, 1 on domain, file and numeric errors, and 2
//! on configuration or usage errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{Checkpoint, CheckpointBody, Provenance};
use crate::config::{ExperimentConfig, SEED_KEYS};
use crate::error::{Error, Result};
use crate::experiment::{evaluate_point, lambda_sweep, moe_front, reference_point, summarize, sweep_lambdas};
use crate::export::{select_lambda, write_distance_matrix, write_front, write_routing, write_sweep};
use crate::merge::{
    fisher_merge, param_distance_matrix, regmean_checkpoints, simple_average, task_arithmetic, task_vectors,
    ties_merging, MergeMethod,
};
use crate::moe::{routing_table, upscale, with_unit_preferences};
use crate::nn::ParamVector;
use crate::pareto::{preference_grid, FrontPoint};
use crate::tasks::{finetune, pretrain, Realization, TaskSuite};
use crate::train::{train_joint, train_routers};

#[derive(Debug, Parser)]
#[command(name = "pwe", version, about = "Pareto set approximation by fusing fine-tuned checkpoints")]
pub struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. `train.lr=0.01`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Set every seed in the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Work directory; overrides `paths.workdir`.
    #[arg(long, global = true, value_name = "PATH")]
    pub workdir: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the task suite.
    GenTasks,
    /// Pre-train, then fine-tune one checkpoint per task.
    Finetune {
        /// Fine-tune only this task.
        #[arg(long)]
        task: Option<usize>,
    },
    /// Merge the fine-tuned checkpoints with `merge.method`.
    Merge,
    /// Up-scale the selected layers into routed MoE layers.
    Upscale,
    /// Train the routers of `upscaled.ckpt`.
    TrainRouters,
    /// Train one full model at `train.preference` with `train.mode`.
    Baseline,
    /// Evaluate a checkpoint over the preference grid.
    EvalFront {
        #[arg(long, default_value = "trained.ckpt")]
        checkpoint: String,
        #[arg(long, default_value = "front.csv")]
        out: String,
    },
    /// Write the routing weights for unit preferences and the grid.
    DumpRouting {
        #[arg(long, default_value = "trained.ckpt")]
        checkpoint: String,
        #[arg(long, default_value = "routing.csv")]
        out: String,
    },
    /// Sweep λ for task arithmetic and Ties.
    SweepLambda,
}

/// Parses `args` (including the program name), runs, and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                Error::Config(problems) => {
                    eprintln!("error: invalid configuration");
                    for p in problems {
                        eprintln!("  {p}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            e.exit_code()
        }
    }
}

/// Loads the configuration `cli` describes, with `--seed` and `--workdir`
/// applied after every `--set`.
pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config(vec!["--config PATH is required".into()]))?;
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.extend(SEED_KEYS.iter().map(|k| format!("{k}={seed}")));
    }
    if let Some(dir) = &cli.workdir {
        overrides.push(format!("paths.workdir={}", dir.display()));
    }
    ExperimentConfig::load(path, &overrides)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let ctx = Context {
        cfg: &cfg,
        quiet: cli.quiet,
    };
    fs::create_dir_all(&cfg.workdir).map_err(|e| Error::file(&cfg.workdir, e))?;
    match &cli.command {
        Command::GenTasks => ctx.gen_tasks(),
        Command::Finetune { task } => ctx.finetune(*task),
        Command::Merge => ctx.merge(),
        Command::Upscale => ctx.upscale(),
        Command::TrainRouters => ctx.train_routers(),
        Command::Baseline => ctx.baseline(),
        Command::EvalFront { checkpoint, out } => ctx.eval_front(checkpoint, out),
        Command::DumpRouting { checkpoint, out } => ctx.dump_routing(checkpoint, out),
        Command::SweepLambda => ctx.sweep_lambda(),
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    quiet: bool,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::file(path, e))
}

impl Context<'_> {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.workdir.join(name)
    }

    fn provenance(&self, seed: u64) -> Provenance {
        Provenance {
            config_hash: self.cfg.hash.clone(),
            seed,
        }
    }

    fn suite(&self) -> Result<(TaskSuite, Realization)> {
        let path = self.path("suite.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let suite: TaskSuite = serde_json::from_str(&text)?;
        if suite.num_tasks() != self.cfg.suite.num_tasks {
            return Err(Error::Domain(format!(
                "{} holds {} tasks but the configuration asks for {}",
                path.display(),
                suite.num_tasks(),
                self.cfg.suite.num_tasks
            )));
        }
        let realization = suite.realization(self.cfg.suite.hidden)?;
        Ok((suite, realization))
    }

    fn plain(&self, name: &str, realization: &Realization) -> Result<ParamVector> {
        let ckpt = Checkpoint::load(&self.path(name))?;
        if &ckpt.realization != realization {
            return Err(Error::Domain(format!("{name} was trained with a different realization")));
        }
        ckpt.into_plain()
    }

    fn checkpoints(&self, realization: &Realization) -> Result<(ParamVector, Vec<ParamVector>)> {
        let pretrained = self.plain("pretrained.ckpt", realization)?;
        let finetuned = (0..self.cfg.suite.num_tasks)
            .map(|t| self.plain(&format!("finetuned_{t}.ckpt"), realization))
            .collect::<Result<Vec<_>>>()?;
        Ok((pretrained, finetuned))
    }

    fn report(&self, label: &str, point: &FrontPoint) {
        let mut line = format!("{label}: losses {}", fmt_vec(&point.losses));
        if let Some(m) = &point.metrics {
            line.push_str(&format!(", accuracies {}", fmt_vec(m)));
        }
        self.say(line);
    }

    fn gen_tasks(&self) -> Result<()> {
        let suite = self.cfg.suite.build()?;
        let path = self.path("suite.json");
        fs::write(&path, serde_json::to_string(&suite)?).map_err(|e| Error::file(&path, e))?;
        self.say(format!("wrote {} ({} tasks, {})", path.display(), suite.num_tasks(), suite.kind()));
        Ok(())
    }

    fn finetune(&self, task: Option<usize>) -> Result<()> {
        let (suite, real) = self.suite()?;
        let tasks: Vec<usize> = match task {
            Some(t) if t < suite.num_tasks() => vec![t],
            Some(t) => return Err(Error::Domain(format!("task {t} out of range for {} tasks", suite.num_tasks()))),
            None => (0..suite.num_tasks()).collect(),
        };
        let s = &self.cfg.suite;
        let pretrained = pretrain(&suite, &real, s.seed, &s.pretrain_gd())?.params;
        Checkpoint::plain(real.clone(), pretrained.clone(), self.provenance(s.seed))?.save(&self.path("pretrained.ckpt"))?;
        self.report("pretrained", &evaluate_point(&suite, &real, &pretrained, None)?);
        for t in tasks {
            let params = finetune(&suite, &real, &pretrained, t, &s.finetune_gd())?.params;
            self.report(&format!("finetuned_{t}"), &evaluate_point(&suite, &real, &params, None)?);
            Checkpoint::plain(real.clone(), params, self.provenance(s.seed))?.save(&self.path(&format!("finetuned_{t}.ckpt")))?;
        }
        Ok(())
    }

    fn merge(&self) -> Result<()> {
        let (suite, real) = self.suite()?;
        let (pretrained, finetuned) = self.checkpoints(&real)?;
        let m = &self.cfg.merge;
        let merged = match m.method {
            MergeMethod::Average => simple_average(&finetuned)?,
            MergeMethod::TaskArithmetic => task_arithmetic(&pretrained, &task_vectors(&pretrained, &finetuned)?, m.lambda)?,
            MergeMethod::Ties => ties_merging(&pretrained, &task_vectors(&pretrained, &finetuned)?, m.trim_fraction, m.lambda)?,
            MergeMethod::Fisher => {
                let fishers = finetuned
                    .iter()
                    .enumerate()
                    .map(|(t, p)| suite.empirical_fisher(t, &real, p, m.fisher_samples, self.cfg.suite.seed))
                    .collect::<Result<Vec<_>>>()?;
                let out = fisher_merge(&finetuned, &fishers)?;
                if out.fallback_coordinates > 0 {
                    self.say(format!("{} coordinates fell back to the plain average", out.fallback_coordinates));
                }
                out.params
            }
            MergeMethod::Regmean => {
                let grams = finetuned
                    .iter()
                    .enumerate()
                    .map(|(t, p)| suite.layer_grams(t, &real, p))
                    .collect::<Result<Vec<_>>>()?;
                regmean_checkpoints(&finetuned, &grams)?
            }
        };
        self.report(&format!("merged ({})", m.method), &evaluate_point(&suite, &real, &merged, None)?);
        let out = self.path(&format!("merged_{}.ckpt", m.method));
        Checkpoint::plain(real.clone(), merged, self.provenance(self.cfg.suite.seed))?.save(&out)?;
        self.say(format!("wrote {}", out.display()));

        let layers: Vec<String> = real.layout().names().map(str::to_string).collect();
        let matrix = param_distance_matrix(&finetuned, &layers)?;
        let names: Vec<String> = (0..finetuned.len()).map(|t| format!("finetuned_{t}")).collect();
        let path = self.path("distances.csv");
        write_distance_matrix(create(&path)?, &names, &matrix)?;
        self.say(format!("wrote {}", path.display()));
        Ok(())
    }

    fn upscale(&self) -> Result<()> {
        let (_, real) = self.suite()?;
        let (pretrained, finetuned) = self.checkpoints(&real)?;
        let model = upscale(&real, &pretrained, &finetuned, &self.cfg.upscale)?;
        let layers: Vec<&str> = model.moe_layers().iter().map(|m| m.name()).collect();
        self.say(format!(
            "up-scaled layers [{}] with {} trainable router parameters",
            layers.join(", "),
            model.trainable_param_count()
        ));
        let path = self.path("upscaled.ckpt");
        Checkpoint::upscaled(model, self.provenance(self.cfg.upscale.seed)).save(&path)?;
        self.say(format!("wrote {}", path.display()));
        Ok(())
    }

    fn train_routers(&self) -> Result<()> {
        let (suite, _) = self.suite()?;
        let model = Checkpoint::load(&self.path("upscaled.ckpt"))?.into_upscaled()?;
        let (model, log) = train_routers(model, &suite, &self.cfg.train)?;
        if let Some((first, last)) = log.trend(0.1) {
            self.say(format!(
                "{} steps: mean aggregate loss {first:.6} over the first 10% of steps, {last:.6} over the last 10%",
                log.records.len()
            ));
        }
        let path = self.path("trainlog.csv");
        log.write_csv(create(&path)?)?;
        let ckpt = self.path("trained.ckpt");
        Checkpoint::upscaled(model, self.provenance(self.cfg.train.seed)).save(&ckpt)?;
        self.say(format!("wrote {} and {}", ckpt.display(), path.display()));
        Ok(())
    }

    fn baseline(&self) -> Result<()> {
        let (suite, real) = self.suite()?;
        let pretrained = self.plain("pretrained.ckpt", &real)?;
        let mode = self.cfg.train.mode;
        let (params, log) = train_joint(&suite, &real, &pretrained, mode, &self.cfg.preference, &self.cfg.train)?;
        self.report(
            &format!("baseline {mode} at {}", fmt_vec(&self.cfg.preference)),
            &evaluate_point(&suite, &real, &params, None)?,
        );
        let path = self.path(&format!("baseline_{mode}_trainlog.csv"));
        log.write_csv(create(&path)?)?;
        let ckpt = self.path(&format!("baseline_{mode}.ckpt"));
        Checkpoint::plain(real, params, self.provenance(self.cfg.train.seed))?.save(&ckpt)?;
        self.say(format!("wrote {} and {}", ckpt.display(), path.display()));
        Ok(())
    }

    fn eval_front(&self, checkpoint: &str, out: &str) -> Result<()> {
        let (suite, _) = self.suite()?;
        let ckpt = Checkpoint::load(&self.path(checkpoint))?;
        let real = ckpt.realization.clone();
        let t = suite.num_tasks();
        let points = match ckpt.body {
            CheckpointBody::Upscaled(model) => {
                let grid = preference_grid(t, self.cfg.eval.grid_resolution)?;
                moe_front(&model, &suite, &grid)?
            }
            CheckpointBody::Plain(params) => vec![evaluate_point(&suite, &real, &params, None)?],
        };
        let path = self.path(out);
        write_front(create(&path)?, t, &points)?;
        let losses: Vec<&[f64]> = points.iter().map(|p| p.losses.as_slice()).collect();
        let reference = match &self.cfg.eval.reference {
            Some(r) => r.clone(),
            None => reference_point(&losses, 1.1)?,
        };
        let s = summarize(&points, &reference, self.cfg.eval.mc_samples, self.cfg.eval.hv_seed)?;
        let mut line = format!(
            "{} points, {} non-dominated, hypervolume {:.6} against {}",
            points.len(),
            s.front_size,
            s.hypervolume.value,
            fmt_vec(&reference)
        );
        if s.hypervolume.std_error > 0.0 {
            line.push_str(&format!(" (± {:.6})", s.hypervolume.std_error));
        }
        if s.outside > 0 {
            line.push_str(&format!("; {} points outside the reference box", s.outside));
        }
        self.say(line);
        self.say(format!("wrote {}", path.display()));
        Ok(())
    }

    fn dump_routing(&self, checkpoint: &str, out: &str) -> Result<()> {
        let model = Checkpoint::load(&self.path(checkpoint))?.into_upscaled()?;
        let t = model.num_tasks();
        let grid: Vec<Vec<f64>> = preference_grid(t, self.cfg.eval.grid_resolution)?
            .into_iter()
            .map(Vec::from)
            .collect();
        let rows = routing_table(&model, &with_unit_preferences(t, &grid))?;
        let path = self.path(out);
        write_routing(create(&path)?, t, &rows)?;
        self.say(format!("wrote {} ({} rows)", path.display(), rows.len()));
        Ok(())
    }

    fn sweep_lambda(&self) -> Result<()> {
        let (suite, real) = self.suite()?;
        let (pretrained, finetuned) = self.checkpoints(&real)?;
        let rows = lambda_sweep(&suite, &real, &pretrained, &finetuned, &sweep_lambdas(), self.cfg.merge.trim_fraction)?;
        let path = self.path("sweep.csv");
        write_sweep(create(&path)?, suite.num_tasks(), &rows)?;
        for method in ["task-arithmetic", "ties"] {
            let file = fs::File::open(&path).map_err(|e| Error::file(&path, e))?;
            self.say(format!("{method}: selected λ = {}", select_lambda(file, Some(method))?));
        }
        self.say(format!("wrote {}", path.display()));
        Ok(())
    }
}
