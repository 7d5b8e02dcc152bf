//! Evaluation helpers shared by the command line, the examples and the tests:
//! fronts over preference grids, naive interpolation fronts, λ sweeps and
//! hypervolume summaries.

use crate::error::{Error, Result};
use crate::export::SweepRow;
use crate::merge::{task_arithmetic, task_vectors, ties_merging};
use crate::moe::UpscaledModel;
use crate::nn::ParamVector;
use crate::pareto::{extract_front, hypervolume, FrontPoint, Hypervolume, HypervolumeMethod};
use crate::scalarize::Preference;
use crate::tasks::{Realization, TaskSuite};

/// Held-out losses (and accuracies, when the suite has them) of one model.
pub fn evaluate_point(
    suite: &TaskSuite,
    realization: &Realization,
    params: &ParamVector,
    preference: Option<&[f64]>,
) -> Result<FrontPoint> {
    let eval = suite.evaluate(realization, params)?;
    let mut point = FrontPoint::new(eval.losses);
    if let Some(r) = preference {
        point = point.with_preference(r);
    }
    if let Some(acc) = eval.accuracies {
        point = point.with_metrics(acc);
    }
    Ok(point)
}

/// Unloads `model` at every preference and evaluates the result.
pub fn moe_front(model: &UpscaledModel, suite: &TaskSuite, preferences: &[Preference]) -> Result<Vec<FrontPoint>> {
    preferences
        .iter()
        .map(|r| evaluate_point(suite, model.realization(), &model.unload(r)?, Some(r)))
        .collect()
}

/// Evaluates `(1 - t)·a + t·b` for `n` evenly spaced `t ∈ [0, 1]`. Each
/// point carries the preference `(1 - t, t)`.
pub fn interpolation_front(
    suite: &TaskSuite,
    realization: &Realization,
    a: &ParamVector,
    b: &ParamVector,
    n: usize,
) -> Result<Vec<FrontPoint>> {
    if n < 2 {
        return Err(Error::Domain("interpolation needs at least two points".into()));
    }
    a.layout().ensure_same(b.layout())?;
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            let values = a.values().iter().zip(b.values()).map(|(x, y)| (1.0 - t) * x + t * y).collect();
            let params = ParamVector::new(a.layout().clone(), values)?;
            evaluate_point(suite, realization, &params, Some(&[1.0 - t, t]))
        })
        .collect()
}

/// `λ ∈ {0, 0.1, …, 1.0}`.
pub fn sweep_lambdas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Held-out losses of task arithmetic and Ties over `lambdas`.
pub fn lambda_sweep(
    suite: &TaskSuite,
    realization: &Realization,
    pretrained: &ParamVector,
    finetuned: &[ParamVector],
    lambdas: &[f64],
    trim_fraction: f64,
) -> Result<Vec<SweepRow>> {
    let dict = task_vectors(pretrained, finetuned)?;
    let mut rows = Vec::with_capacity(2 * lambdas.len());
    for (method, ties) in [("task-arithmetic", false), ("ties", true)] {
        for &lambda in lambdas {
            let merged = if ties {
                ties_merging(pretrained, &dict, trim_fraction, lambda)?
            } else {
                task_arithmetic(pretrained, &dict, lambda)?
            };
            let losses = suite.evaluate(realization, &merged)?.losses;
            rows.push(SweepRow {
                lambda,
                method: method.to_string(),
                mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
                losses,
            });
        }
    }
    Ok(rows)
}

/// `factor` times the component-wise maximum over every point, nudged so
/// each point strictly dominates it even when a maximum is zero.
pub fn reference_point(points: &[&[f64]], factor: f64) -> Result<Vec<f64>> {
    let first = points
        .first()
        .ok_or_else(|| Error::Domain("reference point of no points".into()))?;
    let mut max = first.to_vec();
    for p in points {
        if p.len() != max.len() {
            return Err(Error::Domain("points have different objective counts".into()));
        }
        for (m, v) in max.iter_mut().zip(*p) {
            *m = m.max(*v);
        }
    }
    Ok(max.into_iter().map(|m| m + (factor - 1.0) * m.abs() + 1e-12).collect())
}

/// Hypervolume summary of a point set against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontSummary {
    pub hypervolume: Hypervolume,
    /// Non-dominated points among those inside the reference box.
    pub front_size: usize,
    /// Points that do not dominate the reference and were left out.
    pub outside: usize,
}

/// Exact for two objectives, Monte Carlo with `mc_samples` draws otherwise.
pub fn summarize(points: &[FrontPoint], reference: &[f64], mc_samples: usize, seed: u64) -> Result<FrontSummary> {
    let inside: Vec<FrontPoint> = points
        .iter()
        .filter(|p| p.losses.len() == reference.len() && p.losses.iter().zip(reference).all(|(a, b)| a < b))
        .cloned()
        .collect();
    let outside = points.len() - inside.len();
    if inside.is_empty() {
        return Ok(FrontSummary {
            hypervolume: Hypervolume {
                value: 0.0,
                std_error: 0.0,
            },
            front_size: 0,
            outside,
        });
    }
    let front = extract_front(inside)?;
    let method = if reference.len() == 2 {
        HypervolumeMethod::Exact2d
    } else {
        HypervolumeMethod::MonteCarlo {
            samples: mc_samples,
            seed,
        }
    };
    Ok(FrontSummary {
        hypervolume: hypervolume(&front.losses(), reference, method)?,
        front_size: front.points.len(),
        outside,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phi(v: &[f64]) -> ParamVector {
        ParamVector::new(Realization::Identity { dim: v.len() }.layout(), v.to_vec()).unwrap()
    }

    #[test]
    fn interpolation_traces_the_segment() {
        let suite = TaskSuite::quadratic(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let real = suite.realization(0).unwrap();
        let pts = interpolation_front(&suite, &real, &phi(&[1.0, 0.0]), &phi(&[0.0, 1.0]), 3).unwrap();
        assert_eq!(pts[0].losses, vec![0.0, 2.0]);
        assert_eq!(pts[1].losses, vec![0.5, 0.5]);
        assert_eq!(pts[1].preference.as_deref(), Some(&[0.5, 0.5][..]));
        assert_eq!(pts[2].losses, vec![2.0, 0.0]);
    }

    #[test]
    fn symmetric_sweep_bottoms_out_at_one_half() {
        let suite = TaskSuite::quadratic(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let real = suite.realization(0).unwrap();
        let base = phi(&[0.0, 0.0]);
        let rows = lambda_sweep(&suite, &real, &base, &[phi(&[1.0, 0.0]), phi(&[0.0, 1.0])], &sweep_lambdas(), 1.0).unwrap();
        assert_eq!(rows.len(), 22);
        let ta: Vec<&SweepRow> = rows.iter().filter(|r| r.method == "task-arithmetic").collect();
        let best = ta.iter().min_by(|a, b| a.mean_loss.total_cmp(&b.mean_loss)).unwrap();
        assert_eq!(best.lambda, 0.5);
        // mean loss of (λ, λ) against e_1 and e_2 is (1 - λ)² + λ²
        for r in ta {
            let l = r.lambda;
            assert!((r.mean_loss - ((1.0 - l) * (1.0 - l) + l * l)).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_and_summary() {
        let pts = [vec![0.0, 2.0], vec![1.0, 1.0], vec![2.0, 0.0], vec![1.5, 1.5]];
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let reference = reference_point(&refs, 1.5).unwrap();
        assert!((reference[0] - 3.0).abs() < 1e-9 && (reference[1] - 3.0).abs() < 1e-9);
        let fp: Vec<FrontPoint> = pts.iter().cloned().map(FrontPoint::new).collect();
        let s = summarize(&fp, &[3.0, 3.0], 1, 0).unwrap();
        assert_eq!(s.front_size, 3);
        assert_eq!(s.outside, 0);
        // staircase: 3·1 + 2·1 + 1·1
        assert!((s.hypervolume.value - 6.0).abs() < 1e-12);
        let s = summarize(&fp, &[1.8, 1.8], 1, 0).unwrap();
        assert_eq!(s.outside, 2);
        assert!((s.hypervolume.value - 0.64).abs() < 1e-12);
    }
}
