//! Pareto dominance, front extraction and front-quality measures.
//!
//! Everything here works in loss space: lower is better in every coordinate.
//! Score-like metrics (accuracy) are kept on [`FrontPoint::metrics`] and only
//! enter dominance checks through [`FrontPoint::negated_metrics`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalarize::{Preference, PREFERENCE_FLOOR};

/// `u` dominates `v`: no worse everywhere and strictly better somewhere.
pub fn dominates(u: &[f64], v: &[f64]) -> Result<bool> {
    if u.len() != v.len() {
        return Err(Error::Domain(format!(
            "cannot compare objective vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(dominates_unchecked(u, v))
}

fn dominates_unchecked(u: &[f64], v: &[f64]) -> bool {
    let mut strict = false;
    for (a, b) in u.iter().zip(v) {
        if a > b {
            return false;
        }
        if a < b {
            strict = true;
        }
    }
    strict
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontPoint {
    pub preference: Option<Vec<f64>>,
    pub losses: Vec<f64>,
    pub metrics: Option<Vec<f64>>,
}

impl FrontPoint {
    pub fn new(losses: Vec<f64>) -> Self {
        Self {
            preference: None,
            losses,
            metrics: None,
        }
    }

    pub fn with_preference(mut self, r: &[f64]) -> Self {
        self.preference = Some(r.to_vec());
        self
    }

    pub fn with_metrics(mut self, m: Vec<f64>) -> Self {
        self.metrics = Some(m);
        self
    }

    /// Metrics turned into minimization objectives, for fronts over scores.
    pub fn negated_metrics(&self) -> Option<FrontPoint> {
        self.metrics.as_ref().map(|m| FrontPoint {
            preference: self.preference.clone(),
            losses: m.iter().map(|v| -v).collect(),
            metrics: None,
        })
    }
}

/// A set of mutually non-dominated points, sorted lexicographically by loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFront {
    pub points: Vec<FrontPoint>,
    pub num_tasks: usize,
    pub provenance: String,
}

impl SampledFront {
    pub fn losses(&self) -> Vec<&[f64]> {
        self.points.iter().map(|p| p.losses.as_slice()).collect()
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Keeps exactly the non-dominated points, collapsing duplicate loss vectors.
///
/// A dominating point always precedes what it dominates in lexicographic
/// order, so one ordered pass against the kept set suffices.
pub fn extract_front(points: Vec<FrontPoint>) -> Result<SampledFront> {
    let Some(first) = points.first() else {
        return Err(Error::Domain("cannot extract a front from no points".into()));
    };
    let num_tasks = first.losses.len();
    if let Some(p) = points.iter().find(|p| p.losses.len() != num_tasks) {
        return Err(Error::Domain(format!(
            "point {:?} has {} objectives, expected {num_tasks}",
            p.losses,
            p.losses.len()
        )));
    }
    let mut sorted = points;
    sorted.sort_by(|a, b| lex_cmp(&a.losses, &b.losses));
    let mut kept: Vec<FrontPoint> = Vec::new();
    for p in sorted {
        let covered = kept
            .iter()
            .any(|k| k.losses == p.losses || dominates_unchecked(&k.losses, &p.losses));
        if !covered {
            kept.push(p);
        }
    }
    Ok(SampledFront {
        points: kept,
        num_tasks,
        provenance: String::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HypervolumeMethod {
    /// Sorted sweep; two objectives only.
    Exact2d,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypervolume {
    pub value: f64,
    /// Standard error of the Monte Carlo estimate; zero for exact methods.
    pub std_error: f64,
}

/// Volume of the region dominated by `points` and bounded by `reference`.
pub fn hypervolume(
    points: &[&[f64]],
    reference: &[f64],
    method: HypervolumeMethod,
) -> Result<Hypervolume> {
    if points.is_empty() {
        return Err(Error::Domain("hypervolume of an empty front".into()));
    }
    for p in points {
        if !dominates(p, reference)? {
            return Err(Error::Domain(format!(
                "point {p:?} does not dominate the reference {reference:?}"
            )));
        }
    }
    match method {
        HypervolumeMethod::Exact2d => {
            if reference.len() != 2 {
                return Err(Error::Domain("exact hypervolume needs two objectives".into()));
            }
            Ok(Hypervolume {
                value: sweep_2d(points, reference),
                std_error: 0.0,
            })
        }
        HypervolumeMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::Domain("Monte Carlo hypervolume needs samples".into()));
            }
            Ok(monte_carlo(points, reference, samples, seed))
        }
    }
}

fn sweep_2d(points: &[&[f64]], reference: &[f64]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    let mut best_y = reference[1];
    for (i, &(x, y)) in pts.iter().enumerate() {
        if y >= best_y {
            continue;
        }
        best_y = y;
        // width until the next point that improves y, or the reference
        let next_x = pts[i + 1..]
            .iter()
            .find(|q| q.1 < y)
            .map_or(reference[0], |q| q.0);
        area += (next_x - x) * (reference[1] - y);
    }
    area
}

fn monte_carlo(points: &[&[f64]], reference: &[f64], samples: usize, seed: u64) -> Hypervolume {
    let dim = reference.len();
    let lo: Vec<f64> = (0..dim)
        .map(|k| points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min))
        .collect();
    let volume: f64 = lo.iter().zip(reference).map(|(l, r)| r - l).product();
    if volume <= 0.0 {
        return Hypervolume {
            value: 0.0,
            std_error: 0.0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = vec![0.0; dim];
    let mut hits = 0usize;
    for _ in 0..samples {
        for k in 0..dim {
            sample[k] = lo[k] + (reference[k] - lo[k]) * rng.random::<f64>();
        }
        if points
            .iter()
            .any(|p| p.iter().zip(&sample).all(|(a, s)| a <= s))
        {
            hits += 1;
        }
    }
    let frac = hits as f64 / samples as f64;
    Hypervolume {
        value: frac * volume,
        std_error: volume * (frac * (1.0 - frac) / samples as f64).sqrt(),
    }
}

/// `max_{c ∈ candidate} min_{p ∈ reference} ‖c - p‖₂`.
///
/// One-sided: every candidate point must be close to some reference point,
/// not the other way round.
pub fn front_distance(candidate: &SampledFront, reference: &SampledFront) -> Result<f64> {
    if candidate.points.is_empty() || reference.points.is_empty() {
        return Err(Error::Domain("front distance needs two nonempty fronts".into()));
    }
    if candidate.num_tasks != reference.num_tasks {
        return Err(Error::Domain("fronts have different objective counts".into()));
    }
    let dist = candidate
        .points
        .iter()
        .map(|c| {
            reference
                .points
                .iter()
                .map(|p| {
                    c.losses
                        .iter()
                        .zip(&p.losses)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    Ok(dist)
}

/// Simplex lattice with denominator `resolution - 1`, first coordinate
/// descending; entries floored at 1e-9 and renormalized.
pub fn preference_grid(num_tasks: usize, resolution: usize) -> Result<Vec<Preference>> {
    if resolution < 2 {
        return Err(Error::Domain("grid resolution must be at least 2".into()));
    }
    if num_tasks < 1 {
        return Err(Error::Domain("grid needs at least one task".into()));
    }
    let denom = resolution - 1;
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(num_tasks);
    compositions(denom, num_tasks, &mut current, &mut |parts| {
        let raw: Vec<f64> = parts.iter().map(|&p| p as f64 / denom as f64).collect();
        out.push(raw);
    });
    out.into_iter()
        .map(|raw| {
            debug_assert!(PREFERENCE_FLOOR > 0.0);
            Preference::clamped(&raw)
        })
        .collect()
}

fn compositions(
    remaining: usize,
    parts: usize,
    current: &mut Vec<usize>,
    emit: &mut impl FnMut(&[usize]),
) {
    if parts == 1 {
        current.push(remaining);
        emit(current);
        current.pop();
        return;
    }
    for first in (0..=remaining).rev() {
        current.push(first);
        compositions(remaining - first, parts - 1, current, emit);
        current.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[&[f64]]) -> Vec<FrontPoint> {
        v.iter().map(|p| FrontPoint::new(p.to_vec())).collect()
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[1.0, 2.0], &[2.0, 3.0]).unwrap());
        assert!(!dominates(&[1.0, 3.0], &[2.0, 2.0]).unwrap());
        assert!(!dominates(&[2.0, 2.0], &[1.0, 3.0]).unwrap());
        assert!(!dominates(&[1.0, 1.0], &[1.0, 1.0]).unwrap());
        assert!(dominates(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn extract_front_examples() {
        let f = extract_front(pts(&[&[0.3, 0.4]])).unwrap();
        assert_eq!(f.points.len(), 1);

        let f = extract_front(pts(&[&[1.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(f.losses(), vec![&[0.0, 1.0][..], &[1.0, 0.0][..]]);

        let f = extract_front(pts(&[&[0.5, 0.5], &[0.5, 0.5], &[0.2, 0.9]])).unwrap();
        assert_eq!(f.points.len(), 2);

        assert!(extract_front(Vec::new()).is_err());
    }

    #[test]
    fn hypervolume_examples() {
        let hv = hypervolume(&[&[0.0, 0.0]], &[1.0, 1.0], HypervolumeMethod::Exact2d).unwrap();
        assert_eq!(hv.value, 1.0);
        let hv = hypervolume(
            &[&[0.0, 0.5], &[0.5, 0.0]],
            &[1.0, 1.0],
            HypervolumeMethod::Exact2d,
        )
        .unwrap();
        assert_eq!(hv.value, 0.75);
    }

    #[test]
    fn hypervolume_rejects_non_dominating_point() {
        let err = hypervolume(&[&[0.0, 1.5]], &[1.0, 1.0], HypervolumeMethod::Exact2d);
        assert!(matches!(err, Err(Error::Domain(msg)) if msg.contains("1.5")));
    }

    #[test]
    fn front_distance_examples() {
        let a = extract_front(pts(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_eq!(front_distance(&a, &a).unwrap(), 0.0);
        let c = extract_front(pts(&[&[1.0, 1.0]])).unwrap();
        assert_eq!(front_distance(&c, &a).unwrap(), 1.0);
    }

    #[test]
    fn grid_examples() {
        let g = preference_grid(2, 3).unwrap();
        assert_eq!(g.len(), 3);
        assert!((g[0][0] - 1.0).abs() < 1e-8 && g[0][1] > 0.0);
        assert_eq!(g[1].as_slice(), &[0.5, 0.5]);
        assert!((g[2][1] - 1.0).abs() < 1e-8);

        // C(resolution - 1 + T - 1, T - 1)
        assert_eq!(preference_grid(3, 11).unwrap().len(), 66);
        assert_eq!(preference_grid(4, 5).unwrap().len(), 35);
        for p in preference_grid(3, 7).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(preference_grid(2, 1).is_err());
    }

    proptest! {
        #[test]
        fn extract_front_idempotent(raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..40)) {
            let f = extract_front(raw.into_iter().map(FrontPoint::new).collect()).unwrap();
            let g = extract_front(f.points.clone()).unwrap();
            prop_assert_eq!(f, g);
        }

        #[test]
        fn hypervolume_monotone_under_insertion(
            raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..20),
            extra in (0.0f64..1.0, 0.0f64..1.0),
        ) {
            let reference = [1.0, 1.0];
            let base: Vec<Vec<f64>> = raw.iter().map(|&(a, b)| vec![a, b]).collect();
            let refs: Vec<&[f64]> = base.iter().map(Vec::as_slice).collect();
            let before = hypervolume(&refs, &reference, HypervolumeMethod::Exact2d).unwrap().value;
            let mut more = base.clone();
            more.push(vec![extra.0, extra.1]);
            let refs: Vec<&[f64]> = more.iter().map(Vec::as_slice).collect();
            let after = hypervolume(&refs, &reference, HypervolumeMethod::Exact2d).unwrap().value;
            prop_assert!(after >= before - 1e-15);
        }

        #[test]
        fn front_distance_order_invariant(
            a in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 1..15),
            b in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 1..15),
        ) {
            let mk = |v: &[Vec<f64>]| SampledFront {
                points: v.iter().cloned().map(FrontPoint::new).collect(),
                num_tasks: 2,
                provenance: String::new(),
            };
            let mut ar = a.clone();
            ar.reverse();
            let mut br = b.clone();
            br.reverse();
            prop_assert_eq!(front_distance(&mk(&a), &mk(&b)).unwrap(), front_distance(&mk(&ar), &mk(&br)).unwrap());
            prop_assert_eq!(front_distance(&mk(&a), &mk(&a)).unwrap(), 0.0);
        }
    }
}
