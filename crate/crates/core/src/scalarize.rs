//! Gradient-combination schemes for multi-objective descent.
//!
//! * linear scalarization: `Σ r_t l_t`
//! * EPO-style balancing driven by the non-uniformity
//!   `KL(l̂ ‖ 1/T)` with `l̂_t = r_t l_t / Σ_j r_j l_j`
//! * MGDA: the minimum-norm point of the convex hull of task gradients

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|Σ r - 1|` for anything that claims to lie on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Smallest coordinate of a sampled or gridded preference.
pub const PREFERENCE_FLOOR: f64 = 1e-9;

/// Checks that `r` is a point of the probability simplex (zeros allowed).
pub fn check_simplex(r: &[f64]) -> Result<()> {
    if r.is_empty() {
        return Err(Error::Domain("empty preference vector".into()));
    }
    if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain(format!("preference {r:?} has negative or non-finite entries")));
    }
    let sum: f64 = r.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!("preference {r:?} sums to {sum}, not 1")));
    }
    Ok(())
}

/// A strictly positive point on the `(T-1)`-simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Preference(Vec<f64>);

impl TryFrom<Vec<f64>> for Preference {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Preference::new(v)
    }
}

impl From<Preference> for Vec<f64> {
    fn from(p: Preference) -> Self {
        p.0
    }
}

impl Preference {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        check_simplex(&r)?;
        if r.iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain(format!("preference {r:?} must be strictly positive")));
        }
        Ok(Self(r))
    }

    pub fn uniform(num_tasks: usize) -> Self {
        Self(vec![1.0 / num_tasks as f64; num_tasks])
    }

    /// Normalizes non-negative weights after raising every entry to at least
    /// [`PREFERENCE_FLOOR`].
    pub fn clamped(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!("cannot normalize weights {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Domain("weights sum to zero".into()));
        }
        let raised: Vec<f64> = weights.iter().map(|w| (w / sum).max(PREFERENCE_FLOOR)).collect();
        let total: f64 = raised.iter().sum();
        Ok(Self(raised.into_iter().map(|v| v / total).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for Preference {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Non-negative, finite task losses.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveVector(Vec<f64>);

impl ObjectiveVector {
    pub fn new(l: Vec<f64>) -> Result<Self> {
        if l.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!("losses {l:?} must be finite and non-negative")));
        }
        Ok(Self(l))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for ObjectiveVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Domain(format!("length mismatch: {a} losses vs {b} weights")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scalarization {
    Ls,
    Epo,
    Mgda,
}

impl std::str::FromStr for Scalarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" => Ok(Self::Ls),
            "epo" => Ok(Self::Epo),
            "mgda" => Ok(Self::Mgda),
            other => Err(Error::Domain(format!("unknown scalarization `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scalarization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ls => "ls",
            Self::Epo => "epo",
            Self::Mgda => "mgda",
        })
    }
}

pub fn ls_scalarize(l: &ObjectiveVector, r: &Preference) -> Result<f64> {
    check_lengths(l.len(), r.len())?;
    Ok(l.iter().zip(r.iter()).map(|(li, ri)| ri * li).sum())
}

/// `KL(l̂ ‖ uniform)`, with `0 ln 0 = 0`.
pub fn non_uniformity(l: &ObjectiveVector, r: &Preference) -> Result<f64> {
    check_lengths(l.len(), r.len())?;
    let weighted: Vec<f64> = l.iter().zip(r.iter()).map(|(li, ri)| ri * li).collect();
    let total: f64 = weighted.iter().sum();
    if total <= 0.0 {
        return Err(Error::Domain("non-uniformity undefined for all-zero weighted losses".into()));
    }
    let t = l.len() as f64;
    let mu: f64 = weighted
        .iter()
        .map(|w| w / total)
        .filter(|&h| h > 0.0)
        .map(|h| h * (t * h).ln())
        .sum();
    Ok(mu.max(0.0))
}

/// EPO step weights.
///
/// `tol` is compared against the normalized non-uniformity `μ / ln T`, which
/// lies in `[0, 1]`. Within tolerance the preference itself is returned (pure
/// descent). Otherwise the weights favour objectives whose share `l̂_j` exceeds
/// the preference-balanced level: `a_j ∝ max(0, r_j (ln(T l̂_j) - μ)) + 1e-12`.
pub fn epo_step_weights(l: &ObjectiveVector, r: &Preference, tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("EPO tolerance must be positive, got {tol}")));
    }
    let mu = non_uniformity(l, r)?;
    let t = l.len() as f64;
    if mu <= tol * t.ln() {
        return Ok(r.to_vec());
    }
    const ETA: f64 = 1e-12;
    let total: f64 = l.iter().zip(r.iter()).map(|(li, ri)| ri * li).sum();
    let raw: Vec<f64> = l
        .iter()
        .zip(r.iter())
        .map(|(li, ri)| {
            let share = ri * li / total;
            let push = if share > 0.0 { ri * ((t * share).ln() - mu) } else { 0.0 };
            push.max(0.0) + ETA
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / sum).collect())
}

/// `Σ_t weights[t] * grads[t]`.
pub fn combine(weights: &[f64], grads: &[Vec<f64>]) -> Vec<f64> {
    let n = grads.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for (w, g) in weights.iter().zip(grads) {
        for (o, gi) in out.iter_mut().zip(g) {
            *o += w * gi;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_gradients(grads: &[Vec<f64>]) -> Result<()> {
    if grads.len() < 2 {
        return Err(Error::Domain("MGDA needs at least two gradients".into()));
    }
    let n = grads[0].len();
    if grads.iter().any(|g| g.len() != n) {
        return Err(Error::Domain("gradients differ in length".into()));
    }
    Ok(())
}

/// Min-norm convex combination of task gradients.
///
/// Two gradients use the closed form
/// `γ_2 = clip((g1 - g2)·g1 / ‖g1 - g2‖², 0, 1)`; identical gradients give
/// uniform weights. More gradients go through [`frank_wolfe_min_norm`].
pub fn mgda_weights(grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_gradients(grads)?;
    if grads.len() == 2 {
        let (g1, g2) = (&grads[0], &grads[1]);
        let diff: Vec<f64> = g1.iter().zip(g2).map(|(a, b)| a - b).collect();
        let denom = dot(&diff, &diff);
        if denom == 0.0 {
            return Ok(vec![0.5, 0.5]);
        }
        let gamma2 = (dot(&diff, g1) / denom).clamp(0.0, 1.0);
        return Ok(vec![1.0 - gamma2, gamma2]);
    }
    Ok(frank_wolfe_min_norm(grads, 10_000, 1e-8)?.weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinNormSolution {
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub duality_gap: f64,
}

/// Away-step Frank–Wolfe on `min_{γ ∈ Δ} ‖Σ γ_t g_t‖²` with exact line
/// search, starting from uniform weights. Stops when the Frank–Wolfe duality
/// gap drops to `gap_tol` or after `max_iter` iterations.
pub fn frank_wolfe_min_norm(
    grads: &[Vec<f64>],
    max_iter: usize,
    gap_tol: f64,
) -> Result<MinNormSolution> {
    check_gradients(grads)?;
    let t = grads.len();
    let gram: Vec<Vec<f64>> = grads
        .iter()
        .map(|a| grads.iter().map(|b| dot(a, b)).collect())
        .collect();
    let mut gamma = vec![1.0 / t as f64; t];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        // m = M γ is half the objective gradient; vv = γᵀ M γ
        let m: Vec<f64> = gram.iter().map(|row| dot(row, &gamma)).collect();
        let vv = dot(&gamma, &m);
        let fw = (0..t).min_by(|&a, &b| m[a].total_cmp(&m[b])).expect("t >= 2");
        gap = 2.0 * (vv - m[fw]);
        if gap <= gap_tol {
            break;
        }
        let away = (0..t)
            .filter(|&k| gamma[k] > 0.0)
            .max_by(|&a, &b| m[a].total_cmp(&m[b]))
            .expect("weights sum to one");
        let away_gap = 2.0 * (m[away] - vv);

        // direction d and the largest feasible step along it
        let mut d: Vec<f64> = gamma.iter().map(|g| -g).collect();
        let max_step;
        if gap >= away_gap || gamma[away] >= 1.0 {
            d[fw] += 1.0;
            max_step = 1.0;
        } else {
            d.iter_mut().for_each(|v| *v = -*v);
            d[away] -= 1.0;
            max_step = gamma[away] / (1.0 - gamma[away]);
        }
        let slope = dot(&d, &m);
        let curvature: f64 = (0..t)
            .map(|i| d[i] * dot(&gram[i], &d))
            .sum();
        if curvature <= 0.0 || slope >= 0.0 {
            break;
        }
        let step = (-slope / curvature).min(max_step);
        for (g, di) in gamma.iter_mut().zip(&d) {
            *g = (*g + step * di).max(0.0);
        }
        let s: f64 = gamma.iter().sum();
        gamma.iter_mut().for_each(|g| *g /= s);
        iterations += 1;
    }
    Ok(MinNormSolution {
        weights: gamma,
        iterations,
        duality_gap: gap.max(0.0),
    })
}
