//! Task vectors and merge baselines.
//!
//! All functions here are pure and operate on [`ParamVector`]s that share one
//! layout. Dataset-dependent inputs (Fisher diagonals, input Gram matrices)
//! are computed by [`crate::tasks`] and passed in.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layout, ParamVector};

/// Columns `τ_i = φ_i - φ_0` over a shared base `φ_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVectorDictionary {
    base: ParamVector,
    columns: Vec<ParamVector>,
}

impl TaskVectorDictionary {
    pub fn base(&self) -> &ParamVector {
        &self.base
    }

    pub fn columns(&self) -> &[ParamVector] {
        &self.columns
    }

    pub fn num_tasks(&self) -> usize {
        self.columns.len()
    }

    /// `(|φ|, T)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.base.len(), self.columns.len())
    }

    /// The dictionary restricted to the named segments.
    pub fn restrict<S: AsRef<str>>(&self, names: &[S]) -> Result<TaskVectorDictionary> {
        Ok(TaskVectorDictionary {
            base: self.base.restrict(names)?,
            columns: self
                .columns
                .iter()
                .map(|c| c.restrict(names))
                .collect::<Result<_>>()?,
        })
    }

    /// `φ_0 + D w`.
    pub fn decode(&self, w: &[f64]) -> Result<ParamVector> {
        if w.len() != self.columns.len() {
            return Err(Error::Domain(format!(
                "{} routing weights for {} task vectors",
                w.len(),
                self.columns.len()
            )));
        }
        let mut out = self.base.clone();
        for (col, &wi) in self.columns.iter().zip(w) {
            for (o, t) in out.values_mut().iter_mut().zip(col.values()) {
                *o += wi * t;
            }
        }
        Ok(out)
    }

    /// `Dᵀ g`, the pull-back of a gradient on `φ` to the routing weights.
    pub fn transpose_apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.base.len() {
            return Err(Error::Domain(format!(
                "gradient of length {} for a dictionary of height {}",
                g.len(),
                self.base.len()
            )));
        }
        Ok(self
            .columns
            .iter()
            .map(|c| c.values().iter().zip(g).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub(crate) fn from_parts(base: ParamVector, columns: Vec<ParamVector>) -> Result<Self> {
        for c in &columns {
            base.layout().ensure_same(c.layout())?;
        }
        Ok(Self { base, columns })
    }
}

fn ensure_shared_layout(checkpoints: &[ParamVector]) -> Result<&Layout> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::Domain("no checkpoints given".into()))?;
    for c in &checkpoints[1..] {
        first.layout().ensure_same(c.layout())?;
    }
    Ok(first.layout())
}

pub fn task_vectors(base: &ParamVector, checkpoints: &[ParamVector]) -> Result<TaskVectorDictionary> {
    if checkpoints.is_empty() {
        return Err(Error::Domain("no checkpoints given".into()));
    }
    let columns = checkpoints
        .iter()
        .map(|c| c.sub(base))
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskVectorDictionary {
        base: base.clone(),
        columns,
    })
}

pub fn simple_average(checkpoints: &[ParamVector]) -> Result<ParamVector> {
    let layout = ensure_shared_layout(checkpoints)?.clone();
    // summing each coordinate in sorted order makes the result independent of
    // the order the checkpoints were given in, down to the last bit
    let mut column = Vec::with_capacity(checkpoints.len());
    let values = (0..layout.total_len())
        .map(|i| {
            column.clear();
            column.extend(checkpoints.iter().map(|c| c.values()[i]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / checkpoints.len() as f64
        })
        .collect();
    ParamVector::new(layout, values)
}

fn check_base(base: &ParamVector, dict: &TaskVectorDictionary) -> Result<()> {
    base.layout().ensure_same(dict.base.layout())?;
    if base.values() != dict.base.values() {
        return Err(Error::Domain("dictionary was built over a different base".into()));
    }
    Ok(())
}

/// `φ_0 + λ Σ_i τ_i`.
pub fn task_arithmetic(base: &ParamVector, dict: &TaskVectorDictionary, lambda: f64) -> Result<ParamVector> {
    check_base(base, dict)?;
    if !lambda.is_finite() {
        return Err(Error::Domain(format!("scaling coefficient {lambda} is not finite")));
    }
    dict.decode(&vec![lambda; dict.num_tasks()])
}

/// Trim, elect sign, disjoint mean.
///
/// Each task vector keeps its `⌈k·n⌉` largest-magnitude entries (ties broken
/// by position). Per coordinate the elected sign is the sign of the sum of
/// trimmed values; a zero sum merges to 0. The merged value is the mean of the
/// nonzero trimmed entries carrying the elected sign.
pub fn ties_merging(
    base: &ParamVector,
    dict: &TaskVectorDictionary,
    trim_fraction: f64,
    lambda: f64,
) -> Result<ParamVector> {
    check_base(base, dict)?;
    if !(trim_fraction > 0.0 && trim_fraction <= 1.0) {
        return Err(Error::Domain(format!("trim fraction {trim_fraction} outside (0, 1]")));
    }
    let n = base.len();
    // guard against k·n landing a hair above an integer
    let keep = ((trim_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1));
    let trimmed: Vec<Vec<f64>> = dict
        .columns
        .iter()
        .map(|col| {
            let v = col.values();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
            let mut out = vec![0.0; n];
            for &i in order.iter().take(keep) {
                out[i] = v[i];
            }
            out
        })
        .collect();
    let mut merged = base.clone();
    for (i, m) in merged.values_mut().iter_mut().enumerate() {
        let sum: f64 = trimmed.iter().map(|t| t[i]).sum();
        if sum == 0.0 {
            continue;
        }
        let (acc, count) = trimmed
            .iter()
            .map(|t| t[i])
            .filter(|&x| x != 0.0 && (x > 0.0) == (sum > 0.0))
            .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
        if count > 0 {
            *m += lambda * acc / count as f64;
        }
    }
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMerge {
    pub params: ParamVector,
    /// Coordinates whose summed Fisher fell below the guard and were averaged.
    pub fallback_coordinates: usize,
}

/// Guard on the summed Fisher below which a coordinate is simply averaged.
pub const FISHER_EPS: f64 = 1e-8;

/// `Σ_i F_i ⊙ φ_i / Σ_i F_i` per coordinate.
pub fn fisher_merge(checkpoints: &[ParamVector], fishers: &[ParamVector]) -> Result<FisherMerge> {
    let layout = ensure_shared_layout(checkpoints)?.clone();
    if fishers.len() != checkpoints.len() {
        return Err(Error::Domain(format!(
            "{} Fisher diagonals for {} checkpoints",
            fishers.len(),
            checkpoints.len()
        )));
    }
    for f in fishers {
        layout.ensure_same(f.layout())?;
        if f.values().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain("Fisher diagonal must be finite and non-negative".into()));
        }
    }
    let n = checkpoints.len() as f64;
    let mut fallback = 0;
    let values = (0..layout.total_len())
        .map(|i| {
            let total: f64 = fishers.iter().map(|f| f.values()[i]).sum();
            if total < FISHER_EPS {
                fallback += 1;
                checkpoints.iter().map(|c| c.values()[i]).sum::<f64>() / n
            } else {
                fishers
                    .iter()
                    .zip(checkpoints)
                    .map(|(f, c)| f.values()[i] * c.values()[i])
                    .sum::<f64>()
                    / total
            }
        })
        .collect();
    Ok(FisherMerge {
        params: ParamVector::new(layout, values)?,
        fallback_coordinates: fallback,
    })
}

/// Symmetric positive semi-definite Gram matrix `XᵀX`, row-major `dim × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Gram {
    /// `XᵀX` over the rows of `x`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Domain("Gram rows must be nonempty and equally long".into()));
        }
        let mut values = vec![0.0; dim * dim];
        for r in rows {
            for i in 0..dim {
                for j in 0..dim {
                    values[i * dim + j] += r[i] * r[j];
                }
            }
        }
        Ok(Self { dim, values })
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.values)
    }
}

/// Solves `(Σ G_i) W = Σ G_i W_i` for one linear layer.
///
/// Weights are `(out, in)` row-major, so the system is solved for `Wᵀ`. If
/// `Σ G_i` is numerically singular a ridge `δ I` with
/// `δ = 1e-6 · trace(Σ G_i) / dim` is added before solving.
pub fn regmean_merge(weights: &[Vec<f64>], grams: &[Gram], out_dim: usize) -> Result<Vec<f64>> {
    if weights.is_empty() || weights.len() != grams.len() {
        return Err(Error::Domain("need one Gram matrix per weight matrix".into()));
    }
    let dim = grams[0].dim;
    for (w, g) in weights.iter().zip(grams) {
        if g.dim != dim || g.values.len() != dim * dim {
            return Err(Error::Domain("Gram matrices differ in dimension".into()));
        }
        if w.len() != out_dim * dim {
            return Err(Error::Domain(format!(
                "weight matrix has {} entries, expected {out_dim}x{dim}",
                w.len()
            )));
        }
    }
    let mut lhs = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DMatrix::<f64>::zeros(dim, out_dim);
    for (w, g) in weights.iter().zip(grams) {
        let gm = g.matrix();
        // (out, in) row-major is (in, out) column-major
        let wt = DMatrix::from_column_slice(dim, out_dim, w);
        rhs += &gm * wt;
        lhs += gm;
    }
    let solution = solve_spd(&lhs, &rhs).or_else(|| {
        let delta = 1e-6 * lhs.trace() / dim as f64;
        let ridge = &lhs + DMatrix::<f64>::identity(dim, dim) * delta;
        if delta > 0.0 {
            solve_spd(&ridge, &rhs)
        } else {
            None
        }
    });
    let x = solution
        .ok_or_else(|| Error::Numeric("RegMean system is singular even after regularization".into()))?;
    // back to (out, in) row-major
    Ok(x.as_slice().to_vec())
}

fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    // condition number of L squared; reject near-singular factorizations
    if !(min > 0.0) || (max / min).powi(2) > 1e12 {
        return None;
    }
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// RegMean over whole checkpoints. Layers with a Gram matrix per model are
/// merged by [`regmean_merge`]; every other segment is simply averaged.
///
/// A layer segment of shape `[out, in]` is treated as a weight matrix whose
/// inputs have dimension `in` (for dense layers this is the augmented `[x, 1]`
/// input, which merges weights and bias together).
pub fn regmean_checkpoints(
    checkpoints: &[ParamVector],
    grams: &[Vec<Option<Gram>>],
) -> Result<ParamVector> {
    let layout = ensure_shared_layout(checkpoints)?.clone();
    if grams.len() != checkpoints.len() {
        return Err(Error::Domain("need Gram matrices for every checkpoint".into()));
    }
    let mut merged = simple_average(checkpoints)?;
    for (li, entry) in layout.entries().iter().enumerate() {
        let per_model: Option<Vec<Gram>> = grams
            .iter()
            .map(|g| g.get(li).cloned().flatten())
            .collect();
        let Some(per_model) = per_model else { continue };
        if entry.shape.len() != 2 {
            return Err(Error::shape(&entry.name, "RegMean needs a matrix-shaped layer"));
        }
        let weights: Vec<Vec<f64>> = checkpoints
            .iter()
            .map(|c| c.segment(&entry.name).map(<[f64]>::to_vec))
            .collect::<Result<_>>()?;
        let w = regmean_merge(&weights, &per_model, entry.shape[0])?;
        merged.set_segment(&entry.name, &w)?;
    }
    Ok(merged)
}

/// `(i, j) = ‖φ_i - φ_j‖₂` over the selected segments.
pub fn param_distance_matrix(checkpoints: &[ParamVector], layers: &[String]) -> Result<Vec<Vec<f64>>> {
    if checkpoints.len() < 2 {
        return Err(Error::Domain("distance matrix needs at least two checkpoints".into()));
    }
    if layers.is_empty() {
        return Err(Error::Domain("empty layer selector".into()));
    }
    ensure_shared_layout(checkpoints)?;
    let n = checkpoints.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = checkpoints[i].distance(&checkpoints[j], Some(layers))?;
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMethod {
    Average,
    TaskArithmetic,
    Ties,
    Fisher,
    Regmean,
}

impl std::str::FromStr for MergeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Self::Average),
            "task-arithmetic" => Ok(Self::TaskArithmetic),
            "ties" => Ok(Self::Ties),
            "fisher" => Ok(Self::Fisher),
            "regmean" => Ok(Self::Regmean),
            other => Err(Error::Domain(format!("unknown merge method `{other}`"))),
        }
    }
}

impl std::fmt::Display for MergeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Average => "average",
            Self::TaskArithmetic => "task-arithmetic",
            Self::Ties => "ties",
            Self::Fisher => "fisher",
            Self::Regmean => "regmean",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeConfig {
    pub method: MergeMethod,
    pub lambda: f64,
    pub trim_fraction: f64,
    pub fisher_samples: usize,
}

impl MergeConfig {
    /// Defaults for `T` tasks: task arithmetic at λ = 0.6; Ties uses λ = 1 for
    /// two tasks.
    pub fn defaults(method: MergeMethod, num_tasks: usize) -> Self {
        let lambda = match method {
            MergeMethod::Ties if num_tasks == 2 => 1.0,
            _ => 0.6,
        };
        Self {
            method,
            lambda,
            trim_fraction: 0.2,
            fisher_samples: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !self.lambda.is_finite() {
            problems.push(format!("merge.lambda must be finite, got {}", self.lambda));
        }
        if !(self.trim_fraction > 0.0 && self.trim_fraction <= 1.0) {
            problems.push(format!("merge.trim_fraction must be in (0, 1], got {}", self.trim_fraction));
        }
        if self.fisher_samples == 0 {
            problems.push("merge.fisher_samples must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayoutEntry;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(
            Layout::new(vec![LayoutEntry::new("w", vec![v.len()])]).unwrap(),
            v.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn task_vector_examples() {
        let d = task_vectors(&pv(&[1.0, 2.0]), &[pv(&[3.0, 1.0]), pv(&[1.0, 2.0])]).unwrap();
        assert_eq!(d.columns()[0].values(), &[2.0, -1.0]);
        assert_eq!(d.columns()[1].values(), &[0.0, 0.0]);
        assert_eq!(d.shape(), (2, 2));
    }

    #[test]
    fn task_vectors_name_differing_layer() {
        let other = ParamVector::new(
            Layout::new(vec![LayoutEntry::new("v", vec![2])]).unwrap(),
            vec![0.0, 0.0],
        )
        .unwrap();
        match task_vectors(&pv(&[1.0, 2.0]), &[other]) {
            Err(Error::Layout(msg)) => assert!(msg.contains("`v`"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn average_examples() {
        assert_eq!(simple_average(&[pv(&[0.0]), pv(&[2.0])]).unwrap().values(), &[1.0]);
        let a = pv(&[0.3, -1.1]);
        assert_eq!(simple_average(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
        assert!(simple_average(&[]).is_err());
        let x = [pv(&[0.1, 5.0]), pv(&[0.7, -2.0]), pv(&[0.2, 0.4])];
        let y = [x[2].clone(), x[0].clone(), x[1].clone()];
        assert_eq!(simple_average(&x).unwrap(), simple_average(&y).unwrap());
    }

    #[test]
    fn task_arithmetic_examples() {
        let base = pv(&[0.0, 0.0]);
        let d = task_vectors(&base, &[pv(&[1.0, 0.0]), pv(&[0.0, 2.0])]).unwrap();
        let m = task_arithmetic(&base, &d, 0.6).unwrap();
        assert!((m.values()[0] - 0.6).abs() < 1e-15 && (m.values()[1] - 1.2).abs() < 1e-15);
        assert_eq!(task_arithmetic(&base, &d, 0.0).unwrap(), base);

        let b = pv(&[0.25, -3.0]);
        let ft = pv(&[1.5, 4.0]);
        let d = task_vectors(&b, &[ft.clone()]).unwrap();
        assert_eq!(task_arithmetic(&b, &d, 1.0).unwrap(), ft);
        assert_eq!(MergeConfig::defaults(MergeMethod::TaskArithmetic, 2).lambda, 0.6);
        assert_eq!(MergeConfig::defaults(MergeMethod::Ties, 2).lambda, 1.0);
    }

    #[test]
    fn ties_hand_case() {
        let base = pv(&[0.0, 0.0, 0.0]);
        let d = task_vectors(&base, &[pv(&[2.0, -1.0, 0.1]), pv(&[1.5, 1.0, -0.1])]).unwrap();
        let m = ties_merging(&base, &d, 2.0 / 3.0, 1.0).unwrap();
        assert_eq!(m.values(), &[1.75, 0.0, 0.0]);
    }

    #[test]
    fn ties_degenerate_cases() {
        let base = pv(&[0.5, -0.5]);
        let d = task_vectors(&base, &[base.clone(), base.clone()]).unwrap();
        assert_eq!(ties_merging(&base, &d, 0.2, 1.0).unwrap(), base);

        let d = task_vectors(&base, &[pv(&[1.5, 0.5]), pv(&[1.5, 0.5])]).unwrap();
        let m = ties_merging(&base, &d, 1.0, 0.7).unwrap();
        assert!((m.values()[0] - (0.5 + 0.7)).abs() < 1e-15);
        assert!((m.values()[1] - (-0.5 + 0.7)).abs() < 1e-15);
        assert!(ties_merging(&base, &d, 0.0, 1.0).is_err());
        assert!(ties_merging(&base, &d, 1.5, 1.0).is_err());
    }

    #[test]
    fn fisher_examples() {
        let m = fisher_merge(&[pv(&[0.0]), pv(&[1.0])], &[pv(&[1.0]), pv(&[3.0])]).unwrap();
        assert_eq!(m.params.values(), &[0.75]);

        let cps = [pv(&[0.2, -1.0]), pv(&[1.4, 3.0])];
        let eq = fisher_merge(&cps, &[pv(&[2.5, 0.3]), pv(&[2.5, 0.3])]).unwrap();
        let avg = simple_average(&cps).unwrap();
        for (a, b) in eq.params.values().iter().zip(avg.values()) {
            assert!((a - b).abs() < 1e-12);
        }

        let zero = fisher_merge(&cps, &[pv(&[0.0, 1.0]), pv(&[0.0, 1.0])]).unwrap();
        assert_eq!(zero.fallback_coordinates, 1);
        assert_eq!(zero.params.values()[0], avg.values()[0]);
    }

    #[test]
    fn regmean_examples() {
        let g1 = Gram { dim: 1, values: vec![1.0] };
        let g3 = Gram { dim: 1, values: vec![3.0] };
        let w = regmean_merge(&[vec![0.0], vec![1.0]], &[g1.clone(), g3], 1).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12);

        let g = Gram::from_rows(&[vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.7, 0.1]]).unwrap();
        let ws = vec![vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.0, 5.0, 2.0]];
        let m = regmean_merge(&ws, &[g.clone(), g.clone()], 2).unwrap();
        for (k, v) in m.iter().enumerate() {
            assert!((v - (ws[0][k] + ws[1][k]) / 2.0).abs() < 1e-12);
        }
        let single = regmean_merge(&ws[..1], &[g], 2).unwrap();
        for (a, b) in single.iter().zip(&ws[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn regmean_rank_deficient_gram_is_regularized() {
        // a single input direction: Σ G is rank one
        let g = Gram::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let ws = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let m = regmean_merge(&ws, &[g.clone(), g], 1).unwrap();
        assert!(m.iter().all(|v| v.is_finite()));
        // along the observed direction the merge agrees with the average
        assert!(((m[0] + m[1]) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn regmean_zero_gram_is_an_error() {
        let g = Gram { dim: 2, values: vec![0.0; 4] };
        assert!(matches!(
            regmean_merge(&[vec![1.0, 2.0]], &[g], 1),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn distance_examples() {
        let m = param_distance_matrix(&[pv(&[0.0, 0.0]), pv(&[3.0, 4.0])], &["w".to_string()]).unwrap();
        assert_eq!(m, vec![vec![0.0, 5.0], vec![5.0, 0.0]]);
        assert!(param_distance_matrix(&[pv(&[0.0]), pv(&[1.0])], &[]).is_err());
    }

    proptest! {
        #[test]
        fn task_arithmetic_affine_in_lambda(
            base in prop::collection::vec(-2.0f64..2.0, 4),
            a in prop::collection::vec(-2.0f64..2.0, 4),
            b in prop::collection::vec(-2.0f64..2.0, 4),
            l1 in -2.0f64..2.0,
            l2 in -2.0f64..2.0,
        ) {
            let base = pv(&base);
            let d = task_vectors(&base, &[pv(&a), pv(&b)]).unwrap();
            let o1 = task_arithmetic(&base, &d, l1).unwrap();
            let o2 = task_arithmetic(&base, &d, l2).unwrap();
            let om = task_arithmetic(&base, &d, (l1 + l2) / 2.0).unwrap();
            for i in 0..4 {
                let r = o1.values()[i] + o2.values()[i] - 2.0 * om.values()[i];
                prop_assert!(r.abs() < 1e-12);
            }
        }

        #[test]
        fn ties_full_keep_on_agreeing_signs_is_scaled_task_arithmetic(
            mags in prop::collection::vec(prop::collection::vec(0.01f64..2.0, 5), 2..5),
            signs in prop::collection::vec(any::<bool>(), 5),
            lambda in 0.1f64..2.0,
        ) {
            let t = mags.len();
            let base = pv(&[0.0; 5]);
            let cps: Vec<ParamVector> = mags
                .iter()
                .map(|m| pv(&m.iter().zip(&signs).map(|(v, s)| if *s { *v } else { -*v }).collect::<Vec<_>>()))
                .collect();
            let d = task_vectors(&base, &cps).unwrap();
            let ties = ties_merging(&base, &d, 1.0, lambda).unwrap();
            let ta = task_arithmetic(&base, &d, lambda / t as f64).unwrap();
            for (x, y) in ties.values().iter().zip(ta.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn fisher_is_a_convex_combination(
            phis in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..5),
            fs in prop::collection::vec(prop::collection::vec(0.0f64..5.0, 3), 5),
        ) {
            let cps: Vec<ParamVector> = phis.iter().map(|p| pv(p)).collect();
            let fis: Vec<ParamVector> = fs[..cps.len()].iter().map(|f| pv(f)).collect();
            let m = fisher_merge(&cps, &fis).unwrap();
            for i in 0..3 {
                let lo = phis.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
                let hi = phis.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
                let v = m.params.values()[i];
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn fisher_scale_invariant(
            phis in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..4),
            fs in prop::collection::vec(prop::collection::vec(0.1f64..5.0, 3), 4),
            scale in 0.01f64..100.0,
        ) {
            let cps: Vec<ParamVector> = phis.iter().map(|p| pv(p)).collect();
            let fis: Vec<ParamVector> = fs[..cps.len()].iter().map(|f| pv(f)).collect();
            let scaled: Vec<ParamVector> = fs[..cps.len()]
                .iter()
                .map(|f| pv(&f.iter().map(|v| v * scale).collect::<Vec<_>>()))
                .collect();
            let a = fisher_merge(&cps, &fis).unwrap();
            let b = fisher_merge(&cps, &scaled).unwrap();
            for (x, y) in a.params.values().iter().zip(b.params.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn distance_triangle_inequality(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 3..6),
        ) {
            let cps: Vec<ParamVector> = pts.iter().map(|p| pv(p)).collect();
            let d = param_distance_matrix(&cps, &["w".to_string()]).unwrap();
            let n = cps.len();
            for i in 0..n {
                prop_assert_eq!(d[i][i], 0.0);
                for j in 0..n {
                    prop_assert_eq!(d[i][j], d[j][i]);
                    for k in 0..n {
                        prop_assert!(d[i][k] <= d[i][j] + d[j][k] + 1e-12);
                    }
                }
            }
        }
    }
}
