//! Streaming kernel LDA over random features.
//!
//! Each class keeps a count, a weight sum and a mean; all classes share one
//! covariance. Updates arrive in batches of feature rows with labels and
//! per-sample weights in `[0, 1]` (all ones for labeled source data).
//!
//! Under [`CovarianceRule::Pooled`] the model keeps the exact shared scatter
//! `S = Σ_m Σ_i ω_i (Z_i − μ_m)(Z_i − μ_m)ᵀ` about the *current* class means,
//! so the result does not depend on how the data was split into batches. The
//! covariance is `S / N_total` for unweighted data and `S / (Σω − 1)` for
//! weighted data. When every class arrives in a single batch this coincides
//! with the recursive form
//! `A ← (N_prev/N_total)·A + (1/N_total)·Σ_i (Z_i − μ_m)(Z_i − μ_m)ᵀ`,
//! which is also available verbatim as [`CovarianceRule::Recursive`].

use std::collections::BTreeMap;

use faer::solvers::SpSolver;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = i32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    /// Labeled data: every weight must be exactly 1.
    Unweighted,
    /// Pseudo-labeled data with uncertainty weights.
    Weighted,
}

/// Divisor of the weighted class mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum MeanMode {
    /// `μ_m = (1/n_m) Σ ω_i Z_i`.
    #[default]
    Literal,
    /// `μ_m = (1/Σω_i) Σ ω_i Z_i`.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CovarianceRule {
    /// Exact pooled scatter about the current class means; batch-split invariant.
    #[default]
    Pooled,
    /// Decay-and-add recursion applied per batch with the updated class mean.
    Recursive,
}

/// Ridge added to the diagonal before solving for the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Ridge {
    /// `ε = factor · trace(A) / D`.
    Relative(f64),
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-4)
    }
}

impl Ridge {
    pub fn resolve(&self, covariance: ArrayView2<'_, f64>) -> f64 {
        match *self {
            Ridge::Relative(factor) => {
                let dim = covariance.nrows().max(1) as f64;
                factor * covariance.diag().sum() / dim
            }
            Ridge::Absolute(eps) => eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            Ridge::Relative(v) | Ridge::Absolute(v) => v,
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("ridge must be non-negative, got {v}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KldaConfig {
    pub weighting: Weighting,
    pub mean_mode: MeanMode,
    pub covariance_rule: CovarianceRule,
    pub ridge: Ridge,
}

impl KldaConfig {
    pub fn unweighted() -> Self {
        KldaConfig {
            weighting: Weighting::Unweighted,
            mean_mode: MeanMode::Literal,
            covariance_rule: CovarianceRule::Pooled,
            ridge: Ridge::default(),
        }
    }

    pub fn weighted(mean_mode: MeanMode) -> Self {
        KldaConfig {
            weighting: Weighting::Weighted,
            mean_mode,
            ..KldaConfig::unweighted()
        }
    }

    pub fn with_ridge(mut self, ridge: Ridge) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn with_rule(mut self, rule: CovarianceRule) -> Self {
        self.covariance_rule = rule;
        self
    }
}

/// Per-class statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub class_id: ClassId,
    pub mean: Array1<f64>,
    pub count: u64,
    pub weight_sum: f64,
    /// Weighted centroid `Σ ω Z / Σ ω`; differs from `mean` only in literal weighted mode.
    pub(crate) centroid: Array1<f64>,
}

impl ClassStats {
    pub fn empty(class_id: ClassId, dim: usize) -> Self {
        ClassStats {
            class_id,
            mean: Array1::zeros(dim),
            count: 0,
            weight_sum: 0.0,
            centroid: Array1::zeros(dim),
        }
    }

    pub fn centroid(&self) -> ArrayView1<'_, f64> {
        self.centroid.view()
    }

    /// Statistics after absorbing `rows` (with matching `weights`).
    fn absorb(
        &self,
        rows: ArrayView2<'_, f64>,
        weights: &[f64],
        config: &KldaConfig,
    ) -> ClassStats {
        let batch_weight: f64 = weights.iter().sum();
        let count = self.count + rows.nrows() as u64;
        let weight_sum = self.weight_sum + batch_weight;
        let mut centroid = self.centroid.clone();
        if weight_sum > 0.0 {
            // Welford-style shift of the centroid by the weighted residual.
            let mut shift = Array1::<f64>::zeros(centroid.len());
            for (row, &w) in rows.outer_iter().zip(weights) {
                if w != 0.0 {
                    shift.zip_mut_with(&row, |s, &z| *s += w * z);
                }
            }
            shift.zip_mut_with(&self.centroid, |s, &c| *s -= batch_weight * c);
            centroid.scaled_add(1.0 / weight_sum, &shift);
        }
        let mean = match (config.weighting, config.mean_mode) {
            (Weighting::Weighted, MeanMode::Literal) if count > 0 => {
                &centroid * (weight_sum / count as f64)
            }
            _ => centroid.clone(),
        };
        ClassStats {
            class_id: self.class_id,
            mean,
            count,
            weight_sum,
            centroid,
        }
    }
}

/// Feature rows with labels and per-sample weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBatch {
    features: Array2<f64>,
    labels: Vec<ClassId>,
    weights: Vec<f64>,
}

impl WeightedBatch {
    pub fn new(features: Array2<f64>, labels: Vec<ClassId>, weights: Vec<f64>) -> Result<Self> {
        if labels.len() != features.nrows() || weights.len() != features.nrows() {
            return Err(Error::shape(
                format!("{} labels and weights", features.nrows()),
                format!("{} labels, {} weights", labels.len(), weights.len()),
            ));
        }
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(0.0..=1.0).contains(*w))
        {
            return Err(Error::InvalidWeight { index, value });
        }
        Ok(WeightedBatch {
            features,
            labels,
            weights,
        })
    }

    /// Batch with every weight equal to 1.
    pub fn unit(features: Array2<f64>, labels: Vec<ClassId>) -> Result<Self> {
        let n = features.nrows();
        WeightedBatch::new(features, labels, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Rows of each class, in sample order, keyed by ascending class id.
    fn group(&self) -> BTreeMap<ClassId, Vec<usize>> {
        let mut groups: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, &label) in self.labels.iter().enumerate() {
            groups.entry(label).or_default().push(i);
        }
        groups
    }

    fn extract(&self, rows: &[usize]) -> (Array2<f64>, Vec<f64>) {
        (
            self.features.select(Axis(0), rows),
            rows.iter().map(|&i| self.weights[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Solution {
    class_ids: Vec<ClassId>,
    weights: Array2<f64>,
    bias: Array1<f64>,
    ridge: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KldaModel {
    config: KldaConfig,
    dim: usize,
    classes: BTreeMap<ClassId, ClassStats>,
    /// Pooled rule: shared scatter. Recursive rule: the covariance itself.
    second_moment: Array2<f64>,
    total_count: u64,
    prev_count: u64,
    total_weight: f64,
    solution: Option<Solution>,
}

impl KldaModel {
    pub fn new(dim: usize, config: KldaConfig) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        config.ridge.validate()?;
        Ok(KldaModel {
            config,
            dim,
            classes: BTreeMap::new(),
            second_moment: Array2::zeros((dim, dim)),
            total_count: 0,
            prev_count: 0,
            total_weight: 0.0,
            solution: None,
        })
    }

    pub(crate) fn from_parts(
        config: KldaConfig,
        dim: usize,
        classes: BTreeMap<ClassId, ClassStats>,
        second_moment: Array2<f64>,
        counts: (u64, u64),
        total_weight: f64,
    ) -> Result<Self> {
        let mut model = KldaModel::new(dim, config)?;
        if second_moment.dim() != (dim, dim) {
            return Err(Error::shape(
                format!("{dim}x{dim} matrix"),
                format!("{:?}", second_moment.dim()),
            ));
        }
        model.classes = classes;
        model.second_moment = second_moment;
        model.total_count = counts.0;
        model.prev_count = counts.1;
        model.total_weight = total_weight;
        Ok(model)
    }

    pub fn config(&self) -> &KldaConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class(&self, id: ClassId) -> Option<&ClassStats> {
        self.classes.get(&id)
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassStats> {
        self.classes.values()
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.keys().copied().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn prev_count(&self) -> u64 {
        self.prev_count
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub(crate) fn second_moment(&self) -> ArrayView2<'_, f64> {
        self.second_moment.view()
    }

    pub fn is_finalized(&self) -> bool {
        self.solution.is_some()
    }

    /// Class statistics `class_id` would have after `batch`, without mutating the model.
    pub fn update_mean(&self, batch: &WeightedBatch, class_id: ClassId) -> Result<ClassStats> {
        self.check_batch(batch)?;
        let rows: Vec<usize> = (0..batch.len())
            .filter(|&i| batch.labels[i] == class_id)
            .collect();
        if rows.len() != batch.len() {
            return Err(Error::invalid(format!(
                "batch carries labels other than class {class_id}"
            )));
        }
        let (features, weights) = batch.extract(&rows);
        let base = self
            .classes
            .get(&class_id)
            .cloned()
            .unwrap_or_else(|| ClassStats::empty(class_id, self.dim));
        Ok(base.absorb(features.view(), &weights, &self.config))
    }

    fn check_batch(&self, batch: &WeightedBatch) -> Result<()> {
        if self.solution.is_some() {
            return Err(Error::FrozenModel);
        }
        if batch.features.ncols() != self.dim {
            return Err(Error::shape(
                format!("{} feature columns", self.dim),
                format!("{}", batch.features.ncols()),
            ));
        }
        if self.config.weighting == Weighting::Unweighted {
            if let Some((index, &value)) =
                batch.weights.iter().enumerate().find(|(_, &w)| w != 1.0)
            {
                return Err(Error::InvalidWeight { index, value });
            }
        }
        Ok(())
    }

    /// Applies the mean and covariance updates for every class present in `batch`,
    /// in ascending class order.
    pub fn update(&mut self, batch: &WeightedBatch) -> Result<()> {
        self.check_batch(batch)?;
        if batch.is_empty() {
            return Ok(());
        }
        let groups = batch.group();
        if self.config.covariance_rule == CovarianceRule::Recursive
            && self.config.weighting == Weighting::Weighted
        {
            // Validate every scale factor before touching any state.
            let mut total = self.total_weight;
            for rows in groups.values() {
                total += rows.iter().map(|&i| batch.weights[i]).sum::<f64>();
                if total <= 1.0 {
                    return Err(Error::DegenerateScale { total_weight: total });
                }
            }
        }
        for (class_id, rows) in groups {
            let (features, weights) = batch.extract(&rows);
            self.update_class(class_id, features.view(), &weights);
        }
        Ok(())
    }

    fn update_class(&mut self, class_id: ClassId, rows: ArrayView2<'_, f64>, weights: &[f64]) {
        let old = self
            .classes
            .remove(&class_id)
            .unwrap_or_else(|| ClassStats::empty(class_id, self.dim));
        let new = old.absorb(rows, weights, &self.config);

        self.prev_count = self.total_count;
        self.total_count = self.prev_count + rows.nrows() as u64;
        self.total_weight += weights.iter().sum::<f64>();

        // Rows of sqrt(ω)·(Z − μ_new); the scatter increment is devᵀ·dev.
        let extra = usize::from(self.config.covariance_rule == CovarianceRule::Pooled);
        let mut dev = Array2::<f64>::zeros((rows.nrows() + extra, self.dim));
        for ((mut out, row), &w) in dev.outer_iter_mut().zip(rows.outer_iter()).zip(weights) {
            let s = w.sqrt();
            out.assign(&row);
            out -= &new.mean;
            out *= s;
        }

        match self.config.covariance_rule {
            CovarianceRule::Pooled => {
                // Re-centre the previously absorbed mass of this class from the
                // old mean onto the new one:
                //   + w_old (c_old − μ_new)(c_old − μ_new)ᵀ − w_old (c_old − μ_old)(c_old − μ_old)ᵀ
                if old.weight_sum > 0.0 {
                    let s = old.weight_sum.sqrt();
                    let mut last = dev.row_mut(rows.nrows());
                    last.assign(&old.centroid);
                    last -= &new.mean;
                    last *= s;
                    let stale = &old.centroid - &old.mean;
                    if stale.iter().any(|&v| v != 0.0) {
                        let stale = (stale * s).insert_axis(Axis(0));
                        general_mat_mul(-1.0, &stale.t(), &stale, 1.0, &mut self.second_moment);
                    }
                }
                general_mat_mul(1.0, &dev.t(), &dev, 1.0, &mut self.second_moment);
            }
            CovarianceRule::Recursive => {
                let decay = self.prev_count as f64 / self.total_count as f64;
                let scale = match self.config.weighting {
                    Weighting::Unweighted => 1.0 / self.total_count as f64,
                    Weighting::Weighted => 1.0 / (self.total_weight - 1.0),
                };
                general_mat_mul(scale, &dev.t(), &dev, decay, &mut self.second_moment);
            }
        }
        self.classes.insert(class_id, new);
    }

    /// The shared covariance `A`.
    pub fn covariance(&self) -> Result<Array2<f64>> {
        match (self.config.covariance_rule, self.config.weighting) {
            (CovarianceRule::Recursive, _) => Ok(self.second_moment.clone()),
            (CovarianceRule::Pooled, Weighting::Unweighted) => {
                if self.total_count == 0 {
                    Ok(Array2::zeros((self.dim, self.dim)))
                } else {
                    Ok(&self.second_moment / self.total_count as f64)
                }
            }
            (CovarianceRule::Pooled, Weighting::Weighted) => {
                if self.total_weight <= 1.0 {
                    Err(Error::DegenerateScale {
                        total_weight: self.total_weight,
                    })
                } else {
                    Ok(&self.second_moment / (self.total_weight - 1.0))
                }
            }
        }
    }

    /// Solves `(A + εI) w_m = μ_m` for every class and sets `b_m = −½ μ_mᵀ w_m`.
    pub fn finalize(&mut self) -> Result<()> {
        if self.solution.is_some() {
            return Ok(());
        }
        if self.classes.values().all(|c| c.count == 0) {
            return Err(Error::EmptyModel);
        }
        let covariance = self.covariance()?;
        let ridge = self.config.ridge.resolve(covariance.view());
        let means: Vec<ArrayView1<'_, f64>> = self.classes.values().map(|c| c.mean.view()).collect();
        let (weights, bias) = solve_classifier(covariance.view(), &means, ridge)?;
        self.solution = Some(Solution {
            class_ids: self.class_ids(),
            weights,
            bias,
            ridge,
        });
        Ok(())
    }

    /// Drops the solved classifier so further updates are accepted.
    pub fn reopen(&mut self) {
        self.solution = None;
    }

    fn solution(&self) -> Result<&Solution> {
        self.solution.as_ref().ok_or(Error::NotFinalized)
    }

    /// Classifier weights `W` (`D × M`, columns in ascending class order).
    pub fn weights(&self) -> Result<ArrayView2<'_, f64>> {
        Ok(self.solution()?.weights.view())
    }

    pub fn bias(&self) -> Result<ArrayView1<'_, f64>> {
        Ok(self.solution()?.bias.view())
    }

    pub fn ridge_used(&self) -> Result<f64> {
        Ok(self.solution()?.ridge)
    }

    /// `F = zᵀW + b` over all classes in ascending id order.
    pub fn scores(&self, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let sol = self.solution()?;
        self.check_dim(z.len())?;
        Ok(z.dot(&sol.weights) + &sol.bias)
    }

    /// Scores restricted to `class_ids`, in the given order.
    pub fn scores_for(&self, z: ArrayView1<'_, f64>, class_ids: &[ClassId]) -> Result<Array1<f64>> {
        let sol = self.solution()?;
        self.check_dim(z.len())?;
        class_ids
            .iter()
            .map(|id| {
                let col = sol
                    .class_ids
                    .binary_search(id)
                    .map_err(|_| Error::invalid(format!("class {id} is unknown to the model")))?;
                Ok(z.dot(&sol.weights.column(col)) + sol.bias[col])
            })
            .collect::<Result<Vec<f64>>>()
            .map(Array1::from)
    }

    /// Score matrix for a batch of feature rows (`n × M`).
    pub fn scores_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let sol = self.solution()?;
        self.check_dim(z.ncols())?;
        Ok(z.dot(&sol.weights) + &sol.bias)
    }

    /// Highest-scoring class; ties go to the lowest class id.
    pub fn predict(&self, z: ArrayView1<'_, f64>) -> Result<ClassId> {
        let scores = self.scores(z)?;
        let idx = argmax(scores.as_slice().expect("contiguous scores")).ok_or(Error::EmptyModel)?;
        Ok(self.solution()?.class_ids[idx])
    }

    pub fn predict_batch(&self, z: ArrayView2<'_, f64>) -> Result<Vec<ClassId>> {
        let scores = self.scores_batch(z)?;
        let ids = &self.solution()?.class_ids;
        Ok(scores
            .outer_iter()
            .map(|row| ids[argmax(row.as_slice().expect("contiguous")).expect("non-empty")])
            .collect())
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len == self.dim {
            Ok(())
        } else {
            Err(Error::shape(format!("{} features", self.dim), len))
        }
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Ridge-regularised SPD solve for the discriminant weights and biases.
pub fn solve_classifier(
    covariance: ArrayView2<'_, f64>,
    means: &[ArrayView1<'_, f64>],
    ridge: f64,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let dim = covariance.nrows();
    if covariance.ncols() != dim {
        return Err(Error::shape("square covariance", format!("{:?}", covariance.dim())));
    }
    if means.is_empty() {
        return Err(Error::EmptyModel);
    }
    if let Some(bad) = means.iter().find(|m| m.len() != dim) {
        return Err(Error::shape(format!("means of length {dim}"), bad.len()));
    }
    let lhs = faer::Mat::<f64>::from_fn(dim, dim, |i, j| {
        let sym = 0.5 * (covariance[[i, j]] + covariance[[j, i]]);
        if i == j {
            sym + ridge
        } else {
            sym
        }
    });
    let chol = lhs
        .cholesky(faer::Side::Lower)
        .map_err(|_| Error::SingularCovariance { ridge })?;
    let rhs = faer::Mat::<f64>::from_fn(dim, means.len(), |i, m| means[m][i]);
    let sol = chol.solve(&rhs);
    let weights = Array2::from_shape_fn((dim, means.len()), |(i, m)| sol.read(i, m));
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance { ridge });
    }
    let bias = Array1::from_iter(
        means
            .iter()
            .enumerate()
            .map(|(m, mu)| -0.5 * mu.dot(&weights.column(m))),
    );
    Ok((weights, bias))
}
