//! Source pretraining, source-free target adaptation and continual evaluation.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fap::{self, Grid};
use crate::fusion::{self, ProbVector};
use crate::klda::{ClassId, CovarianceRule, KldaConfig, KldaModel, MeanMode, Ridge, WeightedBatch};
use crate::rff::{RffMap, RffParams};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// Sample payload of a task.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    /// One embedding per row.
    Embeddings(Array2<f64>),
    /// Pre-augmented embeddings: rows `3i, 3i+1, 3i+2` hold the original,
    /// zeros and rand variants of sample `i`.
    Triples(Array2<f64>),
    /// Raw grids, flattened channel-major to form the embedding.
    Grids(Vec<Grid>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Embeddings(x) => x.nrows(),
            Samples::Triples(x) => x.nrows() / 3,
            Samples::Grids(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Embeddings of the original samples, rows `[start, end)`.
    fn originals(&self, start: usize, end: usize) -> Result<Array2<f64>> {
        match self {
            Samples::Embeddings(x) => Ok(x.slice(s![start..end, ..]).to_owned()),
            Samples::Triples(x) => Ok(x.slice(s![3 * start..3 * end;3, ..]).to_owned()),
            Samples::Grids(g) => stack_rows(g[start..end].iter().map(Grid::flatten)),
        }
    }

    /// Whether augmented variants exist: grids are augmented on the fly,
    /// triples carry them, plain embeddings have none.
    fn has_variants(&self) -> bool {
        !matches!(self, Samples::Embeddings(_))
    }

    /// Zeros and rand variants of sample `i`.
    fn variants(&self, i: usize, seed: u64, noise_scale: f64) -> Result<[Vec<f64>; 2]> {
        match self {
            Samples::Embeddings(_) => Err(Error::invalid("plain embeddings carry no augmented variants")),
            Samples::Triples(x) => Ok([x.row(3 * i + 1).to_vec(), x.row(3 * i + 2).to_vec()]),
            Samples::Grids(g) => {
                let aug = fap::augment(&g[i], seed, noise_scale)?;
                Ok([aug.zeros.flatten(), aug.rand.flatten()])
            }
        }
    }
}

fn stack_rows(rows: impl Iterator<Item = Vec<f64>>) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = rows.collect();
    let width = rows.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((rows.len(), width));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::shape(format!("row of length {width}"), row.len()));
        }
        out.row_mut(i).assign(&ndarray::ArrayView1::from(row.as_slice()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: usize,
    /// Sorted, distinct class ids.
    pub class_set: Vec<ClassId>,
    pub domain: Domain,
    pub samples: Samples,
    pub labels: Option<Vec<ClassId>>,
}

impl TaskSpec {
    pub fn new(
        task_id: usize,
        class_set: Vec<ClassId>,
        domain: Domain,
        samples: Samples,
        labels: Option<Vec<ClassId>>,
    ) -> Result<Self> {
        let mut sorted = class_set;
        sorted.sort_unstable();
        sorted.dedup();
        let task = TaskSpec {
            task_id,
            class_set: sorted,
            domain,
            samples,
            labels,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_set.is_empty() {
            return Err(Error::invalid(format!("task {} has an empty class set", self.task_id)));
        }
        if self.class_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "task {} class set must be sorted and distinct",
                self.task_id
            )));
        }
        if let Samples::Triples(x) = &self.samples {
            if x.nrows() % 3 != 0 {
                return Err(Error::shape("a multiple of 3 rows", x.nrows()));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(Error::shape(format!("{} labels", self.len()), labels.len()));
            }
            if let Some(bad) = labels.iter().find(|l| self.class_set.binary_search(l).is_err()) {
                return Err(Error::invalid(format!(
                    "label {bad} is outside the class set of task {}",
                    self.task_id
                )));
            }
        }
        Ok(())
    }

    fn require_labels(&self) -> Result<&[ClassId]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Protocol(format!("task {} has unlabeled samples", self.task_id)))
    }
}

/// Fails unless the class sets of `tasks` are pairwise disjoint.
pub fn check_disjoint(tasks: &[TaskSpec]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for task in tasks {
        for &c in &task.class_set {
            if !seen.insert(c) {
                return Err(Error::Protocol(format!(
                    "class {c} appears in more than one task (task {})",
                    task.task_id
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub rff: RffParams,
    pub ridge: Ridge,
    /// Softmax temperature applied to source KLDA scores.
    pub temperature: f64,
    pub threshold: f64,
    pub mean_mode: MeanMode,
    pub covariance_rule: CovarianceRule,
    pub augment: bool,
    pub noise_scale: f64,
    pub augment_seed: u64,
    pub batch_size: usize,
    /// Fuse with the zero-shot branch at test time as well.
    pub fused_inference: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rff: RffParams::new(2000, 1.0),
            ridge: Ridge::default(),
            temperature: 1.0,
            threshold: 0.0,
            mean_mode: MeanMode::Literal,
            covariance_rule: CovarianceRule::Pooled,
            augment: true,
            noise_scale: 0.1,
            augment_seed: 0,
            batch_size: 256,
            fused_inference: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.rff.validate()?;
        self.ridge.validate()?;
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid(format!("noise scale must be non-negative, got {}", self.noise_scale)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn source_config(&self) -> KldaConfig {
        KldaConfig::unweighted()
            .with_ridge(self.ridge)
            .with_rule(self.covariance_rule)
    }

    pub fn target_config(&self) -> KldaConfig {
        KldaConfig::weighted(self.mean_mode)
            .with_ridge(self.ridge)
            .with_rule(self.covariance_rule)
    }
}

/// Source of zero-shot class probabilities for individual samples.
pub trait ZeroShot {
    /// Probabilities over `classes` for sample `index` of `task`.
    fn probs(&self, task: &TaskSpec, index: usize, classes: &[ClassId]) -> Result<ProbVector>;
}

/// Uninformative zero-shot branch.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformZeroShot;

impl ZeroShot for UniformZeroShot {
    fn probs(&self, _task: &TaskSpec, _index: usize, classes: &[ClassId]) -> Result<ProbVector> {
        ProbVector::uniform(classes.len())
    }
}

/// Precomputed probability rows keyed by task id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    tables: BTreeMap<usize, (Vec<ClassId>, Array2<f64>)>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `rows` (one per sample, one column per entry of `classes`).
    pub fn insert(&mut self, task_id: usize, classes: Vec<ClassId>, rows: Array2<f64>) -> Result<()> {
        if rows.ncols() != classes.len() {
            return Err(Error::shape(format!("{} columns", classes.len()), rows.ncols()));
        }
        for (i, row) in rows.outer_iter().enumerate() {
            ProbVector::new(row.to_vec())
                .map_err(|e| Error::InvalidProbability(format!("task {task_id} row {i}: {e}")))?;
        }
        self.tables.insert(task_id, (classes, rows));
        Ok(())
    }

    pub fn get(&self, task_id: usize) -> Option<(&[ClassId], ArrayView2<'_, f64>)> {
        self.tables.get(&task_id).map(|(c, r)| (c.as_slice(), r.view()))
    }

    pub fn task_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.tables.keys().copied()
    }
}

impl ZeroShot for ScoreTable {
    fn probs(&self, task: &TaskSpec, index: usize, classes: &[ClassId]) -> Result<ProbVector> {
        let (columns, rows) = self
            .tables
            .get(&task.task_id)
            .ok_or_else(|| Error::Protocol(format!("no zero-shot scores for task {}", task.task_id)))?;
        if index >= rows.nrows() {
            return Err(Error::shape(format!("more than {index} score rows"), rows.nrows()));
        }
        let row = rows.row(index);
        if columns.as_slice() == classes {
            return ProbVector::new(row.to_vec());
        }
        let mut picked = Vec::with_capacity(classes.len());
        for c in classes {
            let j = columns.iter().position(|x| x == c).ok_or_else(|| {
                Error::Protocol(format!("zero-shot scores for task {} lack class {c}", task.task_id))
            })?;
            picked.push(row[j]);
        }
        let total: f64 = picked.iter().sum();
        if total <= 0.0 {
            return ProbVector::uniform(classes.len());
        }
        ProbVector::new(picked.into_iter().map(|p| p / total).collect())
    }
}

/// Zero-shot probabilities from image and class-text embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct VlmZeroShot {
    images: BTreeMap<usize, Array2<f64>>,
    texts: BTreeMap<ClassId, Vec<f64>>,
    tau: f64,
}

impl VlmZeroShot {
    pub fn new(texts: BTreeMap<ClassId, Vec<f64>>, tau: f64) -> Self {
        VlmZeroShot {
            images: BTreeMap::new(),
            texts,
            tau,
        }
    }

    pub fn insert_images(&mut self, task_id: usize, images: Array2<f64>) {
        self.images.insert(task_id, images);
    }
}

impl ZeroShot for VlmZeroShot {
    fn probs(&self, task: &TaskSpec, index: usize, classes: &[ClassId]) -> Result<ProbVector> {
        let images = self
            .images
            .get(&task.task_id)
            .ok_or_else(|| Error::Protocol(format!("no image embeddings for task {}", task.task_id)))?;
        if index >= images.nrows() {
            return Err(Error::shape(format!("more than {index} image rows"), images.nrows()));
        }
        let texts = classes
            .iter()
            .map(|c| {
                self.texts
                    .get(c)
                    .cloned()
                    .ok_or_else(|| Error::Protocol(format!("no text embedding for class {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        fusion::vlm_scores(&images.row(index).to_vec(), &texts, self.tau)
    }
}

/// Source model together with the feature map shared with the target.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: KldaModel,
    pub rff: RffMap,
}

fn input_dim(tasks: &[TaskSpec]) -> Result<usize> {
    let task = tasks.iter().find(|t| !t.is_empty()).ok_or(Error::EmptyModel)?;
    Ok(task.samples.originals(0, 1)?.ncols())
}

/// Trains the source model task by task. `observer` sees the finalized
/// model after every task.
pub fn pretrain_source_with(
    stream: &[TaskSpec],
    config: &RunConfig,
    mut observer: impl FnMut(&TaskSpec, &KldaModel, &RffMap) -> Result<()>,
) -> Result<Trained> {
    config.validate()?;
    for task in stream {
        task.validate()?;
        if task.domain != Domain::Source {
            return Err(Error::Protocol(format!("task {} is not a source task", task.task_id)));
        }
        task.require_labels()?;
    }
    check_disjoint(stream)?;
    let rff = RffMap::sample(config.rff, input_dim(stream)?)?;
    let mut model = KldaModel::new(rff.feature_dim(), config.source_config())?;
    for task in stream {
        let labels = task.require_labels()?;
        model.reopen();
        let n = task.len();
        for start in (0..n).step_by(config.batch_size) {
            let end = (start + config.batch_size).min(n);
            let z = rff.map_batch(task.samples.originals(start, end)?.view())?;
            model.update(&WeightedBatch::unit(z, labels[start..end].to_vec())?)?;
        }
        if model.num_classes() > 0 {
            model.finalize()?;
        }
        observer(task, &model, &rff)?;
    }
    if model.num_classes() == 0 {
        return Err(Error::EmptyModel);
    }
    Ok(Trained { model, rff })
}

pub fn pretrain_source(stream: &[TaskSpec], config: &RunConfig) -> Result<Trained> {
    pretrain_source_with(stream, config, |_, _, _| Ok(()))
}

/// Per-task adaptation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLog {
    pub task_id: usize,
    pub samples_read: usize,
    pub retained: usize,
    /// Rows that entered the statistics (retained samples times variants).
    pub rows_used: usize,
    pub mean_weight: f64,
    pub empty: bool,
    /// False when the accumulated weight was too small to finalize.
    pub finalized: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptLog {
    pub tasks: Vec<TaskLog>,
}

impl AdaptLog {
    pub fn samples_read(&self) -> usize {
        self.tasks.iter().map(|t| t.samples_read).sum()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.tasks
            .iter()
            .flat_map(|t| {
                let mut w = Vec::new();
                if t.empty {
                    w.push(format!("task {} retained no samples; statistics unchanged", t.task_id));
                } else if !t.finalized {
                    w.push(format!("task {}: total weight too small to finalize the model", t.task_id));
                }
                w
            })
            .collect()
    }
}

/// Pseudo-label and weight of one target sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub class_id: Option<ClassId>,
    pub weight: f64,
}

/// Fused prediction for each original row in `z` of `task`, rows starting at `offset`.
fn pseudo_labels(
    source: &KldaModel,
    task: &TaskSpec,
    z: ArrayView2<'_, f64>,
    offset: usize,
    zero_shot: &dyn ZeroShot,
    config: &RunConfig,
) -> Result<Vec<PseudoLabel>> {
    z.outer_iter()
        .enumerate()
        .map(|(k, row)| {
            let scores = source.scores_for(row, &task.class_set)?;
            let p = ProbVector::softmax(scores.as_slice().expect("contiguous scores"), config.temperature)?;
            let p_vlm = zero_shot.probs(task, offset + k, &task.class_set)?;
            let fused = fusion::fused_prediction(&p, &p_vlm, config.threshold)?;
            Ok(PseudoLabel {
                class_id: fused.pseudo_label.map(|j| task.class_set[j]),
                weight: fused.weight,
            })
        })
        .collect()
}

/// Builds a target model from the finalized `source` model without access
/// to any source samples. `observer` sees the finalized
/// target model after every task.
pub fn adapt_target_with(
    stream: &[TaskSpec],
    source: &KldaModel,
    rff: &RffMap,
    zero_shot: &dyn ZeroShot,
    config: &RunConfig,
    mut observer: impl FnMut(&TaskSpec, &KldaModel) -> Result<()>,
) -> Result<(KldaModel, AdaptLog)> {
    config.validate()?;
    if !source.is_finalized() {
        return Err(Error::NotFinalized);
    }
    for task in stream {
        task.validate()?;
        if task.domain != Domain::Target {
            return Err(Error::Protocol(format!("task {} is not a target task", task.task_id)));
        }
        if task.labels.is_some() {
            return Err(Error::Protocol(format!("target task {} carries labels", task.task_id)));
        }
        if task.class_set.len() < 2 {
            return Err(Error::invalid(format!(
                "task {} needs at least 2 classes, has {}",
                task.task_id,
                task.class_set.len()
            )));
        }
    }
    check_disjoint(stream)?;

    let mut model = KldaModel::new(rff.feature_dim(), config.target_config())?;
    let mut log = AdaptLog::default();
    for task in stream {
        model.reopen();
        let augment = config.augment && task.samples.has_variants();
        let n = task.len();
        let mut entry = TaskLog {
            task_id: task.task_id,
            samples_read: 0,
            retained: 0,
            rows_used: 0,
            mean_weight: 0.0,
            empty: false,
            finalized: false,
        };
        let mut weight_sum = 0.0;
        for start in (0..n).step_by(config.batch_size) {
            let end = (start + config.batch_size).min(n);
            let originals = task.samples.originals(start, end)?;
            entry.samples_read += originals.nrows();
            let z = rff.map_batch(originals.view())?;
            let labels = pseudo_labels(source, task, z.view(), start, zero_shot, config)?;

            let mut keep = Vec::new();
            let mut extra = Vec::new();
            for (k, pl) in labels.iter().enumerate() {
                let Some(class_id) = pl.class_id else { continue };
                keep.push((k, class_id, pl.weight));
                weight_sum += pl.weight;
                if augment {
                    let i = start + k;
                    let seed = rng::derive_seed(config.augment_seed, rng::stream_id(task.task_id as u32, i as u32));
                    let [zeros, rand] = task.samples.variants(i, seed, config.noise_scale)?;
                    extra.push(zeros);
                    extra.push(rand);
                }
            }
            if keep.is_empty() {
                continue;
            }
            let variants_z = if augment {
                Some(rff.map_batch(stack_rows(extra.into_iter())?.view())?)
            } else {
                None
            };
            let per = if augment { 3 } else { 1 };
            let mut rows = Array2::zeros((keep.len() * per, rff.feature_dim()));
            let mut batch_labels = Vec::with_capacity(rows.nrows());
            let mut batch_weights = Vec::with_capacity(rows.nrows());
            for (r, &(k, class_id, w)) in keep.iter().enumerate() {
                rows.row_mut(per * r).assign(&z.row(k));
                if let Some(vz) = &variants_z {
                    rows.row_mut(per * r + 1).assign(&vz.row(2 * r));
                    rows.row_mut(per * r + 2).assign(&vz.row(2 * r + 1));
                }
                for _ in 0..per {
                    batch_labels.push(class_id);
                    batch_weights.push(w);
                }
            }
            entry.retained += keep.len();
            entry.rows_used += rows.nrows();
            model.update(&WeightedBatch::new(rows, batch_labels, batch_weights)?)?;
        }
        entry.empty = entry.retained == 0;
        entry.mean_weight = if entry.retained > 0 {
            weight_sum / entry.retained as f64
        } else {
            0.0
        };
        if model.num_classes() > 0 {
            match model.finalize() {
                Ok(()) => entry.finalized = true,
                // Too little total weight for a covariance; keep accumulating.
                Err(Error::DegenerateScale { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        observer(task, &model)?;
        log.tasks.push(entry);
    }
    Ok((model, log))
}

pub fn adapt_target(
    stream: &[TaskSpec],
    source: &KldaModel,
    rff: &RffMap,
    zero_shot: &dyn ZeroShot,
    config: &RunConfig,
) -> Result<(KldaModel, AdaptLog)> {
    adapt_target_with(stream, source, rff, zero_shot, config, |_, _| Ok(()))
}

/// Lower-triangular matrix of accuracies: row `k` holds the accuracy on the
/// test sets of tasks `0..=k` after training through task `k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = AccuracyMatrix::new();
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::shape(format!("row of {} entries", self.rows.len() + 1), row.len()));
        }
        if let Some(bad) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid(format!("accuracy {bad} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, k: usize, j: usize) -> Option<f64> {
        self.rows.get(k).and_then(|r| r.get(j)).copied()
    }

    /// Mean of the last row.
    pub fn average_accuracy(&self) -> Option<f64> {
        let last = self.rows.last()?;
        Some(last.iter().sum::<f64>() / last.len() as f64)
    }

    /// Mean over earlier tasks of (final accuracy − accuracy right after learning).
    pub fn backward_transfer(&self) -> Option<f64> {
        let t = self.rows.len();
        if t < 2 {
            return if t == 1 { Some(0.0) } else { None };
        }
        let last = &self.rows[t - 1];
        let total: f64 = (0..t - 1).map(|j| last[j] - self.rows[j][j]).sum();
        Some(total / (t - 1) as f64)
    }

    /// Plain-text rendering, one row per line.
    pub fn to_table(&self) -> String {
        let t = self.rows.len();
        let mut out = String::from("after\\test");
        for j in 0..t {
            out.push_str(&format!(" {:>7}", format!("T{}", j + 1)));
        }
        out.push('\n');
        for (k, row) in self.rows.iter().enumerate() {
            out.push_str(&format!("{:<10}", format!("T{}", k + 1)));
            for a in row {
                out.push_str(&format!(" {:>7.4}", a));
            }
            out.push('\n');
        }
        out
    }
}

/// Accuracy of `model` on a labeled test task. With `zero_shot`, the KLDA
/// probabilities are fused with the zero-shot branch over the model's classes.
pub fn task_accuracy(
    model: &KldaModel,
    rff: &RffMap,
    test: &TaskSpec,
    zero_shot: Option<(&dyn ZeroShot, f64)>,
) -> Result<f64> {
    let labels = test
        .labels
        .as_deref()
        .ok_or_else(|| Error::Protocol(format!("test task {} has no labels", test.task_id)))?;
    if labels.is_empty() {
        return Err(Error::invalid(format!("test task {} is empty", test.task_id)));
    }
    let z = rff.map_batch(test.samples.originals(0, test.len())?.view())?;
    let classes = model.class_ids();
    let predictions: Vec<ClassId> = match zero_shot {
        None => model.predict_batch(z.view())?,
        Some((zs, temperature)) => {
            let scores = model.scores_batch(z.view())?;
            scores
                .axis_iter(Axis(0))
                .enumerate()
                .map(|(i, row)| {
                    let p = ProbVector::softmax(&row.to_vec(), temperature)?;
                    let q = zs.probs(test, i, &classes)?;
                    Ok(classes[fusion::fuse(&p, &q)?.probs.argmax()])
                })
                .collect::<Result<_>>()?
        }
    };
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Test sets scored after every training stage.
pub struct Evaluator<'a> {
    tests: &'a [TaskSpec],
    zero_shot: Option<(&'a dyn ZeroShot, f64)>,
    matrix: AccuracyMatrix,
}

impl<'a> Evaluator<'a> {
    pub fn new(tests: &'a [TaskSpec]) -> Self {
        Evaluator {
            tests,
            zero_shot: None,
            matrix: AccuracyMatrix::new(),
        }
    }

    pub fn with_zero_shot(mut self, zero_shot: &'a dyn ZeroShot, temperature: f64) -> Self {
        self.zero_shot = Some((zero_shot, temperature));
        self
    }

    /// Scores the stage-`k` model on test sets `0..=k`.
    pub fn record(&mut self, model: &KldaModel, rff: &RffMap) -> Result<&[f64]> {
        let k = self.matrix.num_tasks();
        if k >= self.tests.len() {
            return Err(Error::invalid(format!("only {} test tasks available", self.tests.len())));
        }
        let row = self.tests[..=k]
            .iter()
            .map(|t| task_accuracy(model, rff, t, self.zero_shot))
            .collect::<Result<Vec<_>>>()?;
        self.matrix.push_row(row)?;
        Ok(self.matrix.rows.last().expect("row just pushed"))
    }

    pub fn finish(self) -> AccuracyMatrix {
        self.matrix
    }
}

/// Builds the full accuracy matrix from per-stage models.
pub fn evaluate(stages: &[&KldaModel], rff: &RffMap, tests: &[TaskSpec]) -> Result<AccuracyMatrix> {
    if stages.len() != tests.len() {
        return Err(Error::shape(format!("{} stages", tests.len()), stages.len()));
    }
    let mut eval = Evaluator::new(tests);
    for model in stages {
        eval.record(model, rff)?;
    }
    Ok(eval.finish())
}

/// Final-stage accuracies on every test task.
pub fn final_accuracies(model: &KldaModel, rff: &RffMap, tests: &[TaskSpec]) -> Result<Vec<f64>> {
    tests.iter().map(|t| task_accuracy(model, rff, t, None)).collect()
}
