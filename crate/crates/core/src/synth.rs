//! Synthetic source/target streams with a controlled affine domain shift.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::klda::ClassId;
use crate::pipeline::{Domain, Samples, ScoreTable, TaskSpec};
use crate::rng::{self, StreamRng};

/// Target = `scale · R(x) + translation · 1/√d + noise`, where `R` rotates
/// every coordinate pair `(2k, 2k+1)` by `rotation_deg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translation: f64,
    pub noise: f64,
}

impl Shift {
    pub fn identity() -> Self {
        Shift {
            rotation_deg: 0.0,
            scale: 1.0,
            translation: 0.0,
            noise: 0.0,
        }
    }

    fn apply(&self, x: &mut Array2<f64>, r: &mut StreamRng) {
        let d = x.ncols();
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let offset = self.translation / (d as f64).sqrt();
        for mut row in x.rows_mut() {
            for k in (0..d - d % 2).step_by(2) {
                let (a, b) = (row[k], row[k + 1]);
                row[k] = cos * a - sin * b;
                row[k + 1] = sin * a + cos * b;
            }
            for v in row.iter_mut() {
                *v = self.scale * *v + offset;
                if self.noise > 0.0 {
                    *v += self.noise * r.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub num_tasks: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    /// Standard deviation of the class means.
    pub separation: f64,
    /// Within-class standard deviation.
    pub spread: f64,
    pub shift: Shift,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 12,
            num_tasks: 4,
            train_per_class: 100,
            test_per_class: 50,
            dim: 8,
            separation: 3.0,
            spread: 1.0,
            shift: Shift {
                rotation_deg: 30.0,
                scale: 1.0,
                translation: 1.0,
                noise: 0.1,
            },
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 || self.num_classes == 0 || self.num_classes % self.num_tasks != 0 {
            return Err(Error::invalid(format!(
                "{} classes cannot be split evenly into {} tasks",
                self.num_classes, self.num_tasks
            )));
        }
        if self.dim == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::invalid("dimension and per-class sample counts must be positive"));
        }
        let finite = [
            self.separation,
            self.spread,
            self.shift.rotation_deg,
            self.shift.scale,
            self.shift.translation,
            self.shift.noise,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.spread < 0.0 || self.shift.noise < 0.0 {
            return Err(Error::invalid("shift and spread parameters must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn classes_per_task(&self) -> usize {
        self.num_classes / self.num_tasks
    }

    pub fn class_set(&self, task: usize) -> Vec<ClassId> {
        let k = self.classes_per_task();
        (task * k..(task + 1) * k).map(|c| c as ClassId).collect()
    }
}

/// Streams drawn from one [`SynthSpec`]. Target training labels are kept
/// apart from the unlabeled target tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStreams {
    pub source_train: Vec<TaskSpec>,
    pub source_test: Vec<TaskSpec>,
    pub target_train: Vec<TaskSpec>,
    pub target_test: Vec<TaskSpec>,
    pub target_train_labels: Vec<Vec<ClassId>>,
}

const STREAM_MEANS: u32 = 0;
const STREAM_SOURCE: u32 = 1;
const STREAM_TEST_BASE: u32 = 2;
const STREAM_TARGET_BASE: u32 = 3;
const STREAM_TARGET_NOISE: u32 = 4;
const STREAM_TEST_NOISE: u32 = 5;
const STREAM_ORDER: u32 = 6;

fn draw(
    means: &Array2<f64>,
    classes: &[ClassId],
    per_class: usize,
    spread: f64,
    r: &mut StreamRng,
    order: &mut StreamRng,
) -> (Array2<f64>, Vec<ClassId>) {
    let d = means.ncols();
    let n = classes.len() * per_class;
    let mut labels: Vec<ClassId> = classes.iter().flat_map(|&c| std::iter::repeat_n(c, per_class)).collect();
    labels.shuffle(order);
    let mut x = Array2::zeros((n, d));
    for (mut row, &c) in x.rows_mut().into_iter().zip(&labels) {
        let mean = means.row(c as usize);
        for (v, &m) in row.iter_mut().zip(mean) {
            *v = m + spread * r.sample::<f64, _>(StandardNormal);
        }
    }
    (x, labels)
}

pub fn gen_synthetic_sfcdcl(spec: &SynthSpec) -> Result<SyntheticStreams> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, rng::stream_id(STREAM_MEANS, 0));
    let means = Array2::from_shape_simple_fn((spec.num_classes, spec.dim), || {
        spec.separation * r.sample::<f64, _>(StandardNormal)
    });
    let mut out = SyntheticStreams {
        source_train: Vec::new(),
        source_test: Vec::new(),
        target_train: Vec::new(),
        target_test: Vec::new(),
        target_train_labels: Vec::new(),
    };
    for t in 0..spec.num_tasks {
        let classes = spec.class_set(t);
        let sub = |s: u32| rng::stream(spec.seed, rng::stream_id(s, t as u32));
        let mut order = rng::stream(spec.seed, rng::stream_id(STREAM_ORDER, t as u32));

        let (x, y) = draw(&means, &classes, spec.train_per_class, spec.spread, &mut sub(STREAM_SOURCE), &mut order);
        out.source_train.push(TaskSpec::new(t, classes.clone(), Domain::Source, Samples::Embeddings(x), Some(y))?);

        let (base, y) = draw(&means, &classes, spec.test_per_class, spec.spread, &mut sub(STREAM_TEST_BASE), &mut order);
        let mut shifted = base.clone();
        spec.shift.apply(&mut shifted, &mut sub(STREAM_TEST_NOISE));
        out.source_test.push(TaskSpec::new(t, classes.clone(), Domain::Source, Samples::Embeddings(base), Some(y.clone()))?);
        out.target_test.push(TaskSpec::new(t, classes.clone(), Domain::Target, Samples::Embeddings(shifted), Some(y))?);

        let (mut x, y) = draw(&means, &classes, spec.train_per_class, spec.spread, &mut sub(STREAM_TARGET_BASE), &mut order);
        spec.shift.apply(&mut x, &mut sub(STREAM_TARGET_NOISE));
        out.target_train.push(TaskSpec::new(t, classes, Domain::Target, Samples::Embeddings(x), None)?);
        out.target_train_labels.push(y);
    }
    Ok(out)
}

/// Zero-shot table that names the true class with probability `accuracy`
/// (otherwise a uniformly chosen wrong class), putting `peak` on the named
/// class and spreading the rest evenly.
pub fn oracle_scores(
    tasks: &[TaskSpec],
    labels: &[Vec<ClassId>],
    accuracy: f64,
    peak: f64,
    seed: u64,
) -> Result<ScoreTable> {
    if !(0.0..=1.0).contains(&accuracy) || !(0.0..=1.0).contains(&peak) {
        return Err(Error::invalid("oracle accuracy and peak must lie in [0, 1]"));
    }
    if tasks.len() != labels.len() {
        return Err(Error::shape(format!("{} label lists", tasks.len()), labels.len()));
    }
    let mut table = ScoreTable::new();
    for (task, y) in tasks.iter().zip(labels) {
        let c = task.class_set.len();
        if c < 2 {
            return Err(Error::invalid("oracle scores need at least 2 classes per task"));
        }
        if peak * (c as f64) < 1.0 {
            return Err(Error::invalid(format!("peak {peak} is below uniform for {c} classes")));
        }
        let rest = (1.0 - peak) / (c - 1) as f64;
        let mut r = rng::stream(seed, task.task_id as u64);
        let mut rows = Array2::from_elem((y.len(), c), rest);
        for (i, label) in y.iter().enumerate() {
            let truth = task
                .class_set
                .binary_search(label)
                .map_err(|_| Error::invalid(format!("label {label} outside task {}", task.task_id)))?;
            let named = if r.gen::<f64>() < accuracy {
                truth
            } else {
                let k = r.gen_range(0..c - 1);
                if k >= truth {
                    k + 1
                } else {
                    k
                }
            };
            rows[(i, named)] = peak;
        }
        table.insert(task.task_id, task.class_set.clone(), rows)?;
    }
    Ok(table)
}

/// Concentric circles in the plane: radius 1 for class 0, radius 3 for class 1.
pub fn circles(per_class: usize, noise: f64, seed: u64) -> (Array2<f64>, Vec<ClassId>) {
    let mut r = rng::stream(seed, 0);
    let mut x = Array2::zeros((2 * per_class, 2));
    let mut labels = Vec::with_capacity(2 * per_class);
    for (class, radius) in [(0, 1.0), (1, 3.0)] {
        for k in 0..per_class {
            let theta = r.gen::<f64>() * std::f64::consts::TAU;
            let row = class as usize * per_class + k;
            x[(row, 0)] = radius * theta.cos() + noise * r.sample::<f64, _>(StandardNormal);
            x[(row, 1)] = radius * theta.sin() + noise * r.sample::<f64, _>(StandardNormal);
            labels.push(class);
        }
    }
    (x, labels)
}

/// Fraction of rows whose argmax is the true label.
pub fn oracle_accuracy(table: &ScoreTable, tasks: &[TaskSpec], labels: &[Vec<ClassId>]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (task, y) in tasks.iter().zip(labels) {
        let Some((classes, rows)) = table.get(task.task_id) else { continue };
        for (row, label) in rows.outer_iter().zip(y) {
            let best = crate::klda::argmax(&row.to_vec()).unwrap_or(0);
            correct += usize::from(classes[best] == *label);
            total += 1;
        }
    }
    correct as f64 / total.max(1) as f64
}
