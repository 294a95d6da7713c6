//! Dual-branch fusion, pseudo-labels and entropy-based uncertainty weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::klda::argmax;

const SUM_TOLERANCE: f64 = 1e-6;

/// Non-negative vector summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbability("empty vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidProbability(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidProbability(format!("entries sum to {sum}")));
        }
        Ok(ProbVector(probs))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("uniform distribution over zero classes"));
        }
        Ok(ProbVector(vec![1.0 / len as f64; len]))
    }

    /// Temperature softmax of arbitrary scores.
    pub fn softmax(scores: &[f64], temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        if scores.is_empty() {
            return Err(Error::InvalidProbability("empty score vector".into()));
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidProbability("non-finite scores".into()));
        }
        let exp: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
        let total: f64 = exp.iter().sum();
        Ok(ProbVector(exp.into_iter().map(|e| e / total).collect()))
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

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// First index attaining the maximum.
    pub fn argmax(&self) -> usize {
        argmax(&self.0).expect("non-empty")
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPrediction {
    pub probs: ProbVector,
    pub alpha: f64,
    pub beta: f64,
    /// Index into the task's class order, if the prediction cleared the threshold.
    pub pseudo_label: Option<usize>,
    pub entropy: f64,
    pub weight: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn norm_is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// Zero-shot probabilities: softmax over classes of `cos(image, text_k) / τ`.
pub fn vlm_scores(image: &[f64], texts: &[Vec<f64>], tau: f64) -> Result<ProbVector> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if texts.is_empty() {
        return Err(Error::invalid("no text embeddings"));
    }
    if norm_is_zero(image) {
        return Err(Error::DegenerateEmbedding("image embedding has zero norm".into()));
    }
    let mut sims = Vec::with_capacity(texts.len());
    for (k, text) in texts.iter().enumerate() {
        if text.len() != image.len() {
            return Err(Error::shape(
                format!("text embedding {k} of length {}", image.len()),
                text.len(),
            ));
        }
        if norm_is_zero(text) {
            return Err(Error::DegenerateEmbedding(format!("text embedding {k} has zero norm")));
        }
        sims.push(cosine(image, text));
    }
    ProbVector::softmax(&sims, tau)
}

/// `p̂ = α p + β p_vlm` with `α, β` proportional to each branch's peak probability.
pub fn fuse(p: &ProbVector, p_vlm: &ProbVector) -> Result<FusedPrediction> {
    if p.len() != p_vlm.len() {
        return Err(Error::shape(format!("{} classes", p.len()), p_vlm.len()));
    }
    if p.len() < 2 {
        return Err(Error::invalid("fusion needs at least two classes"));
    }
    let (mp, mv) = (p.max(), p_vlm.max());
    let alpha = mp / (mp + mv);
    let beta = 1.0 - alpha;
    let probs: Vec<f64> = p
        .as_slice()
        .iter()
        .zip(p_vlm.as_slice())
        .map(|(a, b)| alpha * a + beta * b)
        .collect();
    let probs = ProbVector(probs);
    let entropy = shannon_entropy(&probs);
    let weight = weight_from_entropy(entropy, probs.len());
    Ok(FusedPrediction {
        probs,
        alpha,
        beta,
        pseudo_label: None,
        entropy,
        weight,
    })
}

/// `H(p) = −Σ p log p` in nats, with `0 log 0 = 0`.
pub fn shannon_entropy(p: &ProbVector) -> f64 {
    let h: f64 = p
        .as_slice()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum();
    h.max(0.0)
}

fn weight_from_entropy(entropy: f64, class_count: usize) -> f64 {
    (1.0 - entropy / (class_count as f64).ln()).clamp(0.0, 1.0)
}

/// `ω = 1 − H(p̂) / log |C|`, clamped to `[0, 1]`.
pub fn uncertainty_weight(p: &ProbVector, class_count: usize) -> Result<f64> {
    if class_count < 2 {
        return Err(Error::invalid(format!(
            "uncertainty weight needs at least two classes, got {class_count}"
        )));
    }
    if class_count != p.len() {
        return Err(Error::shape(format!("{class_count} classes"), p.len()));
    }
    Ok(weight_from_entropy(shannon_entropy(p), class_count))
}

/// Argmax index if `max(p) ≥ threshold`.
pub fn pseudo_label(p: &ProbVector, threshold: f64) -> Option<usize> {
    (p.max() >= threshold).then(|| p.argmax())
}

/// Fusion, weight and thresholded label for one sample.
pub fn fused_prediction(p: &ProbVector, p_vlm: &ProbVector, threshold: f64) -> Result<FusedPrediction> {
    let mut fused = fuse(p, p_vlm)?;
    fused.pseudo_label = pseudo_label(&fused.probs, threshold);
    Ok(fused)
}
