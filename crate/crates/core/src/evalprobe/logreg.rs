//! Deterministic multinomial logistic regression probe: full-batch gradient
//! descent, L2 penalty 1e-4, 500 epochs, learning rate 0.1, features
//! standardized by train-split mean/variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const L2_PENALTY: f64 = 1e-4;
const EPOCHS: usize = 500;
const LEARNING_RATE: f64 = 0.1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeTaskReport {
    pub task: String,
    pub accuracy: f64,
    pub baseline: f64,
    pub num_examples: usize,
    pub num_train: usize,
    pub num_test: usize,
    /// (example id, predicted label) over the test split, in id order.
    pub predictions: Vec<(u64, usize)>,
}

pub struct ProbeData<'a> {
    pub train_features: &'a [Vec<f32>],
    pub train_labels: &'a [usize],
    pub test_features: &'a [Vec<f32>],
    pub test_labels: &'a [usize],
    pub test_ids: &'a [u64],
}

/// Trains the probe and reports test accuracy alongside the majority-class
/// baseline. Errors when the training labels are degenerate (single class).
pub fn train_probe(task: &str, num_classes: usize, data: &ProbeData) -> Result<ProbeTaskReport> {
    let n_train = data.train_features.len();
    if n_train == 0 || data.test_features.is_empty() {
        return Err(Error::Probe(format!(
            "{task}: empty probe split ({n_train} train, {} test)",
            data.test_features.len()
        )));
    }
    let dim = data.train_features[0].len();
    let distinct = {
        let mut seen = vec![false; num_classes];
        for &l in data.train_labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::Probe(format!(
            "{task}: training split has a single class; the probe is degenerate"
        )));
    }

    // Standardize by train mean/variance.
    let mut mean = vec![0.0f64; dim];
    for f in data.train_features {
        for (m, &v) in mean.iter_mut().zip(f) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n_train as f64;
    }
    let mut var = vec![0.0f64; dim];
    for f in data.train_features {
        for ((s, &v), m) in var.iter_mut().zip(f).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    for s in &mut var {
        *s = (*s / n_train as f64).max(1e-8);
    }
    let standardize = |f: &[f32]| -> Vec<f64> {
        f.iter()
            .zip(&mean)
            .zip(&var)
            .map(|((&v, m), s)| (v as f64 - m) / s.sqrt())
            .collect()
    };
    let x_train: Vec<Vec<f64>> = data.train_features.iter().map(|f| standardize(f)).collect();

    // Full-batch GD on W [dim x C], b [C].
    let mut w = vec![0.0f64; dim * num_classes];
    let mut b = vec![0.0f64; num_classes];
    let mut probs = vec![0.0f64; num_classes];
    let mut gw = vec![0.0f64; dim * num_classes];
    let mut gb = vec![0.0f64; num_classes];
    for _ in 0..EPOCHS {
        gw.iter_mut().for_each(|v| *v = 0.0);
        gb.iter_mut().for_each(|v| *v = 0.0);
        for (x, &y) in x_train.iter().zip(data.train_labels) {
            logits_into(x, &w, &b, num_classes, &mut probs);
            softmax_in_place(&mut probs);
            for c in 0..num_classes {
                let err = probs[c] - if c == y { 1.0 } else { 0.0 };
                gb[c] += err;
                for (d, &xv) in x.iter().enumerate() {
                    gw[d * num_classes + c] += err * xv;
                }
            }
        }
        let inv_n = 1.0 / n_train as f64;
        for (wv, gv) in w.iter_mut().zip(&gw) {
            *wv -= LEARNING_RATE * (gv * inv_n + L2_PENALTY * *wv);
        }
        for (bv, gv) in b.iter_mut().zip(&gb) {
            *bv -= LEARNING_RATE * gv * inv_n;
        }
    }

    let mut hits = 0usize;
    let mut predictions = Vec::with_capacity(data.test_features.len());
    for ((f, &y), &id) in data
        .test_features
        .iter()
        .zip(data.test_labels)
        .zip(data.test_ids)
    {
        let x = standardize(f);
        logits_into(&x, &w, &b, num_classes, &mut probs);
        let mut best = 0usize;
        for c in 1..num_classes {
            if probs[c] > probs[best] {
                best = c;
            }
        }
        if best == y {
            hits += 1;
        }
        predictions.push((id, best));
    }
    predictions.sort_unstable_by_key(|&(id, _)| id);

    // Majority baseline over the test split.
    let mut counts = vec![0usize; num_classes];
    for &y in data.test_labels {
        counts[y] += 1;
    }
    let baseline = *counts.iter().max().unwrap() as f64 / data.test_labels.len() as f64;

    Ok(ProbeTaskReport {
        task: task.to_string(),
        accuracy: hits as f64 / data.test_labels.len() as f64,
        baseline,
        num_examples: n_train + data.test_features.len(),
        num_train: n_train,
        num_test: data.test_features.len(),
        predictions,
    })
}

fn logits_into(x: &[f64], w: &[f64], b: &[f64], num_classes: usize, out: &mut [f64]) {
    out.copy_from_slice(b);
    for (d, &xv) in x.iter().enumerate() {
        for c in 0..num_classes {
            out[c] += xv * w[d * num_classes + c];
        }
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
