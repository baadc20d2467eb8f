//! Supervised probes on frozen embeddings.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;

use crate::data::ItemId;
use crate::error::{Error, Result};
use crate::rng::{seeded, STREAM_EVAL};

const LINEAR_LR: f64 = 0.1;
const LINEAR_STEPS: usize = 1000;

fn to_matrix(points: &[Vec<f64>]) -> Result<Array2<f64>> {
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points have different dimensions".into()));
    }
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    Array2::from_shape_vec((points.len(), dim), flat).map_err(|e| Error::Shape(e.to_string()))
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (c, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = c;
        }
    }
    best
}

/// Multinomial logistic regression (weights plus bias, zero init) fitted by
/// full-batch gradient descent; returns accuracy on the test set.
pub fn linear_eval(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    test_labels: &[usize],
) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Argument("linear probe needs nonempty train and test sets".into()));
    }
    if train.len() != train_labels.len() || test.len() != test_labels.len() {
        return Err(Error::Argument("points and labels differ in length".into()));
    }
    let x = to_matrix(train)?;
    let xt = to_matrix(test)?;
    if x.ncols() != xt.ncols() {
        return Err(Error::Shape("train and test dimensions differ".into()));
    }
    let classes = train_labels.iter().chain(test_labels).max().unwrap() + 1;
    let (n, d) = x.dim();
    let mut onehot = Array2::<f64>::zeros((n, classes));
    for (r, &l) in train_labels.iter().enumerate() {
        onehot[[r, l]] = 1.0;
    }
    let mut w = Array2::<f64>::zeros((d, classes));
    let mut b = Array1::<f64>::zeros(classes);
    for _ in 0..LINEAR_STEPS {
        let mut probs = x.dot(&w) + &b;
        for mut row in probs.axis_iter_mut(Axis(0)) {
            let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row /= s;
        }
        let err = (probs - &onehot) / n as f64;
        w.scaled_add(-LINEAR_LR, &x.t().dot(&err));
        b.scaled_add(-LINEAR_LR, &err.sum_axis(Axis(0)));
    }
    let scores = xt.dot(&w) + &b;
    let correct = scores
        .axis_iter(Axis(0))
        .zip(test_labels)
        .filter(|(row, &l)| argmax(row.view()) == l)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Picks `k` seeded-random anchors per category and classifies every other
/// point by its nearest anchor; ties go to the anchor with the lowest id.
pub fn k_anchors_eval(
    ids: &[ItemId],
    points: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<f64> {
    if ids.len() != points.len() || ids.len() != labels.len() {
        return Err(Error::Argument("ids, points and labels differ in length".into()));
    }
    if k == 0 {
        return Err(Error::Argument("anchors per category must be at least 1".into()));
    }
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (n, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(n);
    }
    let mut rng = seeded(seed, STREAM_EVAL);
    let mut is_anchor = vec![false; points.len()];
    let mut anchors = Vec::new();
    for (label, members) in &by_label {
        if k >= members.len() {
            return Err(Error::Argument(format!(
                "category {label} has {} items, need more than k={k} to leave points to score",
                members.len()
            )));
        }
        let mut members = members.clone();
        members.sort_by_key(|&n| ids[n]);
        for &n in members.partial_shuffle(&mut rng, k).0.iter() {
            is_anchor[n] = true;
            anchors.push(n);
        }
    }
    anchors.sort_by_key(|&n| ids[n]);
    let mut correct = 0usize;
    let mut scored = 0usize;
    for (n, p) in points.iter().enumerate() {
        if is_anchor[n] {
            continue;
        }
        let mut best = anchors[0];
        let mut best_d = f64::INFINITY;
        for &a in &anchors {
            let d: f64 = p.iter().zip(&points[a]).map(|(x, y)| (x - y) * (x - y)).sum();
            if d < best_d {
                best_d = d;
                best = a;
            }
        }
        scored += 1;
        if labels[best] == labels[n] {
            correct += 1;
        }
    }
    Ok(correct as f64 / scored as f64)
}
