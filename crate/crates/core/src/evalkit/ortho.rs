//! Observational orthogonality between style slices.
//!
//! For an ordered pair of style types (i, j), the report measures the mean
//! absolute cosine between each test sentence's encoded style-j vector and a
//! fresh sample from the sentence's labeled type-i distribution. The score
//! lies in [0, 1]; values near zero say the learned style subspaces point in
//! unrelated directions. This is a descriptive diagnostic, not a trained-for
//! objective, so no target value is asserted — only the geometry is
//! reported.

use ndarray::Array1;

use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{normal_f64, SeedRng};
use crate::seqae::Model;

use super::bias::encode_split;

/// Mean absolute cosine between paired vectors. Pairs where either vector
/// has zero norm are skipped; if every pair is skipped the metric is
/// undefined.
pub fn mean_abs_cosine(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "mean_abs_cosine: {} vs {} vectors",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::MetricUndefined(
            "mean_abs_cosine over an empty set".into(),
        ));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for (idx, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != y.len() {
            return Err(Error::Config(format!(
                "mean_abs_cosine: pair {idx} has dimensions {} vs {}",
                x.len(),
                y.len()
            )));
        }
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            continue;
        }
        total += (dot / (nx * ny)).abs();
        used += 1;
    }
    if used == 0 {
        return Err(Error::MetricUndefined(
            "mean_abs_cosine: every pair had a zero-norm vector".into(),
        ));
    }
    Ok(total / used as f64)
}

/// Mean absolute cosine for every ordered pair of style types.
///
/// `result[i][j]` (i != j) compares samples of type `i` against encoded
/// style-`j` vectors; the diagonal is `None`. Sentences are encoded
/// deterministically (posterior mean); for each sentence and each sampled
/// type one noise vector is drawn from `rng`, in corpus order with the
/// sampled type as the inner loop.
pub fn orthogonality_report<F: Real>(
    model: &Model<F>,
    test: &[LabeledExample],
    rng: &mut SeedRng,
) -> Result<Vec<Vec<Option<f64>>>> {
    let g = model.value_counts.len();
    if test.is_empty() {
        return Err(Error::MetricUndefined(
            "orthogonality over an empty test set".into(),
        ));
    }
    let ds = model.cfg.style_dim;
    // Encoded style slices and per-type samples, example by example.
    let mut encoded: Vec<Vec<Vec<f64>>> = Vec::with_capacity(test.len());
    let mut sampled: Vec<Vec<Vec<f64>>> = Vec::with_capacity(test.len());
    for (idx, ex) in test.iter().enumerate() {
        if ex.labels.len() != g {
            return Err(Error::Config(format!(
                "example {idx} has {} labels but the model has {g} style types",
                ex.labels.len()
            )));
        }
        let split = encode_split(model, &ex.tokens);
        encoded.push(split.styles.iter().map(|s| s.to_vec()).collect());
        let mut per_type = Vec::with_capacity(g);
        for (t, &label) in ex.labels.iter().enumerate() {
            if label >= model.value_counts[t] {
                return Err(Error::Config(format!(
                    "example {idx} labels value {label} for type {t} which has {} values",
                    model.value_counts[t]
                )));
            }
            let eps = Array1::from_shape_fn(ds, |_| normal_f64(rng));
            let eps = eps.mapv(F::from_f64);
            let sample = model.style_dist(t, label).sample(&eps.view());
            per_type.push(sample.mapv(Real::to_f64).to_vec());
        }
        sampled.push(per_type);
    }
    let mut report: Vec<Vec<Option<f64>>> = vec![vec![None; g]; g];
    for i in 0..g {
        for j in 0..g {
            if i == j {
                continue;
            }
            let samples: Vec<Vec<f64>> = sampled.iter().map(|s| s[i].clone()).collect();
            let styles: Vec<Vec<f64>> = encoded.iter().map(|e| e[j].clone()).collect();
            report[i][j] = Some(mean_abs_cosine(&samples, &styles)?);
        }
    }
    Ok(report)
}
