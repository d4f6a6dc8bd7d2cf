//! Latent embedding export for offline visualization.
//!
//! One TSV carries every latent slice (each style slice plus content) of
//! every example, with the example's labels, the raw slice coordinates, and
//! a two-dimensional PCA projection fit separately per slice.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::corpus::{LabeledExample, StyleSchema};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::real::Real;
use crate::seqae::Model;
use crate::trainer::atomic_write;

use super::bias::encode_split;

/// Two-dimensional PCA of a row matrix.
#[derive(Debug, Clone)]
pub struct Pca2d {
    /// `(n, 2)` projections of the centered rows.
    pub projections: Array2<f64>,
    /// `(d, 2)` principal directions (unit columns; zero-padded when d < 2).
    pub components: Array2<f64>,
    /// Top two covariance eigenvalues (zero-padded).
    pub eigenvalues: Array1<f64>,
}

/// Fit a 2-component PCA on `rows` (examples by dimensions).
///
/// Centered with the column means; the covariance uses the `n - 1`
/// normalization. Degenerate inputs degrade gracefully: zero rows give zero
/// projections and zero components, a single row projects to the origin,
/// and a one-dimensional space leaves the second component zero.
pub fn pca_2d(rows: &ArrayView2<f64>) -> Result<Pca2d> {
    let n = rows.nrows();
    let d = rows.ncols();
    if d == 0 {
        return Err(Error::Config("pca: zero-dimensional input".into()));
    }
    let mut components = Array2::<f64>::zeros((d, 2));
    let mut eigenvalues = Array1::<f64>::zeros(2);
    if n < 2 {
        return Ok(Pca2d {
            projections: Array2::zeros((n, 2)),
            components,
            eigenvalues,
        });
    }
    let mean = rows.mean_axis(Axis(0)).expect("n >= 2 rows");
    let centered = rows.to_owned() - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let (vals, vecs) = sym_eigen(&cov.view());
    for k in 0..2.min(d) {
        components.column_mut(k).assign(&vecs.column(k));
        eigenvalues[k] = vals[k];
    }
    Ok(Pca2d {
        projections: centered.dot(&components),
        components,
        eigenvalues,
    })
}

fn slice_names(schema: &StyleSchema) -> Vec<String> {
    schema
        .types
        .iter()
        .map(|t| format!("style:{}", t.name))
        .chain(std::iter::once("content".to_string()))
        .collect()
}

/// Write every example's latent slices to a TSV at `path`.
///
/// Columns: `slice`, one `label_<type>` per style type (value names), the
/// raw slice coordinates `v0..` (padded with empty cells up to the widest
/// slice), then `pca_x` and `pca_y` from a per-slice PCA fit. Rows are
/// grouped by slice in schema order (styles first, then content) and keep
/// corpus order within a slice. With no examples only the header is
/// written.
pub fn export_embeddings<F: Real>(
    model: &Model<F>,
    schema: &StyleSchema,
    examples: &[LabeledExample],
    path: &Path,
) -> Result<()> {
    let g = model.value_counts.len();
    if schema.types.len() != g {
        return Err(Error::Config(format!(
            "schema has {} types but the model has {g}",
            schema.types.len()
        )));
    }
    for (i, ex) in examples.iter().enumerate() {
        if ex.labels.len() != g {
            return Err(Error::Config(format!(
                "example {i} has {} labels but the model has {g} style types",
                ex.labels.len()
            )));
        }
        for (t, &y) in ex.labels.iter().enumerate() {
            if y >= schema.types[t].values.len() {
                return Err(Error::Config(format!(
                    "example {i} labels value {y} for type {t} which has {} values",
                    schema.types[t].values.len()
                )));
            }
        }
    }
    let ds = model.cfg.style_dim;
    let dc = model.cfg.content_dim;
    let width = ds.max(dc);

    let mut out = String::new();
    out.push_str("slice");
    for ty in &schema.types {
        out.push('\t');
        out.push_str(&format!("label_{}", ty.name));
    }
    for k in 0..width {
        out.push('\t');
        out.push_str(&format!("v{k}"));
    }
    out.push_str("\tpca_x\tpca_y\n");

    let splits: Vec<_> = examples
        .iter()
        .map(|ex| encode_split(model, &ex.tokens))
        .collect();
    let names = slice_names(schema);
    for (slice_idx, name) in names.iter().enumerate() {
        let dim = if slice_idx < g { ds } else { dc };
        let mut rows = Array2::<f64>::zeros((examples.len(), dim));
        for (r, split) in splits.iter().enumerate() {
            let v = if slice_idx < g {
                &split.styles[slice_idx]
            } else {
                &split.content
            };
            rows.row_mut(r).assign(v);
        }
        let pca = pca_2d(&rows.view())?;
        for (r, ex) in examples.iter().enumerate() {
            out.push_str(name);
            for (t, &y) in ex.labels.iter().enumerate() {
                out.push('\t');
                out.push_str(&schema.types[t].values[y]);
            }
            for k in 0..width {
                out.push('\t');
                if k < dim {
                    out.push_str(&format!("{}", rows[[r, k]]));
                }
            }
            out.push_str(&format!(
                "\t{}\t{}\n",
                pca.projections[[r, 0]],
                pca.projections[[r, 1]]
            ));
        }
    }
    atomic_write(path, out.as_bytes())
}
