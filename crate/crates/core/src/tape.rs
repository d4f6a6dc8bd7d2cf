//! Reverse-mode automatic differentiation over 2-D arrays.
//!
//! The trainer rebuilds a fresh tape every step (define-by-run). Values are
//! row-major `Array2` with the batch on axis 0; scalars are `1 x 1`. Ops are
//! a closed enum so the backward pass is a single exhaustive dispatch and
//! the whole pass stays deterministic.
//!
//! Gaussian log-densities and the closed-form Gaussian KL are primitives
//! with hand-derived adjoints: both route through a Cholesky factorization
//! of the effective covariance `A A^T + eps * I` rather than an explicit
//! inverse, and their gradients are validated against central finite
//! differences in the test suite.

use crate::linalg;
use crate::real::Real;
use ndarray::{s, Array1, Array2, Axis};
use std::sync::Arc;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Broadcast-add a `1 x D` row onto a `B x D` matrix.
    AddRow(Var, Var),
    /// Broadcast-multiply a `B x D` matrix by a `B x 1` column.
    MulCol(Var, Var),
    Scale(Var, F),
    AddScalar(Var, F),
    Neg(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// Row lookup into a table (embedding); duplicate ids accumulate.
    GatherRows(Var, Arc<Vec<usize>>),
    /// Per-row choice among same-shaped sources: `out[b] = src[choice[b]][b]`.
    SelectRows(Vec<Var>, Arc<Vec<usize>>),
    SumAll(Var),
    SumRows(Var),
    /// Numerically stable per-row `x - logsumexp(x)`.
    LogSoftmaxRows(Var),
    /// `out[b] = x[b, idx[b]]` as a `B x 1` column.
    PickPerRow(Var, Arc<Vec<usize>>),
    /// Entropy of per-row log-probabilities: `-sum exp(lp) * lp`.
    EntropyRows(Var),
    /// Batched Gaussian log-density with covariance `A A^T + eps I`.
    GaussianLogPdf {
        factor: Var,
        mean: Var,
        x: Var,
        eps: F,
    },
    /// Closed-form KL between two factor-parameterized Gaussians.
    GaussianKl {
        factor_p: Var,
        mean_p: Var,
        factor_q: Var,
        mean_q: Var,
        eps: F,
    },
}

struct Node<F: Real> {
    op: Op<F>,
    value: Array2<F>,
}

/// Gradient buffers produced by [`Tape::backward`].
pub struct Gradients<F: Real> {
    grads: Vec<Option<Array2<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Array2<F>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<F>> {
        self.grads[v.0].take()
    }
}

pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    /// Scalar payload of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> F {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar() on a non-scalar node");
        val[[0, 0]]
    }

    fn push(&mut self, op: Op<F>, value: Array2<F>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<F>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn leaf_row(&mut self, value: Array1<F>) -> Var {
        let d = value.len();
        self.push(Op::Leaf, value.into_shape_with_order((1, d)).unwrap())
    }

    pub fn scalar_leaf(&mut self, value: F) -> Var {
        self.push(Op::Leaf, Array2::from_elem((1, 1), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shape mismatch");
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1 x D row");
        assert_eq!(self.value(a).ncols(), self.value(row).ncols());
        let v = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), v)
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.value(col).ncols(), 1, "mul_col expects a B x 1 column");
        assert_eq!(self.value(a).nrows(), self.value(col).nrows());
        let v = self.value(a) * self.value(col);
        self.push(Op::MulCol(a, col), v)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        self.push(Op::AddScalar(a, c), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).ncols(),
            self.value(b).nrows(),
            "matmul inner dimension mismatch"
        );
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = F::one();
        let v = self.value(a).mapv(|x| one / (one + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.tanh());
        self.push(Op::Tanh(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.exp());
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.ln());
        self.push(Op::Ln(a), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = Array2::<F>::zeros((rows, total));
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.nrows(), rows, "concat_cols row mismatch");
            v.slice_mut(s![.., at..at + pv.ncols()]).assign(pv);
            at += pv.ncols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        assert!(start < end && end <= self.value(a).ncols(), "slice_cols out of range");
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(Op::SliceCols(a, start, end), v)
    }

    pub fn gather_rows(&mut self, table: Var, ids: Arc<Vec<usize>>) -> Var {
        let t = self.value(table);
        let mut v = Array2::<F>::zeros((ids.len(), t.ncols()));
        for (out_row, &id) in ids.iter().enumerate() {
            assert!(id < t.nrows(), "gather_rows id {id} out of range");
            v.row_mut(out_row).assign(&t.row(id));
        }
        self.push(Op::GatherRows(table, ids), v)
    }

    pub fn select_rows(&mut self, sources: &[Var], choice: Arc<Vec<usize>>) -> Var {
        assert!(!sources.is_empty());
        let dim = self.value(sources[0]).dim();
        for &src in sources {
            assert_eq!(self.value(src).dim(), dim, "select_rows shape mismatch");
        }
        assert_eq!(choice.len(), dim.0, "select_rows needs one choice per row");
        let mut v = Array2::<F>::zeros(dim);
        for (b, &c) in choice.iter().enumerate() {
            assert!(c < sources.len(), "select_rows choice out of range");
            v.row_mut(b).assign(&self.value(sources[c]).row(b));
        }
        self.push(Op::SelectRows(sources.to_vec(), choice), v)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, F::from_f64(1.0 / n as f64))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .sum_axis(Axis(1))
            .into_shape_with_order((self.value(a).nrows(), 1))
            .unwrap();
        self.push(Op::SumRows(a), v)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.to_owned();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut lse = F::zero();
            for e in row.iter() {
                lse = lse + (*e - max).exp();
            }
            let shift = max + lse.ln();
            row.mapv_inplace(|e| e - shift);
        }
        self.push(Op::LogSoftmaxRows(a), v)
    }

    pub fn pick_per_row(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Var {
        let x = self.value(a);
        assert_eq!(idx.len(), x.nrows(), "pick_per_row needs one index per row");
        let mut v = Array2::<F>::zeros((x.nrows(), 1));
        for (b, &j) in idx.iter().enumerate() {
            assert!(j < x.ncols(), "pick_per_row index out of range");
            v[[b, 0]] = x[[b, j]];
        }
        self.push(Op::PickPerRow(a, idx), v)
    }

    /// Entropy per row of a log-probability matrix, with `0 ln 0 = 0`.
    pub fn entropy_rows(&mut self, log_probs: Var) -> Var {
        let lp = self.value(log_probs);
        let mut v = Array2::<F>::zeros((lp.nrows(), 1));
        for (b, row) in lp.rows().into_iter().enumerate() {
            let mut h = F::zero();
            for &e in row.iter() {
                let p = e.exp();
                if p > F::zero() {
                    h = h - p * e;
                }
            }
            v[[b, 0]] = h;
        }
        self.push(Op::EntropyRows(log_probs), v)
    }

    /// Log-density of each row of `x` under `N(mean, A A^T + eps I)`.
    pub fn gaussian_log_pdf(&mut self, factor: Var, mean: Var, x: Var, eps: F) -> Var {
        let d = self.value(mean).ncols();
        assert_eq!(self.value(mean).nrows(), 1, "mean must be 1 x d");
        assert_eq!(self.value(factor).dim(), (d, d), "factor must be d x d");
        assert_eq!(self.value(x).ncols(), d, "x dimension mismatch");
        let (out, _, _) = self.gaussian_log_pdf_forward(factor, mean, x, eps);
        self.push(Op::GaussianLogPdf { factor, mean, x, eps }, out)
    }

    fn gaussian_log_pdf_forward(
        &self,
        factor: Var,
        mean: Var,
        x: Var,
        eps: F,
    ) -> (Array2<F>, Array2<F>, Array2<F>) {
        let a = self.value(factor);
        let mu = self.value(mean);
        let xs = self.value(x);
        let d = mu.ncols();
        let b = xs.nrows();
        let sigma = linalg::factor_covariance(&a.view(), eps);
        let l = linalg::cholesky(&sigma.view())
            .expect("effective covariance must be positive definite");
        let logdet = linalg::chol_logdet(&l.view());
        let log2pi = F::from_f64((2.0 * std::f64::consts::PI).ln());
        let base = F::from_f64(-0.5) * (F::from_f64(d as f64) * log2pi + logdet);
        let mut out = Array2::<F>::zeros((b, 1));
        // w[b] = Sigma^{-1} (x_b - mu). Saved for the adjoint.
        let mut w = Array2::<F>::zeros((b, d));
        for i in 0..b {
            let diff = (&xs.row(i) - &mu.row(0)).to_owned();
            let y = linalg::solve_lower(&l.view(), &diff.view());
            let q = y.iter().fold(F::zero(), |acc, &e| acc + e * e);
            out[[i, 0]] = base - F::from_f64(0.5) * q;
            let wi = linalg::solve_lower_transpose(&l.view(), &y.view());
            w.row_mut(i).assign(&wi);
        }
        (out, w, l)
    }

    /// `KL(N(mean_p, ...) || N(mean_q, ...))` with factor-parameterized
    /// covariances, as a `1 x 1` node.
    pub fn gaussian_kl(
        &mut self,
        factor_p: Var,
        mean_p: Var,
        factor_q: Var,
        mean_q: Var,
        eps: F,
    ) -> Var {
        let d = self.value(mean_p).ncols();
        assert_eq!(self.value(mean_q).ncols(), d, "gaussian_kl dimension mismatch");
        assert_eq!(self.value(factor_p).dim(), (d, d));
        assert_eq!(self.value(factor_q).dim(), (d, d));
        let value = gaussian_kl_value(
            &self.value(factor_p).view(),
            &self.value(mean_p).view(),
            &self.value(factor_q).view(),
            &self.value(mean_q).view(),
            eps,
        );
        self.push(
            Op::GaussianKl {
                factor_p,
                mean_p,
                factor_q,
                mean_q,
                eps,
            },
            Array2::from_elem((1, 1), value),
        )
    }

    /// Reverse pass from a scalar root. Returns one gradient buffer per node.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Array2<F>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), F::one()));
        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, i: usize, g: &Array2<F>, grads: &mut [Option<Array2<F>>]) {
        let mut add = |v: Var, contrib: Array2<F>| {
            match &mut grads[v.0] {
                Some(acc) => *acc += &contrib,
                slot @ None => *slot = Some(contrib),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add(*a, g.clone());
                add(*b, g.clone());
            }
            Op::Sub(a, b) => {
                add(*a, g.clone());
                add(*b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                add(*a, g * self.value(*b));
                add(*b, g * self.value(*a));
            }
            Op::AddRow(a, row) => {
                add(*a, g.clone());
                let summed = g
                    .sum_axis(Axis(0))
                    .into_shape_with_order((1, g.ncols()))
                    .unwrap();
                add(*row, summed);
            }
            Op::MulCol(a, col) => {
                add(*a, g * self.value(*col));
                let prod = g * self.value(*a);
                let summed = prod
                    .sum_axis(Axis(1))
                    .into_shape_with_order((g.nrows(), 1))
                    .unwrap();
                add(*col, summed);
            }
            Op::Scale(a, c) => add(*a, g.mapv(|x| x * *c)),
            Op::AddScalar(a, _) => add(*a, g.clone()),
            Op::Neg(a) => add(*a, g.mapv(|x| -x)),
            Op::MatMul(a, b) => {
                add(*a, g.dot(&self.value(*b).t()));
                add(*b, self.value(*a).t().dot(g));
            }
            Op::Transpose(a) => add(*a, g.t().to_owned()),
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let one = F::one();
                add(*a, g * &y.mapv(|s| s * (one - s)));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let one = F::one();
                add(*a, g * &y.mapv(|t| one - t * t));
            }
            Op::Exp(a) => add(*a, g * &self.nodes[i].value),
            Op::Ln(a) => add(*a, g / self.value(*a)),
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    add(p, g.slice(s![.., at..at + w]).to_owned());
                    at += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut buf = Array2::<F>::zeros(self.value(*a).dim());
                buf.slice_mut(s![.., *start..*end]).assign(g);
                add(*a, buf);
            }
            Op::GatherRows(table, ids) => {
                let mut buf = Array2::<F>::zeros(self.value(*table).dim());
                for (out_row, &id) in ids.iter().enumerate() {
                    let mut target = buf.row_mut(id);
                    target += &g.row(out_row);
                }
                add(*table, buf);
            }
            Op::SelectRows(sources, choice) => {
                for (k, &src) in sources.iter().enumerate() {
                    let mut buf = Array2::<F>::zeros(self.value(src).dim());
                    let mut any = false;
                    for (b, &c) in choice.iter().enumerate() {
                        if c == k {
                            buf.row_mut(b).assign(&g.row(b));
                            any = true;
                        }
                    }
                    if any {
                        add(src, buf);
                    }
                }
            }
            Op::SumAll(a) => {
                let scalar = g[[0, 0]];
                add(*a, Array2::from_elem(self.value(*a).dim(), scalar));
            }
            Op::SumRows(a) => {
                let dim = self.value(*a).dim();
                let mut buf = Array2::<F>::zeros(dim);
                for b in 0..dim.0 {
                    let gb = g[[b, 0]];
                    buf.row_mut(b).mapv_inplace(|_| gb);
                }
                add(*a, buf);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut buf = g.clone();
                for (b, mut row) in buf.rows_mut().into_iter().enumerate() {
                    let gsum = g.row(b).sum();
                    for (j, e) in row.iter_mut().enumerate() {
                        *e = *e - y[[b, j]].exp() * gsum;
                    }
                }
                add(*a, buf);
            }
            Op::PickPerRow(a, idx) => {
                let mut buf = Array2::<F>::zeros(self.value(*a).dim());
                for (b, &j) in idx.iter().enumerate() {
                    buf[[b, j]] = g[[b, 0]];
                }
                add(*a, buf);
            }
            Op::EntropyRows(a) => {
                let lp = self.value(*a);
                let mut buf = Array2::<F>::zeros(lp.dim());
                let one = F::one();
                for b in 0..lp.nrows() {
                    let gb = g[[b, 0]];
                    for j in 0..lp.ncols() {
                        let e = lp[[b, j]];
                        let p = e.exp();
                        if p > F::zero() {
                            buf[[b, j]] = -gb * p * (e + one);
                        }
                    }
                }
                add(*a, buf);
            }
            Op::GaussianLogPdf { factor, mean, x, eps } => {
                let (_, w, l) = self.gaussian_log_pdf_forward(*factor, *mean, *x, *eps);
                let b = w.nrows();
                let d = w.ncols();
                // d out_b / d x_b = -w_b ; d out_b / d mu = +w_b
                let mut gx = Array2::<F>::zeros((b, d));
                let mut gmu = Array2::<F>::zeros((1, d));
                let mut gsum = F::zero();
                for bi in 0..b {
                    let gb = g[[bi, 0]];
                    gsum = gsum + gb;
                    for j in 0..d {
                        gx[[bi, j]] = -gb * w[[bi, j]];
                        gmu[[0, j]] += gb * w[[bi, j]];
                    }
                }
                // d out / d Sigma = -1/2 (Sigma^{-1} - w w^T) per row; then
                // d out / d A = (G + G^T) A with G symmetric here, so 2 G A.
                let sigma_inv = linalg::chol_inverse(&l.view());
                let mut gmat = Array2::<F>::zeros((d, d));
                for bi in 0..b {
                    let gb = g[[bi, 0]];
                    for r in 0..d {
                        for c in 0..d {
                            gmat[[r, c]] += gb * w[[bi, r]] * w[[bi, c]];
                        }
                    }
                }
                let half = F::from_f64(0.5);
                let gs = gmat.mapv(|v| v * half) - sigma_inv.mapv(|v| v * half * gsum);
                let ga = gs.dot(self.value(*factor)).mapv(|v| v + v);
                add(*x, gx);
                add(*mean, gmu);
                add(*factor, ga);
            }
            Op::GaussianKl {
                factor_p,
                mean_p,
                factor_q,
                mean_q,
                eps,
            } => {
                let gscalar = g[[0, 0]];
                let ap = self.value(*factor_p);
                let aq = self.value(*factor_q);
                let mp = self.value(*mean_p);
                let mq = self.value(*mean_q);
                let d = mp.ncols();
                let sp = linalg::factor_covariance(&ap.view(), *eps);
                let sq = linalg::factor_covariance(&aq.view(), *eps);
                let lp = linalg::cholesky(&sp.view()).expect("positive definite");
                let lq = linalg::cholesky(&sq.view()).expect("positive definite");
                let sp_inv = linalg::chol_inverse(&lp.view());
                let sq_inv = linalg::chol_inverse(&lq.view());
                let diff = (&mq.row(0) - &mp.row(0)).to_owned();
                let w = linalg::chol_solve(&lq.view(), &diff.view());
                let half = F::from_f64(0.5);
                // d KL / d Sigma_p = 1/2 (Sigma_q^{-1} - Sigma_p^{-1})
                let g_sp = (&sq_inv - &sp_inv).mapv(|v| v * half * gscalar);
                // d KL / d Sigma_q = 1/2 (Sigma_q^{-1}
                //   - Sigma_q^{-1} Sigma_p Sigma_q^{-1} - w w^T)
                let mid = sq_inv.dot(&sp).dot(&sq_inv);
                let mut wwt = Array2::<F>::zeros((d, d));
                for r in 0..d {
                    for c in 0..d {
                        wwt[[r, c]] = w[r] * w[c];
                    }
                }
                let g_sq = (&sq_inv - &mid - &wwt).mapv(|v| v * half * gscalar);
                let g_ap = g_sp.dot(ap).mapv(|v| v + v);
                let g_aq = g_sq.dot(aq).mapv(|v| v + v);
                let mut g_mp = Array2::<F>::zeros((1, d));
                let mut g_mq = Array2::<F>::zeros((1, d));
                for j in 0..d {
                    g_mq[[0, j]] = gscalar * w[j];
                    g_mp[[0, j]] = -gscalar * w[j];
                }
                add(*factor_p, g_ap);
                add(*mean_p, g_mp);
                add(*factor_q, g_aq);
                add(*mean_q, g_mq);
            }
        }
    }
}

/// Plain (non-tape) value of the closed-form Gaussian KL; shared with
/// `style_space` so both routes agree by construction.
pub fn gaussian_kl_value<F: Real>(
    factor_p: &ndarray::ArrayView2<F>,
    mean_p: &ndarray::ArrayView2<F>,
    factor_q: &ndarray::ArrayView2<F>,
    mean_q: &ndarray::ArrayView2<F>,
    eps: F,
) -> F {
    let d = mean_p.ncols();
    let sp = linalg::factor_covariance(factor_p, eps);
    let sq = linalg::factor_covariance(factor_q, eps);
    let lp = linalg::cholesky(&sp.view()).expect("positive definite");
    let lq = linalg::cholesky(&sq.view()).expect("positive definite");
    // tr(Sigma_q^{-1} Sigma_p)
    let x = linalg::chol_solve_mat(&lq.view(), &sp.view());
    let mut tr = F::zero();
    for i in 0..d {
        tr = tr + x[[i, i]];
    }
    let diff = (&mean_q.row(0) - &mean_p.row(0)).to_owned();
    let w = linalg::chol_solve(&lq.view(), &diff.view());
    let quad = diff.iter().zip(w.iter()).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
    let logdet = linalg::chol_logdet(&lq.view()) - linalg::chol_logdet(&lp.view());
    F::from_f64(0.5) * (tr + quad - F::from_f64(d as f64) + logdet)
}

/// Finite-difference harness shared by gradient-check tests across modules.
#[cfg(test)]
pub(crate) mod test_support {
    use super::{Tape, Var};
    use ndarray::Array2;

    /// Central finite-difference check of `d root / d leaf` for every
    /// element of the given leaves. `build` must construct the same graph
    /// from the same leaf values each call.
    pub(crate) fn grad_check(
        leaves: &[Array2<f64>],
        build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
        tol: f64,
    ) {
        let run = |values: &[Array2<f64>]| -> (f64, Vec<Array2<f64>>) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
            let root = build(&mut tape, &vars);
            let grads = tape.backward(root);
            let gs = vars
                .iter()
                .map(|&v| {
                    grads
                        .get(v)
                        .cloned()
                        .unwrap_or_else(|| Array2::zeros(tape.value(v).dim()))
                })
                .collect();
            (tape.scalar(root), gs)
        };
        let (_, analytic) = run(leaves);
        let h = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            for ((r, c), _) in leaf.indexed_iter() {
                let mut plus = leaves.to_vec();
                plus[li][[r, c]] += h;
                let mut minus = leaves.to_vec();
                minus[li][[r, c]] -= h;
                let (fp, _) = run(&plus);
                let (fm, _) = run(&minus);
                let numeric = (fp - fm) / (2.0 * h);
                let got = analytic[li][[r, c]];
                let scale = 1.0_f64.max(numeric.abs()).max(got.abs());
                assert!(
                    (numeric - got).abs() / scale < tol,
                    "leaf {li} [{r},{c}]: numeric {numeric} vs analytic {got}"
                );
            }
        }
    }
}
