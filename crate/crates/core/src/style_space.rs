//! Gaussian machinery over latent style and content spaces.
//!
//! Every style value of every style type owns one trainable Gaussian,
//! parameterized by a mean and a factor matrix `A` with effective
//! covariance `A A^T + eps_reg * I` (the ridge guarantees positive
//! definiteness no matter where training drives `A`). This module houses
//! the plain (non-tape) forms of the Gaussian operations: log-densities,
//! Bayes posteriors over a type's values, prior-free classification
//! probabilities, reparameterized sampling, categorical entropy, and
//! closed-form Gaussian KL. Training builds the same quantities on the
//! autodiff tape; both routes share the factorization helpers so they
//! agree by construction.

use crate::error::{Error, Result};
use crate::linalg;
use crate::real::Real;
use crate::rng::{normal_f64, SeedRng};
use crate::tape;
use ndarray::{Array1, Array2, ArrayView1};

/// Ridge added to `A A^T` so the effective covariance is always positive
/// definite.
pub const EPS_REG: f64 = 1e-6;

/// Initialization scale for distribution means.
pub const INIT_MU_SCALE: f64 = 0.1;

/// Initialization scale for the factor `A` (diagonal).
pub const INIT_A_SCALE: f64 = 0.1;

/// One trainable Gaussian over a latent space: `N(mu, A A^T + eps_reg I)`.
#[derive(Debug, Clone)]
pub struct GaussianStyleDistribution<F: Real> {
    pub mu: Array1<F>,
    pub factor_a: Array2<F>,
}

impl<F: Real> GaussianStyleDistribution<F> {
    pub fn new(mu: Array1<F>, factor_a: Array2<F>) -> Self {
        assert_eq!(
            factor_a.dim(),
            (mu.len(), mu.len()),
            "factor A must be d x d with d = |mu|"
        );
        GaussianStyleDistribution { mu, factor_a }
    }

    /// Fresh distribution: `mu ~ 0.1 * N(0, 1)` per entry, `A = 0.1 * I`.
    pub fn init(d: usize, rng: &mut SeedRng) -> Self {
        let mu = Array1::from_iter((0..d).map(|_| F::from_f64(INIT_MU_SCALE * normal_f64(rng))));
        let mut a = Array2::<F>::zeros((d, d));
        for i in 0..d {
            a[[i, i]] = F::from_f64(INIT_A_SCALE);
        }
        GaussianStyleDistribution { mu, factor_a: a }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Effective covariance `A A^T + eps_reg * I`.
    pub fn sigma_eff(&self, eps_reg: F) -> Array2<F> {
        linalg::factor_covariance(&self.factor_a.view(), eps_reg)
    }

    /// Log-density of `v` under the effective Gaussian, via Cholesky.
    pub fn log_pdf(&self, v: &ArrayView1<F>, eps_reg: F) -> Result<F> {
        let d = self.dim();
        assert_eq!(v.len(), d, "log_pdf dimension mismatch");
        let sigma = self.sigma_eff(eps_reg);
        let l = linalg::cholesky(&sigma.view())?;
        let logdet = linalg::chol_logdet(&l.view());
        let diff = (v - &self.mu).to_owned();
        let y = linalg::solve_lower(&l.view(), &diff.view());
        let quad = y.iter().fold(F::zero(), |acc, &e| acc + e * e);
        let log2pi = F::from_f64((2.0 * std::f64::consts::PI).ln());
        Ok(F::from_f64(-0.5) * (F::from_f64(d as f64) * log2pi + logdet + quad))
    }

    /// Reparameterized draw: `A eps + mu`.
    pub fn sample(&self, eps: &ArrayView1<F>) -> Array1<F> {
        assert_eq!(eps.len(), self.dim(), "sample dimension mismatch");
        self.factor_a.dot(eps) + &self.mu
    }

    /// Draw `eps` from the unit Gaussian (in 64-bit, then converted) and
    /// return the reparameterized sample.
    pub fn sample_with(&self, rng: &mut SeedRng) -> Array1<F> {
        let eps = Array1::from_iter((0..self.dim()).map(|_| F::from_f64(normal_f64(rng))));
        self.sample(&eps.view())
    }

    /// Closed-form `KL(self || q)` between the effective Gaussians.
    pub fn kl_to(&self, q: &Self, eps_reg: F) -> Result<F> {
        let d = self.dim();
        assert_eq!(q.dim(), d, "gaussian_kl dimension mismatch");
        let mp = self.mu.clone().into_shape_with_order((1, d)).unwrap();
        let mq = q.mu.clone().into_shape_with_order((1, d)).unwrap();
        Ok(tape::gaussian_kl_value(
            &self.factor_a.view(),
            &mp.view(),
            &q.factor_a.view(),
            &mq.view(),
            eps_reg,
        ))
    }
}

/// Closed-form KL between two factor-parameterized Gaussians.
pub fn gaussian_kl<F: Real>(
    p: &GaussianStyleDistribution<F>,
    q: &GaussianStyleDistribution<F>,
    eps_reg: F,
) -> Result<F> {
    p.kl_to(q, eps_reg)
}

/// Entropy of a categorical distribution in nats, with `0 ln 0 = 0`.
pub fn categorical_entropy<F: Real>(p: &ArrayView1<F>) -> F {
    let sum = p.iter().fold(F::zero(), |acc, &e| acc + e);
    assert!(
        (sum.to_f64() - 1.0).abs() < 1e-6,
        "probability vector must sum to 1, got {}",
        sum
    );
    let mut h = F::zero();
    for &e in p.iter() {
        assert!(e >= F::zero(), "probabilities must be nonnegative");
        if e > F::zero() {
            h = h - e * e.ln();
        }
    }
    h
}

/// Normalize a vector of unnormalized log-weights in log space with a
/// max-shift, returning probabilities that sum to one.
fn normalize_log_weights<F: Real>(logw: &[F]) -> Array1<F> {
    let max = logw.iter().cloned().fold(F::neg_infinity(), F::max);
    assert!(max > F::neg_infinity(), "all log-weights are -inf");
    let mut out = Array1::<F>::zeros(logw.len());
    let mut total = F::zero();
    for (i, &lw) in logw.iter().enumerate() {
        let e = (lw - max).exp();
        out[i] = e;
        total = total + e;
    }
    out.mapv_inplace(|e| e / total);
    out
}

/// The distributions and prior for a single style type.
#[derive(Debug, Clone)]
pub struct TypeBank<F: Real> {
    pub dists: Vec<GaussianStyleDistribution<F>>,
    /// Empirical prior `p(t)` over this type's values; fixed, not trained.
    pub prior: Array1<F>,
}

impl<F: Real> TypeBank<F> {
    pub fn new(dists: Vec<GaussianStyleDistribution<F>>, prior: Array1<F>) -> Self {
        assert!(!dists.is_empty(), "a style type needs at least one value");
        assert_eq!(dists.len(), prior.len(), "one prior entry per value");
        let d = dists[0].dim();
        assert!(dists.iter().all(|g| g.dim() == d), "bank dimension mismatch");
        let sum = prior.iter().fold(F::zero(), |acc, &e| acc + e);
        assert!(
            (sum.to_f64() - 1.0).abs() < 1e-6,
            "prior must sum to 1, got {}",
            sum
        );
        TypeBank { dists, prior }
    }

    pub fn dim(&self) -> usize {
        self.dists[0].dim()
    }

    pub fn value_count(&self) -> usize {
        self.dists.len()
    }
}

/// All style types' distribution banks plus the shared regularizer.
#[derive(Debug, Clone)]
pub struct StyleSpaceBank<F: Real> {
    pub types: Vec<TypeBank<F>>,
    pub eps_reg: F,
}

impl<F: Real> StyleSpaceBank<F> {
    pub fn new(types: Vec<TypeBank<F>>, eps_reg: F) -> Self {
        assert!(eps_reg > F::zero(), "eps_reg must be positive");
        StyleSpaceBank { types, eps_reg }
    }

    /// Log-density of `v` under each of the type's value distributions.
    pub fn log_densities(&self, type_index: usize, v: &ArrayView1<F>) -> Result<Array1<F>> {
        let bank = &self.types[type_index];
        let mut out = Array1::<F>::zeros(bank.value_count());
        for (j, dist) in bank.dists.iter().enumerate() {
            out[j] = dist.log_pdf(v, self.eps_reg)?;
        }
        Ok(out)
    }

    /// Bayes posterior over the type's values given a style vector:
    /// `p(t|v)` proportional to `p_Nor(v|t) p(t)`, computed in log space.
    pub fn posterior(&self, type_index: usize, v: &ArrayView1<F>) -> Result<Array1<F>> {
        let bank = &self.types[type_index];
        let ld = self.log_densities(type_index, v)?;
        let mut logw = Vec::with_capacity(ld.len());
        for (j, &l) in ld.iter().enumerate() {
            let p = bank.prior[j];
            let lw = if p > F::zero() { l + p.ln() } else { F::neg_infinity() };
            logw.push(lw);
        }
        let probs = normalize_log_weights(&logw);
        if probs.iter().any(|e| !e.is_finite()) {
            return Err(Error::numerical("posterior", "non-finite posterior entry"));
        }
        Ok(probs)
    }

    /// Prior-free classification probability over the type's values: the
    /// normalized densities alone, with every value weighted equally.
    pub fn classification_prob(&self, type_index: usize, v: &ArrayView1<F>) -> Result<Array1<F>> {
        let ld = self.log_densities(type_index, v)?;
        let logw: Vec<F> = ld.iter().cloned().collect();
        let probs = normalize_log_weights(&logw);
        if probs.iter().any(|e| !e.is_finite()) {
            return Err(Error::numerical(
                "classification_prob",
                "non-finite probability entry",
            ));
        }
        Ok(probs)
    }
}

/// Per (style type, value) Gaussians over the content space, used to keep
/// content vectors uninformative about style.
#[derive(Debug, Clone)]
pub struct ContentClassBank<F: Real> {
    /// `types[t][j]` is the content-space Gaussian for value `j` of type `t`.
    pub types: Vec<Vec<GaussianStyleDistribution<F>>>,
    pub eps_reg: F,
}

impl<F: Real> ContentClassBank<F> {
    pub fn new(types: Vec<Vec<GaussianStyleDistribution<F>>>, eps_reg: F) -> Self {
        assert!(eps_reg > F::zero(), "eps_reg must be positive");
        if let Some(first) = types.iter().flat_map(|v| v.iter()).next() {
            let dc = first.dim();
            assert!(
                types.iter().flat_map(|v| v.iter()).all(|g| g.dim() == dc),
                "content bank dimension mismatch"
            );
        }
        ContentClassBank { types, eps_reg }
    }

    /// Prior-free posterior over a type's values given a content vector.
    pub fn posterior(&self, type_index: usize, c: &ArrayView1<F>) -> Result<Array1<F>> {
        let dists = &self.types[type_index];
        let mut logw = Vec::with_capacity(dists.len());
        for dist in dists {
            logw.push(dist.log_pdf(c, self.eps_reg)?);
        }
        let probs = normalize_log_weights(&logw);
        if probs.iter().any(|e| !e.is_finite()) {
            return Err(Error::numerical(
                "content posterior",
                "non-finite probability entry",
            ));
        }
        Ok(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tape::test_support::grad_check;
    use ndarray::{arr1, arr2, array};

    /// Dense inverse and determinant by Gauss-Jordan with partial
    /// pivoting — an oracle independent of the Cholesky route.
    fn dense_inverse(a: &Array2<f64>) -> (Array2<f64>, f64) {
        let n = a.nrows();
        let mut m = a.clone();
        let mut inv = Array2::<f64>::eye(n);
        let mut det = 1.0;
        for col in 0..n {
            let mut pivot = col;
            for r in col + 1..n {
                if m[[r, col]].abs() > m[[pivot, col]].abs() {
                    pivot = r;
                }
            }
            if pivot != col {
                for c in 0..n {
                    m.swap([col, c], [pivot, c]);
                    inv.swap([col, c], [pivot, c]);
                }
                det = -det;
            }
            let p = m[[col, col]];
            assert!(p.abs() > 1e-12, "oracle matrix is singular");
            det *= p;
            for c in 0..n {
                m[[col, c]] /= p;
                inv[[col, c]] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = m[[r, col]];
                    for c in 0..n {
                        m[[r, c]] -= f * m[[col, c]];
                        inv[[r, c]] -= f * inv[[col, c]];
                    }
                }
            }
        }
        (inv, det)
    }

    fn oracle_log_pdf(dist: &GaussianStyleDistribution<f64>, v: &Array1<f64>, eps: f64) -> f64 {
        let d = dist.dim();
        let sigma = dist.sigma_eff(eps);
        let (inv, det) = dense_inverse(&sigma);
        let diff = v - &dist.mu;
        let quad = diff.dot(&inv.dot(&diff));
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
    }

    fn random_dist(rng: &mut rng::SeedRng, d: usize) -> GaussianStyleDistribution<f64> {
        let mu = Array1::from_iter((0..d).map(|_| rng::normal_f64(rng)));
        let mut a = rng::normal_matrix(rng, d, d).mapv(|x| 0.3 * x);
        for i in 0..d {
            a[[i, i]] += 0.8;
        }
        GaussianStyleDistribution::new(mu, a)
    }

    #[test]
    fn log_pdf_standard_normal_at_mean() {
        let d1: GaussianStyleDistribution<f64> =
            GaussianStyleDistribution::new(arr1(&[0.0]), arr2(&[[1.0]]));
        let got = d1.log_pdf(&arr1(&[0.0]).view(), 0.0).unwrap();
        assert!((got - (-0.9189385332046727)).abs() < 1e-12);
        // With the default ridge the perturbation stays tiny.
        let ridged = d1.log_pdf(&arr1(&[0.0]).view(), EPS_REG).unwrap();
        assert!((ridged - got).abs() < 1e-6);
    }

    #[test]
    fn log_pdf_identity_covariance_2d_at_mean() {
        let mu: Array1<f64> = arr1(&[0.7, -0.3]);
        let d2: GaussianStyleDistribution<f64> =
            GaussianStyleDistribution::new(mu.clone(), Array2::eye(2));
        let got = d2.log_pdf(&mu.view(), 0.0).unwrap();
        assert!((got - (-1.8378770664093453)).abs() < 1e-12);
    }

    #[test]
    fn log_pdf_matches_dense_oracle() {
        let mut r = rng::substream(21, "style-logpdf-oracle");
        for _ in 0..20 {
            let dist = random_dist(&mut r, 4);
            let v = Array1::from_iter((0..4).map(|_| rng::normal_f64(&mut r)));
            let got = dist.log_pdf(&v.view(), EPS_REG).unwrap();
            let want = oracle_log_pdf(&dist, &v, EPS_REG);
            let rel = (got - want).abs() / want.abs().max(1.0);
            assert!(rel < 1e-8, "got {got}, oracle {want}");
        }
    }

    #[test]
    fn posterior_symmetric_two_values() {
        let d = 3;
        let mu = arr1(&[0.4, -0.2, 0.9]);
        let bank = TypeBank::new(
            vec![
                GaussianStyleDistribution::new(mu.clone(), Array2::eye(d)),
                GaussianStyleDistribution::new(-&mu, Array2::eye(d)),
            ],
            arr1(&[0.5, 0.5]),
        );
        let space = StyleSpaceBank::new(vec![bank], EPS_REG);
        let p = space.posterior(0, &Array1::zeros(d).view()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn posterior_single_value_is_one() {
        let bank = TypeBank::new(
            vec![GaussianStyleDistribution::new(arr1(&[5.0, 5.0]), Array2::eye(2))],
            arr1(&[1.0]),
        );
        let space = StyleSpaceBank::new(vec![bank], EPS_REG);
        let p = space.posterior(0, &arr1(&[-100.0, 100.0]).view()).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_matches_direct_oracle() {
        let mut r = rng::substream(22, "style-posterior-oracle");
        let dists: Vec<_> = (0..3).map(|_| random_dist(&mut r, 3)).collect();
        let prior = arr1(&[0.5, 0.2, 0.3]);
        let space = StyleSpaceBank::new(
            vec![TypeBank::new(dists.clone(), prior.clone())],
            EPS_REG,
        );
        for _ in 0..10 {
            let v = Array1::from_iter((0..3).map(|_| rng::normal_f64(&mut r)));
            let got = space.posterior(0, &v.view()).unwrap();
            // Direct evaluation: exponentiate oracle densities, multiply
            // priors, normalize in the linear domain.
            let weights: Vec<f64> = dists
                .iter()
                .zip(prior.iter())
                .map(|(dist, &p)| oracle_log_pdf(dist, &v, EPS_REG).exp() * p)
                .collect();
            let total: f64 = weights.iter().sum();
            for (j, &w) in weights.iter().enumerate() {
                assert!((got[j] - w / total).abs() < 1e-10);
            }
            assert!((got.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn classification_prob_ignores_priors() {
        let mut r = rng::substream(23, "style-classprob");
        let dists: Vec<_> = (0..2).map(|_| random_dist(&mut r, 3)).collect();
        // Midpoint of two mirrored distributions with shared factor.
        let shared = dists[0].factor_a.clone();
        let mu = dists[0].mu.clone();
        let mirrored = vec![
            GaussianStyleDistribution::new(mu.clone(), shared.clone()),
            GaussianStyleDistribution::new(-&mu, shared.clone()),
        ];
        let skewed = StyleSpaceBank::new(
            vec![TypeBank::new(mirrored, arr1(&[0.95, 0.05]))],
            EPS_REG,
        );
        let p = skewed
            .classification_prob(0, &Array1::zeros(3).view())
            .unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        // With equal priors the posterior coincides with classification.
        let equal = StyleSpaceBank::new(
            vec![TypeBank::new(dists.clone(), arr1(&[0.5, 0.5]))],
            EPS_REG,
        );
        for _ in 0..5 {
            let v = Array1::from_iter((0..3).map(|_| rng::normal_f64(&mut r)));
            let a = equal.posterior(0, &v.view()).unwrap();
            let b = equal.classification_prob(0, &v.view()).unwrap();
            for j in 0..2 {
                assert!((a[j] - b[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn classification_prob_matches_direct_oracle() {
        let mut r = rng::substream(24, "style-classprob-oracle");
        let dists: Vec<_> = (0..3).map(|_| random_dist(&mut r, 3)).collect();
        let space = StyleSpaceBank::new(
            vec![TypeBank::new(dists.clone(), arr1(&[0.1, 0.6, 0.3]))],
            EPS_REG,
        );
        for _ in 0..10 {
            let v = Array1::from_iter((0..3).map(|_| rng::normal_f64(&mut r)));
            let got = space.classification_prob(0, &v.view()).unwrap();
            let weights: Vec<f64> = dists
                .iter()
                .map(|dist| oracle_log_pdf(dist, &v, EPS_REG).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            for (j, &w) in weights.iter().enumerate() {
                assert!((got[j] - w / total).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn posterior_stable_at_large_norm() {
        let mut r = rng::substream(25, "style-posterior-stability");
        let dists: Vec<_> = (0..3).map(|_| random_dist(&mut r, 3)).collect();
        let space = StyleSpaceBank::new(
            vec![TypeBank::new(dists, arr1(&[0.3, 0.3, 0.4]))],
            EPS_REG,
        );
        let v = arr1(&[1e3, -1e3, 1e3]);
        let p = space.posterior(0, &v.view()).unwrap();
        assert!(p.iter().all(|e| e.is_finite()));
        assert!((p.sum() - 1.0).abs() < 1e-9);
        let c = space.classification_prob(0, &v.view()).unwrap();
        assert!(c.iter().all(|e| e.is_finite()));
        assert!((c.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sample_reparameterization() {
        let mut r = rng::substream(26, "style-sample");
        let dist = random_dist(&mut r, 3);
        // eps = 0 -> mu exactly.
        let z = dist.sample(&Array1::zeros(3).view());
        for j in 0..3 {
            assert_eq!(z[j], dist.mu[j]);
        }
        // mu = 0, A = I -> eps exactly.
        let idd = GaussianStyleDistribution::new(Array1::zeros(3), Array2::eye(3));
        let eps = arr1(&[0.3, -1.2, 2.0]);
        let s = idd.sample(&eps.view());
        for j in 0..3 {
            assert_eq!(s[j], eps[j]);
        }
        // Linearity in eps.
        let e1 = Array1::from_iter((0..3).map(|_| rng::normal_f64(&mut r)));
        let e2 = Array1::from_iter((0..3).map(|_| rng::normal_f64(&mut r)));
        let (a, b) = (0.7, -1.3);
        let lhs = dist.sample(&(&e1 * a + &e2 * b).view());
        let rhs = dist.sample(&e1.view()).mapv(|x| x * a)
            + dist.sample(&e2.view()).mapv(|x| x * b)
            - dist.mu.mapv(|x| x * (a + b - 1.0));
        for j in 0..3 {
            assert!((lhs[j] - rhs[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_moments_match_monte_carlo() {
        let mut r = rng::substream(27, "style-sample-mc");
        let dist = random_dist(&mut r, 3);
        let n = 100_000;
        let mut mean = Array1::<f64>::zeros(3);
        let mut second = Array2::<f64>::zeros((3, 3));
        for _ in 0..n {
            let s = dist.sample_with(&mut r);
            mean += &s;
            for i in 0..3 {
                for j in 0..3 {
                    second[[i, j]] += s[i] * s[j];
                }
            }
        }
        mean /= n as f64;
        let mut cov = Array2::<f64>::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                cov[[i, j]] = second[[i, j]] / n as f64 - mean[i] * mean[j];
            }
        }
        let want = dist.factor_a.dot(&dist.factor_a.t());
        for ((i, j), &w) in want.indexed_iter() {
            assert!(
                (cov[[i, j]] - w).abs() < 0.05 * (1.0 + w.abs()),
                "cov[{i},{j}] = {}, want {w}",
                cov[[i, j]]
            );
        }
    }

    #[test]
    fn entropy_known_values() {
        let one_hot: Array1<f64> = arr1(&[0.0, 1.0, 0.0]);
        assert_eq!(categorical_entropy(&one_hot.view()), 0.0);
        let uniform: Array1<f64> = arr1(&[0.5, 0.5]);
        assert!((categorical_entropy(&uniform.view()) - 0.6931471805599453).abs() < 1e-12);
        let skew: Array1<f64> = arr1(&[0.9, 0.1]);
        let direct: f64 = -(0.9f64 * 0.9f64.ln() + 0.1f64 * 0.1f64.ln());
        let got = categorical_entropy(&skew.view());
        assert!((got - direct).abs() < 1e-12);
        assert!((got - 0.3250829733914482).abs() < 1e-12);
    }

    #[test]
    fn kl_known_values_and_nonnegativity() {
        let p: GaussianStyleDistribution<f64> =
            GaussianStyleDistribution::new(arr1(&[0.0]), arr2(&[[1.0]]));
        let q = GaussianStyleDistribution::new(arr1(&[1.0]), arr2(&[[1.0]]));
        // Equal unit variances, means one apart: KL = (delta mu)^2 / 2.
        let kl = gaussian_kl(&p, &q, 0.0).unwrap();
        assert!((kl - 0.5).abs() < 1e-12);
        assert!(gaussian_kl(&p, &p, 0.0).unwrap().abs() < 1e-12);

        let mut r = rng::substream(28, "style-kl-nonneg");
        for _ in 0..1000 {
            let a = random_dist(&mut r, 3);
            let b = random_dist(&mut r, 3);
            let kl = gaussian_kl(&a, &b, EPS_REG).unwrap();
            assert!(kl >= -1e-9, "KL must be nonnegative, got {kl}");
        }
    }

    #[test]
    fn kl_matches_monte_carlo_oracle() {
        let mut r = rng::substream(29, "style-kl-mc");
        let p = random_dist(&mut r, 4);
        let q = random_dist(&mut r, 4);
        let closed = gaussian_kl(&p, &q, EPS_REG).unwrap();
        // Sample x ~ p via the exact effective covariance and average the
        // log-density difference.
        let sp = p.sigma_eff(EPS_REG);
        let lp = linalg::cholesky(&sp.view()).unwrap();
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let eps = Array1::from_iter((0..4).map(|_| rng::normal_f64(&mut r)));
            let x = lp.dot(&eps) + &p.mu;
            acc += p.log_pdf(&x.view(), EPS_REG).unwrap() - q.log_pdf(&x.view(), EPS_REG).unwrap();
        }
        let mc = acc / n as f64;
        let rel = (mc - closed).abs() / closed.abs().max(1e-3);
        assert!(rel < 0.02, "closed {closed} vs MC {mc}");
    }

    #[test]
    fn posterior_entropy_pipeline_gradients() {
        // Gradient check of the Eq. 3 -> entropy composition as the
        // multi-type loss consumes it: per-value log-densities, plus log
        // priors, log-softmax, entropy.
        let mut r = rng::substream(30, "style-posterior-grad");
        let a1 = {
            let mut a = rng::normal_matrix(&mut r, 3, 3).mapv(|x| 0.3 * x);
            for i in 0..3 {
                a[[i, i]] += 0.8;
            }
            a
        };
        let a2 = {
            let mut a = rng::normal_matrix(&mut r, 3, 3).mapv(|x| 0.3 * x);
            for i in 0..3 {
                a[[i, i]] += 0.8;
            }
            a
        };
        let mu1 = rng::normal_matrix(&mut r, 1, 3);
        let mu2 = rng::normal_matrix(&mut r, 1, 3);
        let v = rng::normal_matrix(&mut r, 2, 3);
        let log_prior = array![[0.6f64.ln(), 0.4f64.ln()]];
        grad_check(
            &[a1, mu1, a2, mu2, v, log_prior],
            |t, vars| {
                let lp1 = t.gaussian_log_pdf(vars[0], vars[1], vars[4], 1e-6);
                let lp2 = t.gaussian_log_pdf(vars[2], vars[3], vars[4], 1e-6);
                let cat = t.concat_cols(&[lp1, lp2]);
                let withprior = t.add_row(cat, vars[5]);
                let lsm = t.log_softmax_rows(withprior);
                let h = t.entropy_rows(lsm);
                t.sum_all(h)
            },
            1e-5,
        );
    }
}
