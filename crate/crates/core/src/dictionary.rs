//! Sparse monomial-dictionary regression baseline.
//!
//! Inputs are expanded into every monomial of total degree `≤ degree`
//! (graded lexicographic order, constant first). An ℓ1-penalized least
//! squares problem `(1/m)‖Φc − y‖² + λ‖c‖₁` is solved by ISTA on the Gram
//! matrix, small coefficients are truncated, and the survivors are refit by
//! ordinary least squares.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::Scales;
use crate::{Error, Result};

/// Default cap on the size of a feature matrix.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub degree: u32,
    /// One exponent vector (length `d`) per column.
    pub exponents: Vec<Vec<u32>>,
    /// `m × P` feature matrix.
    pub features: Array2<f64>,
}

/// `C(n, k)` without overflow for the sizes used here.
pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Exponent vectors of all monomials in `d` variables with total degree
/// `≤ degree`, graded, lexicographic within a degree (`x1² > x1x2 > x2²`).
pub fn monomial_exponents(d: usize, degree: u32) -> Vec<Vec<u32>> {
    fn extend(d: usize, start: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for j in start..d {
            cur[j] += 1;
            extend(d, j, left - 1, cur, out);
            cur[j] -= 1;
        }
    }
    let mut out = Vec::with_capacity(binomial(d + degree as usize, degree as usize));
    let mut cur = vec![0u32; d];
    for k in 0..=degree {
        extend(d, 0, k, &mut cur, &mut out);
    }
    out
}

fn monomial_value(row: ArrayView1<f64>, exps: &[u32]) -> f64 {
    exps.iter()
        .zip(row)
        .filter(|(e, _)| **e > 0)
        .map(|(&e, &v)| v.powi(e as i32))
        .product()
}

/// Evaluate every monomial of degree `≤ degree` on the rows of `x`.
pub fn build_dictionary(x: ArrayView2<f64>, degree: u32) -> Result<Dictionary> {
    build_dictionary_with_budget(x, degree, DEFAULT_MEMORY_BUDGET)
}

pub fn build_dictionary_with_budget(x: ArrayView2<f64>, degree: u32, budget_bytes: usize) -> Result<Dictionary> {
    if degree == 0 {
        return Err(Error::InvalidConfig("dictionary degree must be at least 1".into()));
    }
    let (m, d) = x.dim();
    let p = binomial(d + degree as usize, degree as usize);
    let bytes = p.saturating_mul(m).saturating_mul(std::mem::size_of::<f64>());
    if bytes > budget_bytes {
        return Err(Error::Resource(format!(
            "{m} x {p} feature matrix needs {bytes} bytes, budget is {budget_bytes}"
        )));
    }
    let exponents = monomial_exponents(d, degree);
    let features = evaluate_monomials(x, &exponents);
    Ok(Dictionary { degree, exponents, features })
}

/// Feature matrix for an existing exponent table (e.g. on test inputs).
pub fn evaluate_monomials(x: ArrayView2<f64>, exponents: &[Vec<u32>]) -> Array2<f64> {
    let mut features = Array2::zeros((x.nrows(), exponents.len()));
    for (mut out, row) in features.axis_iter_mut(Axis(0)).zip(x.rows()) {
        for (o, e) in out.iter_mut().zip(exponents) {
            *o = monomial_value(row, e);
        }
    }
    features
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Human-readable label such as `x23*x24` or `x5^2`; `1` for the constant.
    pub fn label(&self, column: usize) -> String {
        monomial_label(&self.exponents[column])
    }
}

pub fn monomial_label(exps: &[u32]) -> String {
    let parts: Vec<String> = exps
        .iter()
        .enumerate()
        .filter(|(_, e)| **e > 0)
        .map(|(j, &e)| if e == 1 { format!("x{}", j + 1) } else { format!("x{}^{e}", j + 1) })
        .collect();
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

/// Gram-form least-squares problem: `G = ΦᵀΦ/m`, `b = Φᵀy/m`.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    pub gram: Array2<f64>,
    pub rhs: Array1<f64>,
    /// `yᵀy / m`, so the loss is `cᵀGc − 2bᵀc + yy`.
    pub yy: f64,
    pub rows: usize,
    /// Largest eigenvalue of `G` (power iteration).
    pub gram_norm: f64,
}

impl LassoProblem {
    pub fn new(features: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Self> {
        let m = features.nrows();
        if m != y.len() {
            return Err(Error::ShapeMismatch(format!("{m} feature rows but {} targets", y.len())));
        }
        if m == 0 {
            return Err(Error::InvalidConfig("empty regression problem".into()));
        }
        let scale = 1.0 / m as f64;
        let gram = features.t().dot(&features) * scale;
        let rhs = features.t().dot(&y) * scale;
        let yy = y.dot(&y) * scale;
        let gram_norm = power_iteration(&gram, 200);
        Ok(LassoProblem { gram, rhs, yy, rows: m, gram_norm })
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    /// `(1/m)‖Φc − y‖²`
    pub fn mse(&self, c: ArrayView1<f64>) -> f64 {
        (c.dot(&self.gram.dot(&c)) - 2.0 * self.rhs.dot(&c) + self.yy).max(0.0)
    }

    /// Gradient of the mean squared error: `2(Gc − b)`.
    pub fn gradient(&self, c: ArrayView1<f64>) -> Array1<f64> {
        (self.gram.dot(&c) - &self.rhs) * 2.0
    }
}

fn power_iteration(a: &Array2<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic, not orthogonal to the top eigenvector of a PSD Gram matrix
    let mut v = Array1::from_iter((0..n).map(|i| 1.0 + (i as f64 * 0.618_033_988_75).fract()));
    let mut est = 0.0;
    for _ in 0..iters {
        let w = a.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        est = v.dot(&w) / v.dot(&v);
        v = w / norm;
    }
    // the Rayleigh quotient approaches from below; pad it
    est.max(a.dot(&v).dot(&v)) * 1.01
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IstaOptions {
    pub max_iter: usize,
    /// Stop once the largest coefficient change in an iteration falls below this.
    pub tolerance: f64,
    pub truncation: f64,
}

impl Default for IstaOptions {
    fn default() -> Self {
        IstaOptions { max_iter: 20_000, tolerance: 1e-12, truncation: 1e-4 }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// ISTA on `(1/m)‖Φc − y‖² + λ‖c‖₁` with step `1/(2‖G‖)`. Returns the
/// iterate and the number of iterations run.
pub fn ista(problem: &LassoProblem, lambda: f64, opts: &IstaOptions, start: Option<&Array1<f64>>) -> (Array1<f64>, usize) {
    let n = problem.len();
    let mut c = start.cloned().unwrap_or_else(|| Array1::zeros(n));
    if problem.gram_norm == 0.0 {
        return (c, 0);
    }
    let step = 1.0 / (2.0 * problem.gram_norm);
    let mut gc = Array1::zeros(n);
    for iter in 0..opts.max_iter {
        ndarray::linalg::general_mat_vec_mul(1.0, &problem.gram, &c, 0.0, &mut gc);
        let mut delta = 0.0f64;
        for i in 0..n {
            let grad = 2.0 * (gc[i] - problem.rhs[i]);
            let next = soft_threshold(c[i] - step * grad, step * lambda);
            delta = delta.max((next - c[i]).abs());
            c[i] = next;
        }
        if delta < opts.tolerance {
            return (c, iter + 1);
        }
    }
    (c, opts.max_iter)
}

/// Largest violation of the lasso optimality conditions at `c`:
/// `∇_i + λ sign(c_i) = 0` where `c_i ≠ 0`, `|∇_i| ≤ λ` where `c_i = 0`.
pub fn kkt_violation(problem: &LassoProblem, lambda: f64, c: ArrayView1<f64>) -> f64 {
    let grad = problem.gradient(c);
    grad.iter()
        .zip(c)
        .map(|(&g, &ci)| {
            if ci != 0.0 {
                (g + lambda * ci.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCoefficients {
    /// Coefficients on the standardized features.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    /// Dictionary columns with `|c| ≥ truncation`, after the refit.
    pub support: Vec<usize>,
    /// The refit fell back to the minimum-norm solution.
    pub rank_deficient: bool,
    pub iterations: usize,
    /// Training mean squared error of the final coefficients.
    pub mse: f64,
}

/// Solve, truncate, and refit on the surviving support.
pub fn sparse_solve(dict: &Dictionary, y: ArrayView1<f64>, lambda: f64, opts: &IstaOptions) -> Result<SparseCoefficients> {
    let problem = LassoProblem::new(dict.features.view(), y)?;
    solve_problem(&problem, lambda, opts)
}

/// [`sparse_solve`] on a precomputed Gram problem, for sweeps over `λ`.
pub fn solve_problem(problem: &LassoProblem, lambda: f64, opts: &IstaOptions) -> Result<SparseCoefficients> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be nonnegative, got {lambda}")));
    }
    let (raw, iterations) = ista(problem, lambda, opts, None);
    let support: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].abs() >= opts.truncation).collect();
    let (refit, rank_deficient) = refit_least_squares(problem, &support);
    let mut coefficients = vec![0.0; problem.len()];
    for (&i, v) in support.iter().zip(&refit) {
        coefficients[i] = *v;
    }
    // the refit can drive spurious terms to rounding level; drop them again
    let support: Vec<usize> = support.into_iter().filter(|&i| coefficients[i].abs() >= opts.truncation).collect();
    coefficients.iter_mut().enumerate().for_each(|(i, c)| {
        if support.binary_search(&i).is_err() {
            *c = 0.0;
        }
    });
    let c = Array1::from(coefficients);
    let mse = problem.mse(c.view());
    Ok(SparseCoefficients {
        coefficients: c.to_vec(),
        lambda,
        support,
        rank_deficient,
        iterations,
        mse,
    })
}

/// Least squares restricted to `support`: Cholesky of `G_SS`, or the
/// minimum-norm solution when `G_SS` is singular.
fn refit_least_squares(problem: &LassoProblem, support: &[usize]) -> (Vec<f64>, bool) {
    let k = support.len();
    if k == 0 {
        return (Vec::new(), false);
    }
    let g = DMatrix::from_fn(k, k, |a, b| problem.gram[[support[a], support[b]]]);
    let rhs = DVector::from_iterator(k, support.iter().map(|&i| problem.rhs[i]));
    if let Some(chol) = g.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = (diag.min(), diag.max());
        // a pivot this small means the Gram block is numerically singular
        if lo > 0.0 && (lo / hi).powi(2) > 1e-12 {
            let sol = chol.solve(&rhs);
            if sol.iter().all(|v| v.is_finite()) {
                return (sol.iter().copied().collect(), false);
            }
        }
    }
    let svd = g.svd(true, true);
    let tol = svd.singular_values.max() * k as f64 * f64::EPSILON;
    let sol = svd.solve(&rhs, tol).expect("SVD computed with both factors");
    (sol.iter().copied().collect(), true)
}

/// 1-based variables appearing in any surviving monomial.
pub fn dict_support_variables(sc: &SparseCoefficients, dict_exponents: &[Vec<u32>]) -> BTreeSet<usize> {
    sc.support
        .iter()
        .flat_map(|&col| {
            dict_exponents[col]
                .iter()
                .enumerate()
                .filter(|(_, e)| **e > 0)
                .map(|(j, _)| j + 1)
        })
        .collect()
}

/// Predictions on standardized features, in standardized output units.
pub fn predict(features: ArrayView2<f64>, sc: &SparseCoefficients) -> Array1<f64> {
    features.dot(&ArrayView1::from(&sc.coefficients[..]))
}

/// Coefficient of each monomial in original units: `c · α / Π σ_j^{e_j}`.
pub fn destandardize(sc: &SparseCoefficients, exponents: &[Vec<u32>], scales: &Scales) -> Vec<f64> {
    sc.coefficients
        .iter()
        .zip(exponents)
        .map(|(&c, e)| {
            let denom: f64 = e
                .iter()
                .zip(&scales.sigma)
                .map(|(&k, s)| s.powi(k as i32))
                .product();
            c * scales.alpha / denom
        })
        .collect()
}

/// JSON form of a fitted dictionary model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryReport {
    pub degree: u32,
    pub lambda: f64,
    pub terms: Vec<DictionaryTerm>,
    pub rank_deficient: bool,
    pub iterations: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryTerm {
    pub exponents: Vec<u32>,
    pub label: String,
    pub standardized: f64,
    pub original: f64,
}

impl DictionaryReport {
    pub fn new(degree: u32, exponents: &[Vec<u32>], sc: &SparseCoefficients, scales: &Scales) -> Self {
        let original = destandardize(sc, exponents, scales);
        let terms = sc
            .support
            .iter()
            .map(|&i| DictionaryTerm {
                exponents: exponents[i].clone(),
                label: monomial_label(&exponents[i]),
                standardized: sc.coefficients[i],
                original: original[i],
            })
            .collect();
        DictionaryReport {
            degree,
            lambda: sc.lambda,
            terms,
            rank_deficient: sc.rank_deficient,
            iterations: sc.iterations,
            mse: sc.mse,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_variable_quadratic_layout() {
        let x = array![[2.0, 3.0]];
        let dict = build_dictionary(x.view(), 2).unwrap();
        assert_eq!(dict.len(), 6);
        let labels: Vec<String> = (0..6).map(|i| dict.label(i)).collect();
        assert_eq!(labels, ["1", "x1", "x2", "x1^2", "x1*x2", "x2^2"]);
        assert_eq!(dict.features.row(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn zero_input_only_constant() {
        let x = Array2::zeros((3, 4));
        let dict = build_dictionary(x.view(), 3).unwrap();
        for row in dict.features.rows() {
            assert_eq!(row[0], 1.0);
            assert!(row.iter().skip(1).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn column_counts_follow_binomial() {
        assert_eq!(binomial(42, 2), 861);
        assert_eq!(monomial_exponents(40, 2).len(), 861);
        assert_eq!(monomial_exponents(5, 3).len(), binomial(8, 3));
        for e in monomial_exponents(6, 3) {
            assert!(e.iter().sum::<u32>() <= 3);
        }
    }

    #[test]
    fn memory_budget_enforced() {
        let x = Array2::zeros((1000, 40));
        assert!(matches!(build_dictionary_with_budget(x.view(), 3, 1 << 20), Err(Error::Resource(_))));
        assert!(matches!(build_dictionary(x.view(), 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn zero_lambda_square_system_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((6, 2), |_| rng.random_range(0.5..2.0));
        let dict = build_dictionary(x.view(), 2).unwrap();
        let truth = array![0.5, 1.0, -2.0, 0.3, 0.7, -0.4];
        let y = dict.features.dot(&truth);
        let sc = sparse_solve(&dict, y.view(), 0.0, &IstaOptions { max_iter: 2000, ..Default::default() }).unwrap();
        let resid = &dict.features.dot(&Array1::from(sc.coefficients.clone())) - &y;
        assert!(resid.iter().all(|r| r.abs() < 1e-9), "{resid}");
    }

    /// Cyclic coordinate descent on the same objective, run to a tight tolerance.
    fn coordinate_descent(p: &LassoProblem, lambda: f64) -> Array1<f64> {
        let n = p.len();
        let mut c = Array1::<f64>::zeros(n);
        for _ in 0..200_000 {
            let mut delta = 0.0f64;
            for i in 0..n {
                let gii = p.gram[[i, i]];
                if gii == 0.0 {
                    continue;
                }
                let partial = p.gram.row(i).dot(&c) - gii * c[i];
                let z = p.rhs[i] - partial;
                let next = soft_threshold(z, lambda / 2.0) / gii;
                delta = delta.max((next - c[i]).abs());
                c[i] = next;
            }
            if delta < 1e-15 {
                break;
            }
        }
        c
    }

    #[test]
    fn one_sparse_constant_recovered() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((50, 3), |_| rng.random_range(-1.0..1.0));
        let dict = build_dictionary(x.view(), 2).unwrap();
        let y = Array1::from_elem(50, 1.0);
        let lambda = 1e-3;
        let problem = LassoProblem::new(dict.features.view(), y.view()).unwrap();
        let (raw, _) = ista(&problem, lambda, &IstaOptions::default(), None);
        let oracle = coordinate_descent(&problem, lambda);
        for (a, b) in raw.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let sc = solve_problem(&problem, lambda, &IstaOptions::default()).unwrap();
        assert_eq!(sc.support, vec![0]);
        assert!((sc.coefficients[0] - 1.0).abs() < 1e-12);
        assert!(dict_support_variables(&sc, &dict.exponents).is_empty());
    }

    #[test]
    fn support_variables_union() {
        let exps = monomial_exponents(30, 2);
        let find = |label: &str| (0..exps.len()).find(|&i| monomial_label(&exps[i]) == label).unwrap();
        let sc = SparseCoefficients {
            coefficients: vec![0.0; exps.len()],
            lambda: 0.0,
            support: vec![find("x23*x24"), find("x25")],
            rank_deficient: false,
            iterations: 0,
            mse: 0.0,
        };
        assert_eq!(dict_support_variables(&sc, &exps), BTreeSet::from([23, 24, 25]));
    }

    #[test]
    fn rank_deficient_refit_is_flagged() {
        // two identical columns
        let feats = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let y = array![2.0, 4.0, 6.0];
        let problem = LassoProblem::new(feats.view(), y.view()).unwrap();
        let sc = solve_problem(&problem, 0.0, &IstaOptions::default()).unwrap();
        assert!(sc.rank_deficient);
        assert!((sc.coefficients[0] - 1.0).abs() < 1e-9 && (sc.coefficients[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn destandardized_coefficients() {
        let exps = vec![vec![0, 0], vec![1, 0], vec![1, 1]];
        let sc = SparseCoefficients {
            coefficients: vec![2.0, 3.0, 4.0],
            lambda: 0.0,
            support: vec![0, 1, 2],
            rank_deficient: false,
            iterations: 0,
            mse: 0.0,
        };
        let scales = Scales { sigma: vec![2.0, 5.0], alpha: 10.0 };
        assert_eq!(destandardize(&sc, &exps, &scales), vec![20.0, 15.0, 4.0]);
        let report = DictionaryReport::new(2, &exps, &sc, &scales);
        assert_eq!(report.terms[2].label, "x1*x2");
    }
}
