//! Greedy sparse-approximation solvers: CoSaMP and an OMP baseline, backed by
//! a rank-safe minimum-norm least-squares kernel, plus an exhaustive oracle
//! for testing.
//!
//! Column indices in [`SparseEstimate::support`] are 0-based; the 1-based grid
//! contract lives at the codebook boundary.

use itertools::Itertools;
use nalgebra::Cholesky;

use crate::channel::{CMat, CVec, C64};
use crate::error::{Error, Result};
use crate::util::sorted_svd;

/// One compressed-sensing instance: observations `y` and a borrowed
/// measurement matrix `phi` with `y = phi * theta + noise` for some sparse
/// `theta`.
#[derive(Debug, Clone)]
pub struct Measurement<'a> {
    pub y: CVec,
    pub phi: &'a CMat,
}

impl<'a> Measurement<'a> {
    pub fn new(y: CVec, phi: &'a CMat) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::invalid("measurement: phi must be non-empty"));
        }
        if y.len() != phi.nrows() {
            return Err(Error::invalid(format!(
                "measurement: y has {} entries but phi has {} rows",
                y.len(),
                phi.nrows()
            )));
        }
        Ok(Self { y, phi })
    }

    pub fn num_atoms(&self) -> usize {
        self.phi.ncols()
    }
}

/// Sparse solution: sorted support, aligned coefficients, and the exact
/// residual norm.
#[derive(Debug, Clone)]
pub struct SparseEstimate {
    pub support: Vec<usize>,
    pub coefficients: CVec,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl SparseEstimate {
    /// Dense length-`g` vector with the coefficients scattered onto the
    /// support.
    pub fn to_dense(&self, g: usize) -> CVec {
        let mut v = CVec::zeros(g);
        for (k, &j) in self.support.iter().enumerate() {
            v[j] = self.coefficients[k];
        }
        v
    }
}

/// Minimum-norm least-squares solution of `a * x = y` via the pseudoinverse;
/// rank deficiency never errors.
pub fn least_squares(a: &CMat, y: &CVec) -> CVec {
    if a.ncols() == 0 {
        return CVec::zeros(0);
    }
    let (u, s, v) = sorted_svd(a);
    let s_max = s.first().copied().unwrap_or(0.0);
    let eps = s_max * 1e-13;
    let projections = u.ad_mul(y);
    let mut x = CVec::zeros(a.ncols());
    for k in 0..s.len() {
        if s[k] > eps {
            x += CVec::from(v.column(k)) * (projections[k] / C64::new(s[k], 0.0));
        }
    }
    x
}

fn gather_columns(phi: &CMat, idx: &[usize]) -> CMat {
    let cols: Vec<CVec> = idx.iter().map(|&j| CVec::from(phi.column(j))).collect();
    if cols.is_empty() {
        CMat::zeros(phi.nrows(), 0)
    } else {
        CMat::from_columns(&cols)
    }
}

/// Indices of the `take` largest-magnitude entries, ties toward the lower
/// index, zero-magnitude entries never selected.
fn top_magnitudes(values: &CVec, take: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len())
        .filter(|&j| values[j].norm() > 0.0)
        .collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .norm()
            .partial_cmp(&values[a].norm())
            .unwrap()
            .then(a.cmp(&b))
    });
    idx.truncate(take);
    idx
}

fn refit(phi: &CMat, y: &CVec, support: &[usize]) -> (CVec, CVec, f64) {
    let a = gather_columns(phi, support);
    let theta = least_squares(&a, y);
    let residual = y - &a * &theta;
    let norm = residual.norm();
    (theta, residual, norm)
}

/// CoSaMP: per iteration select the `2L` strongest proxy atoms, merge with the
/// current support, least-squares on the merged set, prune back to `L`, and
/// re-project. Stops at `max_iter` iterations, at `residual <= tol`, or as
/// soon as an iteration fails to improve the residual (the failed update is
/// discarded).
pub fn cosamp(
    meas: &Measurement<'_>,
    sparsity: usize,
    max_iter: usize,
    tol: f64,
) -> Result<SparseEstimate> {
    cosamp_traced(meas, sparsity, max_iter, tol).map(|(est, _)| est)
}

/// [`cosamp`] that also reports the accepted per-iteration residual norms.
pub fn cosamp_traced(
    meas: &Measurement<'_>,
    sparsity: usize,
    max_iter: usize,
    tol: f64,
) -> Result<(SparseEstimate, Vec<f64>)> {
    if sparsity == 0 {
        return Err(Error::invalid("cosamp: sparsity must be >= 1"));
    }
    if 2 * sparsity > meas.num_atoms() {
        return Err(Error::invalid(format!(
            "cosamp: need 2*sparsity <= {} atoms, got sparsity {}",
            meas.num_atoms(),
            sparsity
        )));
    }

    let mut support: Vec<usize> = Vec::new();
    let mut coefficients = CVec::zeros(0);
    let mut residual = meas.y.clone();
    let mut res_norm = residual.norm();
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let proxy = meas.phi.adjoint() * &residual;
        let picked = top_magnitudes(&proxy, 2 * sparsity);

        let mut merged = support.clone();
        merged.extend(picked);
        merged.sort_unstable();
        merged.dedup();
        debug_assert!(merged.len() <= 3 * sparsity);

        let a = gather_columns(meas.phi, &merged);
        let theta = least_squares(&a, &meas.y);
        let keep = top_magnitudes(&theta, sparsity);
        let mut pruned: Vec<usize> = keep.iter().map(|&k| merged[k]).collect();
        pruned.sort_unstable();

        let (theta2, residual2, norm2) = refit(meas.phi, &meas.y, &pruned);
        if norm2 > res_norm + 1e-12 * (1.0 + res_norm) {
            // no further progress; keep the previous iterate
            break;
        }
        support = pruned;
        coefficients = theta2;
        residual = residual2;
        res_norm = norm2;
        history.push(res_norm);
        if res_norm <= tol {
            break;
        }
    }

    Ok((
        SparseEstimate {
            support,
            coefficients,
            residual_norm: res_norm,
            iterations,
        },
        history,
    ))
}

/// Orthogonal matching pursuit: one atom per iteration by the strongest
/// proxy, least squares on the running support, `sparsity` iterations or
/// residual below `tol`.
pub fn omp(meas: &Measurement<'_>, sparsity: usize, tol: f64) -> Result<SparseEstimate> {
    omp_traced(meas, sparsity, tol).map(|(est, _)| est)
}

/// [`omp`] that also reports per-iteration residual norms.
pub fn omp_traced(
    meas: &Measurement<'_>,
    sparsity: usize,
    tol: f64,
) -> Result<(SparseEstimate, Vec<f64>)> {
    if sparsity == 0 {
        return Err(Error::invalid("omp: sparsity must be >= 1"));
    }
    if sparsity > meas.num_atoms() {
        return Err(Error::invalid(format!(
            "omp: sparsity {} exceeds atom count {}",
            sparsity,
            meas.num_atoms()
        )));
    }

    let mut support: Vec<usize> = Vec::new();
    let mut coefficients = CVec::zeros(0);
    let mut residual = meas.y.clone();
    let mut res_norm = residual.norm();
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < sparsity && res_norm > tol {
        let proxy = meas.phi.adjoint() * &residual;
        let picked = top_magnitudes(&proxy, 1);
        let Some(&best) = picked.first() else {
            break; // residual orthogonal to every atom
        };
        iterations += 1;
        if !support.contains(&best) {
            support.push(best);
        }
        let (theta, r, n) = refit(meas.phi, &meas.y, &support);
        coefficients = theta;
        residual = r;
        res_norm = n;
        history.push(res_norm);
    }

    // canonical ordering: ascending support with aligned coefficients
    let mut order: Vec<usize> = (0..support.len()).collect();
    order.sort_by_key(|&k| support[k]);
    let sorted_support: Vec<usize> = order.iter().map(|&k| support[k]).collect();
    let sorted_coeffs = CVec::from_iterator(order.len(), order.iter().map(|&k| coefficients[k]));

    Ok((
        SparseEstimate {
            support: sorted_support,
            coefficients: sorted_coeffs,
            residual_norm: res_norm,
            iterations,
        },
        history,
    ))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut acc: u128 = 1;
    for i in 0..k.min(n - k) {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if acc > u128::MAX / 2 {
            return u128::MAX;
        }
    }
    acc
}

const ORACLE_SUPPORT_LIMIT: u128 = 1_000_000;

/// Exhaustive sparse fit: evaluates every size-`sparsity` support by least
/// squares and returns the global minimum-residual estimate. Refuses to run
/// when the number of candidate supports exceeds 10^6.
pub fn oracle_sparse_fit(meas: &Measurement<'_>, sparsity: usize) -> Result<SparseEstimate> {
    let g = meas.num_atoms();
    if sparsity == 0 || sparsity > g {
        return Err(Error::invalid(format!(
            "oracle_sparse_fit: sparsity {sparsity} out of range for {g} atoms"
        )));
    }
    let count = binomial(g, sparsity);
    if count > ORACLE_SUPPORT_LIMIT {
        return Err(Error::invalid(format!(
            "oracle_sparse_fit: {count} candidate supports exceed the {ORACLE_SUPPORT_LIMIT} limit"
        )));
    }

    let y_sq = meas.y.norm_squared();
    let mut best_sq = f64::INFINITY;
    let mut best_support: Option<Vec<usize>> = None;
    let mut evaluated = 0usize;

    for support in (0..g).combinations(sparsity) {
        evaluated += 1;
        // normal equations on the candidate columns; residual^2 follows from
        // ||y||^2 - Re(b^H theta) with b = A^H y
        let a = gather_columns(meas.phi, &support);
        let gram = a.adjoint() * &a;
        let b = a.adjoint() * &meas.y;
        let res_sq = match Cholesky::new(gram) {
            Some(ch) => {
                let theta = ch.solve(&b);
                (y_sq - b.dotc(&theta).re).max(0.0)
            }
            None => {
                // rank-deficient candidate; fall back to the SVD solve
                let theta = least_squares(&a, &meas.y);
                (&meas.y - &a * &theta).norm_squared()
            }
        };
        if res_sq < best_sq {
            best_sq = res_sq;
            best_support = Some(support);
        }
    }

    let support = best_support.expect("at least one support is always evaluated");
    let (coefficients, _, residual_norm) = refit(meas.phi, &meas.y, &support);
    Ok(SparseEstimate {
        support,
        coefficients,
        residual_norm,
        iterations: evaluated,
    })
}
