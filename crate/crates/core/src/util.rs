//! Shared numeric helpers: complex Gaussian draws, descending-order SVD, and
//! deterministic seed derivation.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{CMat, CVec, C64};

/// One CN(0, 1) sample (unit total variance).
pub(crate) fn draw_cn01<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Vector of i.i.d. CN(0, 1) samples.
pub(crate) fn draw_cn01_vec<R: Rng>(rng: &mut R, n: usize) -> CVec {
    DVector::from_fn(n, |_, _| draw_cn01(rng))
}

/// Unit-norm random direction (quasi-omnidirectional probe).
pub(crate) fn draw_unit_vec<R: Rng>(rng: &mut R, n: usize) -> CVec {
    let v = draw_cn01_vec(rng, n);
    let norm = v.norm();
    if norm > 0.0 {
        v / C64::new(norm, 0.0)
    } else {
        let mut e = CVec::zeros(n);
        e[0] = C64::new(1.0, 0.0);
        e
    }
}

/// Thin SVD `m = u * diag(sigma) * v^H` with singular values sorted in
/// descending order; `u` is `m x k`, `v` is `n x k`, `k = min(m, n)`, both
/// with orthonormal columns (completed for zero singular values).
///
/// Implemented as a one-sided complex Jacobi iteration: it is slower than a
/// bidiagonalization SVD but accurate on complex inputs, which is what the
/// angle estimation stage needs.
pub(crate) fn sorted_svd(m: &CMat) -> (CMat, Vec<f64>, CMat) {
    if m.nrows() >= m.ncols() {
        jacobi_svd_tall(m)
    } else {
        let (u, s, v) = jacobi_svd_tall(&m.adjoint());
        (v, s, u)
    }
}

/// One-sided Jacobi on a tall (or square) matrix: right-multiplies plane
/// rotations until the columns are mutually orthogonal, then reads off
/// `sigma` as column norms.
fn jacobi_svd_tall(a: &CMat) -> (CMat, Vec<f64>, CMat) {
    let (rows, cols) = a.shape();
    debug_assert!(rows >= cols);
    let mut w = a.clone();
    let mut v = CMat::identity(cols, cols);

    // columns below machine precision relative to the matrix scale are
    // numerically zero; freezing them keeps degenerate pairs from churning
    // into denormal territory
    let cutoff_sq = (a.norm() * f64::EPSILON).powi(2);

    const MAX_SWEEPS: usize = 64;
    const TOL: f64 = 1e-28; // on |c|^2 / (a*b)
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let col_p = w.column(p);
                let col_q = w.column(q);
                let app = col_p.norm_squared();
                let aqq = col_q.norm_squared();
                if app <= cutoff_sq || aqq <= cutoff_sq {
                    continue;
                }
                let apq: C64 = col_p.dotc(&col_q);
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                let rel = r * r / (app * aqq);
                off = off.max(rel);
                if rel <= TOL {
                    continue;
                }
                // phase factor aligning the cross term onto the real axis
                let phase = apq.unscale(r);
                // smaller root of t^2 - 2*zeta*t - 1 = 0 zeroes the rotated
                // cross term
                let zeta = (app - aqq) / (2.0 * r);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    -zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let cs = C64::new(c, 0.0);
                let sn = C64::new(s, 0.0);
                let phase_conj = phase.conj();
                for i in 0..rows {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)] * phase_conj;
                    w[(i, p)] = cs * wp - sn * wq;
                    w[(i, q)] = sn * wp + cs * wq;
                }
                for i in 0..cols {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)] * phase_conj;
                    v[(i, p)] = cs * vp - sn * vq;
                    v[(i, q)] = sn * vp + cs * vq;
                }
            }
        }
        if off <= TOL {
            break;
        }
    }

    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = (0..cols).map(|j| w.column(j).norm()).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap().then(x.cmp(&y)));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let s_max = sigma.first().copied().unwrap_or(0.0);
    let mut u_cols: Vec<CVec> = Vec::with_capacity(cols);
    for (k, &j) in order.iter().enumerate() {
        if sigma[k] > s_max * 1e-300 && sigma[k] > 0.0 {
            u_cols.push(CVec::from(w.column(j)) / C64::new(sigma[k], 0.0));
        } else {
            // fill the null directions with an orthonormal completion
            let mut best: Option<CVec> = None;
            let mut best_norm = -1.0;
            for e in 0..rows {
                let mut cand = CVec::zeros(rows);
                cand[e] = C64::new(1.0, 0.0);
                for u in &u_cols {
                    let proj = u.dotc(&cand);
                    cand -= u * proj;
                }
                let n = cand.norm();
                if n > best_norm {
                    best_norm = n;
                    best = Some(cand);
                }
            }
            let cand = best.expect("rows >= 1");
            u_cols.push(&cand / C64::new(cand.norm(), 0.0));
        }
    }
    let v_cols: Vec<CVec> = order.iter().map(|&j| CVec::from(v.column(j))).collect();
    (CMat::from_columns(&u_cols), sigma, CMat::from_columns(&v_cols))
}

/// Singular values only, descending.
pub(crate) fn singular_values(m: &CMat) -> Vec<f64> {
    sorted_svd(m).1
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed from a master seed and a list of stream labels.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(master);
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sorted_svd_is_descending_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = CMat::from_fn(6, 4, |_, _| draw_cn01(&mut rng));
        let (u, s, v) = sorted_svd(&m);
        for w in s.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let sigma = CMat::from_diagonal(&CVec::from_iterator(
            s.len(),
            s.iter().map(|x| C64::new(*x, 0.0)),
        ));
        assert!((&u * sigma * v.adjoint() - &m).norm() < 1e-10);
    }

    #[test]
    fn sorted_svd_handles_rank_one_steering_product() {
        // regression case: a rank-1 outer product of complex phase ramps
        let geom = crate::channel::UpaGeometry::new(4, 4);
        let a_r = crate::channel::steering_vector(&geom, crate::channel::FreqPair::new(0.11, -0.37));
        let a_t = crate::channel::steering_vector(&geom, crate::channel::FreqPair::new(0.29, 0.41));
        let gain = C64::new(-0.2, 0.9);
        let h = &a_r * a_t.adjoint() * (gain * 16.0);
        let (u, s, v) = sorted_svd(&h);
        assert!((s[0] - 16.0 * gain.norm()).abs() < 1e-10, "sigma_1 = {}", s[0]);
        for sv in &s[1..] {
            assert!(*sv < 1e-10);
        }
        let got = CVec::from(u.column(0)).dotc(&(&h * CVec::from(v.column(0))));
        assert!((got.re - s[0]).abs() < 1e-10 && got.im.abs() < 1e-10);
        assert!((u.ad_mul(&u) - CMat::identity(16, 16)).norm() < 1e-10);
        assert!((v.ad_mul(&v) - CMat::identity(16, 16)).norm() < 1e-10);
    }

    #[test]
    fn sorted_svd_zero_and_wide_matrices() {
        let z = CMat::zeros(5, 3);
        let (u, s, v) = sorted_svd(&z);
        assert!(s.iter().all(|x| *x == 0.0));
        assert!((u.ad_mul(&u) - CMat::identity(3, 3)).norm() < 1e-12);
        assert!((v.ad_mul(&v) - CMat::identity(3, 3)).norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = CMat::from_fn(3, 7, |_, _| draw_cn01(&mut rng));
        let (u, s, v) = sorted_svd(&m);
        assert_eq!((u.nrows(), u.ncols(), v.nrows(), v.ncols()), (3, 3, 7, 3));
        let sigma = CMat::from_diagonal(&CVec::from_iterator(
            s.len(),
            s.iter().map(|x| C64::new(*x, 0.0)),
        ));
        assert!((&u * sigma * v.adjoint() - &m).norm() < 1e-10);
    }

    #[test]
    fn derive_seed_is_stable_and_sensitive() {
        let a = derive_seed(7, &[1, 2]);
        assert_eq!(a, derive_seed(7, &[1, 2]));
        assert_ne!(a, derive_seed(7, &[2, 1]));
        assert_ne!(a, derive_seed(8, &[1, 2]));
    }
}
