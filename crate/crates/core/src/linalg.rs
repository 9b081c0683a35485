//! Complex linear-algebra helpers shared across the crate.
//!
//! Thin wrappers around `nalgebra` for the handful of operations the solvers
//! need: Hermitian eigendecomposition with a deterministic ordering and phase
//! convention, seeded random unitary matrices, complex Gaussian sampling, and
//! Gauss-Hermite quadrature nodes.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Frobenius deviation of `u` from unitarity, `||u^H u - I||_F`.
pub fn unitary_deviation(u: &CMat) -> f64 {
    let n = u.ncols();
    let mut g = u.adjoint() * u;
    for i in 0..n {
        g[(i, i)] -= C64::new(1.0, 0.0);
    }
    g.norm()
}

/// Hermitian eigendecomposition with eigenvalues sorted in descending order.
///
/// Eigenvector phases are canonicalized so the entry of largest modulus in
/// each column is real and positive; this makes the decomposition a
/// deterministic function of the input.
pub fn eigh_descending(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    // Symmetrize to guard against roundoff in Hermitian inputs.
    let sym = (a + a.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut vals = Vec::with_capacity(n);
    let mut vecs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vals.push(eig.eigenvalues[src]);
        let col = eig.eigenvectors.column(src);
        // Phase convention: largest-modulus entry made real positive.
        let mut pivot = C64::new(1.0, 0.0);
        let mut best = -1.0;
        for i in 0..n {
            let m = col[i].norm();
            if m > best {
                best = m;
                pivot = col[i];
            }
        }
        let phase = if best > 0.0 {
            pivot.conj() / pivot.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for i in 0..n {
            vecs[(i, dst)] = col[i] * phase;
        }
    }
    (vals, vecs)
}

/// Hermitian square root `a^{1/2}` with tiny negative eigenvalues clamped to zero.
pub fn hermitian_sqrt(a: &CMat) -> CMat {
    let (vals, vecs) = eigh_descending(a);
    let n = a.nrows();
    let mut scaled = vecs.clone();
    for (j, &v) in vals.iter().enumerate() {
        let s = if v > 0.0 { v.sqrt() } else { 0.0 };
        for i in 0..n {
            scaled[(i, j)] *= C64::new(s, 0.0);
        }
    }
    scaled * vecs.adjoint()
}

/// Deterministic RNG for a (seed, stream) pair.
///
/// Streams let independent tasks (restarts, sweep points, channel samples)
/// derive non-overlapping generators from one user-facing seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One sample of the standard circular complex Gaussian, `E|w|^2 = 1`.
pub fn complex_standard_normal<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}

/// Matrix with IID standard complex Gaussian entries.
pub fn complex_gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_standard_normal(rng))
}

/// Haar-like random unitary from the QR factorization of a complex Gaussian
/// matrix, with the R diagonal phases absorbed so the result is well spread.
pub fn random_unitary<R: Rng>(n: usize, rng: &mut R) -> CMat {
    let g = complex_gaussian_matrix(n, n, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Re-orthonormalizes an almost-unitary matrix via modified Gram-Schmidt.
pub fn orthonormalize(u: &CMat) -> CMat {
    let n = u.nrows();
    let mut q = u.clone();
    for j in 0..n {
        for k in 0..j {
            let proj: C64 = (0..n).map(|i| q[(i, k)].conj() * q[(i, j)]).sum();
            for i in 0..n {
                let sub = proj * q[(i, k)];
                q[(i, j)] -= sub;
            }
        }
        let norm: f64 = (0..n).map(|i| q[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..n {
                q[(i, j)] /= C64::new(norm, 0.0);
            }
        }
    }
    q
}

/// Matrix exponential of a skew-Hermitian matrix, computed through the
/// eigendecomposition of `i*A`; the result is unitary.
pub fn expm_skew_hermitian(a: &CMat) -> CMat {
    let n = a.nrows();
    let herm = a.map(|z| z * C64::new(0.0, 1.0));
    let (vals, vecs) = eigh_descending(&herm);
    // expm(A) = expm(-i * herm) = U diag(e^{-i w}) U^H
    let mut scaled = vecs.clone();
    for (j, &w) in vals.iter().enumerate() {
        let ph = C64::new(0.0, -w).exp();
        for i in 0..n {
            scaled[(i, j)] *= ph;
        }
    }
    orthonormalize(&(scaled * vecs.adjoint()))
}

/// Gauss-Hermite nodes and weights of the given order for the weight
/// `exp(-x^2)`, computed with the Golub-Welsch algorithm.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let b = (k as f64 * 0.5).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut order_idx: Vec<usize> = (0..order).collect();
    order_idx.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut nodes = Vec::with_capacity(order);
    let mut weights = Vec::with_capacity(order);
    for &i in &order_idx {
        nodes.push(eig.eigenvalues[i]);
        let first = eig.eigenvectors[(0, i)];
        weights.push(sqrt_pi * first * first);
    }
    (nodes, weights)
}

/// Convenience: real diagonal of a complex matrix.
pub fn real_diagonal(a: &CMat) -> Vec<f64> {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)].re).collect()
}

/// Builds a complex diagonal matrix from real entries.
pub fn diag_real(values: &[f64]) -> CMat {
    let n = values.len();
    CMat::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(values[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = seeded_rng(7, 0);
        for n in [1, 2, 4, 6] {
            let u = random_unitary(n, &mut rng);
            assert!(unitary_deviation(&u) < 1e-12, "n={n}");
        }
    }

    #[test]
    fn eigh_reconstructs_and_sorts() {
        let mut rng = seeded_rng(3, 0);
        let g = complex_gaussian_matrix(5, 5, &mut rng);
        let a = &g * g.adjoint();
        let (vals, vecs) = eigh_descending(&a);
        for w in vals.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let rebuilt = &vecs * diag_real(&vals) * vecs.adjoint();
        assert!((rebuilt - &a).norm() < 1e-10);
    }

    #[test]
    fn hermitian_sqrt_squares_back() {
        let mut rng = seeded_rng(4, 0);
        let g = complex_gaussian_matrix(4, 4, &mut rng);
        let a = &g * g.adjoint();
        let s = hermitian_sqrt(&a);
        assert!((&s * &s - &a).norm() < 1e-9);
    }

    #[test]
    fn expm_skew_is_unitary_and_matches_series() {
        let mut rng = seeded_rng(5, 0);
        let g = complex_gaussian_matrix(3, 3, &mut rng);
        let a = (&g - g.adjoint()).scale(0.05);
        let e = expm_skew_hermitian(&a);
        assert!(unitary_deviation(&e) < 1e-12);
        // Second-order Taylor comparison for a small generator.
        let approx2 = CMat::identity(3, 3) + &a + (&a * &a).scale(0.5);
        assert!((&e - approx2).norm() < 1e-3);
    }

    #[test]
    fn gauss_hermite_integrates_moments() {
        let (nodes, weights) = gauss_hermite(16);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let m0: f64 = weights.iter().sum();
        let m2: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x * x).sum();
        let m4: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(4)).sum();
        assert_abs_diff_eq!(m0, sqrt_pi, epsilon = 1e-12);
        assert_abs_diff_eq!(m2, sqrt_pi / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m4, 3.0 * sqrt_pi / 4.0, epsilon = 1e-11);
    }

    #[test]
    fn complex_normal_has_unit_power() {
        let mut rng = seeded_rng(11, 0);
        let n = 40_000;
        let p: f64 = (0..n).map(|_| complex_standard_normal(&mut rng).norm_sqr()).sum::<f64>() / n as f64;
        assert!((p - 1.0).abs() < 0.02, "empirical power {p}");
    }
}
