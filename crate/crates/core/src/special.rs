//! Fast paths for structured regimes: separable (rank-one) correlation,
//! purely deterministic channels, and large arrays with sparse beam-domain
//! coupling.
//!
//! Each path is algebraically equivalent to the general fixed point on its
//! regime; cross-solver tests enforce the equivalences rather than trusting
//! the reductions.

use crate::channel::RayChannel;
use crate::constellation::Constellation;
use crate::detequiv::FixedPointOptions;
use crate::error::{Error, Result};
use crate::linalg::{diag_real, real_diagonal, C64, CMat};
use crate::metrics::{group_metrics, vector_channel_metrics, GroupMetrics, NoiseExpectation};
use crate::precoder::Precoder;

// ---------------------------------------------------------------------------
// Separable (rank-one) correlation: two scalar unknowns
// ---------------------------------------------------------------------------

/// Converged scalar state of the separable reduction.
#[derive(Debug, Clone)]
pub struct KroneckerState {
    /// Receive-side scalar; the equivalent channel is `gamma0 * A_T`.
    pub gamma0: f64,
    /// Transmit-side scalar; `R = psi0 * A_R`.
    pub psi0: f64,
    pub a_t: CMat,
    pub a_r: CMat,
    pub group_metrics: Vec<GroupMetrics>,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves the two-scalar fixed point for rank-one coupling (no Rice
/// component): `gamma0 = tr((I + psi0 A_R)^{-1} A_R)` and
/// `psi0 = tr(Omega A_T)`. Returns the state and the equivalent channel
/// `Xi = gamma0 * A_T`.
///
/// The transmit eigenvalues are sorted in descending order internally (with
/// the basis columns permuted to match) so the group structure addresses the
/// same ranked subchannels as the general solver.
pub fn kronecker_fixed_point(
    lambda_r: &[f64],
    lambda_t: &[f64],
    u_t: &CMat,
    precoder: &Precoder,
    c: &Constellation,
    ne: &NoiseExpectation,
    opts: &FixedPointOptions,
    cap: u128,
) -> Result<(KroneckerState, CMat)> {
    let n_t = lambda_t.len();
    if u_t.nrows() != n_t || u_t.ncols() != n_t {
        return Err(Error::DimensionMismatch("transmit basis shape".into()));
    }
    let partition = precoder.partition();
    if partition.stream_count() != n_t {
        return Err(Error::DimensionMismatch("partition stream count".into()));
    }

    // Sort transmit eigenvalues descending, carrying the basis columns along.
    let mut order: Vec<usize> = (0..n_t).collect();
    order.sort_by(|&a, &b| {
        lambda_t[b]
            .partial_cmp(&lambda_t[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let lt: Vec<f64> = order.iter().map(|&i| lambda_t[i]).collect();
    let mut u_sorted = CMat::zeros(n_t, n_t);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u_t.column(src).into_owned());
    }

    let n_s = partition.group_size();
    let s_count = partition.group_count();

    let eval = |gamma0: f64, psi0: f64| -> Result<(f64, f64, Vec<GroupMetrics>)> {
        // gamma update needs only the receive eigenvalues.
        let gamma_next: f64 = lambda_r.iter().map(|&l| l / (1.0 + psi0 * l)).sum();
        // psi update: trace of the block MMSE against the sorted transmit
        // eigenvalues.
        let mut blocks = Vec::with_capacity(s_count);
        let mut psi_next = 0.0;
        for s in 0..s_count {
            let xi_s: Vec<f64> = (0..n_s)
                .map(|i| (gamma0 * lt[partition.subchannel(s, i)]).max(0.0))
                .collect();
            let m = group_metrics(&xi_s, &precoder.lambda()[s], &precoder.v()[s], c, ne, cap)?;
            for i in 0..n_s {
                psi_next += lt[partition.subchannel(s, i)] * m.omega[(i, i)].re;
            }
            blocks.push(m);
        }
        Ok((gamma_next, psi_next, blocks))
    };

    let mut gamma0: f64 = lambda_r.iter().sum();
    let mut psi0 = 0.0;
    // Initialization: psi from the MMSE matrix at the initial gamma.
    let (_, psi_init, _) = eval(gamma0, psi0)?;
    psi0 = psi_init;

    for iter in 1..=opts.max_iter {
        let (g_next, p_next, blocks) = eval(gamma0, psi0)?;
        let residual = (g_next - gamma0).abs() + (p_next - psi0).abs();
        if residual <= opts.tol {
            let a_t = &u_sorted * diag_real(&lt) * u_sorted.adjoint();
            let a_r_diag = diag_real(lambda_r);
            let xi = a_t.map(|z| z * C64::new(gamma0, 0.0));
            return Ok((
                KroneckerState {
                    gamma0,
                    psi0,
                    a_t,
                    a_r: a_r_diag,
                    group_metrics: blocks,
                    residual,
                    iterations: iter,
                },
                xi,
            ));
        }
        gamma0 = opts.damping * gamma0 + (1.0 - opts.damping) * g_next;
        psi0 = opts.damping * psi0 + (1.0 - opts.damping) * p_next;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: f64::NAN,
    })
}

// ---------------------------------------------------------------------------
// Deterministic channel
// ---------------------------------------------------------------------------

/// Mutual information of the deterministic channel `y = H_bar B d + n`; for
/// an infinite Rice factor this equals the asymptotic expression exactly, no
/// fixed point involved.
pub fn deterministic_mi(
    h_bar: &CMat,
    b: &CMat,
    c: &Constellation,
    ne: &NoiseExpectation,
    cap: u128,
) -> Result<f64> {
    let f = h_bar * b;
    Ok(vector_channel_metrics(&f, c, ne, cap, false)?.mi_bits)
}

// ---------------------------------------------------------------------------
// Massive arrays: diagonal fixed point in the beam domain
// ---------------------------------------------------------------------------

/// Converged state of the beam-domain solver.
#[derive(Debug, Clone)]
pub struct MassiveState {
    pub gamma: Vec<f64>,
    pub psi: Vec<f64>,
    pub t_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    /// Diagonal of the (diagonal) equivalent channel, physical order.
    pub xi_diag: Vec<f64>,
    pub omega: CMat,
    pub group_metrics: Vec<GroupMetrics>,
    pub mi_xz_bits: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MassiveState {
    /// Asymptotic mutual information assembled from this state.
    pub fn asymptotic_bits(&self, g: &nalgebra::DMatrix<f64>) -> f64 {
        let ln2 = std::f64::consts::LN_2;
        let logdet: f64 = self.r_diag.iter().map(|&r| r.ln_1p()).sum();
        let mut quad = 0.0;
        for n in 0..g.nrows() {
            for m in 0..g.ncols() {
                quad += self.gamma[n] * g[(n, m)] * self.psi[m];
            }
        }
        self.mi_xz_bits + (logdet - quad) / ln2
    }
}

/// Solves the fixed point for ray-model statistics entirely with diagonal
/// matrices and the sparse beam-domain Rice pattern; no eigendecomposition
/// is needed because the left precoder factor equals the transmit basis.
///
/// The precoder's partition must address the physical (beam-domain)
/// subchannels. Fails when the sparse pattern would make the equivalent
/// channel non-diagonal (two entries sharing a receive beam).
pub fn massive_fixed_point(
    ray: &RayChannel,
    precoder: &Precoder,
    c: &Constellation,
    ne: &NoiseExpectation,
    opts: &FixedPointOptions,
    cap: u128,
) -> Result<MassiveState> {
    let stats = &ray.statistics;
    let g = stats.g();
    let n_r = stats.n_r();
    let n_t = stats.n_t();
    let partition = precoder.partition();
    if partition.stream_count() != n_t {
        return Err(Error::DimensionMismatch("partition stream count".into()));
    }
    // Two entries on one receive beam couple distinct transmit beams.
    for (i, &(n1, m1, _)) in ray.los_bins.iter().enumerate() {
        for &(n2, m2, _) in &ray.los_bins[i + 1..] {
            if n1 == n2 && m1 != m2 {
                return Err(Error::NonDiagonalEquivalent);
            }
        }
    }

    let n_s = partition.group_size();
    let s_count = partition.group_count();

    struct Eval {
        t_diag: Vec<f64>,
        r_diag: Vec<f64>,
        xi_diag: Vec<f64>,
        omega: CMat,
        blocks: Vec<GroupMetrics>,
        mi: f64,
        gamma_next: Vec<f64>,
        psi_next: Vec<f64>,
        residual: f64,
    }

    let eval = |gamma: &[f64], psi: &[f64]| -> Result<Eval> {
        let t_diag: Vec<f64> = (0..n_t)
            .map(|m| (0..n_r).map(|n| g[(n, m)] * gamma[n]).sum())
            .collect();
        let r_diag: Vec<f64> = (0..n_r)
            .map(|n| (0..n_t).map(|m| g[(n, m)] * psi[m]).sum())
            .collect();
        let inv_r: Vec<f64> = r_diag.iter().map(|&r| 1.0 / (1.0 + r)).collect();

        let mut xi_diag = t_diag.clone();
        for &(n, m, h) in &ray.los_bins {
            xi_diag[m] += h.norm_sqr() * inv_r[n];
        }

        let mut blocks = Vec::with_capacity(s_count);
        let mut mi = 0.0;
        for s in 0..s_count {
            let xi_s: Vec<f64> = (0..n_s)
                .map(|i| xi_diag[partition.subchannel(s, i)].max(0.0))
                .collect();
            let m = group_metrics(&xi_s, &precoder.lambda()[s], &precoder.v()[s], c, ne, cap)?;
            mi += m.mi_bits;
            blocks.push(m);
        }
        let omega = crate::metrics::assemble_omega_eq(
            partition,
            &blocks.iter().map(|b| b.omega.clone()).collect::<Vec<_>>(),
        )?;

        let psi_next = real_diagonal(&omega);
        let mut gamma_next = inv_r.clone();
        for &(n, m, h) in &ray.los_bins {
            // [H_hat Omega H_hat^H]_nn for the sparse pattern.
            let cross = h.norm_sqr() * omega[(m, m)].re;
            gamma_next[n] -= inv_r[n] * inv_r[n] * cross;
        }

        let d_gamma = gamma
            .iter()
            .zip(&gamma_next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let d_psi = psi
            .iter()
            .zip(&psi_next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        Ok(Eval {
            t_diag,
            r_diag,
            xi_diag,
            omega,
            blocks,
            mi,
            gamma_next,
            psi_next,
            residual: d_gamma + d_psi,
        })
    };

    let mut gamma = vec![1.0; n_r];
    let mut psi = vec![0.0; n_t];
    let init = eval(&gamma, &psi)?;
    psi = init.psi_next;

    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    for iter in 1..=opts.max_iter {
        iterations = iter;
        let e = eval(&gamma, &psi)?;
        if best.as_ref().map_or(true, |(r, _, _)| e.residual < *r) {
            best = Some((e.residual, gamma.clone(), psi.clone()));
        }
        if e.residual <= opts.tol {
            return Ok(MassiveState {
                gamma,
                psi,
                t_diag: e.t_diag,
                r_diag: e.r_diag,
                xi_diag: e.xi_diag,
                omega: e.omega,
                group_metrics: e.blocks,
                mi_xz_bits: e.mi,
                residual: e.residual,
                iterations,
                converged: true,
            });
        }
        for (x, &nx) in gamma.iter_mut().zip(&e.gamma_next) {
            *x = opts.damping * *x + (1.0 - opts.damping) * nx;
        }
        for (x, &nx) in psi.iter_mut().zip(&e.psi_next) {
            *x = opts.damping * *x + (1.0 - opts.damping) * nx;
        }
    }
    let (_, g_best, p_best) = best.expect("at least one iteration ran");
    let e = eval(&g_best, &p_best)?;
    log::warn!(
        "beam-domain fixed point did not converge after {iterations} iterations (residual {:.3e})",
        e.residual
    );
    Ok(MassiveState {
        gamma: g_best,
        psi: p_best,
        t_diag: e.t_diag,
        r_diag: e.r_diag,
        xi_diag: e.xi_diag,
        omega: e.omega,
        group_metrics: e.blocks,
        mi_xz_bits: e.mi,
        residual: e.residual,
        iterations,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ray_statistics, Ray};
    use crate::constellation::{Constellation, ConstellationKind, ENUMERATION_CAP};
    use crate::precoder::{pair_subchannels, Precoder};

    fn qpsk() -> Constellation {
        Constellation::new(ConstellationKind::Qpsk, 4).unwrap()
    }

    fn gh(order: usize) -> NoiseExpectation {
        NoiseExpectation::GaussHermite { order }
    }

    #[test]
    fn kronecker_zero_power_gives_trace_fixed_point() {
        let lambda_r = [0.5, 1.5, 1.0];
        let lambda_t = [2.0, 0.5, 0.5];
        let u_t = CMat::identity(3, 3);
        let p = Precoder::uniform(3, 1, 0.0).unwrap();
        let (state, xi) = kronecker_fixed_point(
            &lambda_r,
            &lambda_t,
            &u_t,
            &p,
            &qpsk(),
            &gh(8),
            &FixedPointOptions::default(),
            ENUMERATION_CAP,
        )
        .unwrap();
        // Omega = 0 so psi0 = 0 and gamma0 = sum of receive eigenvalues.
        assert!((state.psi0).abs() < 1e-12);
        assert!((state.gamma0 - 3.0).abs() < 1e-9);
        // Xi = gamma0 * A_T has the sorted transmit eigenvalues on the diagonal.
        assert!((xi[(0, 0)].re - 3.0 * 2.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_mi_is_kernel_on_composite_channel() {
        let mut rng = crate::linalg::seeded_rng(3, 0);
        let h = crate::linalg::complex_gaussian_matrix(2, 2, &mut rng);
        let b = diag_real(&[1.0, 1.0]);
        let direct = deterministic_mi(&h, &b, &qpsk(), &gh(12), ENUMERATION_CAP).unwrap();
        let f = &h * &b;
        let kernel = vector_channel_metrics(&f, &qpsk(), &gh(12), ENUMERATION_CAP, false)
            .unwrap()
            .mi_bits;
        assert_eq!(direct, kernel);
        assert_eq!(
            deterministic_mi(&CMat::zeros(2, 2), &b, &qpsk(), &gh(12), ENUMERATION_CAP).unwrap(),
            0.0
        );
    }

    fn sample_ray_channel(n: usize, with_los: bool) -> RayChannel {
        let los = Ray {
            attenuation: 0.9,
            path_length: 21.3,
            aod_rad: 0.35,
            aoa_rad: -0.52,
        };
        let scattered: Vec<Ray> = (0..7)
            .map(|i| Ray {
                attenuation: 0.5 - 0.03 * i as f64,
                path_length: 25.0 + 1.7 * i as f64,
                aod_rad: -1.3 + 0.34 * i as f64,
                aoa_rad: 1.25 - 0.31 * i as f64,
            })
            .collect();
        ray_statistics(with_los.then_some(&los), &scattered, 0.1, n, n).unwrap()
    }

    #[test]
    fn massive_solver_converges_and_flags_structure() {
        let ray = sample_ray_channel(4, true);
        let partition_gains = {
            // Pair against the zero-order diagonal gains (column sums).
            let g = ray.statistics.g();
            (0..4)
                .map(|m| (0..4).map(|n| g[(n, m)]).sum::<f64>())
                .collect::<Vec<f64>>()
        };
        let partition = pair_subchannels(&partition_gains, 2).unwrap();
        let p = Precoder::new(
            CMat::identity(4, 4),
            vec![vec![1.0, 1.0]; 2],
            vec![CMat::identity(2, 2); 2],
            partition,
            4.0,
        )
        .unwrap();
        let state = massive_fixed_point(
            &ray,
            &p,
            &qpsk(),
            &gh(8),
            &FixedPointOptions::default(),
            ENUMERATION_CAP,
        )
        .unwrap();
        assert!(state.converged);
        assert!(state.xi_diag.iter().all(|&x| x >= 0.0));
        assert!(state.psi.iter().all(|&x| x >= -1e-12));
        let asy = state.asymptotic_bits(ray.statistics.g());
        assert!(asy.is_finite() && asy > 0.0);
    }

    #[test]
    fn conflicting_los_bins_are_rejected() {
        let mut ray = sample_ray_channel(4, true);
        ray.los_bins = vec![
            (1, 0, C64::new(1.0, 0.0)),
            (1, 2, C64::new(0.5, 0.0)),
        ];
        let p = Precoder::uniform(4, 2, 4.0).unwrap();
        let err = massive_fixed_point(
            &ray,
            &p,
            &qpsk(),
            &gh(8),
            &FixedPointOptions::default(),
            ENUMERATION_CAP,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDiagonalEquivalent));
    }
}
