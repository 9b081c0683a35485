//! Finite-alphabet mutual information and MMSE metrics.
//!
//! Everything here reduces to one kernel: given an effective channel `F`,
//! signals `d` with IID entries from a constellation, and unit complex
//! Gaussian noise, compute `I(d; F d + n)` and the error covariance of the
//! conditional-mean estimate of `d`. The kernel enumerates the `M^n`
//! hypotheses, evaluates the noise expectation by tensor Gauss-Hermite
//! quadrature or seeded Monte Carlo, and stabilizes every log-sum-exp by max
//! subtraction.
//!
//! Two structural optimizations keep the enumeration affordable:
//! - the channel is reduced to a canonical factor of its Gram matrix, so the
//!   noise integral runs over `rank(F)` complex dimensions instead of the
//!   output dimension;
//! - hypotheses with identical channel images are merged into weighted
//!   classes, which collapses rank-deficient precoders (for instance
//!   beamformers) to a handful of effective symbols.

use std::collections::HashMap;

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::linalg::{eigh_descending, seeded_rng, C64, CMat, CVec};

/// Cap on the total tensor-quadrature grid size, `order^(2 dim) <= 2^20`.
pub const QUADRATURE_GRID_CAP: u128 = 1 << 20;

/// Relative eigenvalue threshold below which a Gram direction is treated as
/// carrying no signal.
const RANK_TOL: f64 = 1e-14;

/// Terms this far (in nats) below the running maximum are dropped from
/// log-sum-exp sums; the induced relative error is below 1e-17 per term.
const EXP_CUTOFF: f64 = 46.0;

/// How the expectation over the additive noise is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseExpectation {
    /// Tensor-product Gauss-Hermite quadrature with the given order per real
    /// dimension. Deterministic; the reported standard error is zero.
    GaussHermite { order: usize },
    /// Seeded Monte Carlo average over complex Gaussian draws. The same
    /// stream of draws is reused across hypotheses (common random numbers).
    MonteCarlo { samples: usize, seed: u64 },
}

impl NoiseExpectation {
    /// Default scheme for a noise space of `dim` complex dimensions:
    /// Gauss-Hermite of order 16 when the tensor grid fits the cap,
    /// otherwise Monte Carlo with the given sample count.
    pub fn auto(dim: usize, mc_samples: usize, seed: u64) -> Self {
        let order: u128 = 16;
        if dim > 0 && order.pow(2 * dim as u32) <= QUADRATURE_GRID_CAP {
            NoiseExpectation::GaussHermite { order: 16 }
        } else {
            NoiseExpectation::MonteCarlo {
                samples: mc_samples,
                seed,
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            NoiseExpectation::GaussHermite { order } => {
                let total = (order as u128).checked_pow(2 * dim as u32);
                match total {
                    Some(t) if t <= QUADRATURE_GRID_CAP => Ok(()),
                    _ => Err(Error::QuadratureGridTooLarge {
                        required: total.unwrap_or(u128::MAX),
                        cap: QUADRATURE_GRID_CAP,
                    }),
                }
            }
            NoiseExpectation::MonteCarlo { samples, .. } => {
                if samples < 100 {
                    Err(Error::TooFewNoiseSamples(samples))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Result of the vector-channel kernel.
#[derive(Debug, Clone)]
pub struct ChannelMetrics {
    /// Mutual information in bits.
    pub mi_bits: f64,
    /// Error covariance of the conditional-mean estimate of the input vector;
    /// present only when requested.
    pub error_cov: Option<CMat>,
    /// Standard error of the Monte Carlo noise average (zero for quadrature).
    pub std_err: f64,
}

/// Per-group metrics: mutual information, input error covariance, and the
/// error covariance mapped through the group precoder factors.
#[derive(Debug, Clone)]
pub struct GroupMetrics {
    pub mi_bits: f64,
    pub error_cov: CMat,
    pub omega: CMat,
    pub std_err: f64,
}

/// Mean and standard error of a Monte Carlo mutual-information estimate.
#[derive(Debug, Clone, Copy)]
pub struct MiEstimate {
    pub mi_bits: f64,
    pub std_err: f64,
}

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

struct HypothesisClasses {
    /// Planar channel images, `re[k * dim + j]` / `im[k * dim + j]`.
    f_re: Vec<f64>,
    f_im: Vec<f64>,
    /// Log prior of each class.
    ln_prior: Vec<f64>,
    prior: Vec<f64>,
    /// Class-conditional mean of the input vector.
    mean: Vec<CVec>,
    /// Class-conditional covariance of the input vector.
    within_cov: Vec<CMat>,
    dim: usize,
}

/// Reduces `F` to a canonical square-root factor of its Gram matrix and
/// merges hypotheses with identical images.
fn build_classes(
    f: &CMat,
    c: &Constellation,
    cap: u128,
    want_cov: bool,
) -> Result<(HypothesisClasses, usize)> {
    let n_in = f.ncols();
    let vectors = c.enumerate_group_vectors(n_in, cap)?;
    let total = vectors.len();

    let gram = f.adjoint() * f;
    let (vals, vecs) = eigh_descending(&gram);
    let top = vals.first().copied().unwrap_or(0.0).max(0.0);
    let rank = vals.iter().take_while(|&&v| v > top * RANK_TOL && v > 0.0).count();

    // Canonical factor: rows scaled by sqrt(eigenvalue).
    let mut factor = CMat::zeros(rank, n_in);
    for r in 0..rank {
        let s = vals[r].sqrt();
        for j in 0..n_in {
            factor[(r, j)] = vecs[(j, r)].conj() * C64::new(s, 0.0);
        }
    }

    let mut key_to_class: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut f_re = Vec::new();
    let mut f_im = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut sum_d: Vec<CVec> = Vec::new();
    let mut sum_dd: Vec<CMat> = Vec::new();

    for d in &vectors {
        let image: Vec<C64> = (0..rank)
            .map(|r| (0..n_in).map(|j| factor[(r, j)] * d[j]).sum())
            .collect();
        let key: Vec<u64> = image
            .iter()
            .flat_map(|z| [z.re.to_bits(), z.im.to_bits()])
            .collect();
        let class = *key_to_class.entry(key).or_insert_with(|| {
            let id = counts.len();
            counts.push(0);
            sum_d.push(CVec::zeros(n_in));
            if want_cov {
                sum_dd.push(CMat::zeros(n_in, n_in));
            }
            for z in &image {
                f_re.push(z.re);
                f_im.push(z.im);
            }
            id
        });
        counts[class] += 1;
        for j in 0..n_in {
            sum_d[class][j] += d[j];
        }
        if want_cov {
            for i in 0..n_in {
                for j in 0..n_in {
                    sum_dd[class][(i, j)] += d[i] * d[j].conj();
                }
            }
        }
    }

    let n_classes = counts.len();
    let mut prior = Vec::with_capacity(n_classes);
    let mut ln_prior = Vec::with_capacity(n_classes);
    let mut mean = Vec::with_capacity(n_classes);
    let mut within_cov = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let w = counts[k] as f64;
        prior.push(w / total as f64);
        ln_prior.push((w / total as f64).ln());
        let m = sum_d[k].map(|z| z / C64::new(w, 0.0));
        if want_cov {
            let mut cov = sum_dd[k].map(|z| z / C64::new(w, 0.0));
            for i in 0..n_in {
                for j in 0..n_in {
                    let mm = m[i] * m[j].conj();
                    cov[(i, j)] -= mm;
                }
            }
            within_cov.push(cov);
        }
        mean.push(m);
    }

    Ok((
        HypothesisClasses {
            f_re,
            f_im,
            ln_prior,
            prior,
            mean,
            within_cov,
            dim: rank,
        },
        n_in,
    ))
}

struct NoiseGrid {
    /// Planar noise samples, `re[node * dim + j]` / `im[node * dim + j]`.
    re: Vec<f64>,
    im: Vec<f64>,
    weight: Vec<f64>,
    monte_carlo: bool,
}

fn build_noise_grid(ne: &NoiseExpectation, dim: usize) -> Result<NoiseGrid> {
    ne.validate(dim)?;
    match *ne {
        NoiseExpectation::GaussHermite { order } => {
            let (nodes, weights) = crate::linalg::gauss_hermite(order);
            let total = order.pow(2 * dim as u32);
            let mut re = vec![0.0; total * dim];
            let mut im = vec![0.0; total * dim];
            let mut weight = vec![0.0; total];
            let pi_pow = std::f64::consts::PI.powi(dim as i32);
            let mut idx = vec![0usize; 2 * dim];
            for node in 0..total {
                let mut w = 1.0 / pi_pow;
                for j in 0..dim {
                    re[node * dim + j] = nodes[idx[2 * j]];
                    im[node * dim + j] = nodes[idx[2 * j + 1]];
                    w *= weights[idx[2 * j]] * weights[idx[2 * j + 1]];
                }
                weight[node] = w;
                for digit in (0..2 * dim).rev() {
                    idx[digit] += 1;
                    if idx[digit] < order {
                        break;
                    }
                    idx[digit] = 0;
                }
            }
            Ok(NoiseGrid {
                re,
                im,
                weight,
                monte_carlo: false,
            })
        }
        NoiseExpectation::MonteCarlo { samples, seed } => {
            let mut rng = seeded_rng(seed, 0x6e6f_6973);
            let mut re = vec![0.0; samples * dim];
            let mut im = vec![0.0; samples * dim];
            for node in 0..samples {
                for j in 0..dim {
                    let z = crate::linalg::complex_standard_normal(&mut rng);
                    re[node * dim + j] = z.re;
                    im[node * dim + j] = z.im;
                }
            }
            Ok(NoiseGrid {
                re,
                im,
                weight: vec![1.0 / samples as f64; samples],
                monte_carlo: true,
            })
        }
    }
}

/// Mutual information and conditional-mean error covariance of the vector
/// channel `y = F d + n` with IID constellation inputs and unit complex
/// Gaussian noise.
///
/// `f` may be any `N_out x N_in` complex matrix; `M^N_in` must stay within
/// `cap`. Pass `want_error_cov = false` to skip the covariance accumulation
/// when only the mutual information is needed.
pub fn vector_channel_metrics(
    f: &CMat,
    c: &Constellation,
    ne: &NoiseExpectation,
    cap: u128,
    want_error_cov: bool,
) -> Result<ChannelMetrics> {
    let (classes, n_in) = build_classes(f, c, cap, want_error_cov)?;
    let dim = classes.dim;

    // No signal subspace: the observation is pure noise.
    if dim == 0 {
        return Ok(ChannelMetrics {
            mi_bits: 0.0,
            error_cov: want_error_cov.then(|| CMat::identity(n_in, n_in)),
            std_err: 0.0,
        });
    }

    let grid = build_noise_grid(ne, dim)?;
    let n_classes = classes.prior.len();

    // Pairwise squared distances between class images, plus an ascending
    // order per row for pruned log-sum-exp walks.
    let mut dist = vec![0.0f64; n_classes * n_classes];
    for a in 0..n_classes {
        for b in (a + 1)..n_classes {
            let mut acc = 0.0;
            for j in 0..dim {
                let dr = classes.f_re[a * dim + j] - classes.f_re[b * dim + j];
                let di = classes.f_im[a * dim + j] - classes.f_im[b * dim + j];
                acc += dr * dr + di * di;
            }
            dist[a * n_classes + b] = acc;
            dist[b * n_classes + a] = acc;
        }
    }
    let mut order: Vec<u32> = Vec::with_capacity(n_classes * n_classes);
    for a in 0..n_classes {
        let row = &dist[a * n_classes..(a + 1) * n_classes];
        let mut idx: Vec<u32> = (0..n_classes as u32).collect();
        idx.sort_by(|&x, &y| {
            row[x as usize]
                .partial_cmp(&row[y as usize])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(x.cmp(&y))
        });
        order.extend_from_slice(&idx);
    }

    let n_nodes = grid.weight.len();
    let mut mi_nats = 0.0;
    let mut node_totals: Vec<f64> = if grid.monte_carlo {
        Vec::with_capacity(n_nodes)
    } else {
        Vec::new()
    };
    let mut err_acc = want_error_cov.then(|| CMat::zeros(n_in, n_in));

    let mut shift = vec![0.0f64; n_classes];
    let mut expo = vec![0.0f64; n_classes];
    let mut walked_class: Vec<u32> = vec![0; n_classes];

    for node in 0..n_nodes {
        let n_re = &grid.re[node * dim..(node + 1) * dim];
        let n_im = &grid.im[node * dim..(node + 1) * dim];
        let w_node = grid.weight[node];

        // shift[k] = 2 Re(f_k^H n)
        let mut shift_max = f64::NEG_INFINITY;
        for k in 0..n_classes {
            let mut acc = 0.0;
            for j in 0..dim {
                acc += classes.f_re[k * dim + j] * n_re[j] + classes.f_im[k * dim + j] * n_im[j];
            }
            let s = 2.0 * acc;
            shift[k] = s;
            if s > shift_max {
                shift_max = s;
            }
        }

        let mut node_total = 0.0;
        for m in 0..n_classes {
            let row = &dist[m * n_classes..(m + 1) * n_classes];
            let row_order = &order[m * n_classes..(m + 1) * n_classes];

            // Walk classes in ascending distance; once even the optimistic
            // bound -D + shift_max falls 46 nats below the running maximum,
            // no later class can contribute.
            let mut best = f64::NEG_INFINITY;
            let mut walked = 0usize;
            for &kk in row_order {
                let k = kk as usize;
                let d = row[k];
                if -d + shift_max < best - EXP_CUTOFF {
                    break;
                }
                let a = -d + shift[k] + classes.ln_prior[k];
                expo[walked] = a;
                walked_class[walked] = kk;
                if a > best {
                    best = a;
                }
                walked += 1;
            }

            let mut z = 0.0;
            for t in 0..walked {
                let a = expo[t] - best;
                expo[t] = if a < -EXP_CUTOFF { 0.0 } else { a.exp() };
                z += expo[t];
            }
            let lse = best + z.ln();
            node_total += classes.prior[m] * (shift[m] - lse);

            if let Some(acc) = err_acc.as_mut() {
                // Posterior over walked classes -> conditional mean of d.
                let mut d_hat = CVec::zeros(n_in);
                for t in 0..walked {
                    let p = expo[t] / z;
                    if p > 0.0 {
                        let k = walked_class[t] as usize;
                        for j in 0..n_in {
                            d_hat[j] += classes.mean[k][j] * C64::new(p, 0.0);
                        }
                    }
                }
                let scale = classes.prior[m] * w_node;
                let m_mean = &classes.mean[m];
                for i in 0..n_in {
                    let ei = m_mean[i] - d_hat[i];
                    for j in 0..n_in {
                        let ej = m_mean[j] - d_hat[j];
                        let within = classes.within_cov[m][(i, j)];
                        acc[(i, j)] += (ei * ej.conj() + within) * C64::new(scale, 0.0);
                    }
                }
            }
        }

        mi_nats += w_node * node_total;
        if grid.monte_carlo {
            node_totals.push(node_total);
        }
    }

    let ln2 = std::f64::consts::LN_2;
    let std_err = if grid.monte_carlo {
        let n = node_totals.len() as f64;
        let mean = node_totals.iter().sum::<f64>() / n;
        let var = node_totals.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        (var / n).sqrt() / ln2
    } else {
        0.0
    };

    Ok(ChannelMetrics {
        mi_bits: (mi_nats / ln2).max(0.0),
        error_cov: err_acc,
        std_err,
    })
}

// ---------------------------------------------------------------------------
// Group wrappers
// ---------------------------------------------------------------------------

fn group_channel(xi_diag: &[f64], lambda: &[f64], v: &CMat) -> Result<CMat> {
    let n = xi_diag.len();
    if lambda.len() != n || v.nrows() != n || v.ncols() != n {
        return Err(Error::DimensionMismatch("group factor shapes".into()));
    }
    for &x in xi_diag.iter().chain(lambda.iter()) {
        if x < 0.0 {
            return Err(Error::NegativeGain(x));
        }
    }
    let mut f = v.clone();
    for i in 0..n {
        let s = C64::new(xi_diag[i].sqrt() * lambda[i], 0.0);
        for j in 0..n {
            f[(i, j)] *= s;
        }
    }
    Ok(f)
}

/// Mutual information, error covariance, and mapped error covariance of one
/// decoupled group with subchannel gains `xi_diag`, power factors `lambda`,
/// and mixing matrix `v`.
pub fn group_metrics(
    xi_diag: &[f64],
    lambda: &[f64],
    v: &CMat,
    c: &Constellation,
    ne: &NoiseExpectation,
    cap: u128,
) -> Result<GroupMetrics> {
    let f = group_channel(xi_diag, lambda, v)?;
    let m = vector_channel_metrics(&f, c, ne, cap, true)?;
    let e = m.error_cov.expect("requested covariance");
    let n = xi_diag.len();
    let mut lv = v.clone();
    for i in 0..n {
        let s = C64::new(lambda[i], 0.0);
        for j in 0..n {
            lv[(i, j)] *= s;
        }
    }
    let omega = &lv * &e * lv.adjoint();
    Ok(GroupMetrics {
        mi_bits: m.mi_bits,
        error_cov: e,
        omega,
        std_err: m.std_err,
    })
}

/// Mutual information of one decoupled group, in bits.
pub fn group_mutual_information(
    xi_diag: &[f64],
    lambda: &[f64],
    v: &CMat,
    c: &Constellation,
    ne: &NoiseExpectation,
    cap: u128,
) -> Result<f64> {
    let f = group_channel(xi_diag, lambda, v)?;
    Ok(vector_channel_metrics(&f, c, ne, cap, false)?.mi_bits)
}

/// Error covariance of the conditional-mean estimate for one group.
pub fn group_error_covariance(
    xi_diag: &[f64],
    lambda: &[f64],
    v: &CMat,
    c: &Constellation,
    ne: &NoiseExpectation,
    cap: u128,
) -> Result<CMat> {
    Ok(group_metrics(xi_diag, lambda, v, c, ne, cap)?.error_cov)
}

/// Places per-group mapped error covariances into the full matrix according
/// to the stream partition and rotates the result back to the transmit
/// coordinates: `Omega = U (sum of placed blocks) U^H`.
pub fn assemble_omega(
    partition: &crate::precoder::StreamPartition,
    group_omegas: &[CMat],
    u_xi: &CMat,
) -> Result<CMat> {
    let n_t = partition.stream_count();
    if group_omegas.len() != partition.group_count() {
        return Err(Error::InvalidPartition(format!(
            "{} blocks for {} groups",
            group_omegas.len(),
            partition.group_count()
        )));
    }
    if u_xi.nrows() != n_t || u_xi.ncols() != n_t {
        return Err(Error::DimensionMismatch("rotation basis shape".into()));
    }
    let mut eq = CMat::zeros(n_t, n_t);
    for s in 0..partition.group_count() {
        let block = &group_omegas[s];
        let n_s = partition.group_size();
        if block.nrows() != n_s || block.ncols() != n_s {
            return Err(Error::InvalidPartition("block size mismatch".into()));
        }
        for i in 0..n_s {
            for j in 0..n_s {
                eq[(partition.subchannel(s, i), partition.subchannel(s, j))] = block[(i, j)];
            }
        }
    }
    Ok(u_xi * eq * u_xi.adjoint())
}

/// Block-placed error covariance in the equivalent (unrotated) coordinates.
pub fn assemble_omega_eq(
    partition: &crate::precoder::StreamPartition,
    group_omegas: &[CMat],
) -> Result<CMat> {
    let n_t = partition.stream_count();
    assemble_omega(partition, group_omegas, &CMat::identity(n_t, n_t))
}

// ---------------------------------------------------------------------------
// Exact ergodic mutual information (Monte Carlo oracle)
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of the ergodic mutual information of `y = H B d + n`
/// over channel realizations drawn from the statistics.
///
/// For a deterministic channel (infinite Rice factor) a single evaluation at
/// the Rice component is exact and the reported standard error is that of the
/// noise average alone.
pub fn exact_ergodic_mi(
    stats: &crate::channel::ChannelStatistics,
    b: &CMat,
    c: &Constellation,
    channel_samples: usize,
    ne: &NoiseExpectation,
    seed: u64,
    cap: u128,
) -> Result<MiEstimate> {
    if b.nrows() != stats.n_t() {
        return Err(Error::DimensionMismatch("precoder rows".into()));
    }
    if stats.rice_factor().is_infinite() {
        let f = stats.h_bar() * b;
        let m = vector_channel_metrics(&f, c, ne, cap, false)?;
        return Ok(MiEstimate {
            mi_bits: m.mi_bits,
            std_err: m.std_err,
        });
    }
    assert!(channel_samples >= 1);
    use rayon::prelude::*;
    let per_sample: Vec<f64> = (0..channel_samples)
        .into_par_iter()
        .map(|i| {
            let h = stats
                .sample_realization(seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)))
                .expect("finite Rice factor");
            let f = &h * b;
            // Independent noise stream per realization so the sample standard
            // error is an honest estimate.
            let ne_i = match *ne {
                NoiseExpectation::MonteCarlo { samples, seed: s } => NoiseExpectation::MonteCarlo {
                    samples,
                    seed: s ^ (0xa076_1d64_78bd_642fu64.wrapping_mul(i as u64 + 1)),
                },
                gh => gh,
            };
            vector_channel_metrics(&f, c, &ne_i, cap, false).map(|m| m.mi_bits)
        })
        .collect::<Result<Vec<f64>>>()?;

    let n = per_sample.len() as f64;
    let mean = per_sample.iter().sum::<f64>() / n;
    let var = per_sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MiEstimate {
        mi_bits: mean,
        std_err: if channel_samples > 1 { (var / n).sqrt() } else { 0.0 },
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
