//! Structured precoder, its gradients, and the iterative optimizer.
//!
//! The precoder factors as `B = U_B Lambda_B V_B` where `Lambda_B` is a
//! nonnegative diagonal and `V_B` is block-sparse: a stream partition maps
//! each group of `N_s` streams onto `N_s` equivalent subchannels, and each
//! group carries its own diagonal `Lambda_s` and unitary mixer `V_s`. The
//! optimizer alternates gradient ascent on the `Lambda_s^2` and `V_s` factors
//! (with backtracking line search and a unitary retraction) with refreshes of
//! the deterministic-equivalent state.

use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::detequiv::{asymptotic_mi, solve_fixed_point, DetEquivState, FixedPointOptions, OmegaSource};
use crate::error::{Error, Result};
use crate::linalg::{diag_real, expm_skew_hermitian, random_unitary, unitary_deviation, C64, CMat};
use crate::metrics::{group_metrics, group_mutual_information, NoiseExpectation};

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const UNITARY_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Stream partition
// ---------------------------------------------------------------------------

/// Assignment of the `N_t` streams to `S` groups of `N_s` equivalent
/// subchannels. `ell[(s * N_s) + i]` is the subchannel carrying local stream
/// `i` of group `s`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPartition {
    ell: Vec<usize>,
    n_s: usize,
}

impl StreamPartition {
    pub fn new(ell: Vec<usize>, n_s: usize) -> Result<Self> {
        let n_t = ell.len();
        if n_s == 0 || n_t == 0 || n_t % n_s != 0 {
            return Err(Error::GroupSizeMismatch { n_s, n_t });
        }
        let mut seen = vec![false; n_t];
        for &e in &ell {
            if e >= n_t || seen[e] {
                return Err(Error::InvalidPartition(format!(
                    "ell is not a permutation of 0..{n_t}"
                )));
            }
            seen[e] = true;
        }
        Ok(Self { ell, n_s })
    }

    /// Identity assignment: group `s` takes subchannels `s*N_s .. (s+1)*N_s`.
    pub fn identity(n_t: usize, n_s: usize) -> Result<Self> {
        Self::new((0..n_t).collect(), n_s)
    }

    pub fn stream_count(&self) -> usize {
        self.ell.len()
    }

    pub fn group_size(&self) -> usize {
        self.n_s
    }

    pub fn group_count(&self) -> usize {
        self.ell.len() / self.n_s
    }

    /// Subchannel index carrying local stream `i` of group `s`.
    pub fn subchannel(&self, s: usize, i: usize) -> usize {
        self.ell[s * self.n_s + i]
    }

    pub fn ell(&self) -> &[usize] {
        &self.ell
    }
}

/// Pairs strong and weak subchannels into groups.
///
/// Subchannel gains are sorted in descending order; each group takes the
/// strongest remaining `ceil(N_s/2)` entries followed by the weakest
/// remaining `floor(N_s/2)` entries (weakest first within that half). With
/// `N_s = 1` this reduces to sorted power allocation, and with `N_s = N_t` to
/// a single group over everything.
pub fn pair_subchannels(xi_diag: &[f64], n_s: usize) -> Result<StreamPartition> {
    let n_t = xi_diag.len();
    if n_s == 0 || n_t == 0 || n_t % n_s != 0 {
        return Err(Error::GroupSizeMismatch { n_s, n_t });
    }
    let mut sorted: Vec<usize> = (0..n_t).collect();
    sorted.sort_by(|&a, &b| {
        xi_diag[b]
            .partial_cmp(&xi_diag[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let s_count = n_t / n_s;
    let strong_half = n_s.div_ceil(2);
    let weak_half = n_s - strong_half;
    let mut ell = Vec::with_capacity(n_t);
    for s in 0..s_count {
        let strong_base = s * strong_half;
        for i in 0..strong_half {
            ell.push(sorted[strong_base + i]);
        }
        let weak_base = n_t - (s + 1) * weak_half;
        for i in 0..weak_half {
            ell.push(sorted[weak_base + i]);
        }
    }
    StreamPartition::new(ell, n_s)
}

// ---------------------------------------------------------------------------
// Precoder
// ---------------------------------------------------------------------------

/// Structured linear precoder `B = U_B Lambda_B V_B`.
#[derive(Debug, Clone)]
pub struct Precoder {
    u_b: CMat,
    lambda: Vec<Vec<f64>>,
    v: Vec<CMat>,
    partition: StreamPartition,
    power: f64,
}

impl Precoder {
    pub fn new(
        u_b: CMat,
        lambda: Vec<Vec<f64>>,
        v: Vec<CMat>,
        partition: StreamPartition,
        power: f64,
    ) -> Result<Self> {
        let n_t = partition.stream_count();
        let n_s = partition.group_size();
        let s_count = partition.group_count();
        if u_b.nrows() != n_t || u_b.ncols() != n_t {
            return Err(Error::DimensionMismatch("left factor shape".into()));
        }
        if lambda.len() != s_count || v.len() != s_count {
            return Err(Error::InvalidPartition("group factor counts".into()));
        }
        if !(power.is_finite() && power >= 0.0) {
            return Err(Error::InvalidPower(power));
        }
        let dev = unitary_deviation(&u_b);
        if dev > UNITARY_TOL {
            return Err(Error::NotUnitary { deviation: dev, tol: UNITARY_TOL });
        }
        let mut total = 0.0;
        for s in 0..s_count {
            if lambda[s].len() != n_s || v[s].nrows() != n_s || v[s].ncols() != n_s {
                return Err(Error::InvalidPartition("group factor shapes".into()));
            }
            if lambda[s].iter().any(|&l| l < 0.0) {
                return Err(Error::NegativeGain(
                    lambda[s].iter().cloned().fold(f64::INFINITY, f64::min),
                ));
            }
            let dev = unitary_deviation(&v[s]);
            if dev > UNITARY_TOL {
                return Err(Error::NotUnitary { deviation: dev, tol: UNITARY_TOL });
            }
            total += lambda[s].iter().map(|&l| l * l).sum::<f64>();
        }
        if (total - power).abs() > 1e-9 * power.max(1.0) {
            return Err(Error::InvalidPower(total));
        }
        Ok(Self { u_b, lambda, v, partition, power })
    }

    /// Uniform power allocation with identity factors; the usual unprecoded
    /// baseline.
    pub fn uniform(n_t: usize, n_s: usize, power: f64) -> Result<Self> {
        let partition = StreamPartition::identity(n_t, n_s)?;
        let per = (power / n_t as f64).sqrt();
        let s_count = partition.group_count();
        Precoder::new(
            CMat::identity(n_t, n_t),
            vec![vec![per; n_s]; s_count],
            vec![CMat::identity(n_s, n_s); s_count],
            partition,
            power,
        )
    }

    pub fn u_b(&self) -> &CMat {
        &self.u_b
    }

    pub fn lambda(&self) -> &[Vec<f64>] {
        &self.lambda
    }

    pub fn v(&self) -> &[CMat] {
        &self.v
    }

    pub fn partition(&self) -> &StreamPartition {
        &self.partition
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    /// Diagonal of `Lambda_B`: entry `ell(s, i)` holds `lambda[s][i]`.
    pub fn lambda_b_diag(&self) -> Vec<f64> {
        let n_t = self.partition.stream_count();
        let mut d = vec![0.0; n_t];
        for s in 0..self.partition.group_count() {
            for i in 0..self.partition.group_size() {
                d[self.partition.subchannel(s, i)] = self.lambda[s][i];
            }
        }
        d
    }

    /// Block-sparse right factor; entries outside the group blocks are exact
    /// structural zeros.
    pub fn v_b(&self) -> CMat {
        let n_t = self.partition.stream_count();
        let n_s = self.partition.group_size();
        let mut vb = CMat::zeros(n_t, n_t);
        for s in 0..self.partition.group_count() {
            for m in 0..n_s {
                for n in 0..n_s {
                    vb[(self.partition.subchannel(s, m), self.partition.subchannel(s, n))] =
                        self.v[s][(m, n)];
                }
            }
        }
        vb
    }

    /// Assembles `B = U_B Lambda_B V_B`. The trace of `B B^H` equals the
    /// power budget to roundoff.
    pub fn assemble(&self) -> CMat {
        &self.u_b * diag_real(&self.lambda_b_diag()) * self.v_b()
    }

    /// JSON document per the export schema.
    pub fn to_json(&self) -> serde_json::Value {
        fn mat(m: &CMat) -> Vec<f64> {
            let mut out = Vec::with_capacity(2 * m.nrows() * m.ncols());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(m[(i, j)].re);
                    out.push(m[(i, j)].im);
                }
            }
            out
        }
        serde_json::json!({
            "u_b": mat(&self.u_b),
            "lambda": self.lambda,
            "v": self.v.iter().map(mat).collect::<Vec<_>>(),
            "ell": self.partition.ell(),
            "s": self.partition.group_count(),
            "n_s": self.partition.group_size(),
            "p": self.power,
        })
    }
}

// ---------------------------------------------------------------------------
// Gradients and retraction
// ---------------------------------------------------------------------------

/// Ascent gradients of the asymptotic mutual information (in bits) for one
/// group, holding the deterministic-equivalent state fixed.
#[derive(Debug, Clone)]
pub struct GroupGradient {
    /// Gradient with respect to the squared power factors `Lambda_s^2`.
    pub lambda_sq: Vec<f64>,
    /// Euclidean ascent gradient with respect to `V_s`.
    pub v: CMat,
}

/// Evaluates the per-group gradients at the given state and precoder factors.
///
/// The state is held fixed: at a solved fixed point the partial derivatives
/// of the objective with respect to the state variables vanish, so these are
/// also the total derivatives. Both gradients are for the bit-valued
/// objective: `d I / d lambda_i^2 = log2(e) Re[V E V^H]_ii xi_i` and
/// `d I / d V = log2(e) Xi Lambda^2 V E`.
pub fn gradients(state: &DetEquivState, precoder: &Precoder) -> Vec<GroupGradient> {
    gradients_from(state, precoder.partition(), precoder.lambda(), precoder.v())
}

/// Moves a unitary matrix along the ascent direction of a Euclidean gradient
/// and returns an exactly unitary result.
///
/// The gradient is projected onto the tangent space through the
/// skew-Hermitian generator `A = V^H G - G^H V` and the step retracted with
/// the matrix exponential `V exp(step A)`.
pub fn retract_unitary(v: &CMat, grad: &CMat, step: f64) -> CMat {
    if step == 0.0 {
        return v.clone();
    }
    let a = skew_generator(v, grad).map(|z| z * C64::new(step, 0.0));
    v * expm_skew_hermitian(&a)
}

fn skew_generator(v: &CMat, grad: &CMat) -> CMat {
    let m = v.adjoint() * grad;
    &m - m.adjoint()
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Options for the iterative precoder optimizer.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerOptions {
    /// Stop when the objective improves by less than this many bits.
    pub eps: f64,
    pub max_iter: usize,
    /// Number of random initializations; the best run is returned.
    pub restarts: usize,
    pub seed: u64,
    pub noise: NoiseExpectation,
    pub fixed_point: FixedPointOptions,
    /// Enumeration cap for group signal vectors.
    pub cap: u128,
    /// Armijo sufficient-increase factor.
    pub armijo: f64,
    /// Step shrink factor for backtracking.
    pub shrink: f64,
    pub initial_step: f64,
    pub max_halvings: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_iter: 50,
            restarts: 3,
            seed: 0,
            // Order 8 keeps a full optimization run affordable; evaluation
            // paths that need tighter quadrature pass their own scheme.
            noise: NoiseExpectation::GaussHermite { order: 8 },
            fixed_point: FixedPointOptions::default(),
            cap: crate::constellation::ENUMERATION_CAP,
            armijo: 0.3,
            shrink: 0.5,
            initial_step: 1.0,
            max_halvings: 30,
        }
    }
}

/// Record of one optimization run.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizationTrace {
    /// Objective (asymptotic mutual information, bits) after each state
    /// refresh; the first entry is the initial value.
    pub mi_per_iteration: Vec<f64>,
    /// Accepted power-step size per iteration.
    pub step_sizes: Vec<f64>,
    /// Accepted mixer-step size per iteration.
    pub v_step_sizes: Vec<f64>,
    pub restarts: usize,
    /// Index of the winning restart.
    pub restart_index: usize,
    pub converged: bool,
    /// Relative residual of the stationarity condition
    /// `kappa B = Xi B Omega` at the returned precoder (diagnostic only).
    pub stationarity_residual: f64,
}

struct RestartOutcome {
    lambda: Vec<Vec<f64>>,
    v: Vec<CMat>,
    state: DetEquivState,
    mi_trace: Vec<f64>,
    steps: Vec<f64>,
    v_steps: Vec<f64>,
    converged: bool,
}

/// Maximizes the asymptotic mutual information over the structured precoder
/// for the given statistics, constellation, power budget, and group size.
///
/// Runs `restarts` seeded initializations, each alternating a projected
/// gradient step on the squared power factors (renormalized to the budget), a
/// retracted gradient step on the group mixers, and a refresh of the
/// deterministic-equivalent state, until the objective gain drops below
/// `eps`. Returns the best run's precoder (left factor set to the eigenbasis
/// of its final equivalent channel) and trace.
pub fn optimize(
    stats: &crate::channel::ChannelStatistics,
    c: &Constellation,
    power: f64,
    n_s: usize,
    opts: &OptimizerOptions,
) -> Result<(Precoder, OptimizationTrace)> {
    if !(power.is_finite() && power > 0.0) {
        return Err(Error::InvalidPower(power));
    }
    let n_t = stats.n_t();
    if n_s == 0 || n_t % n_s != 0 {
        return Err(Error::GroupSizeMismatch { n_s, n_t });
    }
    let m_pow = c.enumeration_size(n_s);
    if m_pow > opts.cap {
        return Err(Error::EnumerationCapExceeded { required: m_pow, cap: opts.cap });
    }

    // The pairing is fixed once, from the eigenvalues of the equivalent
    // channel at unit receive weights; re-pairing between iterations would
    // break the monotone-trace argument.
    let partition = pair_subchannels(&bootstrap_gains(stats), n_s)?;

    use rayon::prelude::*;
    let runs: Vec<Result<RestartOutcome>> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| run_restart(stats, c, power, &partition, opts, r as u64))
        .collect();

    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut first_err = None;
    for (idx, run) in runs.into_iter().enumerate() {
        match run {
            Ok(out) => {
                let mi = *out.mi_trace.last().unwrap();
                let take = match &best {
                    None => true,
                    Some((_, b)) => mi > *b.mi_trace.last().unwrap(),
                };
                if take {
                    best = Some((idx, out));
                }
            }
            Err(e) => {
                log::warn!("restart {idx} failed: {e}");
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    let (restart_index, out) = match best {
        Some(b) => b,
        None => return Err(first_err.unwrap_or(Error::AllRestartsFailed(opts.restarts))),
    };

    let precoder = Precoder::new(
        out.state.u_xi.clone(),
        out.lambda,
        out.v,
        partition,
        power,
    )?;
    let b = precoder.assemble();
    let stationarity_residual = stationarity_residual(&out.state.xi, &b, &out.state.omega);
    log::debug!("stationarity residual {stationarity_residual:.3e}");

    Ok((
        precoder,
        OptimizationTrace {
            mi_per_iteration: out.mi_trace,
            step_sizes: out.steps,
            v_step_sizes: out.v_steps,
            restarts: opts.restarts.max(1),
            restart_index,
            converged: out.converged,
            stationarity_residual,
        },
    ))
}

/// Eigenvalues of the precoder-independent equivalent channel at unit
/// receive weights; used to fix the pairing.
fn bootstrap_gains(stats: &crate::channel::ChannelStatistics) -> Vec<f64> {
    let g = stats.g();
    let col_sums: Vec<f64> = (0..stats.n_t())
        .map(|m| (0..stats.n_r()).map(|n| g[(n, m)]).sum())
        .collect();
    let xi0 = stats.u_t() * diag_real(&col_sums) * stats.u_t().adjoint()
        + stats.h_bar().adjoint() * stats.h_bar();
    let (vals, _) = crate::linalg::eigh_descending(&xi0);
    vals
}

fn run_restart(
    stats: &crate::channel::ChannelStatistics,
    c: &Constellation,
    power: f64,
    partition: &StreamPartition,
    opts: &OptimizerOptions,
    restart: u64,
) -> Result<RestartOutcome> {
    let n_t = partition.stream_count();
    let n_s = partition.group_size();
    let s_count = partition.group_count();
    let mut rng = crate::linalg::seeded_rng(opts.seed, restart.wrapping_add(1));

    let per = (power / n_t as f64).sqrt();
    let mut lambda: Vec<Vec<f64>> = vec![vec![per; n_s]; s_count];
    let mut v: Vec<CMat> = (0..s_count).map(|_| random_unitary(n_s, &mut rng)).collect();

    let mut state = solve_state(stats, partition, &lambda, &v, c, opts)?;
    let mut mi_cur = asymptotic_mi(&state, stats).total_bits;
    let mut mi_trace = vec![mi_cur];
    let mut steps = Vec::new();
    let mut v_steps = Vec::new();
    let mut converged = false;

    for _iter in 0..opts.max_iter {
        let prev_lambda = lambda.clone();
        let prev_v = v.clone();
        let prev_state = state.clone();

        let xi_groups = group_gains(&state, partition);

        // Power step: projected gradient on Lambda^2, renormalized to the
        // budget inside every trial so the line search sees the feasible set.
        let grads = gradients_from(&state, partition, &lambda, &v);
        let base_obj: f64 = state.group_metrics.iter().map(|m| m.mi_bits).sum();
        let slope: f64 = grads.iter().map(|g| g.lambda_sq.iter().map(|x| x * x).sum::<f64>()).sum();
        let mut lambda_step = 0.0;
        if slope > 0.0 {
            let mut t = opts.initial_step;
            for _ in 0..=opts.max_halvings {
                if let Some(trial) = project_power(&lambda, &grads, t, power) {
                    let obj = grouped_objective(&xi_groups, &trial, &v, c, opts)?;
                    if obj >= base_obj + opts.armijo * t * slope {
                        lambda = trial;
                        lambda_step = t;
                        break;
                    }
                }
                t *= opts.shrink;
            }
        }

        // Mixer step: retracted gradient on each V_s.
        let metrics_now: Vec<crate::metrics::GroupMetrics> = (0..s_count)
            .map(|s| group_metrics(&xi_groups[s], &lambda[s], &v[s], c, &opts.noise, opts.cap))
            .collect::<Result<_>>()?;
        let base_obj: f64 = metrics_now.iter().map(|m| m.mi_bits).sum();
        let v_grads: Vec<CMat> = (0..s_count)
            .map(|s| {
                let mut xl2v = v[s].clone();
                for i in 0..n_s {
                    let scale = C64::new(LOG2_E * xi_groups[s][i] * lambda[s][i] * lambda[s][i], 0.0);
                    for j in 0..n_s {
                        xl2v[(i, j)] *= scale;
                    }
                }
                xl2v * &metrics_now[s].error_cov
            })
            .collect();
        let generators: Vec<CMat> = (0..s_count).map(|s| skew_generator(&v[s], &v_grads[s])).collect();
        let v_slope: f64 = generators.iter().map(|a| a.norm().powi(2)).sum();
        let mut v_step = 0.0;
        if v_slope > 1e-30 {
            let mut t = opts.initial_step;
            for _ in 0..=opts.max_halvings {
                let trial: Vec<CMat> = (0..s_count)
                    .map(|s| &v[s] * expm_skew_hermitian(&generators[s].map(|z| z * C64::new(t, 0.0))))
                    .collect();
                let obj = grouped_objective(&xi_groups, &lambda, &trial, c, opts)?;
                if obj >= base_obj + opts.armijo * t * v_slope {
                    v = trial;
                    v_step = t;
                    break;
                }
                t *= opts.shrink;
            }
        }

        // State refresh and stopping rule.
        state = solve_state(stats, partition, &lambda, &v, c, opts)?;
        let mi_next = asymptotic_mi(&state, stats).total_bits;
        if mi_next < mi_cur - 1e-12 {
            // The frozen-state surrogate gained less than the state coupling
            // lost; revert to the last consistent iterate and stop.
            lambda = prev_lambda;
            v = prev_v;
            state = prev_state;
            converged = true;
            break;
        }
        steps.push(lambda_step);
        v_steps.push(v_step);
        mi_trace.push(mi_next);
        let gain = mi_next - mi_cur;
        mi_cur = mi_next;
        if gain <= opts.eps {
            converged = true;
            break;
        }
    }

    Ok(RestartOutcome {
        lambda,
        v,
        state,
        mi_trace,
        steps,
        v_steps,
        converged,
    })
}

fn solve_state(
    stats: &crate::channel::ChannelStatistics,
    partition: &StreamPartition,
    lambda: &[Vec<f64>],
    v: &[CMat],
    c: &Constellation,
    opts: &OptimizerOptions,
) -> Result<DetEquivState> {
    solve_fixed_point(
        stats,
        OmegaSource::Grouped { partition, lambda, v },
        c,
        &opts.noise,
        &opts.fixed_point,
        opts.cap,
    )
}

fn group_gains(state: &DetEquivState, partition: &StreamPartition) -> Vec<Vec<f64>> {
    (0..partition.group_count())
        .map(|s| {
            (0..partition.group_size())
                .map(|i| state.lambda_xi[partition.subchannel(s, i)].max(0.0))
                .collect()
        })
        .collect()
}

fn gradients_from(
    state: &DetEquivState,
    partition: &StreamPartition,
    lambda: &[Vec<f64>],
    v: &[CMat],
) -> Vec<GroupGradient> {
    let n_s = partition.group_size();
    (0..partition.group_count())
        .map(|s| {
            let e = &state.group_metrics[s].error_cov;
            let vev = &v[s] * e * v[s].adjoint();
            let xi_s: Vec<f64> = (0..n_s)
                .map(|i| state.lambda_xi[partition.subchannel(s, i)].max(0.0))
                .collect();
            let lambda_sq: Vec<f64> = (0..n_s).map(|i| LOG2_E * vev[(i, i)].re * xi_s[i]).collect();
            let mut xl2v = v[s].clone();
            for i in 0..n_s {
                let scale = C64::new(LOG2_E * xi_s[i] * lambda[s][i] * lambda[s][i], 0.0);
                for j in 0..n_s {
                    xl2v[(i, j)] *= scale;
                }
            }
            GroupGradient { lambda_sq, v: xl2v * e }
        })
        .collect()
}

/// Gradient trial on the squared power factors: ascend, clip at zero,
/// renormalize the total to the budget. `None` when everything clips away.
fn project_power(
    lambda: &[Vec<f64>],
    grads: &[GroupGradient],
    t: f64,
    power: f64,
) -> Option<Vec<Vec<f64>>> {
    let mut sq: Vec<Vec<f64>> = lambda
        .iter()
        .zip(grads)
        .map(|(ls, g)| {
            ls.iter()
                .zip(&g.lambda_sq)
                .map(|(&l, &gl)| (l * l + t * gl).max(0.0))
                .collect()
        })
        .collect();
    let total: f64 = sq.iter().map(|g| g.iter().sum::<f64>()).sum();
    if total <= 0.0 {
        return None;
    }
    let scale = power / total;
    for g in &mut sq {
        for x in g.iter_mut() {
            *x = (*x * scale).sqrt();
        }
    }
    Some(sq)
}

fn grouped_objective(
    xi_groups: &[Vec<f64>],
    lambda: &[Vec<f64>],
    v: &[CMat],
    c: &Constellation,
    opts: &OptimizerOptions,
) -> Result<f64> {
    let mut total = 0.0;
    for s in 0..xi_groups.len() {
        total += group_mutual_information(&xi_groups[s], &lambda[s], &v[s], c, &opts.noise, opts.cap)?;
    }
    Ok(total)
}

/// Relative residual of the stationarity condition `kappa B = Xi B Omega`
/// with the least-squares multiplier. Diagnostic: the per-group constrained
/// optimum need not satisfy it exactly.
pub fn stationarity_residual(xi: &CMat, b: &CMat, omega: &CMat) -> f64 {
    let target = xi * b * omega;
    let tnorm = target.norm();
    if tnorm == 0.0 {
        return 0.0;
    }
    let bnorm2: f64 = b.norm().powi(2);
    let inner: C64 = b.iter().zip(target.iter()).map(|(x, y)| x.conj() * y).sum();
    let kappa = inner.re / bnorm2;
    (&target - b.map(|z| z * C64::new(kappa, 0.0))).norm() / tnorm
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{complex_gaussian_matrix, seeded_rng};

    #[test]
    fn pairing_matches_strong_weak_rule() {
        // Gains (4, 3, 2, 1): groups {4, 1} and {3, 2}.
        let p = pair_subchannels(&[4.0, 3.0, 2.0, 1.0], 2).unwrap();
        assert_eq!(p.ell(), &[0, 3, 1, 2]);
        // Unsorted input maps through the value order, not the index order.
        let p = pair_subchannels(&[2.0, 4.0, 1.0, 3.0], 2).unwrap();
        assert_eq!(p.ell(), &[1, 2, 3, 0]);
    }

    #[test]
    fn pairing_degenerate_group_sizes() {
        let p = pair_subchannels(&[0.5, 2.0, 1.0], 1).unwrap();
        assert_eq!(p.ell(), &[1, 2, 0]);
        assert_eq!(p.group_count(), 3);
        let p = pair_subchannels(&[0.5, 2.0, 1.0, 0.1], 4).unwrap();
        assert_eq!(p.group_count(), 1);
        assert_eq!(p.ell(), &[1, 2, 0, 3]);
        assert!(pair_subchannels(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn odd_group_size_takes_extra_strong_entry() {
        let p = pair_subchannels(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0], 3).unwrap();
        // Group 0: two strongest (6, 5) plus the weakest (1).
        assert_eq!(&p.ell()[0..3], &[0, 1, 5]);
        assert_eq!(&p.ell()[3..6], &[2, 3, 4]);
    }

    #[test]
    fn partition_validation() {
        assert!(StreamPartition::new(vec![0, 0, 1, 2], 2).is_err());
        assert!(StreamPartition::new(vec![0, 1, 2], 2).is_err());
        let p = StreamPartition::new(vec![0, 2, 1, 3], 2).unwrap();
        assert_eq!(p.subchannel(0, 1), 2);
        assert_eq!(p.subchannel(1, 0), 1);
    }

    fn sample_precoder(n_t: usize, n_s: usize, power: f64, seed: u64) -> Precoder {
        let mut rng = seeded_rng(seed, 0);
        let partition = StreamPartition::identity(n_t, n_s).unwrap();
        let s_count = partition.group_count();
        let per = (power / n_t as f64).sqrt();
        Precoder::new(
            random_unitary(n_t, &mut rng),
            vec![vec![per; n_s]; s_count],
            (0..s_count).map(|_| random_unitary(n_s, &mut rng)).collect(),
            partition,
            power,
        )
        .unwrap()
    }

    #[test]
    fn assembled_precoder_meets_power_budget() {
        let p = sample_precoder(4, 2, 5.0, 1);
        let b = p.assemble();
        let tr: f64 = (&b * b.adjoint()).diagonal().iter().map(|z| z.re).sum();
        assert!((tr - 5.0).abs() < 1e-10);
    }

    #[test]
    fn v_b_has_exact_block_pattern() {
        // Contiguous layout: two 2x2 blocks on the diagonal.
        let p = sample_precoder(4, 2, 4.0, 2);
        let vb = p.v_b();
        for i in 0..4 {
            for j in 0..4 {
                let same_block = (i < 2) == (j < 2);
                if !same_block {
                    assert_eq!(vb[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }

        // Interleaved partition: nonzeros exactly on {0,2}^2 and {1,3}^2.
        let partition = StreamPartition::new(vec![0, 2, 1, 3], 2).unwrap();
        let mut rng = seeded_rng(3, 0);
        let p = Precoder::new(
            CMat::identity(4, 4),
            vec![vec![1.0, 1.0]; 2],
            vec![random_unitary(2, &mut rng), random_unitary(2, &mut rng)],
            partition,
            4.0,
        )
        .unwrap();
        let vb = p.v_b();
        let in_group = |i: usize, j: usize| (i % 2 == 0 && j % 2 == 0) || (i % 2 == 1 && j % 2 == 1);
        for i in 0..4 {
            for j in 0..4 {
                if in_group(i, j) {
                    assert!(vb[(i, j)].norm() > 1e-3);
                } else {
                    assert_eq!(vb[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
        // Lambda_B places group entries on the partition's subchannels.
        let d = p.lambda_b_diag();
        assert_eq!(d, vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn single_group_is_plain_svd_form() {
        let p = sample_precoder(3, 3, 3.0, 4);
        let b = p.assemble();
        let direct = p.u_b() * diag_real(&p.lambda()[0]) * &p.v()[0];
        assert!((b - direct).norm() < 1e-12);
    }

    #[test]
    fn power_mismatch_is_rejected() {
        let partition = StreamPartition::identity(2, 1).unwrap();
        let bad = Precoder::new(
            CMat::identity(2, 2),
            vec![vec![1.0], vec![1.0]],
            vec![CMat::identity(1, 1), CMat::identity(1, 1)],
            partition,
            5.0,
        );
        assert!(matches!(bad, Err(Error::InvalidPower(_))));
    }

    #[test]
    fn retraction_contract() {
        let mut rng = seeded_rng(5, 0);
        let v = random_unitary(3, &mut rng);
        let g = complex_gaussian_matrix(3, 3, &mut rng);
        assert_eq!(retract_unitary(&v, &g, 0.0), v);
        for &step in &[1e-3, 0.1, 1.0] {
            let moved = retract_unitary(&v, &g, step);
            assert!(unitary_deviation(&moved) < 1e-10, "step {step}");
        }
        // First order: V' = V (I + t A) + O(t^2).
        let a = skew_generator(&v, &g);
        let t = 1e-5;
        let moved = retract_unitary(&v, &g, t);
        let linear = &v + &v * a.map(|z| z * C64::new(t, 0.0));
        assert!((moved - linear).norm() < 1e-8);
    }

    #[test]
    fn stationarity_residual_zero_for_scaled_identity() {
        let xi = diag_real(&[2.0, 2.0]);
        let omega = diag_real(&[0.5, 0.5]);
        let b = CMat::identity(2, 2);
        assert!(stationarity_residual(&xi, &b, &omega) < 1e-14);
    }
}
