//! Statistical channel model: eigenbases, power coupling, Rice component.
//!
//! A `ChannelStatistics` value holds the second-order description
//! `H = U_R (G_tilde ⊙ W) U_T^H + H_bar` with `W` IID standard complex
//! Gaussian. Construction rescales the coupling matrix and the Rice component
//! so that the scattered power sums to `N_r N_t / (K + 1)` and
//! `||H_bar||_F^2 = N_r N_t K / (K + 1)`; every downstream solver assumes
//! these identities already hold.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{seeded_rng, unitary_deviation, C64, CMat};

const UNITARY_TOL: f64 = 1e-10;

/// Rice factor; the deterministic limit is an explicit flag so the
/// `K -> infinity` branch stays exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiceFactor {
    Finite(f64),
    Infinite,
}

impl RiceFactor {
    pub fn is_infinite(&self) -> bool {
        matches!(self, RiceFactor::Infinite)
    }

    /// Fraction of the average channel power carried by the scattered part.
    pub fn scattered_fraction(&self) -> f64 {
        match *self {
            RiceFactor::Finite(k) => 1.0 / (k + 1.0),
            RiceFactor::Infinite => 0.0,
        }
    }

    /// Fraction of the average channel power carried by the Rice component.
    pub fn los_fraction(&self) -> f64 {
        match *self {
            RiceFactor::Finite(k) => k / (k + 1.0),
            RiceFactor::Infinite => 1.0,
        }
    }
}

impl std::fmt::Display for RiceFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RiceFactor::Finite(k) => write!(f, "{k}"),
            RiceFactor::Infinite => write!(f, "inf"),
        }
    }
}

/// Statistical channel-state information.
#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    n_r: usize,
    n_t: usize,
    u_r: CMat,
    u_t: CMat,
    g_tilde: DMatrix<f64>,
    /// Entrywise square of `g_tilde`; `g[(n, m)]` is the average power coupling
    /// between receive direction `n` and transmit direction `m`.
    g: DMatrix<f64>,
    h_bar: CMat,
    k: RiceFactor,
}

/// Transmit/receive correlation matrices together with their eigenvalue
/// diagonals in the statistics' eigenbases.
#[derive(Debug, Clone)]
pub struct CorrelationPair {
    pub r_t: CMat,
    pub r_r: CMat,
    pub gamma_t: Vec<f64>,
    pub gamma_r: Vec<f64>,
}

impl ChannelStatistics {
    /// Validates the inputs and rescales `g_tilde` and `h_bar` so both power
    /// normalization identities hold exactly.
    ///
    /// `k = 0` forces the Rice component to zero; an infinite `k` forces the
    /// coupling to zero.
    pub fn new(
        u_r: CMat,
        u_t: CMat,
        g_tilde: DMatrix<f64>,
        h_bar: CMat,
        k: RiceFactor,
    ) -> Result<Self> {
        let n_r = u_r.nrows();
        let n_t = u_t.nrows();
        if u_r.ncols() != n_r || u_t.ncols() != n_t {
            return Err(Error::DimensionMismatch("eigenbases must be square".into()));
        }
        if g_tilde.nrows() != n_r || g_tilde.ncols() != n_t {
            return Err(Error::DimensionMismatch(format!(
                "coupling matrix is {}x{}, expected {}x{}",
                g_tilde.nrows(),
                g_tilde.ncols(),
                n_r,
                n_t
            )));
        }
        if h_bar.nrows() != n_r || h_bar.ncols() != n_t {
            return Err(Error::DimensionMismatch("Rice component shape".into()));
        }
        for u in [&u_r, &u_t] {
            let dev = unitary_deviation(u);
            if dev > UNITARY_TOL {
                return Err(Error::NotUnitary {
                    deviation: dev,
                    tol: UNITARY_TOL,
                });
            }
        }
        if g_tilde.iter().any(|&v| v < 0.0) {
            return Err(Error::NegativeCoupling);
        }
        if let RiceFactor::Finite(kv) = k {
            if !(kv >= 0.0 && kv.is_finite()) {
                return Err(Error::DimensionMismatch(format!("invalid Rice factor {kv}")));
            }
        }

        let dims = (n_r * n_t) as f64;
        let mut g_tilde = g_tilde;
        let mut h_bar = h_bar;

        // Zero out the branch the Rice factor excludes before scaling.
        match k {
            RiceFactor::Finite(kv) if kv == 0.0 => h_bar.fill(C64::new(0.0, 0.0)),
            RiceFactor::Infinite => g_tilde.fill(0.0),
            _ => {}
        }

        let scattered_mass: f64 = g_tilde.iter().map(|&v| v * v).sum();
        let los_mass: f64 = h_bar.iter().map(|z| z.norm_sqr()).sum();
        let target_scatter = dims * k.scattered_fraction();
        let target_los = dims * k.los_fraction();

        if target_scatter > 0.0 {
            if scattered_mass <= 0.0 {
                return Err(Error::ZeroCouplingFiniteRice);
            }
            let s = (target_scatter / scattered_mass).sqrt();
            g_tilde.iter_mut().for_each(|v| *v *= s);
        }
        if target_los > 0.0 {
            if los_mass <= 0.0 {
                return Err(Error::ZeroLosPositiveRice);
            }
            let s = (target_los / los_mass).sqrt();
            h_bar.iter_mut().for_each(|z| *z *= C64::new(s, 0.0));
        }

        let g = g_tilde.component_mul(&g_tilde);
        Ok(Self {
            n_r,
            n_t,
            u_r,
            u_t,
            g_tilde,
            g,
            h_bar,
            k,
        })
    }

    /// Rebuilds statistics from parts that are already normalized, e.g. when
    /// loading from a serialized document. Invariants are checked, not fixed.
    pub fn from_normalized_parts(
        u_r: CMat,
        u_t: CMat,
        g_tilde: DMatrix<f64>,
        h_bar: CMat,
        k: RiceFactor,
    ) -> Result<Self> {
        let stats = Self::new(u_r, u_t, g_tilde, h_bar, k)?;
        Ok(stats)
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn u_r(&self) -> &CMat {
        &self.u_r
    }

    pub fn u_t(&self) -> &CMat {
        &self.u_t
    }

    pub fn g_tilde(&self) -> &DMatrix<f64> {
        &self.g_tilde
    }

    /// Power coupling matrix `G = G_tilde ⊙ G_tilde`.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn h_bar(&self) -> &CMat {
        &self.h_bar
    }

    pub fn rice_factor(&self) -> RiceFactor {
        self.k
    }

    /// Residuals of the two power normalization identities; both are zero (to
    /// roundoff) for every constructed statistics value.
    pub fn normalization_residual(&self) -> (f64, f64) {
        let dims = (self.n_r * self.n_t) as f64;
        let scatter: f64 = self.g.iter().sum();
        let los: f64 = self.h_bar.iter().map(|z| z.norm_sqr()).sum();
        (
            (scatter - dims * self.k.scattered_fraction()).abs(),
            (los - dims * self.k.los_fraction()).abs(),
        )
    }

    /// Draws one channel realization `H = U_R (G_tilde ⊙ W) U_T^H + H_bar`,
    /// deterministic for a given seed.
    pub fn sample_realization(&self, seed: u64) -> Result<CMat> {
        if self.k.is_infinite() {
            return Err(Error::DeterministicChannel);
        }
        let mut rng = seeded_rng(seed, 0);
        let mut inner = CMat::zeros(self.n_r, self.n_t);
        // Row-major draw order keeps realizations stable under refactors of
        // the storage layout.
        for i in 0..self.n_r {
            for j in 0..self.n_t {
                inner[(i, j)] = crate::linalg::complex_standard_normal(&mut rng)
                    * C64::new(self.g_tilde[(i, j)], 0.0);
            }
        }
        Ok(&self.u_r * inner * self.u_t.adjoint() + &self.h_bar)
    }

    /// Transmit and receive correlation matrices of the scattered part.
    pub fn correlation_matrices(&self) -> CorrelationPair {
        let gamma_t: Vec<f64> = (0..self.n_t)
            .map(|m| (0..self.n_r).map(|n| self.g[(n, m)]).sum())
            .collect();
        let gamma_r: Vec<f64> = (0..self.n_r)
            .map(|n| (0..self.n_t).map(|m| self.g[(n, m)]).sum())
            .collect();
        let r_t = &self.u_t * crate::linalg::diag_real(&gamma_t) * self.u_t.adjoint();
        let r_r = &self.u_r * crate::linalg::diag_real(&gamma_r) * self.u_r.adjoint();
        CorrelationPair {
            r_t,
            r_r,
            gamma_t,
            gamma_r,
        }
    }
}

// ---------------------------------------------------------------------------
// Structured generators
// ---------------------------------------------------------------------------

/// Rank-one (separable) statistics: `G = lambda_r lambda_t^T`, no Rice
/// component. Equivalent to drawing `H = A_R^{1/2} W A_T^{1/2}` with
/// `A_R = U_R diag(lambda_r) U_R^H` and `A_T = U_T diag(lambda_t) U_T^H`.
pub fn kronecker_statistics(
    lambda_r: &[f64],
    lambda_t: &[f64],
    u_r: CMat,
    u_t: CMat,
) -> Result<ChannelStatistics> {
    if lambda_r.iter().any(|&v| v < 0.0) || lambda_t.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidEigenvalues);
    }
    if lambda_r.iter().all(|&v| v == 0.0) || lambda_t.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidEigenvalues);
    }
    let n_r = lambda_r.len();
    let n_t = lambda_t.len();
    let g_tilde = DMatrix::from_fn(n_r, n_t, |i, j| (lambda_r[i] * lambda_t[j]).sqrt());
    ChannelStatistics::new(
        u_r,
        u_t,
        g_tilde,
        CMat::zeros(n_r, n_t),
        RiceFactor::Finite(0.0),
    )
}

/// Recovers normalized separable factors from rank-one statistics so that
/// `lambda_r lambda_t^T` equals the stored coupling matrix exactly.
pub fn kronecker_factors(stats: &ChannelStatistics) -> (Vec<f64>, Vec<f64>) {
    let g = stats.g();
    let total: f64 = g.iter().sum();
    let rows: Vec<f64> = (0..stats.n_r())
        .map(|n| (0..stats.n_t()).map(|m| g[(n, m)]).sum::<f64>())
        .collect();
    let cols: Vec<f64> = (0..stats.n_t())
        .map(|m| (0..stats.n_r()).map(|n| g[(n, m)]).sum::<f64>())
        .collect();
    let s = total.sqrt();
    (
        rows.iter().map(|v| v / s).collect(),
        cols.iter().map(|v| v / s).collect(),
    )
}

/// One propagation path of the ray-based physical model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Ray {
    /// Attenuation magnitude (nonnegative).
    pub attenuation: f64,
    /// Path length, in the same unit as the carrier wavelength.
    pub path_length: f64,
    /// Angle of departure, radians.
    pub aod_rad: f64,
    /// Angle of arrival, radians.
    pub aoa_rad: f64,
}

impl Ray {
    fn amplitude(&self, wavelength: f64) -> C64 {
        let phase = -2.0 * std::f64::consts::PI * self.path_length / wavelength;
        C64::new(phase.cos(), phase.sin()) * C64::new(self.attenuation, 0.0)
    }
}

/// Statistics derived from the ray model, keeping the sparse line-of-sight
/// bin pattern that the massive-array solver exploits.
#[derive(Debug, Clone)]
pub struct RayChannel {
    pub statistics: ChannelStatistics,
    /// Nonzero entries `(receive bin, transmit bin, value)` of the
    /// line-of-sight matrix in the virtual (beam) domain, after normalization.
    pub los_bins: Vec<(usize, usize, C64)>,
}

/// Unit-norm array response of a half-wavelength ULA at spatial frequency
/// `freq` (cycles per element).
pub fn steering_vector(n: usize, freq: f64) -> crate::linalg::CVec {
    let scale = 1.0 / (n as f64).sqrt();
    crate::linalg::CVec::from_fn(n, |i, _| {
        let ph = -2.0 * std::f64::consts::PI * freq * i as f64;
        C64::new(ph.cos(), ph.sin()) * C64::new(scale, 0.0)
    })
}

/// Spatial frequency of a physical angle for half-wavelength element spacing.
pub fn spatial_frequency(angle_rad: f64) -> f64 {
    0.5 * angle_rad.sin()
}

fn nearest_grid_bin(freq: f64, n: usize) -> usize {
    // Grid frequencies are m/n on the unit circle; pick the circularly
    // nearest one.
    let wrapped = freq.rem_euclid(1.0);
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for m in 0..n {
        let grid = m as f64 / n as f64;
        let mut d = (wrapped - grid).abs();
        d = d.min(1.0 - d);
        if d < best_dist {
            best_dist = d;
            best = m;
        }
    }
    best
}

/// Fourier eigenbasis whose columns are the steering vectors of the uniform
/// virtual-angle grid; unitary for any array size.
pub fn fourier_basis(n: usize) -> CMat {
    let mut u = CMat::zeros(n, n);
    for m in 0..n {
        let col = steering_vector(n, m as f64 / n as f64);
        u.set_column(m, &col);
    }
    u
}

/// Builds statistics from a ray-based physical description.
///
/// Each scattered path deposits its power into the coupling bin whose grid
/// angles are nearest to the path's angles; the line-of-sight path (when
/// present) lands in a single bin of the virtual-domain Rice matrix. The Rice
/// factor is the ratio of line-of-sight to scattered power.
pub fn ray_statistics(
    los: Option<&Ray>,
    scattered: &[Ray],
    wavelength: f64,
    n_r: usize,
    n_t: usize,
) -> Result<RayChannel> {
    if los.is_none() && scattered.is_empty() {
        return Err(Error::EmptyPathList);
    }
    let u_t = fourier_basis(n_t);
    let u_r = fourier_basis(n_r);

    let mut g_raw = DMatrix::<f64>::zeros(n_r, n_t);
    let mut scatter_power = 0.0;
    for ray in scattered {
        let m = nearest_grid_bin(spatial_frequency(ray.aod_rad), n_t);
        let n = nearest_grid_bin(spatial_frequency(ray.aoa_rad), n_r);
        let p = ray.attenuation * ray.attenuation;
        g_raw[(n, m)] += p;
        scatter_power += p;
    }

    let mut hat_raw = CMat::zeros(n_r, n_t);
    let mut los_power = 0.0;
    let mut los_bin = None;
    if let Some(ray) = los {
        let m = nearest_grid_bin(spatial_frequency(ray.aod_rad), n_t);
        let n = nearest_grid_bin(spatial_frequency(ray.aoa_rad), n_r);
        let a = ray.amplitude(wavelength);
        hat_raw[(n, m)] += a;
        los_power = a.norm_sqr();
        if los_power > 0.0 {
            los_bin = Some((n, m));
        }
    }

    let k = if los_power == 0.0 {
        RiceFactor::Finite(0.0)
    } else if scatter_power == 0.0 {
        RiceFactor::Infinite
    } else {
        RiceFactor::Finite(los_power / scatter_power)
    };

    let g_tilde = g_raw.map(|v| v.sqrt());
    let h_bar_raw = &u_r * &hat_raw * u_t.adjoint();
    let statistics = ChannelStatistics::new(u_r, u_t, g_tilde, h_bar_raw, k)?;

    // Recover the normalized sparse value: normalization preserves the bin
    // pattern, only the scale changes.
    let mut los_bins = Vec::new();
    if let Some((n, m)) = los_bin {
        let target = (n_r * n_t) as f64 * k.los_fraction();
        let scale = (target / los_power).sqrt();
        los_bins.push((n, m, hat_raw[(n, m)] * C64::new(scale, 0.0)));
    }
    Ok(RayChannel {
        statistics,
        los_bins,
    })
}

// ---------------------------------------------------------------------------
// Serialization (JSON document schema)
// ---------------------------------------------------------------------------

/// Wire form of the Rice factor: a number, or the string `"inf"`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum RiceFactorJson {
    Number(f64),
    Flag(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct StatisticsJson {
    n_r: usize,
    n_t: usize,
    /// Complex entries as `[re, im, re, im, ...]`, row-major.
    u_r: Vec<f64>,
    u_t: Vec<f64>,
    g_tilde: Vec<f64>,
    h_bar: Vec<f64>,
    k: RiceFactorJson,
}

fn complex_to_interleaved(m: &CMat) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)].re);
            out.push(m[(i, j)].im);
        }
    }
    out
}

fn interleaved_to_complex(rows: usize, cols: usize, data: &[f64]) -> Result<CMat> {
    if data.len() != 2 * rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "expected {} interleaved values, got {}",
            2 * rows * cols,
            data.len()
        )));
    }
    Ok(CMat::from_fn(rows, cols, |i, j| {
        let base = 2 * (i * cols + j);
        C64::new(data[base], data[base + 1])
    }))
}

impl Serialize for ChannelStatistics {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut g = Vec::with_capacity(self.n_r * self.n_t);
        for i in 0..self.n_r {
            for j in 0..self.n_t {
                g.push(self.g_tilde[(i, j)]);
            }
        }
        StatisticsJson {
            n_r: self.n_r,
            n_t: self.n_t,
            u_r: complex_to_interleaved(&self.u_r),
            u_t: complex_to_interleaved(&self.u_t),
            g_tilde: g,
            h_bar: complex_to_interleaved(&self.h_bar),
            k: match self.k {
                RiceFactor::Finite(v) => RiceFactorJson::Number(v),
                RiceFactor::Infinite => RiceFactorJson::Flag("inf".into()),
            },
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ChannelStatistics {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let raw = StatisticsJson::deserialize(deserializer)?;
        let k = match raw.k {
            RiceFactorJson::Number(v) => RiceFactor::Finite(v),
            RiceFactorJson::Flag(s) if s.eq_ignore_ascii_case("inf") => RiceFactor::Infinite,
            RiceFactorJson::Flag(s) => {
                return Err(D::Error::custom(format!("unrecognized Rice factor flag {s:?}")))
            }
        };
        if raw.g_tilde.len() != raw.n_r * raw.n_t {
            return Err(D::Error::custom("g_tilde length mismatch"));
        }
        let g_tilde = DMatrix::from_fn(raw.n_r, raw.n_t, |i, j| raw.g_tilde[i * raw.n_t + j]);
        let u_r = interleaved_to_complex(raw.n_r, raw.n_r, &raw.u_r).map_err(D::Error::custom)?;
        let u_t = interleaved_to_complex(raw.n_t, raw.n_t, &raw.u_t).map_err(D::Error::custom)?;
        let h_bar = interleaved_to_complex(raw.n_r, raw.n_t, &raw.h_bar).map_err(D::Error::custom)?;
        ChannelStatistics::from_normalized_parts(u_r, u_t, g_tilde, h_bar, k).map_err(D::Error::custom)
    }
}
