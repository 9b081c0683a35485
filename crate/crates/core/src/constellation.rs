//! Finite signal alphabets and enumeration of group signal vectors.
//!
//! Constellations are normalized to unit average energy and listed in a fixed
//! Gray-coded order so every enumeration (and therefore every Monte Carlo
//! average built on top of one) is reproducible bit for bit.

use crate::error::{Error, Result};
use crate::linalg::C64;

/// Default cap on the number of enumerated signal vectors (`M^n`).
pub const ENUMERATION_CAP: u128 = 1 << 20;

/// Alphabet family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstellationKind {
    Bpsk,
    Qpsk,
    /// Square quadrature amplitude modulation of the given cardinality.
    Qam(usize),
}

impl std::fmt::Display for ConstellationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConstellationKind::Bpsk => write!(f, "bpsk"),
            ConstellationKind::Qpsk => write!(f, "qpsk"),
            ConstellationKind::Qam(m) => write!(f, "qam{m}"),
        }
    }
}

/// An equiprobable signal alphabet with unit average energy.
#[derive(Debug, Clone)]
pub struct Constellation {
    kind: ConstellationKind,
    points: Vec<C64>,
}

/// Gray-ordered PAM amplitudes for one quadrature axis of a square QAM.
///
/// The axis levels `{±1, ±3, ...}` are listed in the order of the reflected
/// binary code, so adjacent enumeration indices differ in one bit.
fn gray_pam_levels(levels: usize) -> Vec<f64> {
    let bits = levels.trailing_zeros();
    (0..levels)
        .map(|idx| {
            let gray = idx ^ (idx >> 1);
            // Map the Gray codeword to its rank in the natural amplitude order.
            let mut rank = 0usize;
            for b in (0..bits).rev() {
                rank = (rank << 1) | ((gray >> b) & 1);
            }
            (2.0 * rank as f64) - (levels as f64 - 1.0)
        })
        .collect()
}

impl Constellation {
    /// Builds the normalized constellation for a `(kind, M)` pair.
    ///
    /// Supported: `(Bpsk, 2)`, `(Qpsk, 4)`, and square `Qam(M)` with
    /// `M` in `{4, 16, 64}`.
    pub fn new(kind: ConstellationKind, m: usize) -> Result<Self> {
        let points = match (kind, m) {
            (ConstellationKind::Bpsk, 2) => vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
            (ConstellationKind::Qpsk, 4) => square_qam_points(4),
            (ConstellationKind::Qam(mk), _) if mk == m && matches!(m, 4 | 16 | 64) => {
                square_qam_points(m)
            }
            _ => {
                return Err(Error::UnsupportedConstellation {
                    kind: kind.to_string(),
                    m,
                })
            }
        };
        Ok(Self { kind, points })
    }

    /// Parses the name used in experiment configurations
    /// (`"bpsk" | "qpsk" | "qam16" | "qam64"`).
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bpsk" => Self::new(ConstellationKind::Bpsk, 2),
            "qpsk" => Self::new(ConstellationKind::Qpsk, 4),
            "qam4" => Self::new(ConstellationKind::Qam(4), 4),
            "qam16" => Self::new(ConstellationKind::Qam(16), 16),
            "qam64" => Self::new(ConstellationKind::Qam(64), 64),
            other => Err(Error::UnsupportedConstellation {
                kind: other.to_string(),
                m: 0,
            }),
        }
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    /// Cardinality `M`.
    pub fn cardinality(&self) -> usize {
        self.points.len()
    }

    /// The points in their fixed Gray order.
    pub fn points(&self) -> &[C64] {
        &self.points
    }

    /// Bits carried by one symbol, `log2 M`.
    pub fn bits_per_symbol(&self) -> f64 {
        (self.points.len() as f64).log2()
    }

    /// Number of vectors `M^n` an `n`-fold enumeration would produce.
    pub fn enumeration_size(&self, n: usize) -> u128 {
        (self.points.len() as u128).pow(n as u32)
    }

    /// Enumerates all `M^n` signal vectors of length `n` in lexicographic
    /// order over point indices (last coordinate fastest).
    ///
    /// Fails when `M^n` exceeds `cap`.
    pub fn enumerate_group_vectors(&self, n: usize, cap: u128) -> Result<Vec<Vec<C64>>> {
        assert!(n >= 1, "group size must be at least 1");
        let total = self.enumeration_size(n);
        if total > cap {
            return Err(Error::EnumerationCapExceeded {
                required: total,
                cap,
            });
        }
        let m = self.points.len();
        let total = total as usize;
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            out.push(idx.iter().map(|&i| self.points[i]).collect());
            for pos in (0..n).rev() {
                idx[pos] += 1;
                if idx[pos] < m {
                    break;
                }
                idx[pos] = 0;
            }
        }
        Ok(out)
    }
}

fn square_qam_points(m: usize) -> Vec<C64> {
    let side = (m as f64).sqrt().round() as usize;
    let levels = gray_pam_levels(side);
    // Unit average energy: each axis contributes (side^2 - 1) / 3.
    let scale = 1.0 / ((2.0 * (side * side - 1) as f64 / 3.0).sqrt());
    let mut pts = Vec::with_capacity(m);
    for &re in &levels {
        for &im in &levels {
            pts.push(C64::new(re * scale, im * scale));
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_kinds() -> Vec<Constellation> {
        vec![
            Constellation::new(ConstellationKind::Bpsk, 2).unwrap(),
            Constellation::new(ConstellationKind::Qpsk, 4).unwrap(),
            Constellation::new(ConstellationKind::Qam(16), 16).unwrap(),
            Constellation::new(ConstellationKind::Qam(64), 64).unwrap(),
        ]
    }

    #[test]
    fn bpsk_is_antipodal_unit_energy() {
        let c = Constellation::new(ConstellationKind::Bpsk, 2).unwrap();
        assert_eq!(c.points(), &[C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]);
    }

    #[test]
    fn qpsk_points_lie_on_unit_circle_diagonals() {
        let c = Constellation::new(ConstellationKind::Qpsk, 4).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for p in c.points() {
            assert!((p.re.abs() - s).abs() < 1e-12);
            assert!((p.im.abs() - s).abs() < 1e-12);
        }
        let distinct: std::collections::HashSet<(i64, i64)> = c
            .points()
            .iter()
            .map(|p| ((p.re * 1e6).round() as i64, (p.im * 1e6).round() as i64))
            .collect();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn qam16_scale_matches_lattice_oracle() {
        // Independent oracle: average energy of the raw {±1,±3}^2 lattice.
        let raw: f64 = {
            let lv = [-3.0, -1.0, 1.0, 3.0];
            let mut acc = 0.0;
            for &a in &lv {
                for &b in &lv {
                    acc += a * a + b * b;
                }
            }
            acc / 16.0
        };
        assert!((raw - 10.0).abs() < 1e-12);
        let c = Constellation::new(ConstellationKind::Qam(16), 16).unwrap();
        let expect = 1.0 / 10.0f64.sqrt();
        for p in c.points() {
            let re_lvl = (p.re / expect).round();
            assert!((p.re - re_lvl * expect).abs() < 1e-12);
            assert!(re_lvl.abs() == 1.0 || re_lvl.abs() == 3.0);
        }
    }

    #[test]
    fn invariants_hold_for_all_kinds() {
        for c in all_kinds() {
            let m = c.cardinality() as f64;
            let mean: C64 = c.points().iter().sum::<C64>() / m;
            let energy: f64 = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / m;
            assert!(mean.norm() < 1e-12, "{}", c.kind());
            assert!((energy - 1.0).abs() < 1e-12, "{}", c.kind());
            let distinct: std::collections::HashSet<(i64, i64)> = c
                .points()
                .iter()
                .map(|p| ((p.re * 1e9).round() as i64, (p.im * 1e9).round() as i64))
                .collect();
            assert_eq!(distinct.len(), c.cardinality());
        }
    }

    #[test]
    fn unsupported_combinations_are_rejected() {
        assert!(Constellation::new(ConstellationKind::Qam(8), 8).is_err());
        assert!(Constellation::new(ConstellationKind::Bpsk, 4).is_err());
        assert!(Constellation::from_name("psk8").is_err());
    }

    #[test]
    fn enumeration_counts_and_order() {
        let b = Constellation::new(ConstellationKind::Bpsk, 2).unwrap();
        let v1 = b.enumerate_group_vectors(1, ENUMERATION_CAP).unwrap();
        assert_eq!(v1, vec![vec![C64::new(1.0, 0.0)], vec![C64::new(-1.0, 0.0)]]);
        let v2 = b.enumerate_group_vectors(2, ENUMERATION_CAP).unwrap();
        assert_eq!(v2.len(), 4);
        // Lexicographic: (+,+), (+,-), (-,+), (-,-).
        assert_eq!(v2[1], vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]);
        let q = Constellation::new(ConstellationKind::Qpsk, 4).unwrap();
        assert_eq!(q.enumerate_group_vectors(2, ENUMERATION_CAP).unwrap().len(), 16);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let q = Constellation::new(ConstellationKind::Qam(64), 64).unwrap();
        let err = q.enumerate_group_vectors(4, ENUMERATION_CAP).unwrap_err();
        match err {
            Error::EnumerationCapExceeded { required, cap } => {
                assert_eq!(required, 64u128.pow(4));
                assert_eq!(cap, ENUMERATION_CAP);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn enumerated_vectors_have_identity_sample_covariance() {
        for c in all_kinds() {
            let n = 2usize;
            let vecs = c.enumerate_group_vectors(n, ENUMERATION_CAP).unwrap();
            let total = vecs.len() as f64;
            let mut mean = vec![C64::new(0.0, 0.0); n];
            let mut cov = vec![C64::new(0.0, 0.0); n * n];
            for v in &vecs {
                for i in 0..n {
                    mean[i] += v[i];
                    for j in 0..n {
                        cov[i * n + j] += v[i] * v[j].conj();
                    }
                }
            }
            for i in 0..n {
                assert!((mean[i] / total).norm() < 1e-10);
                for j in 0..n {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((cov[i * n + j] / total - C64::new(expect, 0.0)).norm() < 1e-10);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn enumeration_count_is_m_pow_n(n in 1usize..4) {
            for c in all_kinds() {
                if c.enumeration_size(n) <= ENUMERATION_CAP {
                    let vecs = c.enumerate_group_vectors(n, ENUMERATION_CAP).unwrap();
                    prop_assert_eq!(vecs.len() as u128, c.enumeration_size(n));
                }
            }
        }
    }
}
