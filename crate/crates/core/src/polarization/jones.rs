use std::ops::Mul;

use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// 2×2 Jones matrix with rows and columns ordered (H, V).
///
/// A polarization vector `(α, β)` for `α|H⟩ + β|V⟩` maps to `J · (α, β)ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesMatrix(pub [[Complex64; 2]; 2]);

impl JonesMatrix {
    pub fn identity() -> Self {
        JonesMatrix([[ONE, ZERO], [ZERO, ONE]])
    }

    pub fn from_real(m: [[f64; 2]; 2]) -> Self {
        JonesMatrix([
            [m[0][0].into(), m[0][1].into()],
            [m[1][0].into(), m[1][1].into()],
        ])
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[row][col]
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        JonesMatrix([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn det(&self) -> Complex64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Largest entry-wise deviation of `J†J` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.adjoint() * *self;
        let id = Self::identity();
        let mut worst: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((p.0[r][c] - id.0[r][c]).norm());
            }
        }
        worst
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() <= tol
    }

    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    /// True when `self = e^{iφ}·other` for some global phase φ.
    pub fn approx_eq_up_to_phase(&self, other: &JonesMatrix, tol: f64) -> bool {
        // pick the largest entry of `other` as the phase reference
        let (mut r0, mut c0, mut best) = (0, 0, 0.0);
        for r in 0..2 {
            for c in 0..2 {
                if other.0[r][c].norm() > best {
                    best = other.0[r][c].norm();
                    r0 = r;
                    c0 = c;
                }
            }
        }
        if best == 0.0 {
            return self.0.iter().flatten().all(|z| z.norm() <= tol);
        }
        let ratio = self.0[r0][c0] / other.0[r0][c0];
        if (ratio.norm() - 1.0).abs() > tol {
            return false;
        }
        (0..2).all(|r| (0..2).all(|c| (self.0[r][c] - ratio * other.0[r][c]).norm() <= tol))
    }
}

impl Mul for JonesMatrix {
    type Output = JonesMatrix;

    fn mul(self, rhs: JonesMatrix) -> JonesMatrix {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[ZERO; 2]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        JonesMatrix(out)
    }
}

/// Half-wave plate with its fast axis at `theta` radians from H.
pub fn hwp_matrix(theta: f64) -> JonesMatrix {
    let (s, c) = (2.0 * theta).sin_cos();
    JonesMatrix::from_real([[c, s], [s, -c]])
}

/// Quarter-wave plate with its fast axis at `theta` radians from H.
///
/// Convention: `R(θ)·diag(1, i)·R(−θ)`, i.e. a quarter-wave retardance on the
/// slow axis and no global phase. Two of these compose exactly to
/// [`hwp_matrix`] at the same angle.
pub fn qwp_matrix(theta: f64) -> JonesMatrix {
    let (s, c) = theta.sin_cos();
    let i = Complex64::i();
    let off = (ONE - i) * (s * c);
    JonesMatrix([
        [ONE * (c * c) + i * (s * s), off],
        [off, ONE * (s * s) + i * (c * c)],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, FRAC_PI_8};

    fn close(a: Complex64, b: f64) -> bool {
        (a - Complex64::new(b, 0.0)).norm() < 1e-12
    }

    #[test]
    fn hwp_zero_is_diag_one_minus_one() {
        let m = hwp_matrix(0.0);
        assert!(close(m.get(0, 0), 1.0) && close(m.get(0, 1), 0.0));
        assert!(close(m.get(1, 0), 0.0) && close(m.get(1, 1), -1.0));
    }

    #[test]
    fn hwp_22_5_degrees_maps_h_to_plus() {
        let out = hwp_matrix(FRAC_PI_8).apply([ONE, ZERO]);
        assert!(close(out[0], FRAC_1_SQRT_2));
        assert!(close(out[1], FRAC_1_SQRT_2));
    }

    #[test]
    fn hwp_45_degrees_swaps_h_and_v() {
        let m = hwp_matrix(FRAC_PI_4);
        assert!(close(m.get(0, 0), 0.0) && close(m.get(0, 1), 1.0));
        assert!(close(m.get(1, 0), 1.0) && close(m.get(1, 1), 0.0));
    }

    #[test]
    fn qwp_zero_is_diag_one_i() {
        let target = JonesMatrix([[ONE, ZERO], [ZERO, Complex64::i()]]);
        assert!(qwp_matrix(0.0).approx_eq_up_to_phase(&target, 1e-12));
    }

    #[test]
    fn qwp_45_degrees_makes_h_circular() {
        let out = qwp_matrix(FRAC_PI_4).apply([ONE, ZERO]);
        assert!((out[0].norm_sqr() - 0.5).abs() < 1e-12);
        assert!((out[1].norm_sqr() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn phase_comparison_rejects_different_matrices() {
        assert!(!hwp_matrix(0.0).approx_eq_up_to_phase(&hwp_matrix(0.3), 1e-9));
        let phased = JonesMatrix(hwp_matrix(0.3).0.map(|r| r.map(|z| z * Complex64::i())));
        assert!(phased.approx_eq_up_to_phase(&hwp_matrix(0.3), 1e-12));
    }

    proptest! {
        #[test]
        fn waveplates_are_unitary(theta in -10.0f64..10.0) {
            let h = hwp_matrix(theta);
            let q = qwp_matrix(theta);
            prop_assert!(h.unitarity_error() <= 1e-12);
            prop_assert!(q.unitarity_error() <= 1e-12);
            prop_assert!((h.det().norm() - 1.0).abs() <= 1e-12);
            prop_assert!((q.det().norm() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn two_quarter_waves_make_a_half_wave(theta in -10.0f64..10.0) {
            let qq = qwp_matrix(theta) * qwp_matrix(theta);
            prop_assert!(qq.approx_eq_up_to_phase(&hwp_matrix(theta), 1e-12));
        }
    }
}
