use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

use super::{fold_angle, ProtocolParams};
use crate::linalg::I;

/// 2×2 Bloch matrix at quasimomentum `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochOperator {
    pub entries: Matrix2<C64>,
    pub k: f64,
}

impl BlochOperator {
    pub fn to_dmatrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(2, 2, |r, c| self.entries[(r, c)])
    }

    pub fn unitarity_defect(&self) -> f64 {
        let g = self.entries.adjoint() * self.entries - Matrix2::identity();
        g.iter().fold(0.0, |a, z| a.max(z.norm()))
    }

    /// Eigenvalues from the characteristic polynomial.
    pub fn eigenvalues(&self) -> [C64; 2] {
        let m = &self.entries;
        let half_tr = (m[(0, 0)] + m[(1, 1)]) * 0.5;
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let disc = (half_tr * half_tr - det).sqrt();
        [half_tr - disc, half_tr + disc]
    }

    /// Eigenphases `arg λ`, ascending.
    pub fn eigenphases(&self) -> [f64; 2] {
        let [a, b] = self.eigenvalues();
        let (x, y) = (a.arg(), b.arg());
        if x <= y {
            [x, y]
        } else {
            [y, x]
        }
    }
}

/// Quasienergy pair `(-E, +E)` at momentum `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandPair {
    pub e_minus: f64,
    pub e_plus: f64,
    pub k: f64,
}

/// Single-step Bloch matrix
/// `[[cosθ e^{i(φ−k/2)}, i sinθ e^{i(φ−k/2)}], [i sinθ e^{ik/2}, cosθ e^{ik/2}]]`.
pub fn step_operator_k(theta: f64, phi_m: f64, k: f64) -> BlochOperator {
    let (s, c) = theta.sin_cos();
    let top = C64::from_polar(1.0, phi_m - 0.5 * k);
    let bottom = C64::from_polar(1.0, 0.5 * k);
    BlochOperator { entries: Matrix2::new(top * c, I * top * s, I * bottom * s, bottom * c), k }
}

/// `U_F(k) = U_2(θ2, −φ, k) · U_1(θ1, +φ, k)`.
pub fn floquet_operator_k(params: &ProtocolParams, k: f64) -> BlochOperator {
    let u1 = step_operator_k(params.theta1(), params.phi(), k);
    let u2 = step_operator_k(params.theta2(), -params.phi(), k);
    BlochOperator { entries: u2.entries * u1.entries, k }
}

/// Closed-form band pair `±arccos[cosθ1 cosθ2 cos k − sinθ1 sinθ2 cos φ]`.
pub fn quasienergies(params: &ProtocolParams, k: f64) -> BandPair {
    let arg = params.theta1().cos() * params.theta2().cos() * k.cos()
        - params.theta1().sin() * params.theta2().sin() * params.phi().cos();
    let e = arg.clamp(-1.0, 1.0).acos();
    BandPair { e_minus: -e, e_plus: e, k }
}

/// Momenta `k = φ + (2p+1)π` folded into `(-π, π]`; a single value.
pub fn dfs_momenta(phi: f64) -> Vec<f64> {
    vec![fold_angle(phi + PI)]
}
