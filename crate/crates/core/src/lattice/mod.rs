//! Noiseless operators of the two-step mesh-lattice protocol.
//!
//! Conventions used throughout the crate:
//!
//! * Real-space vectors are ordered `(α_1, β_1, α_2, β_2, …)`; cell `j`
//!   occupies components `2j` and `2j + 1` (zero based).
//! * A plane wave is `ψ_j ∝ e^{ikj}` over cells, so a block coupling cell
//!   `j` to cell `j - d` contributes `e^{-ikd}` to the Bloch matrix.
//! * Quasienergies are `E = arg λ` for Floquet eigenvalues `λ`.
//! * The first step of a period uses `θ1` and phase `+φ`, the second `θ2` and
//!   `-φ`; the phase multiplies the α row only.

mod bloch;
mod real;
pub mod symbolic;

pub use bloch::{dfs_momenta, floquet_operator_k, quasienergies, step_operator_k, BandPair, BlochOperator};
pub use real::{floquet_operator_real, step_operators_real, RealOperator};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Folds an angle into `(-π, π]`.
pub fn fold_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    // rem_euclid maps -π to π already; guard the rounding case y == -π.
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Which half of the Floquet period a step belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Odd steps `m = 1, 3, …`: angle `θ1`, phase `+φ`.
    Odd,
    /// Even steps `m = 2, 4, …`: angle `θ2`, phase `-φ`.
    Even,
}

impl StepKind {
    /// Step kind of the 1-based step index `m`.
    pub fn of_step(m: usize) -> Self {
        if m % 2 == 1 {
            StepKind::Odd
        } else {
            StepKind::Even
        }
    }
}

/// Lattice geometry without the protocol angles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub n_sites: usize,
    pub boundary: Boundary,
}

/// Two-step protocol on a one-dimensional lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProtocolParams", into = "RawProtocolParams")]
pub struct ProtocolParams {
    theta1: f64,
    theta2: f64,
    phi: f64,
    n_sites: usize,
    boundary: Boundary,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocolParams {
    theta1: f64,
    theta2: f64,
    phi: f64,
    n_sites: usize,
    boundary: Boundary,
}

impl TryFrom<RawProtocolParams> for ProtocolParams {
    type Error = Error;
    fn try_from(r: RawProtocolParams) -> Result<Self> {
        ProtocolParams::new(r.theta1, r.theta2, r.phi, r.n_sites, r.boundary)
    }
}

impl From<ProtocolParams> for RawProtocolParams {
    fn from(p: ProtocolParams) -> Self {
        RawProtocolParams { theta1: p.theta1, theta2: p.theta2, phi: p.phi, n_sites: p.n_sites, boundary: p.boundary }
    }
}

impl ProtocolParams {
    /// Folds the angles into `(-π, π]`. `n_sites` must be at least 1; the
    /// real-space builders additionally require 2.
    pub fn new(theta1: f64, theta2: f64, phi: f64, n_sites: usize, boundary: Boundary) -> Result<Self> {
        for (name, v) in [("theta1", theta1), ("theta2", theta2), ("phi", phi)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")));
            }
        }
        if n_sites == 0 {
            return Err(Error::InvalidParameter("n_sites must be positive".into()));
        }
        Ok(Self { theta1: fold_angle(theta1), theta2: fold_angle(theta2), phi: fold_angle(phi), n_sites, boundary })
    }

    /// Momentum-space-only parameters (lattice size irrelevant).
    pub fn bulk(theta1: f64, theta2: f64, phi: f64) -> Result<Self> {
        Self::new(theta1, theta2, phi, 2, Boundary::Periodic)
    }

    pub fn theta1(&self) -> f64 {
        self.theta1
    }

    pub fn theta2(&self) -> f64 {
        self.theta2
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn lattice(&self) -> Lattice {
        Lattice { n_sites: self.n_sites, boundary: self.boundary }
    }

    /// Dimension of real-space operators, `2N`.
    pub fn dim(&self) -> usize {
        2 * self.n_sites
    }

    /// The period is fixed to two steps.
    pub const fn period(&self) -> usize {
        2
    }

    /// Same protocol with both splitting angles shifted by `tau`.
    pub fn with_offset(&self, tau: f64) -> Self {
        self.with_step_offsets(tau, tau)
    }

    /// Same protocol with independent offsets on the two steps.
    pub fn with_step_offsets(&self, tau1: f64, tau2: f64) -> Self {
        Self { theta1: fold_angle(self.theta1 + tau1), theta2: fold_angle(self.theta2 + tau2), ..*self }
    }

    pub fn with_sites(&self, n_sites: usize, boundary: Boundary) -> Result<Self> {
        Self::new(self.theta1, self.theta2, self.phi, n_sites, boundary)
    }

    /// Splitting angle and phase applied at a step of the given kind.
    pub fn step_angles(&self, kind: StepKind) -> (f64, f64) {
        match kind {
            StepKind::Odd => (self.theta1, self.phi),
            StepKind::Even => (self.theta2, -self.phi),
        }
    }

    pub(crate) fn require_real_space(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::InvalidParameter(format!("real-space operators need n_sites >= 2, got {}", self.n_sites)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_angle_range() {
        assert_eq!(fold_angle(PI), PI);
        assert!((fold_angle(-PI) - PI).abs() < 1e-15);
        assert!((fold_angle(1.2 * PI) + 0.8 * PI).abs() < 1e-14);
        assert!((fold_angle(3.0 * PI) - PI).abs() < 1e-14);
        for x in [-10.0, -3.5, 0.0, 0.1, 7.0] {
            let y = fold_angle(x);
            assert!(y > -PI && y <= PI);
            assert!(((x - y) / (2.0 * PI)).fract().abs() < 1e-12 || ((x - y) / (2.0 * PI)).fract().abs() > 1.0 - 1e-12);
        }
    }

    #[test]
    fn params_validation() {
        assert!(ProtocolParams::new(f64::NAN, 0.0, 0.0, 4, Boundary::Open).is_err());
        assert!(ProtocolParams::new(0.0, 0.0, 0.0, 0, Boundary::Open).is_err());
        let p = ProtocolParams::new(2.5 * PI, 0.0, -PI, 4, Boundary::Open).unwrap();
        assert!((p.theta1() - 0.5 * PI).abs() < 1e-14);
        assert_eq!(p.phi(), PI);
        assert_eq!(p.period(), 2);
    }

    #[test]
    fn params_serde_round_trip_and_validation() {
        let p = ProtocolParams::new(0.3, 0.7, 0.2, 8, Boundary::Periodic).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let q: ProtocolParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let bad = r#"{"theta1":0.0,"theta2":0.0,"phi":0.0,"n_sites":0,"boundary":"open"}"#;
        assert!(serde_json::from_str::<ProtocolParams>(bad).is_err());
    }

    #[test]
    fn step_kind_parity() {
        assert_eq!(StepKind::of_step(1), StepKind::Odd);
        assert_eq!(StepKind::of_step(2), StepKind::Even);
        let p = ProtocolParams::bulk(0.1, 0.2, 0.3).unwrap();
        assert_eq!(p.step_angles(StepKind::Odd), (0.1, 0.3));
        assert_eq!(p.step_angles(StepKind::Even), (0.2, -0.3));
    }
}
