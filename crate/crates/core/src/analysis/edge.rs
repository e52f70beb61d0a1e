//! Gap-localized eigenstates of the open-boundary Floquet operator.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lattice::{Boundary, ProtocolParams, RealOperator};
use crate::linalg::{hermitian_eigen, normal_eigen};

/// Minimum distance of an edge quasienergy from both bands.
pub const GAP_TOL: f64 = 1e-6;

/// Eigenvalues closer than this are treated as one degenerate cluster.
const DEGENERACY_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapLabel {
    /// Gap centred on quasienergy 0.
    Zero,
    /// Gap centred on quasienergy π.
    Pi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSide {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeState {
    /// Interleaved `(α_1, β_1, α_2, …)`, unit norm, largest component real positive.
    pub vector: DVector<C64>,
    pub quasienergy: f64,
    pub gap: GapLabel,
    /// `Σ_j (|α_j|² + |β_j|²)²`.
    pub ipr: f64,
    pub side: EdgeSide,
}

/// Quasienergy range `[lower, upper]` of the positive band; the negative
/// band mirrors it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEdges {
    pub lower: f64,
    pub upper: f64,
}

impl BandEdges {
    pub fn of(params: &ProtocolParams) -> Self {
        let a = (params.theta1().cos() * params.theta2().cos()).abs();
        let b = params.theta1().sin() * params.theta2().sin() * params.phi().cos();
        let acos = |x: f64| x.clamp(-1.0, 1.0).acos();
        Self { lower: acos(a - b), upper: acos(-a - b) }
    }

    /// Gap containing `e`, if `e` keeps [`GAP_TOL`] away from both bands.
    pub fn gap_of(&self, e: f64) -> Option<GapLabel> {
        let x = e.abs();
        if x < self.lower - GAP_TOL {
            Some(GapLabel::Zero)
        } else if x > self.upper + GAP_TOL {
            Some(GapLabel::Pi)
        } else {
            None
        }
    }

    pub fn zero_gap_open(&self) -> bool {
        self.lower > GAP_TOL
    }

    pub fn pi_gap_open(&self) -> bool {
        self.upper < PI - GAP_TOL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeReport {
    pub states: Vec<EdgeState>,
    pub bands: BandEdges,
    pub ipr_threshold: f64,
    /// Set when no state could be returned for a structural reason.
    pub diagnostic: Option<String>,
}

impl EdgeReport {
    pub fn on_side(&self, side: EdgeSide) -> impl Iterator<Item = &EdgeState> {
        self.states.iter().filter(move |s| s.side == side)
    }
}

fn cell_weights(v: &DVector<C64>) -> Vec<f64> {
    v.as_slice().chunks(2).map(|c| c.iter().map(|z| z.norm_sqr()).sum()).collect()
}

/// Fixes the global phase so the largest component is real and positive.
fn canonical_phase(mut v: DVector<C64>) -> DVector<C64> {
    let norm = v.norm();
    v /= C64::from(norm);
    let pivot = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(C64::new(1.0, 0.0));
    if pivot.norm() > 0.0 {
        v *= pivot.conj() / pivot.norm();
    }
    v
}

/// Diagonalizes an open-boundary Floquet operator and returns the eigenstates
/// inside a bulk gap with `IPR > 4/N`. Degenerate gap states are rotated to
/// position eigenstates so that left and right modes separate.
pub fn extract_edge_states(u_f: &RealOperator) -> Result<EdgeReport> {
    if u_f.boundary() != Boundary::Open {
        return Err(Error::InvalidParameter("edge states need an open boundary".into()));
    }
    let n = u_f.n_sites();
    let bands = BandEdges::of(&u_f.params);
    let ipr_threshold = 4.0 / n as f64;
    if !bands.zero_gap_open() && !bands.pi_gap_open() {
        let diagnostic = Some(format!("spectrum is gapless (band spans [{:.6}, {:.6}])", bands.lower, bands.upper));
        return Ok(EdgeReport { states: Vec::new(), bands, ipr_threshold, diagnostic });
    }
    let (values, vectors) = normal_eigen(&u_f.entries)?;
    let mut in_gap: Vec<(usize, f64)> =
        values.iter().enumerate().map(|(i, z)| (i, z.arg())).filter(|&(_, e)| bands.gap_of(e).is_some()).collect();
    in_gap.sort_by(|a, b| a.1.total_cmp(&b.1));

    let position = DMatrix::from_fn(2 * n, 2 * n, |r, c| if r == c { C64::from((r / 2) as f64) } else { C64::new(0.0, 0.0) });
    let mut states = Vec::new();
    let mut start = 0;
    while start < in_gap.len() {
        let mut end = start + 1;
        while end < in_gap.len() && (values[in_gap[end].0] - values[in_gap[start].0]).norm() < DEGENERACY_TOL {
            end += 1;
        }
        let cols: Vec<usize> = in_gap[start..end].iter().map(|p| p.0).collect();
        let basis = vectors.select_columns(&cols);
        let rotated = if cols.len() > 1 {
            let (_, rot) = hermitian_eigen(&(basis.adjoint() * &position * &basis));
            &basis * rot
        } else {
            basis
        };
        for c in 0..rotated.ncols() {
            let v = canonical_phase(rotated.column(c).into_owned());
            let e = (0..cols.len()).map(|i| values[cols[i]].arg()).sum::<f64>() / cols.len() as f64;
            let w = cell_weights(&v);
            let ipr: f64 = w.iter().map(|x| x * x).sum();
            if ipr <= ipr_threshold {
                continue;
            }
            let q = n.div_ceil(4);
            let left: f64 = w[..q].iter().sum();
            let right: f64 = w[n - q..].iter().sum();
            let side = if left >= right { EdgeSide::Left } else { EdgeSide::Right };
            let gap = bands.gap_of(e).expect("filtered above");
            states.push(EdgeState { vector: v, quasienergy: e, gap, ipr, side });
        }
        start = end;
    }
    Ok(EdgeReport { states, bands, ipr_threshold, diagnostic: None })
}

/// Convenience wrapper building the operator from parameters.
pub fn edge_states_for(params: &ProtocolParams) -> Result<EdgeReport> {
    extract_edge_states(&crate::lattice::floquet_operator_real(params)?)
}
