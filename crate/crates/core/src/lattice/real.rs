use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use super::symbolic::{floquet_table, step_table};
use super::{Boundary, ProtocolParams, StepKind};
use crate::error::{Error, Result};
use crate::linalg::{max_abs_diff, unitarity_defect, SparseOp};

/// Composition tolerance between `Û2 Û1` and the block-assembled Floquet operator.
const COMPOSITION_TOL: f64 = 1e-10;

/// Dense real-space operator of dimension `2N`.
#[derive(Clone, Debug, PartialEq)]
pub struct RealOperator {
    pub entries: DMatrix<C64>,
    pub params: ProtocolParams,
}

impl RealOperator {
    pub fn n_sites(&self) -> usize {
        self.params.n_sites()
    }

    pub fn boundary(&self) -> Boundary {
        self.params.boundary()
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn unitarity_defect(&self) -> f64 {
        unitarity_defect(&self.entries)
    }

    pub fn to_sparse(&self) -> SparseOp {
        SparseOp::from_dense(&self.entries)
    }
}

/// Floquet operator assembled from its 2×2 blocks.
pub fn floquet_operator_real(params: &ProtocolParams) -> Result<RealOperator> {
    let table = floquet_table(params)?;
    Ok(RealOperator { entries: table.evaluate(params, 0.0).to_dense(), params: *params })
}

/// The two single-step operators `(Û1, Û2)`.
///
/// Fails with [`Error::Construction`] if `Û2 Û1` differs from the
/// block-assembled Floquet operator by more than `1e-10` in any entry.
pub fn step_operators_real(params: &ProtocolParams) -> Result<(RealOperator, RealOperator)> {
    let wrap = |m: DMatrix<C64>| RealOperator { entries: m, params: *params };
    let u1 = step_table(params, StepKind::Odd)?.evaluate(params, 0.0).to_dense();
    let u2 = step_table(params, StepKind::Even)?.evaluate(params, 0.0).to_dense();
    let uf = floquet_operator_real(params)?;
    let err = max_abs_diff(&(&u2 * &u1), &uf.entries);
    if err > COMPOSITION_TOL {
        return Err(Error::Construction(format!("step product differs from Floquet operator by {err:.3e}")));
    }
    Ok((wrap(u1), wrap(u2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::floquet_operator_k;
    use std::f64::consts::PI;

    #[test]
    fn flat_band_corner_entry() {
        let p = ProtocolParams::new(0.5 * PI, 0.0, 0.2 * PI, 6, Boundary::Open).unwrap();
        let u = floquet_operator_real(&p).unwrap();
        let expect = -C64::from_polar(1.0, -0.2 * PI);
        assert!((u.entries[(0, 0)] - expect).norm() < 1e-12);
        assert!(u.unitarity_defect() < 1e-12);
    }

    #[test]
    fn open_and_periodic_are_unitary_and_compose() {
        for n in [2, 3, 5, 9] {
            for b in [Boundary::Open, Boundary::Periodic] {
                let p = ProtocolParams::new(0.31, -1.2, 0.77, n, b).unwrap();
                let (u1, u2) = step_operators_real(&p).unwrap();
                assert!(u1.unitarity_defect() < 1e-12 && u2.unitarity_defect() < 1e-12);
                assert!(floquet_operator_real(&p).unwrap().unitarity_defect() < 1e-12);
            }
        }
    }

    #[test]
    fn periodic_operator_is_bloch_diagonal() {
        let n = 7;
        let p = ProtocolParams::new(0.4, 0.9, -0.6, n, Boundary::Periodic).unwrap();
        let u = floquet_operator_real(&p).unwrap().entries;
        for q in 0..n {
            let k = 2.0 * PI * q as f64 / n as f64;
            let bloch = floquet_operator_k(&p, k).entries;
            // Plane wave on each sublattice, normalized over cells.
            for s in 0..2 {
                let mut v = nalgebra::DVector::<C64>::zeros(2 * n);
                for j in 0..n {
                    v[2 * j + s] = C64::from_polar(1.0 / (n as f64).sqrt(), k * j as f64);
                }
                let w = &u * &v;
                for j in 0..n {
                    let ph = C64::from_polar(1.0 / (n as f64).sqrt(), k * j as f64);
                    for r in 0..2 {
                        assert!((w[2 * j + r] - bloch[(r, s)] * ph).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn single_site_rejected() {
        let p = ProtocolParams::new(0.1, 0.2, 0.3, 1, Boundary::Open).unwrap();
        assert!(matches!(floquet_operator_real(&p), Err(Error::InvalidParameter(_))));
    }
}
