//! Noise-averaged density-matrix propagation.
//!
//! Every averaged map here has the form `ρ' = E_τ[U(τ) ρ U(τ)†]` with `U(τ)`
//! written as a linear combination of fixed matrices weighted by trig
//! monomials of `τ`, so the average reduces to sums of sandwiches weighted by
//! moments of the noise distribution.

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::lattice::symbolic::{floquet_table, step_table, NoiseBasis};
use crate::lattice::{floquet_operator_k, step_operator_k, BlochOperator, ProtocolParams, StepKind};
use crate::linalg::{hermitian_eigen, hermiticity_defect, max_abs_diff, SparseOp, I};
use crate::noise::CoefficientSet;

/// Offsets at which decompositions are checked against direct construction.
const CHECK_OFFSETS: [f64; 10] = [-2.9, -1.7, -0.83, -0.31, -0.05, 0.07, 0.44, 1.02, 1.9, 3.05];
const RECONSTRUCTION_TOL: f64 = 1e-10;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-8;
const POSITIVITY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Sublattice basis `(α, β)` at quasimomentum `k`.
    Momentum { k: f64 },
    /// Interleaved site basis of a lattice of `n_sites` cells.
    RealSpace { n_sites: usize },
}

impl Basis {
    pub fn dim(&self) -> usize {
        match *self {
            Basis::Momentum { .. } => 2,
            Basis::RealSpace { n_sites } => 2 * n_sites,
        }
    }
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<C64>,
    basis: Basis,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(entries: DMatrix<C64>, basis: Basis) -> Result<Self> {
        check_shape_and_trace(&entries, basis)?;
        let (vals, _) = hermitian_eigen(&entries);
        if let Some(&min) = vals.first() {
            if min < -POSITIVITY_TOL {
                return Err(Error::InvalidDensity(format!("smallest eigenvalue {min:.3e} is negative")));
            }
        }
        Ok(Self { entries, basis })
    }

    /// `|ψ⟩⟨ψ|` for a normalized `ψ`.
    pub fn pure(psi: &DVector<C64>, basis: Basis) -> Result<Self> {
        let n = psi.norm();
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidDensity(format!("state norm {n} is not 1")));
        }
        Self::new(psi * psi.adjoint(), basis)
    }

    pub(crate) fn from_map(entries: DMatrix<C64>, basis: Basis) -> Self {
        Self { entries, basis }
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<C64> {
        self.entries
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.entries)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigen(&self.entries).0.first().copied().unwrap_or(0.0)
    }

    /// `⟨v|ρ|v⟩`.
    pub fn expectation(&self, v: &DVector<C64>) -> f64 {
        (v.adjoint() * &self.entries * v)[(0, 0)].re
    }

    /// Trace distance `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let d = &self.entries - &other.entries;
        0.5 * hermitian_eigen(&d).0.iter().map(|x| x.abs()).sum::<f64>()
    }
}

fn check_shape_and_trace(m: &DMatrix<C64>, basis: Basis) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidDensity(format!("matrix is {}x{}", m.nrows(), m.ncols())));
    }
    if m.nrows() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: m.nrows() });
    }
    let h = hermiticity_defect(m);
    if h > HERMITIAN_TOL {
        return Err(Error::InvalidDensity(format!("Hermiticity defect {h:.3e}")));
    }
    let t = m.trace();
    if (t.re - 1.0).abs() > TRACE_TOL || t.im.abs() > TRACE_TOL {
        return Err(Error::InvalidDensity(format!("trace {t} is not 1")));
    }
    Ok(())
}

fn dense_sandwich(a: &DMatrix<C64>, rho: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a * rho * b.adjoint()
}

// ---------------------------------------------------------------------------
// Momentum space

/// `Û_F(k, τ) = Û_F(k, 0) + f_+(τ) Û_+ + f_−(τ) Û_−` with `f_+ = −sin²τ`,
/// `f_− = −sinτ cosτ`, for the same offset on both steps of a period.
#[derive(Clone, Debug, PartialEq)]
pub struct BulkDecomposition {
    pub k: f64,
    pub u_f: BlochOperator,
    pub u_plus: Matrix2<C64>,
    pub u_minus: Matrix2<C64>,
}

impl BulkDecomposition {
    /// `Û_F(k, τ)` rebuilt from the three matrices.
    pub fn reconstruct(&self, tau: f64) -> Matrix2<C64> {
        let (s, c) = tau.sin_cos();
        self.u_f.entries + self.u_plus * C64::from(-s * s) + self.u_minus * C64::from(-s * c)
    }
}

/// Noise matrices built from `s_± = e^{±ik} + e^{±iφ}` and `θ_+ = θ1 + θ2`:
/// `Û_+ = [[s_− cosθ_+, i s_− sinθ_+], [i s_+ sinθ_+, s_+ cosθ_+]]` and
/// `Û_− = [[s_− sinθ_+, −i s_− cosθ_+], [−i s_+ cosθ_+, s_+ sinθ_+]]`.
pub fn decompose_bulk(params: &ProtocolParams, k: f64) -> BulkDecomposition {
    let s_plus = C64::from_polar(1.0, k) + C64::from_polar(1.0, params.phi());
    let s_minus = C64::from_polar(1.0, -k) + C64::from_polar(1.0, -params.phi());
    let (sn, cs) = (params.theta1() + params.theta2()).sin_cos();
    let u_plus = Matrix2::new(s_minus * cs, I * s_minus * sn, I * s_plus * sn, s_plus * cs);
    let u_minus = Matrix2::new(s_minus * sn, -I * s_minus * cs, -I * s_plus * cs, s_plus * sn);
    BulkDecomposition { k, u_f: floquet_operator_k(params, k), u_plus, u_minus }
}

/// Split `U(τ) = u0 + cosτ·uc + sinτ·us` of a single step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDecomposition {
    pub kind: StepKind,
    pub u0: SparseOp,
    pub uc: SparseOp,
    pub us: SparseOp,
}

impl StepDecomposition {
    pub fn reconstruct(&self, tau: f64) -> DMatrix<C64> {
        let (s, c) = tau.sin_cos();
        self.u0.to_dense() + self.uc.to_dense().scale(c) + self.us.to_dense().scale(s)
    }

    fn terms(&self) -> Vec<(NoiseBasis, SparseOp)> {
        vec![(NoiseBasis::One, self.u0.clone()), (NoiseBasis::Cos, self.uc.clone()), (NoiseBasis::Sin, self.us.clone())]
    }
}

/// Momentum-space step: `u0 = 0`, `uc = Û_m`, `us = ∂_θ Û_m`.
pub fn decompose_step_bulk(params: &ProtocolParams, kind: StepKind, k: f64) -> StepDecomposition {
    let (theta, phi_m) = params.step_angles(kind);
    let to_sparse = |b: BlochOperator| SparseOp::from_dense(&b.to_dmatrix());
    StepDecomposition {
        kind,
        u0: SparseOp::zeros(2, 2),
        uc: to_sparse(step_operator_k(theta, phi_m, k)),
        // ∂_θ of the step matrix equals the step matrix at θ + π/2.
        us: to_sparse(step_operator_k(theta + FRAC_PI_2, phi_m, k)),
    }
}

fn require_bulk_rho(rho: &DensityMatrix) -> Result<()> {
    if rho.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: rho.dim() });
    }
    check_shape_and_trace(&rho.entries, rho.basis)
}

/// Stroboscopic bulk map
/// `ρ' = Û_FρÛ_F† − Γ_+(Û_+ρÛ_F† + Û_FρÛ_+†) + Γ_{++}Û_+ρÛ_+† + Γ_{−−}Û_−ρÛ_−†`.
pub fn master_step_bulk_strobo(rho: &DensityMatrix, dec: &BulkDecomposition, coeffs: &CoefficientSet) -> Result<DensityMatrix> {
    require_bulk_rho(rho)?;
    let r = Matrix2::from_fn(|i, j| rho.entries[(i, j)]);
    let out = bulk_strobo_kernel(&r, dec, coeffs);
    Ok(DensityMatrix::from_map(DMatrix::from_fn(2, 2, |i, j| out[(i, j)]), rho.basis))
}

fn bulk_strobo_kernel(r: &Matrix2<C64>, dec: &BulkDecomposition, coeffs: &CoefficientSet) -> Matrix2<C64> {
    let u = &dec.u_f.entries;
    let (up, um) = (&dec.u_plus, &dec.u_minus);
    let sand = |a: &Matrix2<C64>, b: &Matrix2<C64>| a * r * b.adjoint();
    sand(u, u) - (sand(up, u) + sand(u, up)) * C64::from(coeffs.gamma_plus)
        + sand(up, up) * C64::from(coeffs.gamma_pp)
        + sand(um, um) * C64::from(coeffs.gamma_mm)
}

/// Single-step averaged map
/// `ρ' = u0ρu0† + E[cosτ](u0ρuc† + ucρu0†) + E[cos²τ]ucρuc† + E[sin²τ]usρus†`.
pub fn master_step_bulk_random(rho: &DensityMatrix, dec: &StepDecomposition, coeffs: &CoefficientSet) -> Result<DensityMatrix> {
    require_bulk_rho(rho)?;
    Ok(DensityMatrix::from_map(step_random_kernel(&rho.entries, dec, coeffs), rho.basis))
}

fn step_random_kernel(rho: &DMatrix<C64>, dec: &StepDecomposition, coeffs: &CoefficientSet) -> DMatrix<C64> {
    let (u0, uc, us) = (&dec.u0, &dec.uc, &dec.us);
    let mut out = SparseOp::sandwich(uc, rho, uc).scale(coeffs.mean_cos2());
    out += SparseOp::sandwich(us, rho, us).scale(coeffs.mean_sin2());
    if !u0.is_zero() {
        out += SparseOp::sandwich(u0, rho, u0);
        let cross = SparseOp::sandwich(u0, rho, uc) + SparseOp::sandwich(uc, rho, u0);
        out += cross.scale(coeffs.mean_cos());
    }
    out
}

/// Two steps of independent noise in one map:
/// `E[cos²]² Û_FρÛ_F† + E[sin²]² (Û_2'Û_1')ρ(…)† + E[cos²]E[sin²] [(Û_2Û_1')ρ(…)† + (Û_2'Û_1)ρ(…)†]`.
///
/// Requires `u0 = 0` on both steps (true in momentum space).
pub fn master_two_step_bulk_random(
    rho: &DensityMatrix,
    dec1: &StepDecomposition,
    dec2: &StepDecomposition,
    coeffs: &CoefficientSet,
) -> Result<DensityMatrix> {
    require_bulk_rho(rho)?;
    if !dec1.u0.is_zero() || !dec2.u0.is_zero() {
        return Err(Error::InvalidParameter("two-step form requires steps without a noise-independent part".into()));
    }
    let (u1, d1, u2, d2) = (dec1.uc.to_dense(), dec1.us.to_dense(), dec2.uc.to_dense(), dec2.us.to_dense());
    let (cc, ss) = (coeffs.mean_cos2(), coeffs.mean_sin2());
    let r = &rho.entries;
    let uf = &u2 * &u1;
    let dd = &d2 * &d1;
    let ud = &u2 * &d1;
    let du = &d2 * &u1;
    let out = dense_sandwich(&uf, r, &uf).scale(cc * cc)
        + dense_sandwich(&dd, r, &dd).scale(ss * ss)
        + (dense_sandwich(&ud, r, &ud) + dense_sandwich(&du, r, &du)).scale(cc * ss);
    Ok(DensityMatrix::from_map(out, rho.basis))
}

// ---------------------------------------------------------------------------
// Real space

/// Floquet operator split over `{1, cosτ, sinτ, cos²τ, sinτcosτ, sin²τ}`
/// for a common offset on both steps.
#[derive(Clone, Debug, PartialEq)]
pub struct RealDecomposition {
    pub n_sites: usize,
    pub u0: SparseOp,
    pub uc: SparseOp,
    pub us: SparseOp,
    pub ucc: SparseOp,
    pub usc: SparseOp,
    pub uss: SparseOp,
}

impl RealDecomposition {
    pub fn get(&self, b: NoiseBasis) -> &SparseOp {
        match b {
            NoiseBasis::One => &self.u0,
            NoiseBasis::Cos => &self.uc,
            NoiseBasis::Sin => &self.us,
            NoiseBasis::Cos2 => &self.ucc,
            NoiseBasis::SinCos => &self.usc,
            NoiseBasis::Sin2 => &self.uss,
        }
    }

    pub fn reconstruct(&self, tau: f64) -> DMatrix<C64> {
        let dim = 2 * self.n_sites;
        NoiseBasis::ALL
            .iter()
            .fold(DMatrix::zeros(dim, dim), |acc, &b| acc + self.get(b).to_dense().scale(b.eval(tau)))
    }

    fn terms(&self) -> Vec<(NoiseBasis, SparseOp)> {
        NoiseBasis::ALL.iter().map(|&b| (b, self.get(b).clone())).collect()
    }
}

/// Per-entry expansion of the block Floquet operator. Verified against the
/// directly evaluated noisy operator at ten offsets.
pub fn decompose_real_strobo(params: &ProtocolParams) -> Result<RealDecomposition> {
    let table = floquet_table(params)?;
    let [u0, uc, us, ucc, usc, uss] = table.decompose(params);
    let dec = RealDecomposition { n_sites: params.n_sites(), u0, uc, us, ucc, usc, uss };
    for tau in CHECK_OFFSETS {
        let direct = table.evaluate(params, tau).to_dense();
        let err = max_abs_diff(&dec.reconstruct(tau), &direct);
        if err > RECONSTRUCTION_TOL {
            return Err(Error::Construction(format!("Floquet decomposition off by {err:.3e} at offset {tau}")));
        }
    }
    Ok(dec)
}

/// Real-space single-step split; `u0` holds the angle-independent boundary
/// entries of the even step.
pub fn decompose_step_real(params: &ProtocolParams, kind: StepKind) -> Result<StepDecomposition> {
    let table = step_table(params, kind)?;
    let [u0, uc, us, ucc, usc, uss] = table.decompose(params);
    if !(ucc.is_zero() && usc.is_zero() && uss.is_zero()) {
        return Err(Error::Construction("single-step entries must carry at most one angle factor".into()));
    }
    let dec = StepDecomposition { kind, u0, uc, us };
    for tau in CHECK_OFFSETS {
        let direct = table.evaluate(params, tau).to_dense();
        let err = max_abs_diff(&dec.reconstruct(tau), &direct);
        if err > RECONSTRUCTION_TOL {
            return Err(Error::Construction(format!("step decomposition off by {err:.3e} at offset {tau}")));
        }
    }
    Ok(dec)
}

/// Averaged conjugation `ρ ↦ Σ_{μν} E[f_μ f_ν] U_μ ρ U_ν†` over terms
/// `U(τ) = Σ_μ f_μ(τ) U_μ`, stored as `Σ_μ U_μ ρ B_μ†` with
/// `B_μ = Σ_ν E[f_μ f_ν] U_ν`.
#[derive(Clone, Debug)]
pub struct NoiseChannel {
    dim: usize,
    left: Vec<SparseOp>,
    right: Vec<SparseOp>,
}

impl NoiseChannel {
    pub fn new(dim: usize, terms: &[(NoiseBasis, SparseOp)], coeffs: &CoefficientSet) -> Self {
        let terms: Vec<_> = terms.iter().filter(|(_, u)| !u.is_zero()).collect();
        let mut left = Vec::new();
        let mut right = Vec::new();
        for (bm, um) in &terms {
            let (cm, sm) = bm.powers();
            let mut b = SparseOp::zeros(dim, dim);
            for (bn, un) in &terms {
                let (cn, sn) = bn.powers();
                let f = coeffs.moment(cm + cn, sm + sn);
                if f != 0.0 {
                    b = b.add(&un.scale(C64::from(f)));
                }
            }
            if !b.is_zero() {
                left.push(um.clone());
                right.push(b);
            }
        }
        Self { dim, left, right }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (u, b) in self.left.iter().zip(&self.right) {
            out += SparseOp::sandwich(u, rho, b);
        }
        // Symmetrize away rounding so Hermiticity holds to machine precision.
        (&out + out.adjoint()).scale(0.5)
    }
}

fn require_real_rho(rho: &DensityMatrix, dim: usize) -> Result<()> {
    if rho.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: rho.dim() });
    }
    check_shape_and_trace(&rho.entries, rho.basis)
}

/// One period of stroboscopic noise in real space: the average of
/// `Û_F(τ)ρÛ_F(τ)†` with all products of the six decomposition matrices
/// weighted by moments up to fourth order.
pub fn master_step_real_strobo(rho: &DensityMatrix, dec: &RealDecomposition, coeffs: &CoefficientSet) -> Result<DensityMatrix> {
    let ch = NoiseChannel::new(2 * dec.n_sites, &dec.terms(), coeffs);
    require_real_rho(rho, ch.dim())?;
    Ok(DensityMatrix::from_map(ch.apply(&rho.entries), rho.basis))
}

/// One step of independent noise in real space.
pub fn master_step_real_random(rho: &DensityMatrix, dec: &StepDecomposition, coeffs: &CoefficientSet) -> Result<DensityMatrix> {
    require_real_rho(rho, dec.uc.nrows())?;
    Ok(DensityMatrix::from_map(step_random_kernel(&rho.entries, dec, coeffs), rho.basis))
}

// ---------------------------------------------------------------------------
// Propagation

/// A one-period averaged map.
pub trait MasterStepper: Sync {
    fn dim(&self) -> usize;
    fn step(&self, rho: &DMatrix<C64>) -> DMatrix<C64>;
}

/// Bulk stroboscopic noise at one momentum.
pub struct BulkStroboStepper {
    pub dec: BulkDecomposition,
    pub coeffs: CoefficientSet,
}

impl BulkStroboStepper {
    pub fn new(params: &ProtocolParams, k: f64, coeffs: CoefficientSet) -> Self {
        Self { dec: decompose_bulk(params, k), coeffs }
    }
}

impl MasterStepper for BulkStroboStepper {
    fn dim(&self) -> usize {
        2
    }
    fn step(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let r = Matrix2::from_fn(|i, j| rho[(i, j)]);
        let o = bulk_strobo_kernel(&r, &self.dec, &self.coeffs);
        DMatrix::from_fn(2, 2, |i, j| o[(i, j)])
    }
}

/// Bulk per-step noise at one momentum; one period is two averaged steps.
pub struct BulkRandomStepper {
    pub steps: [StepDecomposition; 2],
    pub coeffs: CoefficientSet,
}

impl BulkRandomStepper {
    pub fn new(params: &ProtocolParams, k: f64, coeffs: CoefficientSet) -> Self {
        Self {
            steps: [decompose_step_bulk(params, StepKind::Odd, k), decompose_step_bulk(params, StepKind::Even, k)],
            coeffs,
        }
    }
}

impl MasterStepper for BulkRandomStepper {
    fn dim(&self) -> usize {
        2
    }
    fn step(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let mid = step_random_kernel(rho, &self.steps[0], &self.coeffs);
        step_random_kernel(&mid, &self.steps[1], &self.coeffs)
    }
}

/// Real-space stroboscopic noise.
pub struct RealStroboStepper {
    channel: NoiseChannel,
}

impl RealStroboStepper {
    pub fn new(params: &ProtocolParams, coeffs: &CoefficientSet) -> Result<Self> {
        let dec = decompose_real_strobo(params)?;
        Ok(Self { channel: NoiseChannel::new(params.dim(), &dec.terms(), coeffs) })
    }
}

impl MasterStepper for RealStroboStepper {
    fn dim(&self) -> usize {
        self.channel.dim()
    }
    fn step(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        self.channel.apply(rho)
    }
}

/// Real-space per-step noise; one period is the odd then the even step.
pub struct RealRandomStepper {
    channels: [NoiseChannel; 2],
}

impl RealRandomStepper {
    pub fn new(params: &ProtocolParams, coeffs: &CoefficientSet) -> Result<Self> {
        let odd = decompose_step_real(params, StepKind::Odd)?;
        let even = decompose_step_real(params, StepKind::Even)?;
        Ok(Self {
            channels: [NoiseChannel::new(params.dim(), &odd.terms(), coeffs), NoiseChannel::new(params.dim(), &even.terms(), coeffs)],
        })
    }
}

impl MasterStepper for RealRandomStepper {
    fn dim(&self) -> usize {
        self.channels[0].dim()
    }
    fn step(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        self.channels[1].apply(&self.channels[0].apply(rho))
    }
}

/// Quantities recorded each period.
#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    /// `ρ_ii`.
    Population(usize),
    /// `ρ_ij`.
    Coherence(usize, usize),
    /// `⟨v|ρ|v⟩` for a normalized interleaved vector.
    Projection { label: String, vector: DVector<C64> },
    Trace,
}

impl Observable {
    pub fn label(&self) -> String {
        match self {
            Observable::Population(i) => format!("population_{i}"),
            Observable::Coherence(i, j) => format!("coherence_{i}_{j}"),
            Observable::Projection { label, .. } => label.clone(),
            Observable::Trace => "trace".into(),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        let bad = |i: usize| if i >= dim { Err(Error::DimensionMismatch { expected: dim, found: i + 1 }) } else { Ok(()) };
        match self {
            Observable::Population(i) => bad(*i),
            Observable::Coherence(i, j) => bad(*i).and(bad(*j)),
            Observable::Projection { vector, .. } => {
                if vector.len() != dim {
                    Err(Error::DimensionMismatch { expected: dim, found: vector.len() })
                } else {
                    Ok(())
                }
            }
            Observable::Trace => Ok(()),
        }
    }

    fn eval(&self, rho: &DMatrix<C64>) -> C64 {
        match self {
            Observable::Population(i) => rho[(*i, *i)],
            Observable::Coherence(i, j) => rho[(*i, *j)],
            Observable::Projection { vector, .. } => (vector.adjoint() * rho * vector)[(0, 0)],
            Observable::Trace => rho.trace(),
        }
    }
}

/// Observable values at periods `0 ..= n_periods`.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagation {
    pub periods: Vec<usize>,
    pub labels: Vec<String>,
    /// `values[o][M]` for observable `o`.
    pub values: Vec<Vec<C64>>,
    pub final_state: DensityMatrix,
}

impl Propagation {
    pub fn real_series(&self, o: usize) -> Vec<f64> {
        self.values[o].iter().map(|z| z.re).collect()
    }
}

pub fn propagate(
    rho0: &DensityMatrix,
    stepper: &dyn MasterStepper,
    n_periods: usize,
    observables: &[Observable],
) -> Result<Propagation> {
    let dim = stepper.dim();
    if rho0.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: rho0.dim() });
    }
    for o in observables {
        o.check(dim)?;
    }
    let mut values: Vec<Vec<C64>> = observables.iter().map(|_| Vec::with_capacity(n_periods + 1)).collect();
    let mut rho = rho0.entries.clone();
    for m in 0..=n_periods {
        for (o, v) in observables.iter().zip(values.iter_mut()) {
            v.push(o.eval(&rho));
        }
        if m < n_periods {
            rho = stepper.step(&rho);
        }
    }
    Ok(Propagation {
        periods: (0..=n_periods).collect(),
        labels: observables.iter().map(|o| o.label()).collect(),
        values,
        final_state: DensityMatrix::from_map(rho, rho0.basis),
    })
}

/// `max |Û_±(k)|`, the residual that vanishes on decoherence-free momenta.
pub fn noise_residual(dec: &BulkDecomposition) -> f64 {
    let m = |x: &Matrix2<C64>| x.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    m(&dec.u_plus).max(m(&dec.u_minus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{dfs_momenta, Boundary};
    use crate::linalg::{ONE, ZERO};
    use crate::noise::gamma_coefficients;
    use std::f64::consts::PI;

    fn sample_rho(dim: usize, seed: u64) -> DMatrix<C64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a = DMatrix::from_fn(dim, dim, |_, _| C64::new(next(), next()));
        let p = &a * a.adjoint();
        let t = p.trace();
        p / t
    }

    #[test]
    fn bulk_decomposition_reconstructs_noisy_operator() {
        let p = ProtocolParams::bulk(0.37, 1.21, -0.6).unwrap();
        for k in [-2.5, 0.0, 0.9, PI] {
            let d = decompose_bulk(&p, k);
            for tau in CHECK_OFFSETS {
                let direct = floquet_operator_k(&p.with_offset(tau), k).entries;
                assert!((d.reconstruct(tau) - direct).iter().all(|z| z.norm() < 1e-12));
            }
        }
    }

    #[test]
    fn dfs_momentum_zeroes_noise_matrices() {
        for phi in [0.0, 0.2 * PI, -1.3, PI] {
            let p = ProtocolParams::bulk(0.3, 0.8, phi).unwrap();
            for k in dfs_momenta(phi) {
                assert!(noise_residual(&decompose_bulk(&p, k)) < 1e-12);
            }
        }
    }

    #[test]
    fn step_decomposition_reconstructs() {
        let p = ProtocolParams::new(0.37, 1.21, -0.6, 5, Boundary::Open).unwrap();
        for kind in [StepKind::Odd, StepKind::Even] {
            let d = decompose_step_bulk(&p, kind, 0.7);
            let (t, ph) = p.step_angles(kind);
            for tau in CHECK_OFFSETS {
                let direct = step_operator_k(t + tau, ph, 0.7).to_dmatrix();
                assert!(max_abs_diff(&d.reconstruct(tau), &direct) < 1e-12);
            }
            let r = decompose_step_real(&p, kind).unwrap();
            if kind == StepKind::Odd {
                assert!(r.u0.is_zero());
            } else {
                assert_eq!(r.u0.nnz(), 2);
            }
        }
    }

    #[test]
    fn real_decomposition_has_no_constant_part_and_edge_support() {
        let p = ProtocolParams::new(0.5 * PI, 0.0, 0.2 * PI, 6, Boundary::Open).unwrap();
        let d = decompose_real_strobo(&p).unwrap();
        assert!(d.u0.is_zero());
        for (r, c, _) in d.uc.triplets().into_iter().chain(d.us.triplets()) {
            let (cr, cc) = (r / 2, c / 2);
            assert!((cr == 0 || cr == 5) && (cc == 0 || cc == 5), "linear term at ({r},{c})");
        }
        for op in [&d.ucc, &d.usc, &d.uss] {
            for (r, c, _) in op.triplets() {
                // Quadratic terms never sit in the rows that lost their θ2 factor.
                assert!(r != 0 && r != 11, "quadratic term at ({r},{c})");
            }
        }
    }

    #[test]
    fn noiseless_maps_are_conjugations() {
        let c0 = gamma_coefficients(0.0).unwrap();
        let p = ProtocolParams::new(0.37, 1.21, -0.6, 4, Boundary::Open).unwrap();
        let rho = DensityMatrix::new(sample_rho(8, 3), Basis::RealSpace { n_sites: 4 }).unwrap();
        let u = crate::lattice::floquet_operator_real(&p).unwrap().entries;
        let out = master_step_real_strobo(&rho, &decompose_real_strobo(&p).unwrap(), &c0).unwrap();
        assert!(max_abs_diff(out.entries(), &dense_sandwich(&u, rho.entries(), &u)) < 1e-12);
    }

    #[test]
    fn two_step_matches_iteration() {
        let c = gamma_coefficients(0.2).unwrap();
        let p = ProtocolParams::bulk(0.37, 1.21, -0.6).unwrap();
        let rho = DensityMatrix::new(sample_rho(2, 5), Basis::Momentum { k: 0.4 }).unwrap();
        let d1 = decompose_step_bulk(&p, StepKind::Odd, 0.4);
        let d2 = decompose_step_bulk(&p, StepKind::Even, 0.4);
        let a = master_two_step_bulk_random(&rho, &d1, &d2, &c).unwrap();
        let b = master_step_bulk_random(&master_step_bulk_random(&rho, &d1, &c).unwrap(), &d2, &c).unwrap();
        assert!(max_abs_diff(a.entries(), b.entries()) < 1e-12);
    }

    #[test]
    fn invalid_density_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ZERO]);
        assert!(DensityMatrix::new(m, Basis::Momentum { k: 0.0 }).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[ONE.scale(1.5), ZERO, ZERO, ONE.scale(-0.5)]);
        assert!(matches!(DensityMatrix::new(m, Basis::Momentum { k: 0.0 }), Err(Error::InvalidDensity(_))));
    }
}
