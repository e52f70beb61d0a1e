//! Real-space operators as symbolic entry tables.
//!
//! Every nonzero entry is `coef · Π trig(θ_a)` with at most two trig factors
//! of the splitting angles. Substituting `θ_a → θ_a + τ` and expanding with
//! the addition formulas gives the entry's coefficients on the noise basis
//! `{1, cosτ, sinτ, cos²τ, sinτcosτ, sin²τ}`. An entry with one noisy factor
//! only feeds the linear monomials and an entry with two only the quadratic
//! ones; `cos² + sin² = 1` is never used to move weight between them.

use num_complex::Complex64 as C64;

use super::{Boundary, ProtocolParams, StepKind};
use crate::error::Result;
use crate::linalg::{SparseOp, I, ONE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trig {
    Cos,
    Sin,
}

/// Which splitting angle a factor depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AngleRef {
    Theta1,
    Theta2,
}

/// Noise basis functions of the decompositions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseBasis {
    One = 0,
    Cos = 1,
    Sin = 2,
    Cos2 = 3,
    SinCos = 4,
    Sin2 = 5,
}

impl NoiseBasis {
    pub const ALL: [NoiseBasis; 6] =
        [NoiseBasis::One, NoiseBasis::Cos, NoiseBasis::Sin, NoiseBasis::Cos2, NoiseBasis::SinCos, NoiseBasis::Sin2];

    pub fn eval(self, tau: f64) -> f64 {
        let (s, c) = tau.sin_cos();
        match self {
            NoiseBasis::One => 1.0,
            NoiseBasis::Cos => c,
            NoiseBasis::Sin => s,
            NoiseBasis::Cos2 => c * c,
            NoiseBasis::SinCos => s * c,
            NoiseBasis::Sin2 => s * s,
        }
    }

    /// Powers `(cos, sin)` of the monomial.
    pub fn powers(self) -> (u8, u8) {
        match self {
            NoiseBasis::One => (0, 0),
            NoiseBasis::Cos => (1, 0),
            NoiseBasis::Sin => (0, 1),
            NoiseBasis::Cos2 => (2, 0),
            NoiseBasis::SinCos => (1, 1),
            NoiseBasis::Sin2 => (0, 2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymEntry {
    pub row: usize,
    pub col: usize,
    pub coef: C64,
    pub factors: Vec<(AngleRef, Trig)>,
}

/// Coefficients on the six noise basis functions.
pub type Expansion = [C64; 6];

impl SymEntry {
    fn new(row: usize, col: usize, coef: C64, factors: &[(AngleRef, Trig)]) -> Self {
        Self { row, col, coef, factors: factors.to_vec() }
    }

    fn angle(params: &ProtocolParams, a: AngleRef) -> f64 {
        match a {
            AngleRef::Theta1 => params.theta1(),
            AngleRef::Theta2 => params.theta2(),
        }
    }

    /// Value with both angles shifted by `tau`.
    pub fn eval(&self, params: &ProtocolParams, tau: f64) -> C64 {
        self.factors.iter().fold(self.coef, |acc, &(a, t)| {
            let x = Self::angle(params, a) + tau;
            acc * match t {
                Trig::Cos => x.cos(),
                Trig::Sin => x.sin(),
            }
        })
    }

    /// Expansion on the noise basis.
    pub fn expand(&self, params: &ProtocolParams) -> Expansion {
        // cos(θ+τ) = cosθ·cτ − sinθ·sτ ; sin(θ+τ) = sinθ·cτ + cosθ·sτ
        let linear = |&(a, t): &(AngleRef, Trig)| -> (f64, f64) {
            let (s, c) = Self::angle(params, a).sin_cos();
            match t {
                Trig::Cos => (c, -s),
                Trig::Sin => (s, c),
            }
        };
        let mut out = [C64::new(0.0, 0.0); 6];
        match self.factors.as_slice() {
            [] => out[NoiseBasis::One as usize] = self.coef,
            [f] => {
                let (ac, as_) = linear(f);
                out[NoiseBasis::Cos as usize] = self.coef * ac;
                out[NoiseBasis::Sin as usize] = self.coef * as_;
            }
            [f, g] => {
                let (ac, as_) = linear(f);
                let (bc, bs) = linear(g);
                out[NoiseBasis::Cos2 as usize] = self.coef * (ac * bc);
                out[NoiseBasis::SinCos as usize] = self.coef * (ac * bs + as_ * bc);
                out[NoiseBasis::Sin2 as usize] = self.coef * (as_ * bs);
            }
            _ => unreachable!("entries carry at most two trig factors"),
        }
        out
    }
}

/// A real-space operator described entry by entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicOperator {
    pub dim: usize,
    pub entries: Vec<SymEntry>,
}

impl SymbolicOperator {
    pub fn evaluate(&self, params: &ProtocolParams, tau: f64) -> SparseOp {
        let t: Vec<_> = self.entries.iter().map(|e| (e.row, e.col, e.eval(params, tau))).collect();
        SparseOp::from_triplets(self.dim, self.dim, &t)
    }

    /// One sparse matrix per noise basis function, indexed by `NoiseBasis as usize`.
    pub fn decompose(&self, params: &ProtocolParams) -> [SparseOp; 6] {
        let mut trip: [Vec<(usize, usize, C64)>; 6] = Default::default();
        for e in &self.entries {
            for (b, v) in e.expand(params).into_iter().enumerate() {
                if v != C64::new(0.0, 0.0) {
                    trip[b].push((e.row, e.col, v));
                }
            }
        }
        trip.map(|t| SparseOp::from_triplets(self.dim, self.dim, &t))
    }
}

use AngleRef::{Theta1 as T1, Theta2 as T2};
use Trig::{Cos, Sin};

fn alpha(j: usize) -> usize {
    2 * j
}

fn beta(j: usize) -> usize {
    2 * j + 1
}

/// Floquet operator from its 2×2 blocks: `U_0` on the diagonal, `U_+`
/// above, `U_-` below, and the terminations `U_L`, `U_R` in the corner cells
/// for open boundaries.
pub fn floquet_table(params: &ProtocolParams) -> Result<SymbolicOperator> {
    params.require_real_space()?;
    let n = params.n_sites();
    let ep = C64::from_polar(1.0, params.phi());
    let em = C64::from_polar(1.0, -params.phi());
    let open = params.boundary() == Boundary::Open;
    let mut e = Vec::new();
    for j in 0..n {
        let (a, b) = (alpha(j), beta(j));
        let left_edge = open && j == 0;
        let right_edge = open && j == n - 1;
        // Diagonal block: U_0, or U_L / U_R where the sin θ2 factor drops from one row.
        let alpha_row_s2: &[_] = if left_edge { &[] } else { &[(T2, Sin)] };
        let beta_row_s2: &[_] = if right_edge { &[] } else { &[(T2, Sin)] };
        let with = |base: &[(AngleRef, Trig)], extra: &[(AngleRef, Trig)]| [base, extra].concat();
        e.push(SymEntry::new(a, a, -em, &with(&[(T1, Sin)], alpha_row_s2)));
        e.push(SymEntry::new(a, b, I * em, &with(&[(T1, Cos)], alpha_row_s2)));
        e.push(SymEntry::new(b, a, I * ep, &with(&[(T1, Cos)], beta_row_s2)));
        e.push(SymEntry::new(b, b, -ep, &with(&[(T1, Sin)], beta_row_s2)));
        // U_+: β row of cell j from cell j+1.
        if j + 1 < n || !open {
            let jn = (j + 1) % n;
            e.push(SymEntry::new(b, alpha(jn), I, &[(T1, Sin), (T2, Cos)]));
            e.push(SymEntry::new(b, beta(jn), ONE, &[(T1, Cos), (T2, Cos)]));
        }
        // U_-: α row of cell j from cell j-1.
        if j > 0 || !open {
            let jp = (j + n - 1) % n;
            e.push(SymEntry::new(a, alpha(jp), ONE, &[(T1, Cos), (T2, Cos)]));
            e.push(SymEntry::new(a, beta(jp), I, &[(T1, Sin), (T2, Cos)]));
        }
    }
    Ok(SymbolicOperator { dim: 2 * n, entries: e })
}

/// Single-step operator in cell coordinates.
///
/// The odd step is the on-site coupler with phase `+φ` on the α row. The even
/// step couples `(α_{j-1}, β_j)` into `(α_j, β_{j-1})` with phase `-φ` on the α
/// row. With open boundaries the unpaired outputs are fully transmitted:
/// `α_1 ← i e^{-iφ} β_1` and `β_N ← i α_N`, independent of the angle.
pub fn step_table(params: &ProtocolParams, kind: StepKind) -> Result<SymbolicOperator> {
    params.require_real_space()?;
    let n = params.n_sites();
    let open = params.boundary() == Boundary::Open;
    let mut e = Vec::new();
    match kind {
        StepKind::Odd => {
            let ph = C64::from_polar(1.0, params.phi());
            for j in 0..n {
                let (a, b) = (alpha(j), beta(j));
                e.push(SymEntry::new(a, a, ph, &[(T1, Cos)]));
                e.push(SymEntry::new(a, b, I * ph, &[(T1, Sin)]));
                e.push(SymEntry::new(b, a, I, &[(T1, Sin)]));
                e.push(SymEntry::new(b, b, ONE, &[(T1, Cos)]));
            }
        }
        StepKind::Even => {
            let ph = C64::from_polar(1.0, -params.phi());
            for j in 0..n {
                let (a, b) = (alpha(j), beta(j));
                if j == 0 && open {
                    e.push(SymEntry::new(a, b, I * ph, &[]));
                } else {
                    let jp = (j + n - 1) % n;
                    e.push(SymEntry::new(a, alpha(jp), ph, &[(T2, Cos)]));
                    e.push(SymEntry::new(a, b, I * ph, &[(T2, Sin)]));
                }
                if j == n - 1 && open {
                    e.push(SymEntry::new(b, a, I, &[]));
                } else {
                    let jn = (j + 1) % n;
                    e.push(SymEntry::new(b, a, I, &[(T2, Sin)]));
                    e.push(SymEntry::new(b, beta(jn), ONE, &[(T2, Cos)]));
                }
            }
        }
    }
    Ok(SymbolicOperator { dim: 2 * n, entries: e })
}
