//! Monte-Carlo evolution of pulse amplitudes and ensemble statistics.
//!
//! Time index `m` is 1-based: the state at time `m` is the state before step
//! `m` is applied, so time 1 is the injected state. Stroboscopic records keep
//! odd times only; time `2M + 1` is the state after `M` full periods.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, ProtocolParams, StepKind};
use crate::linalg::{I, ZERO};
use crate::noise::NoiseSpec;
use crate::stats::VecWelford;

/// Realizations per work unit. Fixed so that the merge tree does not depend
/// on the worker count.
const CHUNK: usize = 512;

/// Largest `2N` for which the averaged density matrix is accumulated.
pub const MAX_DENSITY_DIM: usize = 64;

/// Pulse amplitudes in the two rings.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub alpha: Vec<C64>,
    pub beta: Vec<C64>,
}

impl StateVector {
    pub fn zeros(n_sites: usize) -> Self {
        Self { alpha: vec![ZERO; n_sites], beta: vec![ZERO; n_sites] }
    }

    /// Unit pulse in the α ring at cell `site` (zero based).
    pub fn single_site_alpha(n_sites: usize, site: usize) -> Result<Self> {
        if site >= n_sites {
            return Err(Error::InvalidParameter(format!("site {site} outside lattice of {n_sites} sites")));
        }
        let mut s = Self::zeros(n_sites);
        s.alpha[site] = C64::new(1.0, 0.0);
        Ok(s)
    }

    /// Unit pulse in the α ring at the central cell `N / 2`.
    pub fn center_alpha(n_sites: usize) -> Self {
        let mut s = Self::zeros(n_sites);
        s.alpha[n_sites / 2] = C64::new(1.0, 0.0);
        s
    }

    /// Plane wave `(a, b) e^{ikj} / √N`, with `(a, b)` normalized.
    pub fn bloch_wave(n_sites: usize, k: f64, polarization: [C64; 2]) -> Result<Self> {
        let norm = (polarization[0].norm_sqr() + polarization[1].norm_sqr()).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidParameter("polarization must be a nonzero finite vector".into()));
        }
        let scale = 1.0 / (norm * (n_sites as f64).sqrt());
        let mut s = Self::zeros(n_sites);
        for j in 0..n_sites {
            let ph = C64::from_polar(scale, k * j as f64);
            s.alpha[j] = polarization[0] * ph;
            s.beta[j] = polarization[1] * ph;
        }
        Ok(s)
    }

    /// From the interleaved ordering `(α_1, β_1, α_2, …)`.
    pub fn from_interleaved(v: &DVector<C64>) -> Result<Self> {
        if !v.len().is_multiple_of(2) || v.is_empty() {
            return Err(Error::InvalidParameter(format!("interleaved vector must have even positive length, got {}", v.len())));
        }
        let n = v.len() / 2;
        Ok(Self { alpha: (0..n).map(|j| v[2 * j]).collect(), beta: (0..n).map(|j| v[2 * j + 1]).collect() })
    }

    pub fn to_interleaved(&self) -> DVector<C64> {
        DVector::from_fn(2 * self.n_sites(), |i, _| if i % 2 == 0 { self.alpha[i / 2] } else { self.beta[i / 2] })
    }

    pub fn n_sites(&self) -> usize {
        self.alpha.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.alpha.iter().chain(&self.beta).map(|z| z.norm_sqr()).sum()
    }

    /// `⟨v|ψ⟩` for an interleaved vector `v`.
    pub fn overlap(&self, v: &DVector<C64>) -> C64 {
        let mut acc = ZERO;
        for j in 0..self.n_sites() {
            acc += v[2 * j].conj() * self.alpha[j] + v[2 * j + 1].conj() * self.beta[j];
        }
        acc
    }
}

fn check_size(state: &StateVector, n_sites: usize) -> Result<()> {
    if state.alpha.len() != n_sites || state.beta.len() != n_sites {
        return Err(Error::DimensionMismatch { expected: n_sites, found: state.alpha.len().max(state.beta.len()) });
    }
    Ok(())
}

/// One coupler step with angle `theta` and phase `phi_m` on the α ring.
///
/// Odd steps couple `α_j` and `β_j` within a cell. Even steps couple
/// `α_{j-1}` with `β_j`, so `α` shifts one cell to the right and `β` one
/// cell to the left; with open boundaries the unpaired outputs are fully
/// transmitted into the other ring. See [`crate::lattice::symbolic::step_table`].
pub fn apply_step(state: &StateVector, theta: f64, phi_m: f64, kind: StepKind, boundary: Boundary) -> Result<StateVector> {
    let n = state.n_sites();
    if n == 0 || state.beta.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: state.beta.len() });
    }
    if boundary == Boundary::Open && n < 2 && kind == StepKind::Even {
        return Err(Error::InvalidParameter("open lattices need at least 2 sites".into()));
    }
    let norm = state.norm_sqr();
    if (norm - 1.0).abs() > 1e-6 {
        log::warn!("apply_step on a state with squared norm {norm}");
    }
    let mut out = StateVector::zeros(n);
    step_into(state, &mut out, theta, phi_m, kind, boundary);
    Ok(out)
}

fn step_into(src: &StateVector, dst: &mut StateVector, theta: f64, phi_m: f64, kind: StepKind, boundary: Boundary) {
    let n = src.n_sites();
    let (s, c) = theta.sin_cos();
    let ph = C64::from_polar(1.0, phi_m);
    let is = I * s;
    match kind {
        StepKind::Odd => {
            for j in 0..n {
                let (a, b) = (src.alpha[j], src.beta[j]);
                dst.alpha[j] = ph * (a * c + is * b);
                dst.beta[j] = is * a + b * c;
            }
        }
        StepKind::Even => {
            let open = boundary == Boundary::Open;
            for j in 0..n {
                dst.alpha[j] = if j == 0 && open {
                    ph * I * src.beta[0]
                } else {
                    let jp = if j == 0 { n - 1 } else { j - 1 };
                    ph * (src.alpha[jp] * c + is * src.beta[j])
                };
                dst.beta[j] = if j == n - 1 && open {
                    I * src.alpha[j]
                } else {
                    let jn = if j + 1 == n { 0 } else { j + 1 };
                    is * src.alpha[j] + src.beta[jn] * c
                };
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    /// Every time `m = 1 … n_steps`.
    Every,
    /// Odd times only.
    Stroboscopic,
}

impl RecordMode {
    /// 1-based times recorded out of `n_steps`.
    pub fn times(self, n_steps: usize) -> Vec<usize> {
        match self {
            RecordMode::Every => (1..=n_steps).collect(),
            RecordMode::Stroboscopic => (1..=n_steps).step_by(2).collect(),
        }
    }
}

/// Number of time points that cover periods `0 ..= n_periods` stroboscopically.
pub fn steps_for_periods(n_periods: usize) -> usize {
    2 * n_periods + 1
}

/// Recorded snapshots of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatioTemporalRecord {
    pub mode: RecordMode,
    /// 1-based time index of each snapshot.
    pub times: Vec<usize>,
    pub snapshots: Vec<StateVector>,
}

impl SpatioTemporalRecord {
    pub fn is_stroboscopic(&self) -> bool {
        self.mode == RecordMode::Stroboscopic
    }

    pub fn final_state(&self) -> &StateVector {
        self.snapshots.last().expect("records hold at least one snapshot")
    }

    pub fn n_sites(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.n_sites())
    }
}

/// Evolves through times `1 … n_steps`, calling `visit(slot, state)` for
/// each recorded time.
fn evolve_visit(
    initial: &StateVector,
    params: &ProtocolParams,
    taus: &[f64],
    n_steps: usize,
    mode: RecordMode,
    mut visit: impl FnMut(usize, &StateVector),
) {
    let mut cur = initial.clone();
    let mut next = StateVector::zeros(initial.n_sites());
    let mut slot = 0;
    for m in 1..=n_steps {
        if mode == RecordMode::Every || m % 2 == 1 {
            visit(slot, &cur);
            slot += 1;
        }
        if m == n_steps {
            break;
        }
        let kind = StepKind::of_step(m);
        let (theta, phi_m) = params.step_angles(kind);
        step_into(&cur, &mut next, theta + taus[m - 1], phi_m, kind, params.boundary());
        std::mem::swap(&mut cur, &mut next);
    }
}

fn check_run(initial: &StateVector, params: &ProtocolParams, n_steps: usize) -> Result<()> {
    check_size(initial, params.n_sites())?;
    if params.boundary() == Boundary::Open
        && params.n_sites() < 2 {
            return Err(Error::InvalidParameter("open lattices need at least 2 sites".into()));
        }
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
    }
    Ok(())
}

/// Single noise realization. Step `m` uses `θ1 + τ_m` with `+φ` for odd `m`
/// and `θ2 + τ_m` with `-φ` for even `m`.
pub fn evolve_trajectory(
    initial: &StateVector,
    params: &ProtocolParams,
    noise_seq: &[f64],
    n_steps: usize,
    record: RecordMode,
) -> Result<SpatioTemporalRecord> {
    check_run(initial, params, n_steps)?;
    if noise_seq.len() < n_steps {
        return Err(Error::InvalidParameter(format!("noise sequence has {} entries, need {n_steps}", noise_seq.len())));
    }
    let times = record.times(n_steps);
    let mut snapshots = Vec::with_capacity(times.len());
    evolve_visit(initial, params, noise_seq, n_steps, record, |_, s| snapshots.push(s.clone()));
    Ok(SpatioTemporalRecord { mode: record, times, snapshots })
}

/// What an ensemble run accumulates besides amplitudes and intensities.
#[derive(Clone, Debug, Default)]
pub struct EnsembleOptions {
    pub record: Option<RecordMode>,
    /// Accumulate `|ψ⟩⟨ψ|` per recorded time (requires `2N ≤ 64`).
    pub average_density: bool,
    /// Interleaved vectors `v` whose overlaps `|⟨v|ψ⟩|²` are averaged.
    pub projections: Vec<DVector<C64>>,
}

/// Mean and standard error of a real series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Averaged density matrix at one recorded time with entrywise standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimate {
    pub mean: DMatrix<C64>,
    pub se_re: DMatrix<f64>,
    pub se_im: DMatrix<f64>,
}

/// Ensemble statistics over (recorded time × site).
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub n_realizations: usize,
    pub mode: RecordMode,
    pub times: Vec<usize>,
    pub mean_alpha: DMatrix<C64>,
    pub mean_beta: DMatrix<C64>,
    /// Standard error of the complex means, `√((var re + var im) / n)`.
    pub se_alpha: DMatrix<f64>,
    pub se_beta: DMatrix<f64>,
    /// `mean(|α|²)` and `mean(|β|²)`.
    pub incoherent_alpha: DMatrix<f64>,
    pub incoherent_beta: DMatrix<f64>,
    pub se_incoherent_alpha: DMatrix<f64>,
    pub se_incoherent_beta: DMatrix<f64>,
    pub density: Option<Vec<DensityEstimate>>,
    pub projections: Vec<SeriesStats>,
}

impl EnsembleStats {
    /// `|mean(α)|²`.
    pub fn coherent_alpha(&self) -> DMatrix<f64> {
        self.mean_alpha.map(|z| z.norm_sqr())
    }

    /// `|mean(β)|²`.
    pub fn coherent_beta(&self) -> DMatrix<f64> {
        self.mean_beta.map(|z| z.norm_sqr())
    }

    pub fn n_sites(&self) -> usize {
        self.mean_alpha.ncols()
    }
}

struct Layout {
    n: usize,
    slots: usize,
    density_dim: Option<usize>,
    n_proj: usize,
}

impl Layout {
    fn amp(&self) -> usize {
        4 * self.n
    }
    fn inten(&self) -> usize {
        2 * self.n
    }
    fn dens(&self) -> usize {
        self.density_dim.map_or(0, |d| 2 * d * d)
    }
    fn per_slot(&self) -> usize {
        self.amp() + self.inten() + self.dens() + self.n_proj
    }
    fn total(&self) -> usize {
        self.per_slot() * self.slots
    }

    fn fill(&self, slot: usize, s: &StateVector, proj: &[DVector<C64>], out: &mut [f64], scratch: &mut Vec<C64>) {
        let base = slot * self.per_slot();
        let n = self.n;
        let o = &mut out[base..base + self.per_slot()];
        for j in 0..n {
            o[4 * j] = s.alpha[j].re;
            o[4 * j + 1] = s.alpha[j].im;
            o[4 * j + 2] = s.beta[j].re;
            o[4 * j + 3] = s.beta[j].im;
        }
        let off = self.amp();
        for j in 0..n {
            o[off + 2 * j] = s.alpha[j].norm_sqr();
            o[off + 2 * j + 1] = s.beta[j].norm_sqr();
        }
        let mut off = off + self.inten();
        if let Some(d) = self.density_dim {
            scratch.clear();
            scratch.extend((0..d).map(|i| if i % 2 == 0 { s.alpha[i / 2] } else { s.beta[i / 2] }));
            for r in 0..d {
                for c in 0..d {
                    let z = scratch[r] * scratch[c].conj();
                    o[off + 2 * (r * d + c)] = z.re;
                    o[off + 2 * (r * d + c) + 1] = z.im;
                }
            }
            off += self.dens();
        }
        for (p, v) in proj.iter().enumerate() {
            o[off + p] = s.overlap(v).norm_sqr();
        }
    }
}

/// Runs `n_realizations` trajectories (ids `0 … n-1`) and accumulates their
/// statistics. The result is bit-identical for any number of worker threads.
pub fn run_ensemble(
    initial: &StateVector,
    params: &ProtocolParams,
    spec: &NoiseSpec,
    n_realizations: usize,
    n_steps: usize,
    options: &EnsembleOptions,
) -> Result<EnsembleStats> {
    check_run(initial, params, n_steps)?;
    if n_realizations == 0 {
        return Err(Error::InvalidParameter("n_realizations must be at least 1".into()));
    }
    let n = params.n_sites();
    let dim = 2 * n;
    if options.average_density && dim > MAX_DENSITY_DIM {
        return Err(Error::ResourceRefusal(format!(
            "averaged density matrix requested for dimension {dim} (limit {MAX_DENSITY_DIM})"
        )));
    }
    for v in &options.projections {
        if v.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
        }
    }
    let mode = options.record.unwrap_or(RecordMode::Stroboscopic);
    let times = mode.times(n_steps);
    let layout = Layout { n, slots: times.len(), density_dim: options.average_density.then_some(dim), n_proj: options.projections.len() };

    let chunks: Vec<(usize, usize)> =
        (0..n_realizations).step_by(CHUNK).map(|start| (start, (start + CHUNK).min(n_realizations))).collect();
    let partials: Vec<VecWelford> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut acc = VecWelford::new(layout.total());
            let mut obs = vec![0.0; layout.total()];
            let mut scratch = Vec::new();
            for id in start..end {
                let taus = spec.sample_sequence(n_steps, id as u64).expect("n_steps checked above");
                evolve_visit(initial, params, &taus, n_steps, mode, |slot, s| {
                    layout.fill(slot, s, &options.projections, &mut obs, &mut scratch)
                });
                acc.push(&obs);
            }
            acc
        })
        .collect();
    let mut acc = VecWelford::new(layout.total());
    for p in &partials {
        acc.merge(p);
    }

    let slots = layout.slots;
    let per = layout.per_slot();
    let mean = acc.mean();
    let se_complex = |i: usize| ((acc.variance(i) + acc.variance(i + 1)) / acc.count() as f64).sqrt();
    let mut mean_alpha = DMatrix::zeros(slots, n);
    let mut mean_beta = DMatrix::zeros(slots, n);
    let mut se_alpha = DMatrix::zeros(slots, n);
    let mut se_beta = DMatrix::zeros(slots, n);
    let mut inc_a = DMatrix::zeros(slots, n);
    let mut inc_b = DMatrix::zeros(slots, n);
    let mut se_inc_a = DMatrix::zeros(slots, n);
    let mut se_inc_b = DMatrix::zeros(slots, n);
    let mut density = options.average_density.then(Vec::new);
    let mut proj: Vec<SeriesStats> =
        (0..layout.n_proj).map(|_| SeriesStats { mean: Vec::with_capacity(slots), std_error: Vec::with_capacity(slots) }).collect();
    for t in 0..slots {
        let b = t * per;
        for j in 0..n {
            let i = b + 4 * j;
            mean_alpha[(t, j)] = C64::new(mean[i], mean[i + 1]);
            mean_beta[(t, j)] = C64::new(mean[i + 2], mean[i + 3]);
            se_alpha[(t, j)] = se_complex(i);
            se_beta[(t, j)] = se_complex(i + 2);
            let k = b + layout.amp() + 2 * j;
            inc_a[(t, j)] = mean[k];
            inc_b[(t, j)] = mean[k + 1];
            se_inc_a[(t, j)] = acc.std_error(k);
            se_inc_b[(t, j)] = acc.std_error(k + 1);
        }
        let mut off = b + layout.amp() + layout.inten();
        if let Some(list) = density.as_mut() {
            let d = dim;
            let at = |r: usize, c: usize| off + 2 * (r * d + c);
            list.push(DensityEstimate {
                mean: DMatrix::from_fn(d, d, |r, c| C64::new(mean[at(r, c)], mean[at(r, c) + 1])),
                se_re: DMatrix::from_fn(d, d, |r, c| acc.std_error(at(r, c))),
                se_im: DMatrix::from_fn(d, d, |r, c| acc.std_error(at(r, c) + 1)),
            });
            off += layout.dens();
        }
        for (p, series) in proj.iter_mut().enumerate() {
            series.mean.push(mean[off + p]);
            series.std_error.push(acc.std_error(off + p));
        }
    }
    Ok(EnsembleStats {
        n_realizations,
        mode,
        times,
        mean_alpha,
        mean_beta,
        se_alpha,
        se_beta,
        incoherent_alpha: inc_a,
        incoherent_beta: inc_b,
        se_incoherent_alpha: se_inc_a,
        se_incoherent_beta: se_inc_b,
        density,
        projections: proj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::step_operators_real;
    use crate::noise::Schedule;
    use std::f64::consts::PI;

    #[test]
    fn even_step_with_zero_angle_shifts_rings() {
        let mut s = StateVector::zeros(5);
        s.alpha[2] = C64::new(1.0, 0.0);
        s.beta[2] = C64::new(0.0, 1.0);
        let out = apply_step(&s, 0.0, 0.0, StepKind::Even, Boundary::Periodic).unwrap();
        assert_eq!(out.alpha[3], C64::new(1.0, 0.0));
        assert_eq!(out.beta[1], C64::new(0.0, 1.0));
    }

    #[test]
    fn full_crossover() {
        let s = StateVector::single_site_alpha(4, 1).unwrap();
        let out = apply_step(&s, PI / 2.0, 0.0, StepKind::Odd, Boundary::Open).unwrap();
        assert!((out.beta[1] - I).norm() < 1e-15);
        assert!(out.alpha[1].norm() < 1e-15);
    }

    #[test]
    fn quarter_splitter_amplitudes() {
        let phi = 0.3;
        let s = StateVector::single_site_alpha(4, 2).unwrap();
        let out = apply_step(&s, PI / 4.0, phi, StepKind::Even, Boundary::Periodic).unwrap();
        let c = (PI / 4.0).cos();
        assert!((out.alpha[3] - C64::from_polar(c, phi)).norm() < 1e-15);
        assert!((out.beta[2] - I * c).norm() < 1e-15);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stencil_matches_step_operators() {
        for b in [Boundary::Open, Boundary::Periodic] {
            let p = ProtocolParams::new(0.7, -0.4, 1.1, 5, b).unwrap();
            let (u1, u2) = step_operators_real(&p).unwrap();
            let v = DVector::from_fn(10, |i, _| C64::new((i as f64).sin(), (2.0 * i as f64).cos()));
            let s = StateVector::from_interleaved(&v).unwrap();
            let a = step_into_owned(&s, p.theta1(), p.phi(), StepKind::Odd, b);
            assert!((a.to_interleaved() - &u1.entries * &v).norm() < 1e-12);
            let a = step_into_owned(&s, p.theta2(), -p.phi(), StepKind::Even, b);
            assert!((a.to_interleaved() - &u2.entries * &v).norm() < 1e-12);
        }
    }

    fn step_into_owned(s: &StateVector, t: f64, ph: f64, k: StepKind, b: Boundary) -> StateVector {
        let mut out = StateVector::zeros(s.n_sites());
        step_into(s, &mut out, t, ph, k, b);
        out
    }

    #[test]
    fn size_mismatch_rejected() {
        let p = ProtocolParams::new(0.1, 0.2, 0.0, 6, Boundary::Open).unwrap();
        let s = StateVector::center_alpha(5);
        assert!(matches!(evolve_trajectory(&s, &p, &[0.0; 4], 4, RecordMode::Every), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn record_counts() {
        let p = ProtocolParams::new(0.1, 0.2, 0.0, 6, Boundary::Open).unwrap();
        let s = StateVector::center_alpha(6);
        let r = evolve_trajectory(&s, &p, &[0.0; 7], 7, RecordMode::Every).unwrap();
        assert_eq!(r.snapshots.len(), 7);
        let r = evolve_trajectory(&s, &p, &[0.0; 7], 7, RecordMode::Stroboscopic).unwrap();
        assert_eq!(r.times, vec![1, 3, 5, 7]);
    }

    #[test]
    fn density_refused_for_large_lattices() {
        let p = ProtocolParams::new(0.1, 0.2, 0.0, 40, Boundary::Open).unwrap();
        let s = StateVector::center_alpha(40);
        let spec = NoiseSpec::gaussian(0.1, Schedule::PerStep, 1).unwrap();
        let opts = EnsembleOptions { average_density: true, ..Default::default() };
        assert!(matches!(run_ensemble(&s, &p, &spec, 2, 3, &opts), Err(Error::ResourceRefusal(_))));
    }
}
