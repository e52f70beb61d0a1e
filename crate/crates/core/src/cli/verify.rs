//! Fast self-checks behind the `verify` subcommand: operator identities,
//! averaged-map identities and trajectory/averaged-map agreement at small
//! sizes.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::analysis::{extract_edge_states, recurrence_return, EdgeSide};
use crate::error::{Error, Result};
use crate::lattice::{
    dfs_momenta, floquet_operator_k, floquet_operator_real, quasienergies, step_operators_real, Boundary, ProtocolParams,
    StepKind,
};
use crate::linalg::max_abs_diff;
use crate::master::{
    decompose_bulk, decompose_step_bulk, master_step_bulk_random, master_two_step_bulk_random, noise_residual, Basis,
    BulkRandomStepper, BulkStroboStepper, DensityMatrix, MasterStepper, RealRandomStepper, RealStroboStepper,
};
use crate::noise::{coefficients_by_quadrature, gamma_coefficients, NoiseDistribution, NoiseSpec, Schedule, TrigMonomial};
use crate::trajectory::{run_ensemble, steps_for_periods, EnsembleOptions, RecordMode, StateVector};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), passed: value <= tolerance, value, tolerance }
    }
}

fn random_params(rng: &mut ChaCha8Rng, n: usize, b: Boundary) -> Result<ProtocolParams> {
    ProtocolParams::new(rng.random_range(-PI..PI), rng.random_range(-PI..PI), rng.random_range(-PI..PI), n, b)
}

fn random_rho(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<C64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let p = &a * a.adjoint();
    let t = p.trace();
    p / t
}

fn iterate(stepper: &dyn MasterStepper, rho: &DMatrix<C64>, n: usize) -> DMatrix<C64> {
    (0..n).fold(rho.clone(), |r, _| stepper.step(&r))
}

/// 2×2 momentum block `⟨k,r|ρ|k,s⟩` with `|k,s⟩ = Σ_j e^{ikj}|j,s⟩/√N`.
pub fn momentum_block(rho: &DMatrix<C64>, n: usize, k: f64) -> DMatrix<C64> {
    let ph: Vec<C64> = (0..n).map(|j| C64::from_polar(1.0 / (n as f64).sqrt(), k * j as f64)).collect();
    DMatrix::from_fn(2, 2, |r, s| {
        let mut acc = C64::new(0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                acc += ph[a].conj() * rho[(2 * a + r, 2 * b + s)] * ph[b];
            }
        }
        acc
    })
}

pub fn run_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let b = if i % 2 == 0 { Boundary::Open } else { Boundary::Periodic };
        let p = random_params(&mut rng, 2 + i % 9, b)?;
        let (u1, u2) = step_operators_real(&p)?;
        let uf = floquet_operator_real(&p)?;
        worst = worst.max(u1.unitarity_defect()).max(u2.unitarity_defect()).max(uf.unitarity_defect());
        worst = worst.max(max_abs_diff(&(&u2.entries * &u1.entries), &uf.entries));
    }
    out.push(Check::at_most("operators_unitary_and_compose", worst, 1e-12));

    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let p = random_params(&mut rng, 2, Boundary::Periodic)?;
        for q in 0..256 {
            let k = -PI + 2.0 * PI * (q as f64 + 0.5) / 256.0;
            let [a, b] = floquet_operator_k(&p, k).eigenphases();
            let e = quasienergies(&p, k);
            worst = worst.max((a - e.e_minus).abs()).max((b - e.e_plus).abs());
        }
    }
    out.push(Check::at_most("spectrum_matches_dispersion", worst, 1e-10));

    let mut worst: f64 = 0.0;
    for sigma in [0.1, 0.4 * PI] {
        let p = random_params(&mut rng, 2, Boundary::Periodic)?;
        let k = dfs_momenta(p.phi())[0];
        let rho = random_rho(&mut rng, 2);
        let noisy = iterate(&BulkStroboStepper::new(&p, k, gamma_coefficients(sigma)?), &rho, 100);
        let u = floquet_operator_k(&p, k).to_dmatrix();
        let clean = (0..100).fold(rho, |r, _| &u * r * u.adjoint());
        worst = worst.max(max_abs_diff(&noisy, &clean)).max(noise_residual(&decompose_bulk(&p, k)));
    }
    out.push(Check::at_most("dfs_stroboscopic_exact", worst, 1e-12));

    {
        let p = ProtocolParams::bulk(0.0, 0.25 * PI, 0.0)?;
        let k = dfs_momenta(p.phi())[0];
        let (_, vecs) = crate::linalg::normal_eigen(&floquet_operator_k(&p, k).to_dmatrix())?;
        let plus = (vecs.column(0) + vecs.column(1)) / C64::from(2f64.sqrt());
        let rho = &plus * plus.adjoint();
        let coherence = |r: &DMatrix<C64>| (vecs.column(0).adjoint() * r * vecs.column(1))[(0, 0)].norm();
        let after = iterate(&BulkRandomStepper::new(&p, k, gamma_coefficients(0.2)?), &rho, 20);
        out.push(Check::at_most("per_step_noise_breaks_dfs", coherence(&after) / coherence(&rho), 0.5));
    }

    let mut worst: f64 = 0.0;
    for sigma in [0.01, 0.1, 0.3, 0.5, 0.4 * PI] {
        let closed = gamma_coefficients(sigma)?;
        let quad = coefficients_by_quadrature(&NoiseDistribution::Gaussian { sigma })?;
        worst = worst
            .max((closed.gamma_plus - quad.gamma_plus).abs())
            .max((closed.gamma_pp - quad.gamma_pp).abs())
            .max((closed.gamma_mm - quad.gamma_mm).abs());
        for m in TrigMonomial::SUPPORTED {
            worst = worst.max((closed.moment(m.cos_pow, m.sin_pow) - quad.moment(m.cos_pow, m.sin_pow)).abs());
        }
    }
    out.push(Check::at_most("coefficients_closed_form_vs_quadrature", worst, 1e-8));
    let s = 0.05;
    let ratio = gamma_coefficients(s)?.gamma_pp / (3.0 * s.powi(4));
    out.push(Check::at_most("gamma_pp_quartic_scaling", (ratio - 1.0).abs(), 0.1));

    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = random_params(&mut rng, 2, Boundary::Periodic)?;
        let k = rng.random_range(-PI..PI);
        let c = gamma_coefficients(rng.random_range(0.0..1.5))?;
        let rho = DensityMatrix::new(random_rho(&mut rng, 2), Basis::Momentum { k })?;
        let (d1, d2) = (decompose_step_bulk(&p, StepKind::Odd, k), decompose_step_bulk(&p, StepKind::Even, k));
        let twice = master_step_bulk_random(&master_step_bulk_random(&rho, &d1, &c)?, &d2, &c)?;
        let once = master_two_step_bulk_random(&rho, &d1, &d2, &c)?;
        worst = worst.max(max_abs_diff(twice.entries(), once.entries()));
    }
    out.push(Check::at_most("two_step_identity", worst, 1e-12));

    let mut worst: f64 = 0.0;
    let p = ProtocolParams::new(0.3 * PI, 0.15 * PI, 0.2 * PI, 4, Boundary::Open)?;
    let init = StateVector::single_site_alpha(4, 1)?;
    let psi = init.to_interleaved();
    let rho0 = &psi * psi.adjoint();
    let periods = 5;
    for schedule in [Schedule::Stroboscopic, Schedule::PerStep] {
        let spec = NoiseSpec::gaussian(0.2, schedule, seed)?;
        let opts = EnsembleOptions { record: Some(RecordMode::Stroboscopic), average_density: true, projections: vec![] };
        let stats = run_ensemble(&init, &p, &spec, 4000, steps_for_periods(periods), &opts)?;
        let dens = stats.density.as_ref().expect("density requested");
        let stepper: Box<dyn MasterStepper> = match schedule {
            Schedule::PerStep => Box::new(RealRandomStepper::new(&p, &spec.coefficients()?)?),
            _ => Box::new(RealStroboStepper::new(&p, &spec.coefficients()?)?),
        };
        let mut rho = rho0.clone();
        for est in dens {
            for r in 0..8 {
                for c in 0..8 {
                    let d = est.mean[(r, c)] - rho[(r, c)];
                    worst = worst.max(d.re.abs() / (est.se_re[(r, c)] + 1e-12)).max(d.im.abs() / (est.se_im[(r, c)] + 1e-12));
                }
            }
            rho = stepper.step(&rho);
        }
    }
    out.push(Check::at_most("trajectories_match_averaged_map_in_std_errors", worst, 5.0));

    let mut worst: f64 = 0.0;
    let n = 16;
    let p = ProtocolParams::new(0.35 * PI, -0.2 * PI, 0.3 * PI, n, Boundary::Periodic)?;
    let rho0 = random_rho(&mut rng, 2 * n);
    let coeffs = gamma_coefficients(0.3)?;
    for schedule in [Schedule::Stroboscopic, Schedule::PerStep] {
        let real: Box<dyn MasterStepper> = match schedule {
            Schedule::PerStep => Box::new(RealRandomStepper::new(&p, &coeffs)?),
            _ => Box::new(RealStroboStepper::new(&p, &coeffs)?),
        };
        let rho_m = iterate(real.as_ref(), &rho0, 10);
        for q in 0..n {
            let k = 2.0 * PI * q as f64 / n as f64;
            let bulk: Box<dyn MasterStepper> = match schedule {
                Schedule::PerStep => Box::new(BulkRandomStepper::new(&p, k, coeffs.clone())),
                _ => Box::new(BulkStroboStepper::new(&p, k, coeffs.clone())),
            };
            let block = iterate(bulk.as_ref(), &momentum_block(&rho0, n, k), 10);
            worst = worst.max(max_abs_diff(&block, &momentum_block(&rho_m, n, k)));
        }
    }
    out.push(Check::at_most("fourier_consistency", worst, 1e-8));

    let p = ProtocolParams::new(0.5 * PI, 0.0, 0.2 * PI, 12, Boundary::Open)?;
    let report = extract_edge_states(&floquet_operator_real(&p)?)?;
    let left = report.on_side(EdgeSide::Left).next().ok_or_else(|| Error::Verification("flat band lost its edge state".into()))?;
    let err = (left.quasienergy - 0.8 * PI).abs().max((left.vector[0] - C64::new(1.0, 0.0)).norm());
    out.push(Check::at_most("flat_band_edge_state", err, 1e-10));

    let sigma = 0.12 * PI;
    let stepper = RealStroboStepper::new(&p, &gamma_coefficients(sigma)?)?;
    let mut rho = DMatrix::zeros(24, 24);
    rho[(0, 0)] = C64::new(1.0, 0.0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let next = stepper.step(&rho);
        worst = worst.max((next[(0, 0)].re - recurrence_return(rho[(0, 0)].re, rho[(1, 1)].re, sigma)).abs());
        rho = next;
    }
    out.push(Check::at_most("edge_recurrence", worst, 1e-10));

    let p = ProtocolParams::new(0.3 * PI, 0.2 * PI, 0.1 * PI, 10, Boundary::Open)?;
    let spec = NoiseSpec::gaussian(0.3, Schedule::PerStep, seed)?;
    let init = StateVector::center_alpha(10);
    let run = |threads: usize| -> Result<Vec<f64>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Config(e.to_string()))?;
        let stats = pool.install(|| run_ensemble(&init, &p, &spec, 1500, 21, &EnsembleOptions::default()))?;
        Ok(stats.incoherent_alpha.iter().chain(stats.se_alpha.iter()).copied().collect())
    };
    let (a, b) = (run(1)?, run(4)?);
    let mismatches = a.iter().zip(&b).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
    out.push(Check::at_most("ensemble_independent_of_worker_count", mismatches as f64, 0.0));

    Ok(out)
}
