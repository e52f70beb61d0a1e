use meshwalk::lattice::{floquet_operator_real, Boundary, ProtocolParams};
use meshwalk::noise::{NoiseSpec, Schedule};
use meshwalk::trajectory::{
    evolve_trajectory, run_ensemble, steps_for_periods, EnsembleOptions, RecordMode, StateVector,
};
use meshwalk::Error;
use nalgebra::DVector;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use std::f64::consts::PI;

fn random_state(n: usize, re: &[f64], im: &[f64]) -> StateVector {
    let v = DVector::from_fn(2 * n, |i, _| C64::new(re[i], im[i]));
    let norm = v.norm();
    StateVector::from_interleaved(&(v / C64::from(norm))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn noisy_evolution_preserves_norm(
        t1 in -PI..PI, t2 in -PI..PI, phi in -PI..PI,
        n in 2usize..10,
        periodic in any::<bool>(),
        re in prop::collection::vec(-1.0f64..1.0, 20),
        im in prop::collection::vec(-1.0f64..1.0, 20),
        taus in prop::collection::vec(-2.0f64..2.0, 41),
    ) {
        let b = if periodic { Boundary::Periodic } else { Boundary::Open };
        let p = ProtocolParams::new(t1, t2, phi, n, b).unwrap();
        let init = random_state(n, &re, &im);
        prop_assume!(init.norm_sqr().is_finite());
        let rec = evolve_trajectory(&init, &p, &taus, 41, RecordMode::Every).unwrap();
        prop_assert_eq!(rec.snapshots.len(), 41);
        for s in &rec.snapshots {
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_periods_match_floquet_matrix(
        t1 in -PI..PI, t2 in -PI..PI, phi in -PI..PI, n in 2usize..8, periodic in any::<bool>(),
        re in prop::collection::vec(-1.0f64..1.0, 16),
        im in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let b = if periodic { Boundary::Periodic } else { Boundary::Open };
        let p = ProtocolParams::new(t1, t2, phi, n, b).unwrap();
        let init = random_state(n, &re, &im);
        let periods = 4;
        let steps = steps_for_periods(periods);
        let rec = evolve_trajectory(&init, &p, &vec![0.0; steps], steps, RecordMode::Stroboscopic).unwrap();
        let uf = floquet_operator_real(&p).unwrap().entries;
        let mut psi = init.to_interleaved();
        for snap in &rec.snapshots {
            prop_assert!((snap.to_interleaved() - &psi).camax() < 1e-12);
            psi = &uf * psi;
        }
    }
}

#[test]
fn flat_band_edge_pulse_only_picks_up_a_phase() {
    // θ1 = π/2, θ2 = 0: a pulse in the first α ring returns every period
    // with the factor −e^{−iφ} (quasienergy π − φ).
    let phi = 0.2 * PI;
    let p = ProtocolParams::new(0.5 * PI, 0.0, phi, 12, Boundary::Open).unwrap();
    let init = StateVector::single_site_alpha(12, 0).unwrap();
    let steps = steps_for_periods(10);
    let rec = evolve_trajectory(&init, &p, &vec![0.0; steps], steps, RecordMode::Stroboscopic).unwrap();
    let factor = -C64::from_polar(1.0, -phi);
    for (m, s) in rec.snapshots.iter().enumerate() {
        let want = factor.powi(m as i32);
        assert!((s.alpha[0] - want).norm() < 1e-12, "period {m}");
        assert!((s.norm_sqr() - s.alpha[0].norm_sqr()).abs() < 1e-12);
    }
}

#[test]
fn stroboscopic_noise_is_shared_within_a_period() {
    let spec = NoiseSpec::gaussian(0.3, Schedule::Stroboscopic, 5).unwrap();
    let seq = spec.sample_sequence(30, 7).unwrap();
    assert!(seq.chunks(2).all(|pair| pair[0] == pair[1]));
    assert!(seq.chunks(2).collect::<Vec<_>>().windows(2).all(|w| w[0][0] != w[1][0]));
    let per_step = spec.with_schedule(Schedule::PerStep).sample_sequence(30, 7).unwrap();
    assert!(per_step.windows(2).any(|w| w[0] != w[1]));
    assert_eq!(seq, spec.sample_sequence(30, 7).unwrap());
    assert_ne!(seq, spec.sample_sequence(30, 8).unwrap());
}

#[test]
fn ensemble_is_identical_across_thread_pools() {
    let p = ProtocolParams::new(0.3 * PI, 0.2 * PI, 0.1 * PI, 9, Boundary::Periodic).unwrap();
    let spec = NoiseSpec::uniform(0.4 * PI, Schedule::PerStep, 11).unwrap();
    let init = StateVector::center_alpha(9);
    let opts = EnsembleOptions { record: Some(RecordMode::Every), average_density: true, projections: vec![] };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_ensemble(&init, &p, &spec, 1300, 15, &opts)).unwrap()
    };
    let (a, b, c) = (run(1), run(3), run(8));
    for other in [&b, &c] {
        assert_eq!(a.mean_alpha, other.mean_alpha);
        assert_eq!(a.incoherent_beta, other.incoherent_beta);
        assert_eq!(a.se_incoherent_alpha, other.se_incoherent_alpha);
        assert_eq!(a.density.as_ref().unwrap()[14].mean, other.density.as_ref().unwrap()[14].mean);
    }
}

#[test]
fn ensemble_intensities_conserve_probability() {
    let p = ProtocolParams::new(0.25 * PI, 0.4 * PI, 0.0, 15, Boundary::Open).unwrap();
    let spec = NoiseSpec::gaussian(0.4 * PI, Schedule::PerStep, 3).unwrap();
    let stats = run_ensemble(&StateVector::center_alpha(15), &p, &spec, 64, 21, &EnsembleOptions::default()).unwrap();
    for t in 0..stats.times.len() {
        let total: f64 = stats.incoherent_alpha.row(t).sum() + stats.incoherent_beta.row(t).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let coherent: f64 = stats.coherent_alpha().row(t).sum() + stats.coherent_beta().row(t).sum();
        assert!(coherent <= total + 1e-12);
    }
}

#[test]
fn oversized_density_average_is_refused() {
    let p = ProtocolParams::new(0.3, 0.2, 0.1, 40, Boundary::Open).unwrap();
    let opts = EnsembleOptions { average_density: true, ..Default::default() };
    let err = run_ensemble(&StateVector::center_alpha(40), &p, &NoiseSpec::noiseless(), 2, 5, &opts).unwrap_err();
    assert!(matches!(err, Error::ResourceRefusal(_)));
    assert_eq!(err.exit_code(), 3);
}
