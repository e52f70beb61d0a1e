use meshwalk::analysis::{
    edge_states_for, ensemble_band_structure, fwhm_profile, BandEdges, BandOptions, EdgeSide, GapLabel, WhichBand,
    Window,
};
use meshwalk::lattice::{dfs_momenta, fold_angle, quasienergies, Boundary, ProtocolParams};
use meshwalk::noise::{NoiseSpec, Schedule};
use meshwalk::trajectory::StateVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn circle_dist(a: f64, b: f64) -> f64 {
    fold_angle(a - b).abs()
}

#[test]
fn noiseless_band_ridge_follows_dispersion() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 24;
    let periods = 96;
    for _ in 0..10 {
        let (t1, t2, phi) = (rng.random_range(0.15..1.4), rng.random_range(0.15..1.4), rng.random_range(-PI..PI));
        let p = ProtocolParams::new(t1, t2, phi, n, Boundary::Periodic).unwrap();
        let band = ensemble_band_structure(
            &StateVector::center_alpha(n),
            &p,
            &NoiseSpec::noiseless(),
            1,
            periods,
            &BandOptions::default(),
        )
        .unwrap();
        let cell = band.energy[1] - band.energy[0];
        for (c, &k) in band.k.iter().enumerate() {
            let col = band.intensity.column(c);
            let peak = (0..band.energy.len())
                .filter(|&r| band.energy[r] >= 0.0)
                .max_by(|&a, &b| col[a].total_cmp(&col[b]))
                .unwrap();
            let want = quasienergies(&p, k).e_plus;
            assert!(
                circle_dist(band.energy[peak], want) <= cell + 1e-9,
                "θ1={t1} θ2={t2} φ={phi} k={k}: ridge {} vs {want}",
                band.energy[peak]
            );
        }
    }
}

#[test]
fn linewidth_is_narrowest_at_the_decoherence_free_momentum() {
    let n = 32;
    let phi = 0.3 * PI;
    let p = ProtocolParams::new(0.2 * PI, 0.3 * PI, phi, n, Boundary::Periodic).unwrap();
    let opts = BandOptions { window: Window::None, time_padding: 4 };
    let k_dfs = dfs_momenta(phi)[0];
    for sigma in [0.2, 0.4 * PI] {
        let spec = NoiseSpec::gaussian(sigma, Schedule::Stroboscopic, 9).unwrap();
        let band = ensemble_band_structure(&StateVector::center_alpha(n), &p, &spec, 200, 64, &opts).unwrap();
        let profile = fwhm_profile(&band, WhichBand::Upper).unwrap();
        let narrowest = profile
            .points
            .iter()
            .filter(|pt| pt.fwhm.is_some())
            .min_by(|a, b| a.fwhm.unwrap().total_cmp(&b.fwhm.unwrap()))
            .unwrap();
        assert_eq!(narrowest.k, profile.nearest(k_dfs).k, "σ = {sigma}");
    }
}

#[test]
fn edge_states_are_stable_under_longer_chains() {
    for (t1, t2, phi, n) in [(0.5 * PI, 0.0, 0.2 * PI, 20), (0.45 * PI, 0.0, 0.2 * PI, 40), (0.4 * PI, 0.1 * PI, 0.6 * PI, 40)]
    {
        let short = edge_states_for(&ProtocolParams::new(t1, t2, phi, n, Boundary::Open).unwrap()).unwrap();
        let long = edge_states_for(&ProtocolParams::new(t1, t2, phi, n + 10, Boundary::Open).unwrap()).unwrap();
        assert!(!short.states.is_empty(), "θ1={t1}: no edge states");
        assert_eq!(short.states.len(), long.states.len());
        for side in [EdgeSide::Left, EdgeSide::Right] {
            let mut a: Vec<f64> = short.on_side(side).map(|s| s.quasienergy).collect();
            let mut b: Vec<f64> = long.on_side(side).map(|s| s.quasienergy).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert!(circle_dist(*x, *y) < 1e-6, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn flat_band_edge_states_sit_in_the_pi_gap() {
    let phi = 0.2 * PI;
    let p = ProtocolParams::new(0.5 * PI, 0.0, phi, 16, Boundary::Open).unwrap();
    let report = edge_states_for(&p).unwrap();
    assert_eq!(report.states.len(), 2);
    for s in &report.states {
        assert_eq!(s.gap, GapLabel::Pi);
        assert!((s.ipr - 1.0).abs() < 1e-10);
        let want = if s.side == EdgeSide::Left { PI - phi } else { phi - PI };
        assert!(circle_dist(s.quasienergy, want) < 1e-10);
    }
    assert!(BandEdges::of(&p).pi_gap_open());
}

#[test]
fn equal_angles_give_no_edge_states() {
    for (theta, phi) in [(0.2 * PI, 0.0), (0.3 * PI, 0.4 * PI), (0.45 * PI, -0.7 * PI)] {
        let report = edge_states_for(&ProtocolParams::new(theta, theta, phi, 30, Boundary::Open).unwrap()).unwrap();
        assert!(report.states.is_empty(), "θ={theta} φ={phi}: {} states", report.states.len());
    }
}

#[test]
fn dispersive_edge_state_spreads_over_several_cells() {
    let p = ProtocolParams::new(0.45 * PI, 0.0, 0.2 * PI, 44, Boundary::Open).unwrap();
    let report = edge_states_for(&p).unwrap();
    let left = report.on_side(EdgeSide::Left).next().expect("left edge state");
    let cell = |j: usize| left.vector[2 * j].norm_sqr() + left.vector[2 * j + 1].norm_sqr();
    assert!(left.ipr < 1.0 - 1e-3);
    assert!(cell(1) > 1e-3, "second cell weight {}", cell(1));
    assert!((0..4).map(cell).sum::<f64>() > 0.99);
}
