//! Band structure from the two-dimensional Fourier transform of stroboscopic
//! records, and Gaussian linewidth fits per momentum.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use super::fit::fit_gaussian;
use crate::error::{Error, Result};
use crate::lattice::{fold_angle, ProtocolParams};
use crate::noise::NoiseSpec;
use crate::trajectory::{evolve_trajectory, RecordMode, SpatioTemporalRecord, StateVector};

/// Half-width of the per-column fit window: a quarter of the Brillouin zone.
const FIT_HALF_WIDTH: f64 = PI / 2.0;

const ENSEMBLE_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    None,
    /// Hann taper along the time axis.
    Hann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandOptions {
    pub window: Window,
    /// Zero padding factor of the time axis (1 = none).
    pub time_padding: usize,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self { window: Window::None, time_padding: 1 }
    }
}

/// Intensity `|α̃|² + |β̃|²` on a (quasienergy × quasimomentum) grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BandData {
    /// Ascending quasimomenta in `(−π, π]`.
    pub k: Vec<f64>,
    /// Ascending quasienergies in `(−π, π]`.
    pub energy: Vec<f64>,
    /// `intensity[(e, k)]`.
    pub intensity: DMatrix<f64>,
    pub n_periods: usize,
    pub options: BandOptions,
    pub n_realizations: usize,
}

/// Sorted folded frequencies of an `n`-point transform and the FFT bin of each.
fn axis(n: usize) -> (Vec<f64>, Vec<usize>) {
    let mut bins: Vec<(f64, usize)> = (0..n).map(|q| (fold_angle(2.0 * PI * q as f64 / n as f64), q)).collect();
    bins.sort_by(|a, b| a.0.total_cmp(&b.0));
    bins.into_iter().unzip()
}

struct Transformer {
    n_sites: usize,
    n_time: usize,
    n_padded: usize,
    taper: Vec<f64>,
    fft_space: Arc<dyn Fft<f64>>,
    fft_time: Arc<dyn Fft<f64>>,
}

impl Transformer {
    fn new(n_sites: usize, n_time: usize, options: &BandOptions) -> Result<Self> {
        if options.time_padding == 0 {
            return Err(Error::InvalidParameter("time_padding must be at least 1".into()));
        }
        let n_padded = n_time * options.time_padding;
        let taper = match options.window {
            Window::None => vec![1.0; n_time],
            Window::Hann if n_time < 2 => vec![1.0; n_time],
            Window::Hann => (0..n_time).map(|m| 0.5 * (1.0 - (2.0 * PI * m as f64 / (n_time - 1) as f64).cos())).collect(),
        };
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_sites,
            n_time,
            n_padded,
            taper,
            fft_space: planner.plan_fft_forward(n_sites),
            fft_time: planner.plan_fft_forward(n_padded),
        })
    }

    /// Adds the unsorted intensity of one record to `acc` (`n_padded × n_sites`, bin order).
    fn accumulate(&self, record: &SpatioTemporalRecord, acc: &mut [f64]) {
        let (n, t, tp) = (self.n_sites, self.n_time, self.n_padded);
        for ring in 0..2 {
            // Row-major time × site buffer.
            let mut buf = vec![C64::new(0.0, 0.0); tp * n];
            for (m, snap) in record.snapshots.iter().enumerate().take(t) {
                let src = if ring == 0 { &snap.alpha } else { &snap.beta };
                for j in 0..n {
                    buf[m * n + j] = src[j] * self.taper[m];
                }
            }
            for row in buf.chunks_mut(n).take(t) {
                self.fft_space.process(row);
            }
            let mut col = vec![C64::new(0.0, 0.0); tp];
            for j in 0..n {
                for m in 0..tp {
                    col[m] = buf[m * n + j];
                }
                self.fft_time.process(&mut col);
                for m in 0..tp {
                    acc[m * n + j] += col[m].norm_sqr();
                }
            }
        }
    }

    fn finish(&self, acc: &[f64], scale: f64, n_realizations: usize, options: &BandOptions) -> BandData {
        let (k, kbins) = axis(self.n_sites);
        let (energy, ebins) = axis(self.n_padded);
        let intensity = DMatrix::from_fn(energy.len(), k.len(), |r, c| acc[ebins[r] * self.n_sites + kbins[c]] * scale);
        BandData { k, energy, intensity, n_periods: self.n_time, options: options.clone(), n_realizations }
    }
}

/// Two-dimensional transform of one stroboscopic record.
pub fn band_structure(record: &SpatioTemporalRecord, options: &BandOptions) -> Result<BandData> {
    if !record.is_stroboscopic() {
        return Err(Error::InvalidParameter("band extraction needs a stroboscopic record".into()));
    }
    if record.snapshots.is_empty() || record.n_sites() == 0 {
        return Err(Error::InvalidParameter("record is empty".into()));
    }
    let tr = Transformer::new(record.n_sites(), record.snapshots.len(), options)?;
    let mut acc = vec![0.0; tr.n_padded * tr.n_sites];
    tr.accumulate(record, &mut acc);
    Ok(tr.finish(&acc, 1.0, 1, options))
}

/// Band intensity averaged over noise realizations `0 … n_realizations-1`.
/// Each realization is recorded over `n_periods` stroboscopic snapshots.
pub fn ensemble_band_structure(
    initial: &StateVector,
    params: &ProtocolParams,
    spec: &NoiseSpec,
    n_realizations: usize,
    n_periods: usize,
    options: &BandOptions,
) -> Result<BandData> {
    if n_realizations == 0 || n_periods == 0 {
        return Err(Error::InvalidParameter("need at least one realization and one period".into()));
    }
    let n_steps = 2 * n_periods - 1;
    let tr = Transformer::new(params.n_sites(), n_periods, options)?;
    // Validate once up front so worker failures cannot occur.
    evolve_trajectory(initial, params, &vec![0.0; n_steps], n_steps, RecordMode::Stroboscopic)?;
    let len = tr.n_padded * tr.n_sites;
    let chunks: Vec<(usize, usize)> = (0..n_realizations)
        .step_by(ENSEMBLE_CHUNK)
        .map(|s| (s, (s + ENSEMBLE_CHUNK).min(n_realizations)))
        .collect();
    let partial: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|&(a, b)| {
            let mut acc = vec![0.0; len];
            for id in a..b {
                let taus = spec.sample_sequence(n_steps, id as u64).expect("n_steps is positive");
                let rec = evolve_trajectory(initial, params, &taus, n_steps, RecordMode::Stroboscopic)
                    .expect("inputs validated above");
                tr.accumulate(&rec, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; len];
    for p in &partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    Ok(tr.finish(&total, 1.0 / n_realizations as f64, n_realizations, options))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhichBand {
    /// Quasienergies in `[0, π]`.
    Upper,
    /// Quasienergies in `[−π, 0]`.
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FwhmPoint {
    pub k: f64,
    pub center: Option<f64>,
    pub fwhm: Option<f64>,
    pub residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FwhmProfile {
    pub band: WhichBand,
    pub points: Vec<FwhmPoint>,
}

impl FwhmProfile {
    /// Point at the grid momentum closest to `k` (distance measured on the circle).
    pub fn nearest(&self, k: f64) -> &FwhmPoint {
        self.points
            .iter()
            .min_by(|a, b| fold_angle(a.k - k).abs().total_cmp(&fold_angle(b.k - k).abs()))
            .expect("profiles are never empty")
    }

    /// `(min, max)` over the fitted columns.
    pub fn range(&self) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.points.iter().filter_map(|p| p.fwhm).collect();
        if v.is_empty() {
            return None;
        }
        Some((v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
    }

    pub fn n_missing(&self) -> usize {
        self.points.iter().filter(|p| p.fwhm.is_none()).count()
    }
}

/// Per-column Gaussian-plus-constant fit of the selected band. The fit uses
/// quasienergies of that band within `±π/2` of the column maximum; columns
/// where the fit fails are reported without values.
pub fn fwhm_profile(band: &BandData, which: WhichBand) -> Result<FwhmProfile> {
    if band.k.is_empty() || band.energy.len() < 5 {
        return Err(Error::InvalidParameter("band grid too small for fitting".into()));
    }
    let in_band = |e: f64| match which {
        WhichBand::Upper => e >= 0.0,
        WhichBand::Lower => e <= 0.0,
    };
    let points = (0..band.k.len())
        .map(|c| {
            let col = band.intensity.column(c);
            let peak = (0..band.energy.len())
                .filter(|&r| in_band(band.energy[r]))
                .max_by(|&a, &b| col[a].total_cmp(&col[b]));
            let fit = peak.and_then(|pr| {
                let e0 = band.energy[pr];
                let (x, y): (Vec<f64>, Vec<f64>) = (0..band.energy.len())
                    .filter(|&r| in_band(band.energy[r]) && (band.energy[r] - e0).abs() <= FIT_HALF_WIDTH)
                    .map(|r| (band.energy[r], col[r]))
                    .unzip();
                fit_gaussian(&x, &y).filter(|f| (f.center - e0).abs() <= FIT_HALF_WIDTH)
            });
            FwhmPoint {
                k: band.k[c],
                center: fit.map(|f| f.center),
                fwhm: fit.map(|f| f.fwhm()),
                residual: fit.map(|f| f.rms),
            }
        })
        .collect();
    Ok(FwhmProfile { band: which, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{quasienergies, Boundary};

    #[test]
    fn axes_are_sorted_and_folded() {
        let (a, bins) = axis(4);
        assert_eq!(a, vec![-0.5 * PI, 0.0, 0.5 * PI, PI]);
        assert_eq!(bins, vec![3, 0, 1, 2]);
    }

    #[test]
    fn non_stroboscopic_rejected() {
        let p = ProtocolParams::new(0.1, 0.2, 0.0, 6, Boundary::Periodic).unwrap();
        let rec = evolve_trajectory(&StateVector::center_alpha(6), &p, &[0.0; 5], 5, RecordMode::Every).unwrap();
        assert!(band_structure(&rec, &BandOptions::default()).is_err());
    }

    #[test]
    fn flat_band_ridge() {
        let n = 16;
        let p = ProtocolParams::new(0.5 * PI, 0.0, 0.2 * PI, n, Boundary::Periodic).unwrap();
        let rec = evolve_trajectory(&StateVector::center_alpha(n), &p, &vec![0.0; 63], 63, RecordMode::Stroboscopic).unwrap();
        let b = band_structure(&rec, &BandOptions::default()).unwrap();
        for c in 0..b.k.len() {
            let col = b.intensity.column(c);
            let r = (0..b.energy.len()).max_by(|&x, &y| col[x].total_cmp(&col[y])).unwrap();
            assert!((b.energy[r].abs() - 0.5 * PI).abs() < 1e-12);
        }
        let _ = quasienergies(&p, 0.0);
    }
}
