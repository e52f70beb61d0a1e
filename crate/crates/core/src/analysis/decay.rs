//! Return probabilities, the edge recurrence and its continuum approximation,
//! and two-regime decay fits.

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::fit::{fit_line, fit_quadratic, LineFit};
use crate::error::{Error, Result};
use crate::lattice::ProtocolParams;
use crate::master::{propagate, DensityMatrix, MasterStepper, Observable};
use crate::noise::NoiseSpec;
use crate::trajectory::{run_ensemble, steps_for_periods, EnsembleOptions, RecordMode, StateVector};

/// Slack above 1 tolerated in probabilities from floating-point propagation.
const PROB_SLACK: f64 = 1e-9;

/// Minimum series length accepted by [`fit_decay`].
pub const MIN_FIT_LEN: usize = 20;

/// Last period of the early (exponential) window.
pub const EARLY_WINDOW_END: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesSource {
    MonteCarlo,
    MasterEquation,
    Analytic,
    Recurrence,
}

/// Probability per period `M = 0, 1, …`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnProbSeries {
    pub source: SeriesSource,
    pub label: String,
    pub values: Vec<f64>,
    /// Standard errors for Monte-Carlo series.
    pub std_error: Option<Vec<f64>>,
}

impl ReturnProbSeries {
    pub fn new(source: SeriesSource, label: impl Into<String>, values: Vec<f64>, std_error: Option<Vec<f64>>) -> Result<Self> {
        if let Some((m, v)) = values.iter().enumerate().find(|(_, v)| !(-PROB_SLACK..=1.0 + PROB_SLACK).contains(*v)) {
            return Err(Error::InvalidParameter(format!("probability {v} at period {m} is outside [0, 1]")));
        }
        if let Some(se) = &std_error {
            if se.len() != values.len() {
                return Err(Error::DimensionMismatch { expected: values.len(), found: se.len() });
            }
        }
        Ok(Self { source, label: label.into(), values, std_error })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `⟨e|ρ_M|e⟩` for `M = 0 ..= n_periods` from an averaged map.
pub fn return_from_master(
    rho0: &DensityMatrix,
    stepper: &dyn MasterStepper,
    target: &DVector<C64>,
    label: &str,
    n_periods: usize,
) -> Result<ReturnProbSeries> {
    let obs = [Observable::Projection { label: label.into(), vector: target.clone() }];
    let prop = propagate(rho0, stepper, n_periods, &obs)?;
    ReturnProbSeries::new(SeriesSource::MasterEquation, label, prop.real_series(0), None)
}

/// Mean of `|⟨e|ψ_M⟩|²` over trajectories for `M = 0 ..= n_periods`.
pub fn return_from_ensemble(
    initial: &StateVector,
    params: &ProtocolParams,
    spec: &NoiseSpec,
    target: &DVector<C64>,
    label: &str,
    n_realizations: usize,
    n_periods: usize,
) -> Result<ReturnProbSeries> {
    let options = EnsembleOptions { record: Some(RecordMode::Stroboscopic), average_density: false, projections: vec![target.clone()] };
    let stats = run_ensemble(initial, params, spec, n_realizations, steps_for_periods(n_periods), &options)?;
    let proj = stats.projections.into_iter().next().expect("one projection requested");
    ReturnProbSeries::new(SeriesSource::MonteCarlo, label, proj.mean, Some(proj.std_error))
}

/// `p0 e^{−MΓ+} + Γ+ p_neighbor(M)` over the periods of the neighbor series.
pub fn analytic_return(p0: f64, gamma_plus: f64, neighbor: &ReturnProbSeries) -> ReturnProbSeries {
    let values = neighbor.values.iter().enumerate().map(|(m, pn)| p0 * (-(m as f64) * gamma_plus).exp() + gamma_plus * pn).collect();
    ReturnProbSeries { source: SeriesSource::Analytic, label: "analytic".into(), values, std_error: None }
}

/// One step of the Gaussian edge recurrence
/// `p_edge' = ½(1 + e^{−2σ²}) p_edge + ½(1 − e^{−2σ²}) p_neighbor`.
pub fn recurrence_return(p_edge: f64, p_neighbor: f64, sigma: f64) -> f64 {
    let damp = (-2.0 * sigma * sigma).exp();
    0.5 * (1.0 + damp) * p_edge + 0.5 * (1.0 - damp) * p_neighbor
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailModel {
    Exponential,
    PowerLaw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayFlag {
    /// The series increases somewhere by more than its stated uncertainty.
    NonMonotone,
    /// The late window is flat within 1e-3 per period in log scale.
    Saturated,
    /// Non-positive values were dropped from the log fits.
    NonPositive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    /// `−d ln p / dM` over the early window.
    pub exp_rate: f64,
    pub early_window: (usize, usize),
    pub early_fit: LineFit,
    /// `−d ln p / d ln M` over the late window.
    pub tail_exponent: f64,
    pub late_window: (usize, usize),
    pub late_power_fit: LineFit,
    pub late_exp_fit: LineFit,
    pub tail_model: TailModel,
    /// Last period where the early exponential and the late power law cross.
    pub crossover: Option<f64>,
    /// Second-order coefficient of a quadratic fit to `ln p` over the late window.
    pub log_curvature: f64,
    pub flags: Vec<DecayFlag>,
}

fn log_points(values: &[f64], range: std::ops::RangeInclusive<usize>, log_x: bool) -> (Vec<f64>, Vec<f64>) {
    range
        .filter(|&m| values[m] > 0.0 && (!log_x || m > 0))
        .map(|m| (if log_x { (m as f64).ln() } else { m as f64 }, values[m].ln()))
        .unzip()
}

/// Fits an exponential on periods `0..=3` and a power law on the last three
/// quarters' tail `[len/4, len−1]`. The tail is classified by which model
/// leaves the smaller RMS log residual over the late window.
pub fn fit_decay(series: &ReturnProbSeries) -> Result<DecayReport> {
    let p = &series.values;
    if p.len() < MIN_FIT_LEN {
        return Err(Error::InvalidParameter(format!("decay fit needs at least {MIN_FIT_LEN} periods, got {}", p.len())));
    }
    let mut flags = Vec::new();
    if p.iter().any(|&v| v <= 0.0) {
        flags.push(DecayFlag::NonPositive);
    }
    let tol = |m: usize| series.std_error.as_ref().map_or(1e-12, |se| 3.0 * (se[m] + se[m + 1]) + 1e-12);
    if (0..p.len() - 1).any(|m| p[m + 1] > p[m] + tol(m)) {
        flags.push(DecayFlag::NonMonotone);
    }
    let last = p.len() - 1;
    let early_window = (0, EARLY_WINDOW_END);
    let late_window = (p.len() / 4, last);
    let degenerate = || Error::InvalidParameter("not enough positive values to fit".into());

    let (x, y) = log_points(p, early_window.0..=early_window.1, false);
    let early_fit = fit_line(&x, &y).ok_or_else(degenerate)?;
    let (x, y) = log_points(p, late_window.0..=late_window.1, true);
    let late_power_fit = fit_line(&x, &y).ok_or_else(degenerate)?;
    let (xm, ym) = log_points(p, late_window.0..=late_window.1, false);
    let late_exp_fit = fit_line(&xm, &ym).ok_or_else(degenerate)?;
    let log_curvature = fit_quadratic(&xm, &ym).ok_or_else(degenerate)?[2];

    if late_exp_fit.slope.abs() < 1e-3 {
        flags.push(DecayFlag::Saturated);
    }
    let tail_model = if late_power_fit.rms < late_exp_fit.rms { TailModel::PowerLaw } else { TailModel::Exponential };

    // Scan for sign changes of (early − late) on a fine grid over M ≥ 1.
    let gap = |m: f64| early_fit.eval(m) - late_power_fit.eval(m.ln());
    let samples = 20 * last;
    let mut crossover = None;
    let mut prev = (1.0, gap(1.0));
    for i in 1..=samples {
        let m = 1.0 + (last as f64 - 1.0) * i as f64 / samples as f64;
        let g = gap(m);
        if g == 0.0 || g.signum() != prev.1.signum() {
            crossover = Some(prev.0 + (m - prev.0) * prev.1 / (prev.1 - g));
        }
        prev = (m, g);
    }

    Ok(DecayReport {
        exp_rate: -early_fit.slope,
        early_window,
        early_fit,
        tail_exponent: -late_power_fit.slope,
        late_window,
        late_power_fit,
        late_exp_fit,
        tail_model,
        crossover,
        log_curvature,
        flags,
    })
}
