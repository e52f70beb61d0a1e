//! Subcommand implementations. Each writes its tables, JSON sidecars and a
//! manifest into one output directory.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::Serialize;
use serde_json::json;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::config::{Engine, InitialState, ObservableSpec, Ring, RunConfig, Side};
use super::output::{fmt_f64, fmt_opt, OutputDir, Table};
use super::verify::run_checks;
use crate::analysis::{
    analytic_return, ensemble_band_structure, extract_edge_states, fit_decay, fwhm_profile, return_from_ensemble,
    return_from_master, BandOptions, EdgeReport, EdgeSide, EdgeState, ReturnProbSeries, MIN_FIT_LEN,
};
use crate::error::{Error, Result};
use crate::lattice::{dfs_momenta, floquet_operator_real, Boundary, ProtocolParams};
use crate::master::{
    decompose_bulk, noise_residual, propagate, Basis, DensityMatrix, MasterStepper, Observable, RealRandomStepper,
    RealStroboStepper,
};
use crate::noise::{gamma_coefficients, CoefficientSet, NoiseSpec, Schedule};
use crate::trajectory::{run_ensemble, EnsembleOptions, RecordMode, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Bands,
    Evolve,
    Master,
    Edge,
    Dfs,
    Verify,
    Sweep,
}

impl Command {
    pub const ALL: [Command; 7] =
        [Command::Bands, Command::Evolve, Command::Master, Command::Edge, Command::Dfs, Command::Verify, Command::Sweep];

    pub fn name(self) -> &'static str {
        match self {
            Command::Bands => "bands",
            Command::Evolve => "evolve",
            Command::Master => "master",
            Command::Edge => "edge",
            Command::Dfs => "dfs",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| Error::Config(format!("unknown command {s:?}")))
    }
}

/// Files written and human-readable summary lines.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub files: Vec<String>,
    pub messages: Vec<String>,
}

pub fn run_command(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut dir = OutputDir::create(out)?;
    let mut messages = Vec::new();
    let verdict = match cmd {
        Command::Bands => bands(cfg, &mut dir, &mut messages),
        Command::Evolve => evolve(cfg, &mut dir, &mut messages),
        Command::Master => master(cfg, &mut dir, &mut messages),
        Command::Edge => edge(cfg, &mut dir, &mut messages),
        Command::Dfs => dfs(cfg, &mut dir, &mut messages),
        Command::Verify => verify(cfg, &mut dir, &mut messages),
        Command::Sweep => sweep(cfg, &mut dir, &mut messages),
    };
    // Verification failures still leave a complete report behind.
    let failed = match verdict {
        Ok(()) => None,
        Err(e @ Error::Verification(_)) => Some(e),
        Err(e) => return Err(e),
    };
    let files = dir.finish(cmd.name(), cfg)?;
    match failed {
        Some(e) => Err(e),
        None => Ok(Outcome { files, messages }),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers

fn edge_side(s: Side) -> EdgeSide {
    match s {
        Side::Left => EdgeSide::Left,
        Side::Right => EdgeSide::Right,
    }
}

/// Most localized edge state on `side`.
pub fn select_edge_state(report: &EdgeReport, side: Side) -> Result<EdgeState> {
    report
        .on_side(edge_side(side))
        .max_by(|a, b| a.ipr.total_cmp(&b.ipr))
        .cloned()
        .ok_or_else(|| {
            let why = report.diagnostic.clone().unwrap_or_else(|| "no gap state passes the localization threshold".into());
            Error::InvalidParameter(format!("no {side:?} edge state: {why}"))
        })
}

pub fn initial_state(cfg: &RunConfig, params: &ProtocolParams) -> Result<StateVector> {
    let n = params.n_sites();
    match &cfg.initial {
        InitialState::Site { site, ring } => {
            let j = site.unwrap_or(n / 2);
            let mut s = StateVector::single_site_alpha(n, j)?;
            if *ring == Ring::Beta {
                s.alpha[j] = C64::new(0.0, 0.0);
                s.beta[j] = C64::new(1.0, 0.0);
            }
            Ok(s)
        }
        InitialState::BlochWave { k, polarization } => {
            StateVector::bloch_wave(n, k.0, [C64::from(polarization[0]), C64::from(polarization[1])])
        }
        InitialState::EdgeState { side } => {
            let report = extract_edge_states(&floquet_operator_real(params)?)?;
            StateVector::from_interleaved(&select_edge_state(&report, *side)?.vector)
        }
    }
}

/// One-period averaged map for `schedule`; `None` gives the noiseless map.
pub fn real_stepper(params: &ProtocolParams, schedule: Schedule, coeffs: &CoefficientSet) -> Result<Box<dyn MasterStepper>> {
    Ok(match schedule {
        Schedule::None => Box::new(RealStroboStepper::new(params, &gamma_coefficients(0.0)?)?),
        Schedule::PerStep => Box::new(RealRandomStepper::new(params, coeffs)?),
        Schedule::Stroboscopic => Box::new(RealStroboStepper::new(params, coeffs)?),
    })
}

fn basis_vector(dim: usize, i: usize) -> DVector<C64> {
    let mut v = DVector::zeros(dim);
    v[i] = C64::new(1.0, 0.0);
    v
}

/// Component next to the peak of an edge state, on the bulk side.
pub fn neighbor_component(state: &EdgeState) -> usize {
    let peak = state.vector.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).map(|p| p.0).unwrap_or(0);
    match state.side {
        EdgeSide::Left => (peak + 1).min(state.vector.len() - 1),
        EdgeSide::Right => peak.saturating_sub(1),
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    params: &'a ProtocolParams,
    noise: &'a NoiseSpec,
    realizations: usize,
}

// ---------------------------------------------------------------------------
// bands

fn bands(cfg: &RunConfig, dir: &mut OutputDir, msg: &mut Vec<String>) -> Result<()> {
    let params = cfg.protocol()?;
    let spec = cfg.noise_spec()?;
    let init = initial_state(cfg, &params)?;
    let options = BandOptions { window: cfg.bands.window, time_padding: cfg.bands.time_padding };
    let periods = cfg.periods().max(1);
    let band = ensemble_band_structure(&init, &params, &spec, cfg.run.realizations, periods, &options)?;

    let mut t = Table::new(["k", "energy", "intensity"]);
    for (c, k) in band.k.iter().enumerate() {
        for (r, e) in band.energy.iter().enumerate() {
            t.push(vec![fmt_f64(*k), fmt_f64(*e), fmt_f64(band.intensity[(r, c)])]);
        }
    }
    dir.csv("band_intensity.csv", &t)?;
    dir.json(
        "band_intensity.json",
        &json!({
            "meta": Meta { params: &params, noise: &spec, realizations: band.n_realizations },
            "n_k": band.k.len(),
            "n_energy": band.energy.len(),
            "periods": band.n_periods,
            "options": band.options,
            "columns": ["k", "energy", "intensity"],
        }),
    )?;

    let dfs_k = dfs_momenta(params.phi())[0];
    let mut summary = Vec::new();
    for which in &cfg.bands.fit {
        let profile = fwhm_profile(&band, *which)?;
        let name = match which {
            crate::analysis::WhichBand::Upper => "upper",
            crate::analysis::WhichBand::Lower => "lower",
        };
        let mut t = Table::new(["k", "center", "fwhm", "residual"]);
        for p in &profile.points {
            t.push(vec![fmt_f64(p.k), fmt_opt(p.center), fmt_opt(p.fwhm), fmt_opt(p.residual)]);
        }
        dir.csv(&format!("fwhm_{name}.csv"), &t)?;
        let range = profile.range();
        let at_dfs = profile.nearest(dfs_k);
        let at_zero = profile.nearest(0.0);
        msg.push(format!(
            "{name} band: FWHM range {:?}, at k={:.4} {:?}, at k={:.4} {:?}, {} missing",
            range, at_dfs.k, at_dfs.fwhm, at_zero.k, at_zero.fwhm, profile.n_missing()
        ));
        summary.push(json!({
            "band": which,
            "min_fwhm": range.map(|r| r.0),
            "max_fwhm": range.map(|r| r.1),
            "missing_columns": profile.n_missing(),
            "dfs_momentum": at_dfs.k,
            "fwhm_at_dfs_momentum": at_dfs.fwhm,
            "fwhm_at_zero": at_zero.fwhm,
        }));
    }
    dir.json("fwhm_summary.json", &summary)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evolve

fn evolve(cfg: &RunConfig, dir: &mut OutputDir, msg: &mut Vec<String>) -> Result<()> {
    let params = cfg.protocol()?;
    let spec = cfg.noise_spec()?;
    let init = initial_state(cfg, &params)?;
    let options = EnsembleOptions { record: Some(cfg.run.record), ..Default::default() };
    let stats = run_ensemble(&init, &params, &spec, cfg.run.realizations, cfg.run.steps, &options)?;
    let times = &stats.times;
    dir.csv("mean_alpha.csv", &Table::from_complex("time", times, "site", &stats.mean_alpha))?;
    dir.csv("mean_beta.csv", &Table::from_complex("time", times, "site", &stats.mean_beta))?;
    dir.csv("coherent_alpha.csv", &Table::from_real("time", times, "site", &stats.coherent_alpha()))?;
    dir.csv("coherent_beta.csv", &Table::from_real("time", times, "site", &stats.coherent_beta()))?;
    dir.csv("incoherent_alpha.csv", &Table::from_real("time", times, "site", &stats.incoherent_alpha))?;
    dir.csv("incoherent_beta.csv", &Table::from_real("time", times, "site", &stats.incoherent_beta))?;

    let coherent = stats.coherent_alpha() + stats.coherent_beta();
    let incoherent = &stats.incoherent_alpha + &stats.incoherent_beta;
    let mut t = Table::new(["time", "coherent_total", "incoherent_total"]);
    for (r, m) in times.iter().enumerate() {
        t.push(vec![m.to_string(), fmt_f64(coherent.row(r).sum()), fmt_f64(incoherent.row(r).sum())]);
    }
    dir.csv("totals.csv", &t)?;
    let last = times.len() - 1;
    msg.push(format!(
        "{} realizations, {} recorded times; final coherent/incoherent intensity {:.6}/{:.6}",
        stats.n_realizations,
        times.len(),
        coherent.row(last).sum(),
        incoherent.row(last).sum()
    ));
    dir.json("evolve.json", &json!({ "meta": Meta { params: &params, noise: &spec, realizations: stats.n_realizations }, "record": cfg.run.record }))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// master

fn to_observable(o: &ObservableSpec, params: &ProtocolParams) -> Result<Observable> {
    Ok(match o {
        ObservableSpec::Population(i) => Observable::Population(*i),
        ObservableSpec::Coherence(i, j) => Observable::Coherence(*i, *j),
        ObservableSpec::Trace => Observable::Trace,
        ObservableSpec::Edge(side) => {
            let report = extract_edge_states(&floquet_operator_real(params)?)?;
            let label = match side {
                Side::Left => "edge_left",
                Side::Right => "edge_right",
            };
            Observable::Projection { label: label.into(), vector: select_edge_state(&report, *side)?.vector }
        }
    })
}

fn master(cfg: &RunConfig, dir: &mut OutputDir, msg: &mut Vec<String>) -> Result<()> {
    let params = cfg.protocol()?;
    let spec = cfg.noise_spec()?;
    let init = initial_state(cfg, &params)?;
    let rho0 = DensityMatrix::pure(&init.to_interleaved(), Basis::RealSpace { n_sites: params.n_sites() })?;
    let stepper = real_stepper(&params, spec.schedule(), &spec.coefficients()?)?;
    let observables: Vec<Observable> = if cfg.run.observables.is_empty() {
        (0..params.dim()).map(Observable::Population).collect()
    } else {
        cfg.observables().iter().map(|o| to_observable(o, &params)).collect::<Result<_>>()?
    };
    let prop = propagate(&rho0, stepper.as_ref(), cfg.periods(), &observables)?;
    let mut t = Table::new(std::iter::once("period".to_string()).chain(prop.labels.iter().flat_map(|l| [format!("{l}_re"), format!("{l}_im")])));
    for (m, period) in prop.periods.iter().enumerate() {
        t.push(std::iter::once(period.to_string()).chain(prop.values.iter().flat_map(|v| [fmt_f64(v[m].re), fmt_f64(v[m].im)])).collect());
    }
    dir.csv("observables.csv", &t)?;
    let idx: Vec<usize> = (0..params.dim()).collect();
    dir.csv("final_density.csv", &Table::from_complex("row", &idx, "col", prop.final_state.entries()))?;
    let rho = prop.final_state.entries();
    let purity = (rho * rho).trace().re;
    msg.push(format!("{} periods under {} noise; final purity {purity:.6}", cfg.periods(), spec.schedule()));
    dir.json(
        "master.json",
        &json!({ "meta": Meta { params: &params, noise: &spec, realizations: 0 }, "periods": cfg.periods(), "final_purity": purity }),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// edge

#[derive(Serialize)]
struct EdgeStateInfo {
    quasienergy: f64,
    gap: crate::analysis::GapLabel,
    ipr: f64,
    side: EdgeSide,
}

/// Return-probability series of one edge state: noiseless, both noise
/// schedules from the averaged maps and from trajectories, and the
/// continuum approximation driven by the stroboscopic neighbor population.
pub struct EdgeSeries {
    pub target: EdgeState,
    pub noiseless: ReturnProbSeries,
    pub random_master: ReturnProbSeries,
    pub strobo_master: ReturnProbSeries,
    pub random_mc: ReturnProbSeries,
    pub strobo_mc: ReturnProbSeries,
    pub neighbor: ReturnProbSeries,
    pub analytic: ReturnProbSeries,
}

pub fn edge_series(cfg: &RunConfig, params: &ProtocolParams) -> Result<(EdgeReport, EdgeSeries)> {
    if params.boundary() != Boundary::Open {
        return Err(Error::InvalidParameter("edge runs need an open boundary".into()));
    }
    let report = extract_edge_states(&floquet_operator_real(params)?)?;
    let side = match cfg.initial {
        InitialState::EdgeState { side } => side,
        _ => Side::Left,
    };
    let target = select_edge_state(&report, side)?;
    let basis = Basis::RealSpace { n_sites: params.n_sites() };
    let rho0 = DensityMatrix::pure(&target.vector, basis)?;
    let spec = cfg.noise_spec()?;
    let coeffs = crate::noise::coefficients_for(&spec.distribution())?;
    let periods = cfg.periods();
    let run = |s: Schedule, label: &str| -> Result<ReturnProbSeries> {
        return_from_master(&rho0, real_stepper(params, s, &coeffs)?.as_ref(), &target.vector, label, periods)
    };
    let noiseless = run(Schedule::None, "noiseless")?;
    let random_master = run(Schedule::PerStep, "random_master")?;
    let strobo_master = run(Schedule::Stroboscopic, "strobo_master")?;
    let init = StateVector::from_interleaved(&target.vector)?;
    let mc = |s: Schedule, label: &str| {
        return_from_ensemble(&init, params, &spec.with_schedule(s), &target.vector, label, cfg.run.realizations, periods)
    };
    let random_mc = mc(Schedule::PerStep, "random_mc")?;
    let strobo_mc = mc(Schedule::Stroboscopic, "strobo_mc")?;
    let nb = neighbor_component(&target);
    let neighbor = return_from_master(
        &rho0,
        real_stepper(params, Schedule::Stroboscopic, &coeffs)?.as_ref(),
        &basis_vector(params.dim(), nb),
        "neighbor",
        periods,
    )?;
    let analytic = analytic_return(strobo_master.values[0], coeffs.gamma_plus, &neighbor);
    Ok((report, EdgeSeries { target, noiseless, random_master, strobo_master, random_mc, strobo_mc, neighbor, analytic }))
}

fn edge(cfg: &RunConfig, dir: &mut OutputDir, msg: &mut Vec<String>) -> Result<()> {
    let params = cfg.protocol()?;
    let (report, s) = edge_series(cfg, &params)?;
    let infos: Vec<EdgeStateInfo> =
        report.states.iter().map(|e| EdgeStateInfo { quasienergy: e.quasienergy, gap: e.gap, ipr: e.ipr, side: e.side }).collect();
    dir.json(
        "edge_states.json",
        &json!({ "params": params, "bands": report.bands, "ipr_threshold": report.ipr_threshold, "diagnostic": report.diagnostic, "states": infos }),
    )?;
    let mut t = Table::new(["component", "re", "im"]);
    for (i, z) in s.target.vector.iter().enumerate() {
        t.push(vec![i.to_string(), fmt_f64(z.re), fmt_f64(z.im)]);
    }
    dir.csv("edge_state.csv", &t)?;

    let se = |s: &ReturnProbSeries, m: usize| s.std_error.as_ref().map(|v| fmt_f64(v[m])).unwrap_or_default();
    let mut t = Table::new([
        "period", "noiseless", "random_master", "strobo_master", "random_mc", "random_mc_se", "strobo_mc", "strobo_mc_se", "neighbor",
        "analytic",
    ]);
    for m in 0..s.noiseless.len() {
        t.push(vec![
            m.to_string(),
            fmt_f64(s.noiseless.values[m]),
            fmt_f64(s.random_master.values[m]),
            fmt_f64(s.strobo_master.values[m]),
            fmt_f64(s.random_mc.values[m]),
            se(&s.random_mc, m),
            fmt_f64(s.strobo_mc.values[m]),
            se(&s.strobo_mc, m),
            fmt_f64(s.neighbor.values[m]),
            fmt_f64(s.analytic.values[m]),
        ]);
    }
    dir.csv("return_probability.csv", &t)?;

    let mut fits = serde_json::Map::new();
    for series in [&s.strobo_master, &s.random_master, &s.strobo_mc, &s.random_mc] {
        if series.len() >= MIN_FIT_LEN {
            match fit_decay(series) {
                Ok(r) => {
                    fits.insert(series.label.clone(), serde_json::to_value(&r).expect("report serializes"));
                }
                Err(e) => msg.push(format!("{}: decay fit skipped ({e})", series.label)),
            }
        }
    }
    if let Some(r) = fits.get("strobo_master") {
        msg.push(format!("stroboscopic decay rate {} per period, crossover {}", r["exp_rate"], r["crossover"]));
    }
    msg.push(format!("edge state at quasienergy {:.6} ({:?} gap, IPR {:.4})", s.target.quasienergy, s.target.gap, s.target.ipr));
    dir.json("decay_fit.json", &fits)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// dfs

pub const DFS_GRID: usize = 256;

fn dfs(cfg: &RunConfig, dir: &mut OutputDir, msg: &mut Vec<String>) -> Result<()> {
    let params = cfg.protocol()?;
    let residual = |k: f64| {
        let d = decompose_bulk(&params, k);
        let m = |x: &nalgebra::Matrix2<C64>| x.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        (m(&d.u_plus), m(&d.u_minus), noise_residual(&d))
    };
    let mut t = Table::new(["k", "residual_plus", "residual_minus"]);
    for q in 0..DFS_GRID {
        let k = -PI + 2.0 * PI * (q + 1) as f64 / DFS_GRID as f64;
        let (a, b, _) = residual(k);
        t.push(vec![fmt_f64(k), fmt_f64(a), fmt_f64(b)]);
    }
    dir.csv("dfs_residuals.csv", &t)?;
    let momenta: Vec<_> = dfs_momenta(params.phi())
        .into_iter()
        .map(|k| {
            let (_, _, r) = residual(k);
            msg.push(format!("decoherence-free momentum k = {k:.12} (residual {r:.3e})"));
            json!({ "k": k, "residual": r })
        })
        .collect();
    dir.json("dfs.json", &json!({ "phi": params.phi(), "momenta": momenta }))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// verify

fn verify(cfg: &RunConfig, dir: &mut OutputDir, msg: &mut Vec<String>) -> Result<()> {
    let checks = run_checks(cfg.noise.seed)?;
    let mut t = Table::new(["check", "status", "value", "tolerance"]);
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        msg.push(format!("{status} {} (value {:.3e}, tolerance {:.1e})", c.name, c.value, c.tolerance));
        t.push(vec![c.name.clone(), status.into(), fmt_f64(c.value), fmt_f64(c.tolerance)]);
    }
    dir.csv("verify.csv", &t)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(format!("failed checks: {}", failed.join(", "))))
    }
}

// ---------------------------------------------------------------------------
// sweep

fn sweep(cfg: &RunConfig, dir: &mut OutputDir, msg: &mut Vec<String>) -> Result<()> {
    let sw = cfg.sweep.as_ref().ok_or_else(|| Error::Config("sweep needs a [sweep] section".into()))?;
    let base = cfg.protocol()?;
    let thetas: Vec<f64> = if sw.theta1.is_empty() { vec![base.theta1()] } else { sw.theta1.iter().map(|a| a.0).collect() };
    let mut t = Table::new(["theta1", "sigma", "schedule", "engine", "coherent_fraction", "purity", "return_probability"]);
    for &theta1 in &thetas {
        let params = ProtocolParams::new(theta1, base.theta2(), base.phi(), base.n_sites(), base.boundary())?;
        let init = initial_state(cfg, &params)?;
        for sigma in &sw.sigmas {
            for &schedule in &sw.schedules {
                let spec = NoiseSpec::new(cfg.distribution(sigma.0), schedule, cfg.noise.seed)?;
                let (fraction, purity, ret) = match cfg.run.engine {
                    Engine::Trajectory => {
                        let opts = EnsembleOptions { record: Some(RecordMode::Stroboscopic), ..Default::default() };
                        let stats = run_ensemble(&init, &params, &spec, cfg.run.realizations, cfg.run.steps, &opts)?;
                        let last = stats.times.len() - 1;
                        let coh = stats.coherent_alpha().row(last).sum() + stats.coherent_beta().row(last).sum();
                        let inc = stats.incoherent_alpha.row(last).sum() + stats.incoherent_beta.row(last).sum();
                        (Some(coh / inc), None, None)
                    }
                    Engine::Master => {
                        let psi = init.to_interleaved();
                        let rho0 = DensityMatrix::pure(&psi, Basis::RealSpace { n_sites: params.n_sites() })?;
                        let stepper = real_stepper(&params, schedule, &spec.coefficients()?)?;
                        let obs = [Observable::Projection { label: "return".into(), vector: psi }];
                        let prop = propagate(&rho0, stepper.as_ref(), cfg.periods(), &obs)?;
                        let rho: &DMatrix<C64> = prop.final_state.entries();
                        (None, Some((rho * rho).trace().re), prop.values[0].last().map(|z| z.re))
                    }
                };
                let engine = match cfg.run.engine {
                    Engine::Trajectory => "trajectory",
                    Engine::Master => "master",
                };
                t.push(vec![
                    fmt_f64(theta1),
                    fmt_f64(sigma.0),
                    schedule.to_string(),
                    engine.into(),
                    fmt_opt(fraction),
                    fmt_opt(purity),
                    fmt_opt(ret),
                ]);
            }
        }
    }
    msg.push(format!("{} grid points", t.rows.len()));
    dir.csv("sweep_summary.csv", &t)?;
    Ok(())
}
