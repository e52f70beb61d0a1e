//! Angle-noise models, reproducible sampling and the expectation values used by
//! the averaged dynamics.
//!
//! Every random offset `τ` enters as `θ → θ + τ`. Sampling is counter based:
//! draw `d` of trajectory `t` is a pure function of `(master_seed, t, d)`, so
//! ensembles can be split across workers in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Words of ChaCha output reserved per draw. A draw consumes at most a few
/// words; the rest of the block is skipped.
const WORDS_PER_DRAW: u128 = 16;

/// Gaussian densities are integrated over `±TAIL_SIGMAS · σ`.
const TAIL_SIGMAS: f64 = 12.0;

const QUADRATURE_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseDistribution {
    /// Normal distribution with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Uniform on `[-sigma/2, sigma/2]`; `sigma` is the full width.
    Uniform { sigma: f64 },
}

impl NoiseDistribution {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseDistribution::Gaussian { sigma } | NoiseDistribution::Uniform { sigma } => sigma,
        }
    }

    fn validate(&self) -> Result<()> {
        let s = self.sigma();
        if !s.is_finite() || s < 0.0 {
            return Err(Error::InvalidParameter(format!("noise sigma must be finite and non-negative, got {s}")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            NoiseDistribution::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            NoiseDistribution::Uniform { sigma } => sigma * (rng.random::<f64>() - 0.5),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// No noise: every offset is zero.
    None,
    /// A fresh offset at every step.
    PerStep,
    /// One offset per two-step period, shared by both steps.
    Stroboscopic,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::None => "none",
            Schedule::PerStep => "per_step",
            Schedule::Stroboscopic => "stroboscopic",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNoiseSpec", into = "RawNoiseSpec")]
pub struct NoiseSpec {
    distribution: NoiseDistribution,
    schedule: Schedule,
    master_seed: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoiseSpec {
    distribution: NoiseDistribution,
    schedule: Schedule,
    master_seed: u64,
}

impl TryFrom<RawNoiseSpec> for NoiseSpec {
    type Error = Error;
    fn try_from(r: RawNoiseSpec) -> Result<Self> {
        NoiseSpec::new(r.distribution, r.schedule, r.master_seed)
    }
}

impl From<NoiseSpec> for RawNoiseSpec {
    fn from(s: NoiseSpec) -> Self {
        RawNoiseSpec { distribution: s.distribution, schedule: s.schedule, master_seed: s.master_seed }
    }
}

impl NoiseSpec {
    pub fn new(distribution: NoiseDistribution, schedule: Schedule, master_seed: u64) -> Result<Self> {
        distribution.validate()?;
        Ok(Self { distribution, schedule, master_seed })
    }

    pub fn gaussian(sigma: f64, schedule: Schedule, master_seed: u64) -> Result<Self> {
        Self::new(NoiseDistribution::Gaussian { sigma }, schedule, master_seed)
    }

    pub fn uniform(width: f64, schedule: Schedule, master_seed: u64) -> Result<Self> {
        Self::new(NoiseDistribution::Uniform { sigma: width }, schedule, master_seed)
    }

    pub fn noiseless() -> Self {
        Self { distribution: NoiseDistribution::Gaussian { sigma: 0.0 }, schedule: Schedule::None, master_seed: 0 }
    }

    pub fn distribution(&self) -> NoiseDistribution {
        self.distribution
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn with_seed(&self, master_seed: u64) -> Self {
        Self { master_seed, ..*self }
    }

    pub fn with_schedule(&self, schedule: Schedule) -> Self {
        Self { schedule, ..*self }
    }

    /// Effective spread: zero when the schedule is `None`.
    pub fn effective_sigma(&self) -> f64 {
        match self.schedule {
            Schedule::None => 0.0,
            _ => self.distribution.sigma(),
        }
    }

    /// Expectation coefficients of the distribution actually applied; the
    /// trivial set when the schedule is `None`.
    pub fn coefficients(&self) -> Result<CoefficientSet> {
        match self.schedule {
            Schedule::None => gamma_coefficients(0.0),
            _ => coefficients_for(&self.distribution),
        }
    }

    /// Offset of the `draw`-th independent sample of a trajectory.
    pub fn draw(&self, trajectory_id: u64, draw: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(trajectory_id);
        rng.set_word_pos(u128::from(draw) * WORDS_PER_DRAW);
        self.distribution.draw(&mut rng)
    }

    /// Offsets `τ_1 … τ_{n_steps}` for one trajectory.
    pub fn sample_sequence(&self, n_steps: usize, trajectory_id: u64) -> Result<Vec<f64>> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
        }
        Ok(self.sample_into(n_steps, trajectory_id))
    }

    fn sample_into(&self, n_steps: usize, trajectory_id: u64) -> Vec<f64> {
        if self.schedule == Schedule::None || self.distribution.sigma() == 0.0 {
            return vec![0.0; n_steps];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(trajectory_id);
        let mut at = |d: usize| {
            rng.set_word_pos(d as u128 * WORDS_PER_DRAW);
            self.distribution.draw(&mut rng)
        };
        match self.schedule {
            Schedule::PerStep => (0..n_steps).map(&mut at).collect(),
            Schedule::Stroboscopic => {
                let mut out = Vec::with_capacity(n_steps);
                for m in 0..n_steps {
                    if m % 2 == 0 {
                        out.push(at(m / 2));
                    } else {
                        out.push(out[m - 1]);
                    }
                }
                out
            }
            Schedule::None => unreachable!(),
        }
    }
}

/// `E[cos^a τ · sin^b τ]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrigMonomial {
    pub cos_pow: u8,
    pub sin_pow: u8,
}

impl TrigMonomial {
    pub const fn new(cos_pow: u8, sin_pow: u8) -> Self {
        Self { cos_pow, sin_pow }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let (s, c) = tau.sin_cos();
        c.powi(self.cos_pow as i32) * s.powi(self.sin_pow as i32)
    }

    /// Monomials with an explicit entry in [`CoefficientSet`].
    pub const SUPPORTED: [TrigMonomial; 10] = [
        TrigMonomial::new(1, 0),
        TrigMonomial::new(0, 1),
        TrigMonomial::new(2, 0),
        TrigMonomial::new(0, 2),
        TrigMonomial::new(1, 1),
        TrigMonomial::new(3, 0),
        TrigMonomial::new(1, 2),
        TrigMonomial::new(4, 0),
        TrigMonomial::new(0, 4),
        TrigMonomial::new(2, 2),
    ];
}

impl fmt::Display for TrigMonomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let part = |name: &str, p: u8| match p {
            0 => String::new(),
            1 => name.to_string(),
            _ => format!("{name}^{p}"),
        };
        let (c, s) = (part("cos", self.cos_pow), part("sin", self.sin_pow));
        match (c.is_empty(), s.is_empty()) {
            (true, true) => f.write_str("1"),
            (false, true) => f.write_str(&c),
            (true, false) => f.write_str(&s),
            (false, false) => write!(f, "{c}*{s}"),
        }
    }
}

/// Decay coefficients and trig moments of a noise distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    /// `E[sin²τ]`.
    pub gamma_plus: f64,
    /// `E[sin⁴τ]`.
    pub gamma_pp: f64,
    /// `E[sin²τ cos²τ]`.
    pub gamma_mm: f64,
    /// Moments of [`TrigMonomial::SUPPORTED`], in that order.
    pub moments: Vec<(TrigMonomial, f64)>,
}

impl CoefficientSet {
    fn from_moments(moments: Vec<(TrigMonomial, f64)>) -> Self {
        let get = |m: TrigMonomial| moments.iter().find(|(k, _)| *k == m).map(|(_, v)| *v).unwrap_or(0.0);
        Self {
            gamma_plus: get(TrigMonomial::new(0, 2)),
            gamma_pp: get(TrigMonomial::new(0, 4)),
            gamma_mm: get(TrigMonomial::new(2, 2)),
            moments,
        }
    }

    /// `E[cos^a τ sin^b τ]`. Odd sine powers vanish for the symmetric
    /// densities supported here.
    pub fn moment(&self, cos_pow: u8, sin_pow: u8) -> f64 {
        if sin_pow % 2 == 1 {
            return 0.0;
        }
        if cos_pow == 0 && sin_pow == 0 {
            return 1.0;
        }
        let key = TrigMonomial::new(cos_pow, sin_pow);
        match self.moments.iter().find(|(k, _)| *k == key) {
            Some((_, v)) => *v,
            None => panic!("moment {key} is not tabulated"),
        }
    }

    /// `E[cos τ]`.
    pub fn mean_cos(&self) -> f64 {
        self.moment(1, 0)
    }

    /// `E[cos² τ]`.
    pub fn mean_cos2(&self) -> f64 {
        self.moment(2, 0)
    }

    /// `E[sin² τ]`.
    pub fn mean_sin2(&self) -> f64 {
        self.moment(0, 2)
    }
}

/// Closed-form coefficients for Gaussian noise of standard deviation `sigma`.
pub fn gamma_coefficients(sigma: f64) -> Result<CoefficientSet> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameter(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    let v = sigma * sigma;
    // E[cos nτ] = exp(-n² σ² / 2)
    let c1 = (-v / 2.0).exp();
    let c2 = (-2.0 * v).exp();
    let c3 = (-4.5 * v).exp();
    let c4 = (-8.0 * v).exp();
    let m = |a, b, x: f64| (TrigMonomial::new(a, b), x);
    Ok(CoefficientSet::from_moments(vec![
        m(1, 0, c1),
        m(0, 1, 0.0),
        m(2, 0, (1.0 + c2) / 2.0),
        m(0, 2, (1.0 - c2) / 2.0),
        m(1, 1, 0.0),
        m(3, 0, (3.0 * c1 + c3) / 4.0),
        m(1, 2, (c1 - c3) / 4.0),
        m(4, 0, (3.0 + 4.0 * c2 + c4) / 8.0),
        m(0, 4, (3.0 - 4.0 * c2 + c4) / 8.0),
        m(2, 2, (1.0 - c4) / 8.0),
    ]))
}

/// `E[f(τ)]` by adaptive quadrature over the density of `dist`.
pub fn expectation(dist: &NoiseDistribution, f: impl Fn(f64) -> f64) -> Result<f64> {
    dist.validate()?;
    let sigma = dist.sigma();
    if sigma == 0.0 {
        return Ok(f(0.0));
    }
    let (out, scale) = match *dist {
        NoiseDistribution::Gaussian { sigma } => {
            let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let g = |t: f64| f(t) * norm * (-0.5 * (t / sigma).powi(2)).exp();
            // Split at zero so the peak sits on an endpoint of each half.
            let a = quadrature::integrate(g, -TAIL_SIGMAS * sigma, 0.0, QUADRATURE_TOL);
            let b = quadrature::integrate(g, 0.0, TAIL_SIGMAS * sigma, QUADRATURE_TOL);
            (
                quadrature::Output {
                    num_function_evaluations: a.num_function_evaluations + b.num_function_evaluations,
                    error_estimate: a.error_estimate + b.error_estimate,
                    integral: a.integral + b.integral,
                },
                1.0,
            )
        }
        NoiseDistribution::Uniform { sigma } => {
            (quadrature::integrate(&f, -sigma / 2.0, sigma / 2.0, QUADRATURE_TOL * sigma), 1.0 / sigma)
        }
    };
    let value = out.integral * scale;
    let err = out.error_estimate * scale;
    if !value.is_finite() || err > 1e-10 {
        return Err(Error::Quadrature(format!(
            "estimated error {err:.2e} after {} evaluations",
            out.num_function_evaluations
        )));
    }
    Ok(value)
}

/// `E[cos^a τ sin^b τ]` by quadrature for any supported distribution.
pub fn moment_quadrature(dist: &NoiseDistribution, monomial: TrigMonomial) -> Result<f64> {
    expectation(dist, |t| monomial.eval(t))
}

/// Coefficients for an arbitrary distribution: closed forms for Gaussian
/// noise, quadrature otherwise.
pub fn coefficients_for(dist: &NoiseDistribution) -> Result<CoefficientSet> {
    match *dist {
        NoiseDistribution::Gaussian { sigma } => gamma_coefficients(sigma),
        NoiseDistribution::Uniform { .. } => {
            let mut moments = Vec::with_capacity(TrigMonomial::SUPPORTED.len());
            for m in TrigMonomial::SUPPORTED {
                let v = if m.sin_pow % 2 == 1 { 0.0 } else { moment_quadrature(dist, m)? };
                moments.push((m, v));
            }
            Ok(CoefficientSet::from_moments(moments))
        }
    }
}

/// Quadrature counterpart of [`gamma_coefficients`], used as a cross-check.
pub fn coefficients_by_quadrature(dist: &NoiseDistribution) -> Result<CoefficientSet> {
    let mut moments = Vec::with_capacity(TrigMonomial::SUPPORTED.len());
    for m in TrigMonomial::SUPPORTED {
        moments.push((m, moment_quadrature(dist, m)?));
    }
    Ok(CoefficientSet::from_moments(moments))
}
