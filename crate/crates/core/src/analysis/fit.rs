//! Least-squares helpers: straight lines, quadratics, Gaussian peaks.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::storage::Owned;
use nalgebra::{DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

/// `y ≈ intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub rms: f64,
}

impl LineFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares; `None` with fewer than two distinct abscissae.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    Some(LineFit { slope, intercept, rms })
}

/// Coefficients `[c0, c1, c2]` of `c0 + c1 x + c2 x²`.
pub fn fit_quadratic(x: &[f64], y: &[f64]) -> Option<[f64; 3]> {
    if x.len() < 3 {
        return None;
    }
    let a = DMatrix::from_fn(x.len(), 3, |r, c| x[r].powi(c as i32));
    let b = DVector::from_column_slice(y);
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    Some([sol[0], sol[1], sol[2]])
}

/// `amplitude · exp(−(x − center)² / (2 width²)) + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub offset: f64,
    pub rms: f64,
}

impl GaussianFit {
    pub fn fwhm(&self) -> f64 {
        2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * self.width.abs()
    }
}

struct GaussianProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    p: DVector<f64>,
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for GaussianProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, p: &DVector<f64>) {
        self.p.copy_from(p);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let (a, c, w, o) = (self.p[0], self.p[1], self.p[2], self.p[3]);
        Some(DVector::from_iterator(
            self.x.len(),
            self.x.iter().zip(self.y).map(|(x, y)| a * (-(x - c).powi(2) / (2.0 * w * w)).exp() + o - y),
        ))
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let (a, c, w) = (self.p[0], self.p[1], self.p[2]);
        let mut j = DMatrix::zeros(self.x.len(), 4);
        for (r, x) in self.x.iter().enumerate() {
            let d = x - c;
            let g = (-d * d / (2.0 * w * w)).exp();
            j[(r, 0)] = g;
            j[(r, 1)] = a * g * d / (w * w);
            j[(r, 2)] = a * g * d * d / (w * w * w);
            j[(r, 3)] = 1.0;
        }
        Some(j)
    }
}

/// Gaussian-plus-constant fit seeded from the data maximum. `None` when the
/// minimizer fails or returns a non-finite or degenerate width.
pub fn fit_gaussian(x: &[f64], y: &[f64]) -> Option<GaussianFit> {
    if x.len() < 5 || x.len() != y.len() {
        return None;
    }
    let (imax, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    // Initial width from the half-maximum crossing on either side of the peak.
    let half = ymin + 0.5 * (ymax - ymin);
    let left = (0..imax).rev().find(|&i| y[i] < half).unwrap_or(0);
    let right = (imax..y.len()).find(|&i| y[i] < half).unwrap_or(y.len() - 1);
    let w0 = ((x[right] - x[left]).abs() / 2.355).max((x[1] - x[0]).abs());
    let problem = GaussianProblem { x, y, p: DVector::from_vec(vec![ymax - ymin, x[imax], w0, ymin]) };
    let (solved, report) = LevenbergMarquardt::new().with_patience(200).minimize(problem);
    if !report.termination.was_successful() {
        return None;
    }
    let p = &solved.p;
    let rms = (2.0 * report.objective_function / x.len() as f64).sqrt();
    let fit = GaussianFit { amplitude: p[0], center: p[1], width: p[2].abs(), offset: p[3], rms };
    let finite = [fit.amplitude, fit.center, fit.width, fit.offset].iter().all(|v| v.is_finite());
    (finite && fit.width > 0.0 && fit.amplitude > 0.0).then_some(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_recovers_exact_data() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-14 && f.rms < 1e-14);
        assert!(fit_line(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn quadratic_recovers_curvature() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 0.1 * v + 0.03 * v * v).collect();
        let c = fit_quadratic(&x, &y).unwrap();
        assert!((c[2] - 0.03).abs() < 1e-10);
    }

    #[test]
    fn gaussian_recovers_parameters() {
        let x: Vec<f64> = (0..200).map(|i| -1.0 + i as f64 * 0.01).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * (-(v - 0.2f64).powi(2) / (2.0 * 0.07 * 0.07)).exp() + 0.4).collect();
        let f = fit_gaussian(&x, &y).unwrap();
        assert!((f.center - 0.2).abs() < 1e-8);
        assert!((f.width - 0.07).abs() < 1e-8);
        assert!((f.offset - 0.4).abs() < 1e-8);
        assert!((f.fwhm() - 0.07 * 2.354820045).abs() < 1e-7);
    }
}
