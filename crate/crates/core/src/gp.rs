//! Gaussian-process surrogate with a Matérn 3/2 kernel and expected improvement.
//!
//! Observations are standardized before fitting (zero mean, unit variance), so
//! the prior mean is the sample mean of the data and the kernel's signal and
//! noise variances are expressed in standardized units. Every prediction is
//! returned in the original units.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const DEFAULT_NOISE_VARIANCE: f64 = 0.5;
/// Posterior standard deviations below this are treated as zero by EI.
pub const SIGMA_FLOOR: f64 = 1e-12;
const JITTER_ATTEMPTS: usize = 3;
const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    /// One shared lengthscale, or one per input dimension.
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn shared(signal_variance: f64, lengthscale: f64, noise_variance: f64) -> Self {
        KernelParams {
            signal_variance,
            lengthscales: vec![lengthscale],
            noise_variance,
        }
    }

    #[inline]
    fn lengthscale(&self, i: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[i]
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.signal_variance > 0.0) {
            return Err(Error::InvalidArgument("signal variance must be positive".into()));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::InvalidArgument("noise variance must be non-negative".into()));
        }
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidArgument("lengthscales must be positive".into()));
        }
        if self.lengthscales.len() != 1 && self.lengthscales.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "lengthscales",
                expected: dim,
                actual: self.lengthscales.len(),
            });
        }
        Ok(())
    }
}

#[inline]
fn scaled_distance(a: &[f64], b: &[f64], params: &KernelParams) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| {
            let d = (x - y) / params.lengthscale(i);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn matern32_value(a: &[f64], b: &[f64], params: &KernelParams) -> f64 {
    let s = SQRT3 * scaled_distance(a, b, params);
    params.signal_variance * (1.0 + s) * (-s).exp()
}

/// Kernel value and its gradient with respect to `a`.
pub fn matern32(a: &[f64], b: &[f64], params: &KernelParams) -> (f64, Vec<f64>) {
    let s = SQRT3 * scaled_distance(a, b, params);
    let e = (-s).exp();
    let value = params.signal_variance * (1.0 + s) * e;
    // d/da_i = -3 sf2 exp(-s) (a_i - b_i) / l_i^2, smooth through r = 0.
    let grad = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| {
            let l = params.lengthscale(i);
            -3.0 * params.signal_variance * e * (x - y) / (l * l)
        })
        .collect();
    (value, grad)
}

#[derive(Debug)]
pub struct GpPosterior {
    dim: usize,
    inputs: Vec<Vec<f64>>,
    observations: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    params: KernelParams,
    /// Lower Cholesky factor of `K + noise I` (plus jitter, if any).
    chol: DMatrix<f64>,
    /// `(K + noise I)^-1 (y - m)` in standardized units.
    weights: DVector<f64>,
    jitter: f64,
    clamp_events: AtomicU64,
}

impl Clone for GpPosterior {
    fn clone(&self) -> Self {
        GpPosterior {
            dim: self.dim,
            inputs: self.inputs.clone(),
            observations: self.observations.clone(),
            y_mean: self.y_mean,
            y_scale: self.y_scale,
            params: self.params.clone(),
            chol: self.chol.clone(),
            weights: self.weights.clone(),
            jitter: self.jitter,
            clamp_events: AtomicU64::new(self.clamp_events.load(Ordering::Relaxed)),
        }
    }
}

/// Posterior moments at one point with their input gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    pub mean_grad: Vec<f64>,
    pub variance_grad: Vec<f64>,
}

fn standardization(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

pub fn fit(x: &[Vec<f64>], y: &[f64], params: &KernelParams) -> Result<GpPosterior> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("fit needs at least one observation".into()));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "observations",
            expected: x.len(),
            actual: y.len(),
        });
    }
    let dim = x[0].len();
    if let Some(bad) = x.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            what: "training point",
            expected: dim,
            actual: bad.len(),
        });
    }
    params.validate(dim)?;
    let n = x.len();
    let (y_mean, y_scale) = standardization(y);
    let z = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_scale));

    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = matern32_value(&x[i], &x[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += params.noise_variance;
    }
    let base_jitter = 1e-8 * k.trace() / n as f64;
    let mut jitter = 0.0;
    let mut chol = None;
    for attempt in 0..=JITTER_ATTEMPTS {
        if attempt > 0 {
            jitter = base_jitter * 10f64.powi(attempt as i32 - 1);
        }
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = kj.cholesky() {
            chol = Some(c);
            break;
        }
    }
    let chol = chol.ok_or(Error::IllConditioned {
        attempts: JITTER_ATTEMPTS,
    })?;
    let weights = chol.solve(&z);
    Ok(GpPosterior {
        dim,
        inputs: x.to_vec(),
        observations: y.to_vec(),
        y_mean,
        y_scale,
        params: params.clone(),
        chol: chol.l(),
        weights,
        jitter,
        clamp_events: AtomicU64::new(0),
    })
}

impl GpPosterior {
    /// Surrogate with no data: zero prior mean, prior kernel variance.
    pub fn prior(dim: usize, params: &KernelParams) -> Result<Self> {
        params.validate(dim)?;
        Ok(GpPosterior {
            dim,
            inputs: Vec::new(),
            observations: Vec::new(),
            y_mean: 0.0,
            y_scale: 1.0,
            params: params.clone(),
            chol: DMatrix::zeros(0, 0),
            weights: DVector::zeros(0),
            jitter: 0.0,
            clamp_events: AtomicU64::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn prior_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Number of predictions whose variance was clamped at zero.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    /// Largest observation, the incumbent for EI.
    pub fn best_observation(&self) -> Option<f64> {
        self.observations.iter().copied().reduce(f64::max)
    }

    /// Refits with one more observation, keeping the kernel parameters.
    pub fn with_observation(&self, x: Vec<f64>, y: f64) -> Result<Self> {
        let mut xs = self.inputs.clone();
        let mut ys = self.observations.clone();
        xs.push(x);
        ys.push(y);
        fit(&xs, &ys, &self.params)
    }

    fn check_dim(&self, x: &[f64]) {
        assert_eq!(x.len(), self.dim, "query dimension mismatch");
    }

    /// Posterior mean and variance without gradients.
    pub fn moments(&self, x: &[f64]) -> (f64, f64) {
        self.check_dim(x);
        let prior_var = self.params.signal_variance;
        if self.inputs.is_empty() {
            return (self.y_mean, prior_var);
        }
        let kvec = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|xi| matern32_value(x, xi, &self.params)),
        );
        let mean = self.y_mean + self.y_scale * kvec.dot(&self.weights);
        let v = self
            .chol
            .solve_lower_triangular(&kvec)
            .expect("factor has a non-zero diagonal");
        let var = prior_var - v.dot(&v);
        (mean, self.y_scale * self.y_scale * self.clamp(var))
    }

    fn clamp(&self, var: f64) -> f64 {
        if var < 0.0 {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
            0.0
        } else {
            var
        }
    }

    pub fn predict(&self, x: &[f64]) -> Prediction {
        self.check_dim(x);
        let d = self.dim;
        let prior_var = self.params.signal_variance;
        let n = self.inputs.len();
        if n == 0 {
            return Prediction {
                mean: self.y_mean,
                variance: prior_var,
                mean_grad: vec![0.0; d],
                variance_grad: vec![0.0; d],
            };
        }
        let mut kvec = DVector::zeros(n);
        let mut kgrad = Vec::with_capacity(n);
        for (i, xi) in self.inputs.iter().enumerate() {
            let (v, g) = matern32(x, xi, &self.params);
            kvec[i] = v;
            kgrad.push(g);
        }
        let v = self
            .chol
            .solve_lower_triangular(&kvec)
            .expect("factor has a non-zero diagonal");
        let w = self
            .chol
            .tr_solve_lower_triangular(&v)
            .expect("factor has a non-zero diagonal");
        let s2 = self.y_scale * self.y_scale;
        let mean = self.y_mean + self.y_scale * kvec.dot(&self.weights);
        let raw_var = prior_var - v.dot(&v);
        let variance = s2 * self.clamp(raw_var);
        let mut mean_grad = vec![0.0; d];
        let mut variance_grad = vec![0.0; d];
        for (i, g) in kgrad.iter().enumerate() {
            let (a, b) = (self.weights[i], w[i]);
            for k in 0..d {
                mean_grad[k] += a * g[k];
                variance_grad[k] += b * g[k];
            }
        }
        for k in 0..d {
            mean_grad[k] *= self.y_scale;
            variance_grad[k] *= if raw_var > 0.0 { -2.0 * s2 } else { 0.0 };
        }
        Prediction {
            mean,
            variance,
            mean_grad,
            variance_grad,
        }
    }

    /// Log marginal likelihood of the standardized observations.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.inputs.len();
        if n == 0 {
            return 0.0;
        }
        let z = DVector::from_iterator(
            n,
            self.observations.iter().map(|v| (v - self.y_mean) / self.y_scale),
        );
        let logdet: f64 = (0..n).map(|i| self.chol[(i, i)].ln()).sum();
        -0.5 * z.dot(&self.weights) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

pub fn posterior(gp: &GpPosterior, x: &[f64]) -> Prediction {
    gp.predict(x)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Closed-form `E[max(Y - best, 0)]` for `Y ~ N(mean, sigma^2)`.
pub fn ei_from_moments(mean: f64, sigma: f64, best: f64) -> f64 {
    let gap = mean - best;
    if sigma < SIGMA_FLOOR {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (sigma * normal_pdf(z) + gap * normal_cdf(z)).max(0.0)
}

/// Expected improvement over `best` and its gradient. Below the sigma floor
/// the value is `max(mean - best, 0)` with gradient `grad mean` when the mean
/// is strictly above `best` and zero otherwise.
pub fn expected_improvement(gp: &GpPosterior, x: &[f64], best: f64) -> (f64, Vec<f64>) {
    let p = gp.predict(x);
    let sigma = p.variance.sqrt();
    let gap = p.mean - best;
    if sigma < SIGMA_FLOOR {
        return if gap > 0.0 {
            (gap, p.mean_grad)
        } else {
            (0.0, vec![0.0; x.len()])
        };
    }
    let z = gap / sigma;
    let (pdf, cdf) = (normal_pdf(z), normal_cdf(z));
    let value = (sigma * pdf + gap * cdf).max(0.0);
    let grad = p
        .mean_grad
        .iter()
        .zip(&p.variance_grad)
        .map(|(dm, dv)| cdf * dm + pdf * dv / (2.0 * sigma))
        .collect();
    (value, grad)
}

/// Log-spaced candidate lengthscales for inputs in the unit cube of `dim`
/// dimensions.
pub fn lengthscale_grid(dim: usize) -> Vec<f64> {
    let scale = (dim.max(1) as f64).sqrt();
    let (lo, hi) = (0.05f64.ln(), 10f64.ln());
    (0..16)
        .map(|i| scale * (lo + (hi - lo) * i as f64 / 15.0).exp())
        .collect()
}

/// Picks the shared lengthscale with the highest marginal likelihood.
pub fn select_lengthscale(
    x: &[Vec<f64>],
    y: &[f64],
    signal_variance: f64,
    noise_variance: f64,
) -> Result<f64> {
    let dim = x.first().map_or(1, |p| p.len());
    let mut best: Option<(f64, f64)> = None;
    for l in lengthscale_grid(dim) {
        let params = KernelParams::shared(signal_variance, l, noise_variance);
        let Ok(gp) = fit(x, y, &params) else { continue };
        let lml = gp.log_marginal_likelihood();
        if best.map_or(true, |(b, _)| lml > b) {
            best = Some((lml, l));
        }
    }
    best.map(|(_, l)| l).ok_or(Error::IllConditioned {
        attempts: JITTER_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> KernelParams {
        KernelParams::shared(1.0, 1.0, 0.0)
    }

    #[test]
    fn kernel_examples() {
        let (v, g) = matern32(&[0.3, 0.4], &[0.3, 0.4], &unit());
        assert_eq!(v, 1.0);
        assert!(g.iter().all(|x| *x == 0.0));
        let (v, _) = matern32(&[0.0], &[100.0], &unit());
        assert!(v < 1e-40);
        let (v, _) = matern32(&[0.0], &[1.0], &unit());
        let expect = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.483_357_724_596_507_7).abs() < 1e-15);
    }

    #[test]
    fn single_point_factor() {
        let p = KernelParams::shared(2.0, 0.5, 0.5);
        let gp = fit(&[vec![0.2, 0.7]], &[3.0], &p).unwrap();
        assert!((gp.chol[(0, 0)] - 2.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn duplicates_with_noise_fit() {
        let p = KernelParams::shared(1.0, 0.3, 0.5);
        let x = vec![vec![0.5], vec![0.5], vec![0.1]];
        assert!(fit(&x, &[1.0, 2.0, 0.0], &p).is_ok());
    }

    #[test]
    fn interpolates_without_noise() {
        let x = vec![vec![0.1], vec![0.5], vec![0.9]];
        let y = [1.0, -2.0, 0.5];
        let gp = fit(&x, &y, &KernelParams::shared(1.0, 0.3, 0.0)).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (m, v) = gp.moments(xi);
            assert!((m - yi).abs() < 1e-8);
            assert!(v <= 1e-8);
        }
    }

    #[test]
    fn prior_prediction() {
        let p = KernelParams::shared(1.7, 0.3, 0.5);
        let gp = GpPosterior::prior(2, &p).unwrap();
        let (m, v) = gp.moments(&[0.2, 0.2]);
        assert_eq!((m, v), (0.0, 1.7));
    }

    #[test]
    fn ei_anchors() {
        assert!((ei_from_moments(1.0, 1.0, 1.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert_eq!(ei_from_moments(2.0, 0.0, 1.0), 1.0);
        assert_eq!(ei_from_moments(0.0, 0.0, 1.0), 0.0);
        let v = ei_from_moments(0.0, 1.0, 1.0);
        assert!((v - (normal_pdf(-1.0) - normal_cdf(-1.0))).abs() < 1e-15);
        assert!((v - 0.08332).abs() < 1e-5);
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = lengthscale_grid(4);
        assert_eq!(g.len(), 16);
        assert!((g[0] - 0.1).abs() < 1e-12 && (g[15] - 20.0).abs() < 1e-9);
    }
}
