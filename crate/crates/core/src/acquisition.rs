//! Acquisition maximization over the unit box and over the box intersected
//! with an l1 ball, plus the exact-penalty transform of observations.
//!
//! The box maximizer is a multistart projected L-BFGS ascent. The l1 variant
//! is a log-barrier interior-point method whose inner solves use the same
//! quasi-Newton update with fraction-to-boundary line searches, so every
//! iterate is strictly feasible.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::BudgetConstraint;
use crate::error::{Error, Result};
use crate::gp::{expected_improvement, GpPosterior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Relative improvement below which an ascent is considered converged.
    pub improvement_tolerance: f64,
    pub num_restarts: usize,
    pub barrier_initial: f64,
    pub barrier_decay: f64,
    pub barrier_final: f64,
    pub inner_tolerance: f64,
    /// L-BFGS memory length.
    pub history: usize,
    /// Scrambling seed for the restart sequence.
    pub seed: u32,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iterations: 2000,
            improvement_tolerance: 0.01,
            num_restarts: 16,
            barrier_initial: 0.1,
            barrier_decay: 0.1,
            barrier_final: 1e-9,
            inner_tolerance: 1e-10,
            history: 10,
            seed: 0,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.improvement_tolerance > 0.0
            && self.num_restarts > 0
            && self.barrier_initial > 0.0
            && self.barrier_decay > 0.0
            && self.barrier_decay < 1.0
            && self.barrier_final > 0.0
            && self.inner_tolerance > 0.0
            && self.history > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "optimizer settings must be positive (barrier_decay in (0, 1))".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySettings {
    rho: f64,
}

impl PenaltySettings {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
        }
        Ok(PenaltySettings { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// `y + rho * min(lambda - ||x||_1, 0)`: unchanged on feasible points.
pub fn penalize_observation(
    y: f64,
    x: &[f64],
    budget: &BudgetConstraint,
    penalty: &PenaltySettings,
) -> f64 {
    y + penalty.rho * (-budget.value(x)).min(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub point: Vec<f64>,
    pub value: f64,
    pub restart: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    pub point: Vec<f64>,
    pub value: f64,
    /// Every restart's end point, best first (ties by restart index).
    pub candidates: Vec<Candidate>,
    /// Best objective value among the restart seed points.
    pub best_seed_value: f64,
}

/// Scrambled Sobol points in `[0, 1)^dim`.
pub fn sobol_points(count: usize, dim: usize, seed: u32) -> Vec<Vec<f64>> {
    assert!(dim <= sobol_burley::NUM_DIMENSIONS as usize, "dimension too large for Sobol");
    (0..count)
        .map(|i| {
            (0..dim)
                .map(|d| sobol_burley::sample(i as u32, d as u32, seed) as f64)
                .collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS two-loop recursion: approximates `H g` for the stored pairs.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y) in memory.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push((a, rho));
    }
    if let Some((s, y)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y), (a, rho)) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

struct Ascent {
    x: Vec<f64>,
    value: f64,
}

/// Projected L-BFGS ascent on `[0, 1]^d`.
fn ascend_box<F>(f: &F, x0: &[f64], settings: &OptimizerSettings) -> Ascent
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let d = x0.len();
    let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let (mut fx, mut g) = f(&x);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut stalls = 0;
    for _ in 0..settings.max_iterations {
        let free: Vec<bool> = (0..d)
            .map(|i| !((x[i] <= 0.0 && g[i] < 0.0) || (x[i] >= 1.0 && g[i] > 0.0)))
            .collect();
        let pg: f64 = (0..d).filter(|&i| free[i]).map(|i| g[i] * g[i]).sum::<f64>().sqrt();
        if !(pg > 1e-14) {
            break;
        }
        // Quasi-Newton ascent direction on the free variables.
        let masked: Vec<f64> = (0..d).map(|i| if free[i] { g[i] } else { 0.0 }).collect();
        let mut dir = two_loop(&masked, &memory);
        for i in 0..d {
            if !free[i] {
                dir[i] = 0.0;
            }
        }
        if !(dot(&dir, &g) > 0.0) {
            memory.clear();
            dir = masked;
        }
        let dmax = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut t = if memory.is_empty() { (0.25 / dmax).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x
                .iter()
                .zip(&dir)
                .map(|(xi, di)| (xi + t * di).clamp(0.0, 1.0))
                .collect();
            let (fnew, gnew) = f(&xn);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if fnew >= fx + 1e-4 * dot(&g, &step) && fnew >= fx {
                accepted = Some((xn, fnew, gnew, step));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew, step)) = accepted else {
            break;
        };
        // Curvature pair for minimizing -f.
        let yv: Vec<f64> = g.iter().zip(&gnew).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &yv);
        if sy > 1e-12 * dot(&yv, &yv).sqrt() * dot(&step, &step).sqrt() && sy > 0.0 {
            if memory.len() == settings.history {
                memory.pop_front();
            }
            memory.push_back((step.clone(), yv));
        }
        let rel = (fnew - fx) / fx.abs().max(fnew.abs()).max(1e-300);
        let moved = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        x = xn;
        fx = fnew;
        g = gnew;
        if rel < settings.improvement_tolerance {
            stalls += 1;
            if stalls >= 2 {
                break;
            }
        } else {
            stalls = 0;
        }
        if moved < 1e-12 {
            break;
        }
    }
    Ascent { x, value: fx }
}

fn reduce(results: Vec<Ascent>, best_seed_value: f64) -> AcquisitionResult {
    let mut candidates: Vec<Candidate> = results
        .into_iter()
        .enumerate()
        .map(|(restart, a)| Candidate {
            point: a.x,
            value: a.value,
            restart,
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.value
            .partial_cmp(&a.value)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.restart.cmp(&b.restart))
    });
    AcquisitionResult {
        point: candidates[0].point.clone(),
        value: candidates[0].value,
        candidates,
        best_seed_value,
    }
}

/// Maximizes a smooth function over `[0, 1]^dim` from Sobol restarts.
pub fn maximize_box<F>(f: F, dim: usize, settings: &OptimizerSettings) -> AcquisitionResult
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    let seeds = sobol_points(settings.num_restarts, dim, settings.seed);
    let results: Vec<Ascent> = seeds
        .par_iter()
        .map(|x0| ascend_box(&f, x0, settings))
        .collect();
    let best_seed_value = seeds
        .iter()
        .map(|s| f(s).0)
        .fold(f64::NEG_INFINITY, f64::max);
    reduce(results, best_seed_value)
}

pub fn maximize_acquisition_box(
    gp: &GpPosterior,
    best: f64,
    settings: &OptimizerSettings,
) -> AcquisitionResult {
    maximize_box(|x| expected_improvement(gp, x, best), gp.dim(), settings)
}

/// Strictly interior starting points for the l1-constrained problem.
pub fn interior_seeds(count: usize, dim: usize, lambda: f64, seed: u32) -> Vec<Vec<f64>> {
    sobol_points(count, dim, seed)
        .into_iter()
        .map(|u| {
            let mut v: Vec<f64> = u.iter().map(|x| 0.02 + 0.96 * x).collect();
            let s: f64 = v.iter().sum();
            if s >= 0.9 * lambda {
                let k = 0.9 * lambda / s;
                v.iter_mut().for_each(|x| *x *= k);
            }
            v
        })
        .collect()
}

fn interior(x: &[f64], lambda: f64) -> bool {
    x.iter().all(|v| *v > 0.0 && *v < 1.0) && x.iter().sum::<f64>() < lambda
}

/// Barrier-augmented objective `f/scale + mu * (log slack terms)`.
fn barrier_eval<F>(f: &F, x: &[f64], lambda: f64, mu: f64, scale: f64) -> (f64, Vec<f64>)
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if !interior(x, lambda) {
        return (f64::NEG_INFINITY, vec![0.0; x.len()]);
    }
    let (v, g) = f(x);
    let slack = lambda - x.iter().sum::<f64>();
    let mut phi = v / scale + mu * slack.ln();
    let mut grad = Vec::with_capacity(x.len());
    for (xi, gi) in x.iter().zip(&g) {
        phi += mu * (xi.ln() + (1.0 - xi).ln());
        grad.push(gi / scale + mu * (-1.0 / slack + 1.0 / xi - 1.0 / (1.0 - xi)));
    }
    (phi, grad)
}

/// Largest step along `dir` that stays inside the open feasible set, times 0.99.
fn step_to_boundary(x: &[f64], dir: &[f64], lambda: f64) -> f64 {
    let mut t = f64::INFINITY;
    for (xi, di) in x.iter().zip(dir) {
        if *di < 0.0 {
            t = t.min(-xi / di);
        } else if *di > 0.0 {
            t = t.min((1.0 - xi) / di);
        }
    }
    let ds: f64 = dir.iter().sum();
    if ds > 0.0 {
        t = t.min((lambda - x.iter().sum::<f64>()) / ds);
    }
    0.99 * t
}

fn ascend_barrier<F>(
    f: &F,
    x0: &[f64],
    lambda: f64,
    scale: f64,
    settings: &OptimizerSettings,
) -> Ascent
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    let mut mu = settings.barrier_initial;
    loop {
        let (mut phi, mut g) = barrier_eval(f, &x, lambda, mu, scale);
        let mut memory: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
        for _ in 0..settings.max_iterations {
            let mut dir = two_loop(&g, &memory);
            if !(dot(&dir, &g) > 0.0) {
                memory.clear();
                dir = g.clone();
            }
            let mut t = step_to_boundary(&x, &dir, lambda).min(1.0);
            if memory.is_empty() {
                let dmax = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                t = t.min(0.25 / dmax);
            }
            let slope = dot(&g, &dir);
            let mut accepted = None;
            for _ in 0..60 {
                let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                let (pn, gn) = barrier_eval(f, &xn, lambda, mu, scale);
                if pn.is_finite() && pn >= phi + 1e-4 * t * slope {
                    accepted = Some((xn, pn, gn));
                    break;
                }
                t *= 0.5;
            }
            let Some((xn, pn, gn)) = accepted else {
                break;
            };
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = g.iter().zip(&gn).map(|(a, b)| a - b).collect();
            if dot(&step, &yv) > 1e-16 {
                if memory.len() == settings.history {
                    memory.pop_front();
                }
                memory.push_back((step, yv));
            }
            let gain = pn - phi;
            x = xn;
            phi = pn;
            g = gn;
            if gain <= settings.inner_tolerance * (1.0 + phi.abs()) {
                break;
            }
        }
        mu *= settings.barrier_decay;
        if mu < settings.barrier_final {
            break;
        }
    }
    let (value, _) = f(&x);
    Ascent { x, value }
}

/// Maximizes a smooth function over `{x in [0,1]^dim : sum x <= lambda}`.
///
/// When `lambda >= dim` the budget cannot bind and the box maximizer is used.
pub fn maximize_l1<F>(
    f: F,
    dim: usize,
    budget: &BudgetConstraint,
    settings: &OptimizerSettings,
) -> AcquisitionResult
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    let lambda = budget.lambda();
    if lambda >= dim as f64 {
        return maximize_box(f, dim, settings);
    }
    let seeds = interior_seeds(settings.num_restarts, dim, lambda, settings.seed);
    let seed_values: Vec<f64> = seeds.iter().map(|s| f(s).0).collect();
    let best_seed_value = seed_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if best_seed_value.abs() > 1e-300 {
        best_seed_value.abs()
    } else {
        1.0
    };
    let results: Vec<Ascent> = seeds
        .par_iter()
        .map(|x0| ascend_barrier(&f, x0, lambda, scale, settings))
        .collect();
    reduce(results, best_seed_value)
}

pub fn maximize_acquisition_l1(
    gp: &GpPosterior,
    best: f64,
    budget: &BudgetConstraint,
    settings: &OptimizerSettings,
) -> AcquisitionResult {
    maximize_l1(
        |x| expected_improvement(gp, x, best),
        gp.dim(),
        budget,
        settings,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(center: Vec<f64>) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + Sync {
        move |x: &[f64]| {
            let v = -x.iter().zip(&center).map(|(a, c)| (a - c).powi(2)).sum::<f64>();
            let g = x.iter().zip(&center).map(|(a, c)| -2.0 * (a - c)).collect();
            (v, g)
        }
    }

    #[test]
    fn box_ascent_finds_interior_and_clipped_optima() {
        let s = OptimizerSettings::default();
        let r = maximize_box(quad(vec![0.3, 0.8]), 2, &s);
        assert!((r.point[0] - 0.3).abs() < 1e-4 && (r.point[1] - 0.8).abs() < 1e-4);
        let r = maximize_box(quad(vec![1.5, -0.5, 0.5]), 3, &s);
        assert_eq!(r.point[0], 1.0);
        assert_eq!(r.point[1], 0.0);
        assert!(r.value >= r.best_seed_value);
    }

    #[test]
    fn barrier_respects_budget() {
        let s = OptimizerSettings::default();
        let b = BudgetConstraint::new(0.5).unwrap();
        let r = maximize_l1(quad(vec![0.9, 0.9]), 2, &b, &s);
        let sum: f64 = r.point.iter().sum();
        assert!(sum <= 0.5 + 1e-9);
        assert!((sum - 0.5).abs() < 1e-4, "{sum}");
        assert!((r.point[0] - 0.25).abs() < 1e-3);
    }

    #[test]
    fn penalty_examples() {
        let b = BudgetConstraint::new(15.0).unwrap();
        let p = PenaltySettings::new(2.0).unwrap();
        assert_eq!(penalize_observation(10.0, &[0.3; 29], &b, &p), 10.0);
        let x = vec![0.5; 40];
        assert_eq!(penalize_observation(10.0, &x, &b, &p), 0.0);
        assert!(PenaltySettings::new(0.0).is_err());
    }

    #[test]
    fn sobol_points_are_deterministic_and_in_box() {
        let a = sobol_points(8, 41, 3);
        assert_eq!(a, sobol_points(8, 41, 3));
        assert!(a.iter().flatten().all(|v| (0.0..1.0).contains(v)));
        let seeds = interior_seeds(8, 41, 15.0, 3);
        assert!(seeds.iter().all(|s| interior(s, 15.0)));
    }
}
