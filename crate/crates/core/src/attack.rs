//! Line-limit tightening attacks.
//!
//! A tightening vector moves each line's limit from its rating (`x = 0`)
//! down to the magnitude of its equilibrium flow (`x = 1`). Because no limit
//! drops below the flow the operator is already running, the least-cost
//! dispatch is unchanged and the attack is invisible in steady state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::powerflow::{solve_equilibrium_with_limits, DispatchState};

/// Per-line tightening parameters in `[0, 1]`, ordered by line id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TighteningVector(Vec<f64>);

impl TighteningVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidArgument(format!(
                "tightening component {i} = {v} is outside [0, 1]"
            )));
        }
        Ok(TighteningVector(values))
    }

    pub fn zeros(n: usize) -> Self {
        TighteningVector(vec![0.0; n])
    }

    pub fn ones(n: usize) -> Self {
        TighteningVector(vec![1.0; n])
    }

    /// Projects arbitrary values onto the box.
    pub fn clamped(values: Vec<f64>) -> Self {
        TighteningVector(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }

    /// Number of components above `threshold`.
    pub fn nonzero_count(&self, threshold: f64) -> usize {
        self.0.iter().filter(|v| **v > threshold).count()
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.0.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "tightening vector",
                expected,
                actual: self.0.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for TighteningVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        TighteningVector::new(v)
    }
}

impl From<TighteningVector> for Vec<f64> {
    fn from(v: TighteningVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveLimits(pub Vec<f64>);

impl EffectiveLimits {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Every limit multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        EffectiveLimits(self.0.iter().map(|l| l * factor).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetConstraint {
    lambda: f64,
}

impl BudgetConstraint {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "budget must be positive, got {lambda}"
            )));
        }
        Ok(BudgetConstraint { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `||x||_1 - lambda`; non-positive means feasible.
    pub fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v.abs()).sum::<f64>() - self.lambda
    }
}

/// Interpolates each limit between the equilibrium flow magnitude and the rating.
pub fn tighten_limits(
    x: &TighteningVector,
    equilibrium_flows: &[f64],
    ratings: &[f64],
) -> Result<EffectiveLimits> {
    let n = ratings.len();
    x.check_len(n)?;
    if equilibrium_flows.len() != n {
        return Err(Error::DimensionMismatch {
            what: "equilibrium flows",
            expected: n,
            actual: equilibrium_flows.len(),
        });
    }
    Ok(EffectiveLimits(
        x.0.iter()
            .zip(equilibrium_flows)
            .zip(ratings)
            .map(|((&xe, &f), &r)| xe * f.abs() + (1.0 - xe) * r)
            .collect(),
    ))
}

pub fn constraint_value(x: &TighteningVector, budget: &BudgetConstraint) -> f64 {
    budget.value(&x.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UndetectabilityReport {
    pub undetectable: bool,
    pub baseline_cost: f64,
    pub attacked_cost: f64,
    pub cost_relative_change: f64,
    /// `(line id, |flow change|)` for lines that moved more than the tolerance.
    pub deviating_lines: Vec<(usize, f64)>,
}

pub const COST_RTOL: f64 = 1e-6;
pub const FLOW_ATOL: f64 = 1e-6;

/// Re-solves the equilibrium under the attacked limits and compares it to the
/// baseline.
pub fn undetectability_check(
    network: &Network,
    x: &TighteningVector,
    equilibrium: &DispatchState,
) -> Result<UndetectabilityReport> {
    let limits = tighten_limits(x, &equilibrium.flows, &network.ratings())?;
    let attacked = solve_equilibrium_with_limits(network, &limits.0)?;
    let base = equilibrium.objective_cost;
    let rel = (attacked.objective_cost - base).abs() / base.abs().max(1e-12);
    let deviating_lines: Vec<(usize, f64)> = equilibrium
        .flows
        .iter()
        .zip(&attacked.flows)
        .enumerate()
        .map(|(l, (a, b))| (l, (a - b).abs()))
        .filter(|(_, d)| *d > FLOW_ATOL)
        .collect();
    Ok(UndetectabilityReport {
        undetectable: rel <= COST_RTOL && deviating_lines.is_empty(),
        baseline_cost: base,
        attacked_cost: attacked.objective_cost,
        cost_relative_change: rel,
        deviating_lines,
    })
}

/// Equilibrium flows as seen by the adversary. With `noise_std = 0` this is
/// exact observation; otherwise each magnitude is perturbed by Gaussian noise
/// and clipped to `[0, rating]`.
pub fn observed_flows<R: Rng>(
    equilibrium: &DispatchState,
    ratings: &[f64],
    noise_std: f64,
    rng: &mut R,
) -> Vec<f64> {
    equilibrium
        .flows
        .iter()
        .zip(ratings)
        .map(|(f, r)| {
            if noise_std == 0.0 {
                f.abs()
            } else {
                (f.abs() + noise_std * gaussian(rng)).clamp(0.0, *r)
            }
        })
        .collect()
}

/// Standard normal draw by Box-Muller.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::case30;
    use crate::powerflow::solve_equilibrium;
    use rand::SeedableRng;

    #[test]
    fn interpolation_endpoints() {
        let flows = [0.2, -0.3];
        let ratings = [1.0, 0.5];
        let l0 = tighten_limits(&TighteningVector::zeros(2), &flows, &ratings).unwrap();
        assert_eq!(l0.0, vec![1.0, 0.5]);
        let l1 = tighten_limits(&TighteningVector::ones(2), &flows, &ratings).unwrap();
        assert_eq!(l1.0, vec![0.2, 0.3]);
        let half = TighteningVector::new(vec![0.5, 0.0]).unwrap();
        let lh = tighten_limits(&half, &flows, &ratings).unwrap();
        assert!((lh.0[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let r = tighten_limits(&TighteningVector::zeros(3), &[0.0; 2], &[1.0; 2]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn out_of_box_rejected() {
        assert!(TighteningVector::new(vec![0.5, 1.2]).is_err());
        assert!(serde_json::from_str::<TighteningVector>("[0.1, -0.1]").is_err());
        let v: TighteningVector = serde_json::from_str("[0.1, 0.9]").unwrap();
        assert_eq!(serde_json::to_string(&v).unwrap(), "[0.1,0.9]");
    }

    #[test]
    fn constraint_values() {
        let b = BudgetConstraint::new(15.0).unwrap();
        assert_eq!(constraint_value(&TighteningVector::zeros(41), &b), -15.0);
        let mut v = vec![0.0; 41];
        v[..15].iter_mut().for_each(|x| *x = 1.0);
        assert_eq!(constraint_value(&TighteningVector::new(v).unwrap(), &b), 0.0);
        let mut v = vec![0.0; 41];
        v[..29].iter_mut().for_each(|x| *x = 0.3);
        let c = constraint_value(&TighteningVector::new(v).unwrap(), &b);
        assert!((c + 6.3).abs() < 1e-12);
        assert!(BudgetConstraint::new(0.0).is_err());
    }

    #[test]
    fn extreme_attacks_are_undetectable() {
        let net = case30();
        let eq = solve_equilibrium(&net).unwrap();
        for x in [TighteningVector::zeros(41), TighteningVector::ones(41)] {
            let rep = undetectability_check(&net, &x, &eq).unwrap();
            assert!(rep.undetectable, "{rep:?}");
        }
    }

    #[test]
    fn random_attacks_are_undetectable() {
        let net = case30();
        let eq = solve_equilibrium(&net).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = TighteningVector::new((0..41).map(|_| rng.gen()).collect()).unwrap();
            let rep = undetectability_check(&net, &x, &eq).unwrap();
            assert!(rep.undetectable, "{rep:?}");
        }
    }

    #[test]
    fn exact_observation_hook() {
        let net = case30();
        let eq = solve_equilibrium(&net).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let obs = observed_flows(&eq, &net.ratings(), 0.0, &mut rng);
        assert!(obs.iter().zip(&eq.flows).all(|(o, f)| *o == f.abs()));
        let noisy = observed_flows(&eq, &net.ratings(), 0.01, &mut rng);
        assert!(noisy.iter().zip(&net.lines).all(|(o, l)| *o >= 0.0 && *o <= l.rating));
    }
}
