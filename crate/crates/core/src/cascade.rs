//! Event-driven cascade simulation after a random N-2 contingency.
//!
//! After each trip the network is re-partitioned into islands, each island is
//! rebalanced from the pre-attack dispatch, and DC flows are recomputed.
//! Every surviving line whose loading exceeds its arming threshold carries an
//! exponential failure clock; the earliest clock trips its line. The rate law
//! is pluggable through [`FailureRate`].

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{tighten_limits, EffectiveLimits, TighteningVector};
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::powerflow::{dc_power_flow_on, island_partition, rebalance, DispatchState, OutageSet};
use crate::seed;

/// Default cascade horizon in seconds.
pub const DEFAULT_T_MAX: f64 = 1e5;
/// Default number of cascades per severity estimate.
pub const DEFAULT_SIMULATIONS: usize = 200;

/// Maps a line's loading to a failure rate in events per second.
pub trait FailureRate: Sync {
    fn rate(&self, flow: f64, limit: f64) -> f64;
}

/// Overload-driven rate law: zero below `arming_threshold * limit`, otherwise
/// `base_rate * exp(steepness * (|flow| / limit - 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateModel {
    pub base_rate: f64,
    pub steepness: f64,
    pub arming_threshold: f64,
}

impl Default for RateModel {
    fn default() -> Self {
        RateModel {
            base_rate: 1e-3,
            steepness: 8.0,
            arming_threshold: 0.97,
        }
    }
}

impl RateModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return Err(Error::InvalidArgument("base_rate must be positive".into()));
        }
        if !(self.steepness >= 0.0 && self.steepness.is_finite()) {
            return Err(Error::InvalidArgument("steepness must be non-negative".into()));
        }
        if !(self.arming_threshold > 0.0 && self.arming_threshold <= 1.0) {
            return Err(Error::InvalidArgument(
                "arming_threshold must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

// exp(700) is still finite in f64.
const MAX_EXPONENT: f64 = 700.0;

pub fn line_rate(flow: f64, limit: f64, model: &RateModel) -> f64 {
    let f = flow.abs();
    if f <= model.arming_threshold * limit {
        return 0.0;
    }
    let u = if limit > 0.0 { f / limit } else { f64::INFINITY };
    let exponent = (model.steepness * (u - 1.0)).min(MAX_EXPONENT);
    model.base_rate * exponent.exp()
}

impl FailureRate for RateModel {
    fn rate(&self, flow: f64, limit: f64) -> f64 {
        line_rate(flow, limit, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    NoArmedLines,
    TimeCap,
    IslandsExhausted,
    /// The flow solve failed; the trace stops at the last consistent state.
    SolverFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripEvent {
    pub time: f64,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeTrace {
    pub initial_pair: [usize; 2],
    pub events: Vec<TripEvent>,
    pub termination: Termination,
    pub total_shed: f64,
    pub failed_count: usize,
    /// Total shed after each re-solve, starting with the post-contingency state.
    pub shed_trajectory: Vec<f64>,
    /// Largest per-island injection imbalance seen across the trace.
    pub max_imbalance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Uniform draw over unordered pairs of distinct lines, returned ascending.
pub fn sample_initial_contingency<R: Rng>(rng: &mut R, num_lines: usize) -> [usize; 2] {
    assert!(num_lines >= 2, "need at least two lines for an N-2 contingency");
    let a = rng.gen_range(0..num_lines);
    let mut b = rng.gen_range(0..num_lines - 1);
    if b >= a {
        b += 1;
    }
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

/// Runs one cascade to termination.
///
/// `dispatch` is the pre-attack equilibrium that every island is rebalanced
/// from; `limits` are the attacked limits that drive the rate law.
pub fn simulate_cascade<M: FailureRate + ?Sized, R: Rng>(
    network: &Network,
    dispatch: &DispatchState,
    limits: &EffectiveLimits,
    initial_pair: [usize; 2],
    model: &M,
    rng: &mut R,
    t_max: f64,
) -> CascadeTrace {
    let num_lines = network.num_lines();
    let mut outaged = OutageSet::from_ids(num_lines, &initial_pair);
    let mut events: Vec<TripEvent> = Vec::new();
    let mut shed_trajectory = Vec::new();
    let mut max_imbalance: f64 = 0.0;
    let mut t = 0.0_f64;
    let mut error = None;

    let termination = loop {
        let partition = island_partition(network, &outaged);
        let rb = rebalance(network, &partition, dispatch);
        max_imbalance = max_imbalance.max(rb.injection.max_imbalance(&partition));
        shed_trajectory.push(rb.total_shed());
        if outaged.len() == num_lines {
            break Termination::IslandsExhausted;
        }
        let flows = match dc_power_flow_on(network, &partition, &rb.injection) {
            Ok(sol) => sol.flows,
            Err(e) => {
                error = Some(e.to_string());
                break Termination::SolverFailure;
            }
        };

        let mut next: Option<(f64, usize)> = None;
        for l in 0..num_lines {
            if outaged.contains(l) {
                continue;
            }
            let rate = model.rate(flows[l], limits.0[l]);
            if rate <= 0.0 {
                continue;
            }
            let u: f64 = 1.0 - rng.gen::<f64>();
            let dt = -u.ln() / rate;
            // Strict comparison keeps the lowest id on ties.
            if next.map_or(true, |(best, _)| dt < best) {
                next = Some((dt, l));
            }
        }
        let Some((dt, line)) = next else {
            break Termination::NoArmedLines;
        };
        let mut t_next = t + dt;
        if t_next > t_max {
            break Termination::TimeCap;
        }
        if t_next <= t {
            t_next = t.next_up();
        }
        t = t_next;
        outaged.insert(line);
        events.push(TripEvent { time: t, line });
    };

    CascadeTrace {
        initial_pair,
        failed_count: 2 + events.len(),
        total_shed: shed_trajectory.last().copied().unwrap_or(0.0),
        events,
        termination,
        shed_trajectory,
        max_imbalance,
        error,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub simulations: usize,
    pub t_max: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            simulations: DEFAULT_SIMULATIONS,
            t_max: DEFAULT_T_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityEstimate {
    pub mean_failures: f64,
    pub std_error: f64,
    pub num_simulations: usize,
    pub solver_failures: usize,
    #[serde(skip)]
    pub traces: Vec<CascadeTrace>,
}

/// Mean number of failed lines over `options.simulations` independent cascades.
///
/// Simulation `j` draws from a stream keyed by `(master_seed, j)`, and the
/// traces are reduced in index order, so the result is the same for any
/// rayon pool size.
pub fn estimate_severity<M: FailureRate + ?Sized>(
    network: &Network,
    x: &TighteningVector,
    equilibrium: &DispatchState,
    model: &M,
    options: &SimulationOptions,
    master_seed: u64,
) -> Result<SeverityEstimate> {
    if options.simulations == 0 {
        return Err(Error::InvalidArgument("need at least one simulation".into()));
    }
    if !(options.t_max > 0.0) {
        return Err(Error::InvalidArgument("t_max must be positive".into()));
    }
    let limits = tighten_limits(x, &equilibrium.flows, &network.ratings())?;
    let traces: Vec<CascadeTrace> = (0..options.simulations)
        .into_par_iter()
        .map(|j| {
            let mut rng = seed::rng_for(master_seed, &[j as u64]);
            let pair = sample_initial_contingency(&mut rng, network.num_lines());
            simulate_cascade(network, equilibrium, &limits, pair, model, &mut rng, options.t_max)
        })
        .collect();
    Ok(summarize(traces))
}

pub(crate) fn summarize(traces: Vec<CascadeTrace>) -> SeverityEstimate {
    let m = traces.len();
    let mean = traces.iter().map(|t| t.failed_count as f64).sum::<f64>() / m as f64;
    let std_error = if m > 1 {
        let var = traces
            .iter()
            .map(|t| (t.failed_count as f64 - mean).powi(2))
            .sum::<f64>()
            / (m - 1) as f64;
        (var / m as f64).sqrt()
    } else {
        0.0
    };
    SeverityEstimate {
        mean_failures: mean,
        std_error,
        num_simulations: m,
        solver_failures: traces
            .iter()
            .filter(|t| t.termination == Termination::SolverFailure)
            .count(),
        traces,
    }
}

/// `matrix[line][position - 1]` counts traces in which `line` failed at
/// `position`; the initial pair occupies positions 1 and 2 in ascending id.
pub fn failure_order_matrix(traces: &[CascadeTrace], num_lines: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; num_lines]; num_lines];
    for trace in traces {
        let order = trace
            .initial_pair
            .iter()
            .copied()
            .chain(trace.events.iter().map(|e| e.line));
        for (pos, line) in order.enumerate() {
            m[line][pos] += 1;
        }
    }
    m
}

/// `hist[k]` counts traces with exactly `k` failed lines.
pub fn failure_histogram(traces: &[CascadeTrace], num_lines: usize) -> Vec<u64> {
    let mut h = vec![0u64; num_lines + 1];
    for t in traces {
        h[t.failed_count.min(num_lines)] += 1;
    }
    h
}
