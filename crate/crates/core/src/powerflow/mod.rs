//! DC power flow, island handling and the DC-OPF equilibrium.
//!
//! The equilibrium is the least-cost dispatch under DC power balance,
//! generator bounds and `|flow| <= limit`. Quadratic costs enter the linear
//! program as convex piecewise-linear envelopes.

pub mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{connected_components, Network};
use simplex::{LinearProgram, LpOutcome, Sense};

pub const BALANCE_TOL: f64 = 1e-8;
pub const SOLVE_TOL: f64 = 1e-8;
/// Number of linear pieces approximating each quadratic cost curve.
pub const COST_SEGMENTS: usize = 8;

/// Set of tripped lines, stored as a mask over line ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutageSet {
    mask: Vec<bool>,
    count: usize,
}

impl OutageSet {
    pub fn none(num_lines: usize) -> Self {
        OutageSet {
            mask: vec![false; num_lines],
            count: 0,
        }
    }

    pub fn from_ids(num_lines: usize, ids: &[usize]) -> Self {
        let mut s = Self::none(num_lines);
        for &id in ids {
            s.insert(id);
        }
        s
    }

    pub fn insert(&mut self, id: usize) -> bool {
        if self.mask[id] {
            return false;
        }
        self.mask[id] = true;
        self.count += 1;
        true
    }

    pub fn contains(&self, id: usize) -> bool {
        self.mask[id]
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn num_lines(&self) -> usize {
        self.mask.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IslandPartition {
    /// Bus sets, each ascending; islands ordered by their lowest bus.
    pub components: Vec<Vec<usize>>,
    pub bus_island: Vec<usize>,
    /// Island of every surviving line, `None` for outaged lines.
    pub line_island: Vec<Option<usize>>,
}

impl IslandPartition {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

pub fn island_partition(network: &Network, outaged: &OutageSet) -> IslandPartition {
    let n = network.num_buses();
    let components = connected_components(
        n,
        network
            .lines
            .iter()
            .filter(|l| l.in_service && !outaged.contains(l.id))
            .map(|l| (l.from_bus, l.to_bus)),
    );
    let mut bus_island = vec![0; n];
    for (k, comp) in components.iter().enumerate() {
        for &b in comp {
            bus_island[b] = k;
        }
    }
    let line_island = network
        .lines
        .iter()
        .map(|l| {
            if l.in_service && !outaged.contains(l.id) {
                Some(bus_island[l.from_bus])
            } else {
                None
            }
        })
        .collect();
    IslandPartition {
        components,
        bus_island,
        line_island,
    }
}

/// Net active injection per bus (generation minus served demand).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection(pub Vec<f64>);

impl Injection {
    /// Largest absolute per-island sum of injections.
    pub fn max_imbalance(&self, partition: &IslandPartition) -> f64 {
        partition
            .components
            .iter()
            .map(|c| c.iter().map(|&b| self.0[b]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchState {
    pub generation: Vec<f64>,
    pub angles: Vec<f64>,
    pub flows: Vec<f64>,
    pub objective_cost: f64,
}

impl DispatchState {
    pub fn injection(&self, network: &Network) -> Injection {
        let mut p = network.bus_demand();
        for v in p.iter_mut() {
            *v = -*v;
        }
        for (g, gen) in network.generators.iter().enumerate() {
            p[gen.bus] += self.generation[g];
        }
        Injection(p)
    }
}

/// Result of redistributing the pre-outage dispatch over islands.
#[derive(Debug, Clone, PartialEq)]
pub struct Rebalance {
    pub injection: Injection,
    pub generation: Vec<f64>,
    /// Load shed in each island, in per-unit.
    pub island_shed: Vec<f64>,
}

impl Rebalance {
    pub fn total_shed(&self) -> f64 {
        self.island_shed.iter().sum()
    }
}

/// Restores per-island balance starting from `dispatch`.
///
/// Generators move a common fraction of their headroom (up toward `p_max`
/// or down toward `p_min`). Islands short of capacity run every generator at
/// `p_max` and shed load proportionally. Islands without generation, or whose
/// demand sits below the sum of `p_min`, black out entirely.
pub fn rebalance(
    network: &Network,
    partition: &IslandPartition,
    dispatch: &DispatchState,
) -> Rebalance {
    let k = partition.len();
    let demand = network.bus_demand();
    let mut island_demand = vec![0.0; k];
    let mut island_gen = vec![0.0; k];
    let mut island_cap = vec![0.0; k];
    let mut island_min = vec![0.0; k];
    let mut island_has_gen = vec![false; k];
    for (b, d) in demand.iter().enumerate() {
        island_demand[partition.bus_island[b]] += d;
    }
    for (g, gen) in network.generators.iter().enumerate() {
        let i = partition.bus_island[gen.bus];
        island_gen[i] += dispatch.generation[g];
        island_cap[i] += gen.p_max;
        island_min[i] += gen.p_min;
        island_has_gen[i] = true;
    }

    // Per island: fraction of demand served, and the headroom step.
    enum Plan {
        Blackout,
        Short,
        Up(f64),
        Down(f64),
    }
    let plans: Vec<Plan> = (0..k)
        .map(|i| {
            let (d, g0, cap, pmin) = (island_demand[i], island_gen[i], island_cap[i], island_min[i]);
            if !island_has_gen[i] || d < pmin {
                Plan::Blackout
            } else if cap < d {
                Plan::Short
            } else if d >= g0 {
                let room = cap - g0;
                Plan::Up(if room > 0.0 { (d - g0) / room } else { 0.0 })
            } else {
                let room = g0 - pmin;
                Plan::Down(if room > 0.0 { (g0 - d) / room } else { 0.0 })
            }
        })
        .collect();

    let mut generation = vec![0.0; network.generators.len()];
    for (g, gen) in network.generators.iter().enumerate() {
        let p0 = dispatch.generation[g];
        generation[g] = match plans[partition.bus_island[gen.bus]] {
            Plan::Blackout => 0.0,
            Plan::Short => gen.p_max,
            Plan::Up(beta) => p0 + beta * (gen.p_max - p0),
            Plan::Down(beta) => p0 - beta * (p0 - gen.p_min),
        };
    }
    let mut island_shed = vec![0.0; k];
    let mut served = demand.clone();
    for (b, d) in demand.iter().enumerate() {
        let i = partition.bus_island[b];
        match plans[i] {
            Plan::Blackout => {
                served[b] = 0.0;
                island_shed[i] += d;
            }
            Plan::Short => {
                let frac = island_cap[i] / island_demand[i];
                served[b] = d * frac;
                island_shed[i] += d - served[b];
            }
            _ => {}
        }
    }
    let mut p: Vec<f64> = served.iter().map(|d| -d).collect();
    for (g, gen) in network.generators.iter().enumerate() {
        p[gen.bus] += generation[g];
    }
    // Absorb floating-point residue at the island's lowest bus so that the
    // balance holds to rounding.
    for (i, comp) in partition.components.iter().enumerate() {
        if matches!(plans[i], Plan::Blackout) {
            for &b in comp {
                p[b] = 0.0;
            }
            continue;
        }
        let residue: f64 = comp.iter().map(|&b| p[b]).sum();
        if residue.abs() <= BALANCE_TOL {
            p[comp[0]] -= residue;
        }
    }
    Rebalance {
        injection: Injection(p),
        generation,
        island_shed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub angles: Vec<f64>,
    pub flows: Vec<f64>,
}

/// Solves `B' theta = P` island by island with the lowest bus of each island
/// as its zero-angle reference.
pub fn dc_power_flow(
    network: &Network,
    outaged: &OutageSet,
    injection: &Injection,
) -> Result<FlowSolution> {
    let partition = island_partition(network, outaged);
    dc_power_flow_on(network, &partition, injection)
}

pub(crate) fn dc_power_flow_on(
    network: &Network,
    partition: &IslandPartition,
    injection: &Injection,
) -> Result<FlowSolution> {
    let n = network.num_buses();
    if injection.0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "injection",
            expected: n,
            actual: injection.0.len(),
        });
    }
    let mut angles = vec![0.0; n];
    let mut local = vec![usize::MAX; n];
    for (i, comp) in partition.components.iter().enumerate() {
        let imbalance: f64 = comp.iter().map(|&b| injection.0[b]).sum();
        if imbalance.abs() > BALANCE_TOL {
            return Err(Error::InvalidArgument(format!(
                "island {i} injection imbalance {imbalance:e} exceeds tolerance"
            )));
        }
        if comp.len() < 2 {
            continue;
        }
        // Reference is comp[0]; the rest are numbered 0..len-1.
        for (k, &b) in comp.iter().enumerate().skip(1) {
            local[b] = k - 1;
        }
        local[comp[0]] = usize::MAX;
        let m = comp.len() - 1;
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        for (l, line) in network.lines.iter().enumerate() {
            if partition.line_island[l] != Some(i) {
                continue;
            }
            let b = line.susceptance;
            let (f, t) = (local[line.from_bus], local[line.to_bus]);
            if f != usize::MAX {
                bmat[(f, f)] += b;
            }
            if t != usize::MAX {
                bmat[(t, t)] += b;
            }
            if f != usize::MAX && t != usize::MAX {
                bmat[(f, t)] -= b;
                bmat[(t, f)] -= b;
            }
        }
        let rhs = DVector::from_iterator(m, comp.iter().skip(1).map(|&b| injection.0[b]));
        let chol = bmat.cholesky().ok_or_else(|| {
            Error::SingularSystem(format!("susceptance matrix of island {i} is not positive definite"))
        })?;
        let theta = chol.solve(&rhs);
        for (k, &b) in comp.iter().enumerate().skip(1) {
            angles[b] = theta[k - 1];
        }
    }
    let flows = network
        .lines
        .iter()
        .enumerate()
        .map(|(l, line)| match partition.line_island[l] {
            Some(_) => line.susceptance * (angles[line.from_bus] - angles[line.to_bus]),
            None => 0.0,
        })
        .collect();
    Ok(FlowSolution { angles, flows })
}

/// Power transfer distribution factors of the intact network: row `l` maps
/// bus injections (reference bus 0 absorbing the balance) to the flow on `l`.
fn ptdf(network: &Network) -> Result<DMatrix<f64>> {
    let n = network.num_buses();
    let l = network.num_lines();
    let m = n - 1;
    let mut bmat = DMatrix::<f64>::zeros(m, m);
    for line in network.lines.iter().filter(|l| l.in_service) {
        let b = line.susceptance;
        let (f, t) = (line.from_bus, line.to_bus);
        if f > 0 {
            bmat[(f - 1, f - 1)] += b;
        }
        if t > 0 {
            bmat[(t - 1, t - 1)] += b;
        }
        if f > 0 && t > 0 {
            bmat[(f - 1, t - 1)] -= b;
            bmat[(t - 1, f - 1)] -= b;
        }
    }
    let inv = bmat
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("intact network susceptance matrix".into()))?
        .inverse();
    let x = |a: usize, k: usize| if a == 0 || k == 0 { 0.0 } else { inv[(a - 1, k - 1)] };
    let mut h = DMatrix::<f64>::zeros(l, n);
    for (li, line) in network.lines.iter().enumerate() {
        if !line.in_service {
            continue;
        }
        for k in 1..n {
            h[(li, k)] = line.susceptance * (x(line.from_bus, k) - x(line.to_bus, k));
        }
    }
    Ok(h)
}

/// Least-cost dispatch with the network's own ratings as flow limits.
pub fn solve_equilibrium(network: &Network) -> Result<DispatchState> {
    solve_equilibrium_with_limits(network, &network.ratings())
}

/// Least-cost dispatch under arbitrary per-line flow limits.
pub fn solve_equilibrium_with_limits(network: &Network, limits: &[f64]) -> Result<DispatchState> {
    let nl = network.num_lines();
    if limits.len() != nl {
        return Err(Error::DimensionMismatch {
            what: "flow limits",
            expected: nl,
            actual: limits.len(),
        });
    }
    let n = network.num_buses();
    let h = ptdf(network)?;
    let demand = network.bus_demand();

    // One variable per cost segment of every generator with a non-empty range.
    struct Segment {
        generator: usize,
        width: f64,
    }
    let mut segments = Vec::new();
    let mut slopes = Vec::new();
    let mut base_cost = 0.0;
    for (g, gen) in network.generators.iter().enumerate() {
        base_cost += gen.cost(gen.p_min);
        let span = gen.p_max - gen.p_min;
        if span <= 0.0 {
            continue;
        }
        let width = span / COST_SEGMENTS as f64;
        for k in 0..COST_SEGMENTS {
            let lo = gen.p_min + width * k as f64;
            let hi = if k + 1 == COST_SEGMENTS { gen.p_max } else { lo + width };
            slopes.push((gen.cost(hi) - gen.cost(lo)) / (hi - lo));
            segments.push(Segment { generator: g, width: hi - lo });
        }
    }
    let nv = segments.len();
    let mut lp = LinearProgram::new(nv);
    lp.objective = slopes;

    let pmin_total: f64 = network.generators.iter().map(|g| g.p_min).sum();
    lp.push(vec![1.0; nv], Sense::Eq, network.total_demand() - pmin_total);

    // Flow at p_min dispatch, and the sensitivity of each line to each segment.
    let mut p0 = demand.iter().map(|d| -d).collect::<Vec<_>>();
    for gen in &network.generators {
        p0[gen.bus] += gen.p_min;
    }
    for (li, &limit) in limits.iter().enumerate() {
        let f0: f64 = (0..n).map(|k| h[(li, k)] * p0[k]).sum();
        let row: Vec<f64> = segments
            .iter()
            .map(|s| h[(li, network.generators[s.generator].bus)])
            .collect();
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        lp.push(row, Sense::Le, limit - f0);
        lp.push(neg, Sense::Le, limit + f0);
    }
    for (j, s) in segments.iter().enumerate() {
        let mut row = vec![0.0; nv];
        row[j] = 1.0;
        lp.push(row, Sense::Le, s.width);
    }

    let (x, objective) = match simplex::solve(&lp) {
        LpOutcome::Optimal { x, objective } => (x, objective),
        LpOutcome::Infeasible => {
            return Err(Error::Infeasible(
                "demand cannot be served within generator bounds and flow limits".into(),
            ))
        }
        other => {
            return Err(Error::Infeasible(format!("linear program did not converge: {other:?}")))
        }
    };
    let mut generation: Vec<f64> = network.generators.iter().map(|g| g.p_min).collect();
    for (s, v) in segments.iter().zip(&x) {
        generation[s.generator] += v.min(s.width);
    }
    let mut state = DispatchState {
        generation,
        angles: vec![0.0; n],
        flows: vec![0.0; nl],
        objective_cost: base_cost + objective,
    };
    let outaged = OutageSet::none(nl);
    let partition = island_partition(network, &outaged);
    let mut injection = state.injection(network);
    // Simplex output is balanced only to pivot precision; settle the residue
    // on the reference bus before the angle solve.
    let residue: f64 = injection.0.iter().sum();
    injection.0[0] -= residue;
    let sol = dc_power_flow_on(network, &partition, &injection)?;
    state.angles = sol.angles;
    state.flows = sol.flows;
    Ok(state)
}
