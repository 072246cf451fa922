//! Transmission network model and MATPOWER case parsing.
//!
//! Only the active-power part of a case is kept: per-line DC susceptance and
//! rating, generator bounds and cost, and bus demand. Everything is stored in
//! per-unit on the case's MVA base with 0-based indices.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Generator,
    Load,
    Passive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Bus number as written in the source file.
    pub label: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    /// Per-unit series susceptance `1 / x`.
    pub susceptance: f64,
    /// Per-unit flow magnitude limit.
    pub rating: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// Cost per per-unit of output.
    pub cost_linear: f64,
    /// Cost per per-unit squared.
    pub cost_quadratic: f64,
}

impl Generator {
    pub fn cost(&self, p: f64) -> f64 {
        self.cost_linear * p + self.cost_quadratic * p * p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p_demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

/// One broken network invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub entity: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

impl Network {
    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn ratings(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.rating).collect()
    }

    pub fn total_demand(&self) -> f64 {
        self.loads.iter().map(|l| l.p_demand).sum()
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }

    /// Demand aggregated per bus.
    pub fn bus_demand(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.buses.len()];
        for load in &self.loads {
            d[load.bus] += load.p_demand;
        }
        d
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Network> {
        Ok(serde_json::from_str(text)?)
    }

    /// Lists every broken invariant; an empty list means the network is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.buses.len();
        let mut push = |entity: String, rule: &str| {
            out.push(Violation {
                entity,
                rule: rule.to_string(),
            })
        };

        if n == 0 {
            push("network".into(), "has no buses");
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i {
                push(format!("bus {i}"), "ids must be contiguous and 0-based");
            }
        }
        let slack_count = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if n > 0 && slack_count != 1 {
            push(
                "network".into(),
                &format!("must have exactly one slack bus, found {slack_count}"),
            );
        }
        for (i, line) in self.lines.iter().enumerate() {
            let name = format!("line {i}");
            if line.id != i {
                push(name.clone(), "ids must be contiguous and 0-based");
            }
            if line.from_bus >= n || line.to_bus >= n {
                push(name.clone(), "endpoint does not reference a bus");
            }
            if line.from_bus == line.to_bus {
                push(name.clone(), "from_bus must differ from to_bus");
            }
            if !(line.rating > 0.0 && line.rating.is_finite()) {
                push(name.clone(), "rating must be positive and finite");
            }
            if !(line.susceptance > 0.0 && line.susceptance.is_finite()) {
                push(name, "susceptance must be positive and finite");
            }
        }
        for (i, g) in self.generators.iter().enumerate() {
            let name = format!("generator {i}");
            if g.bus >= n {
                push(name.clone(), "bus does not reference a bus");
            }
            if !(0.0 <= g.p_min && g.p_min <= g.p_max && g.p_max.is_finite()) {
                push(name.clone(), "requires 0 <= p_min <= p_max");
            }
            if g.cost_quadratic < 0.0 {
                push(name, "quadratic cost coefficient must be non-negative");
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            let name = format!("load {i}");
            if l.bus >= n {
                push(name.clone(), "bus does not reference a bus");
            }
            if !(l.p_demand >= 0.0 && l.p_demand.is_finite()) {
                push(name, "p_demand must be non-negative");
            }
        }
        let endpoints_ok = self.lines.iter().all(|l| l.from_bus < n && l.to_bus < n);
        if n > 0 && endpoints_ok {
            let comps = connected_components(
                n,
                self.lines
                    .iter()
                    .filter(|l| l.in_service)
                    .map(|l| (l.from_bus, l.to_bus)),
            );
            if comps.len() > 1 {
                push(
                    "network".into(),
                    &format!("in-service lines leave {} disconnected components", comps.len()),
                );
            }
        }
        if self.total_capacity() < self.total_demand() {
            push(
                "network".into(),
                "total generator capacity is below total demand",
            );
        }
        out
    }
}

/// Connected components of an undirected graph, each sorted ascending and
/// the list ordered by smallest member.
pub(crate) fn connected_components(
    n: usize,
    edges: impl Iterator<Item = (usize, usize)>,
) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// The bundled IEEE 30-bus case text.
pub const CASE30: &str = include_str!("../cases/case30.m");

pub fn case30() -> Network {
    parse_case(CASE30).expect("bundled case parses")
}

struct Table {
    name: &'static str,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn require_columns(&self, min: usize) -> Result<()> {
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() < min {
                return Err(Error::MalformedCase(format!(
                    "mpc.{} row {}: expected at least {} columns, found {}",
                    self.name,
                    r + 1,
                    min,
                    row.len()
                )));
            }
        }
        Ok(())
    }
}

fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|l| match l.find('%') {
            Some(i) => &l[..i],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn find_assignment<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    let key = format!("mpc.{name}");
    let mut search = 0;
    while let Some(pos) = text[search..].find(&key) {
        let start = search + pos + key.len();
        let rest = text[start..].trim_start();
        if let Some(rhs) = rest.strip_prefix('=') {
            return Some(rhs);
        }
        search = start;
    }
    None
}

fn read_table(text: &str, name: &'static str) -> Result<Table> {
    let rhs = find_assignment(text, name)
        .ok_or_else(|| Error::MalformedCase(format!("missing table mpc.{name}")))?;
    let rhs = rhs.trim_start();
    let body = rhs
        .strip_prefix('[')
        .ok_or_else(|| Error::MalformedCase(format!("mpc.{name} is not a matrix literal")))?;
    let end = body
        .find(']')
        .ok_or_else(|| Error::MalformedCase(format!("mpc.{name} has no closing bracket")))?;
    let mut rows = Vec::new();
    for raw_row in body[..end].split([';', '\n']) {
        let fields: Vec<&str> = raw_row
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        let row_no = rows.len() + 1;
        let values = fields
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::MalformedCase(format!(
                        "mpc.{name} row {row_no}: non-numeric field '{f}'"
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::MalformedCase(format!("mpc.{name} is empty")));
    }
    Ok(Table { name, rows })
}

fn read_scalar(text: &str, name: &str) -> Result<f64> {
    let rhs = find_assignment(text, name)
        .ok_or_else(|| Error::MalformedCase(format!("missing mpc.{name}")))?;
    let value = rhs.split(';').next().unwrap_or("").trim();
    value
        .parse::<f64>()
        .map_err(|_| Error::MalformedCase(format!("mpc.{name}: non-numeric value '{value}'")))
}

/// Parses MATPOWER-style case text (`mpc.bus`, `mpc.gen`, `mpc.branch`,
/// `mpc.gencost`) into a validated network.
///
/// Out-of-service branches and generators are dropped; the remaining
/// branches keep their file order. Resistances, shunts and tap ratios are
/// read and ignored.
pub fn parse_case(text: &str) -> Result<Network> {
    let text = strip_comments(text);
    let base_mva = read_scalar(&text, "baseMVA")?;
    if !(base_mva > 0.0) {
        return Err(Error::MalformedCase("mpc.baseMVA must be positive".into()));
    }
    let bus_t = read_table(&text, "bus")?;
    let gen_t = read_table(&text, "gen")?;
    let branch_t = read_table(&text, "branch")?;
    let cost_t = read_table(&text, "gencost")?;
    bus_t.require_columns(13)?;
    gen_t.require_columns(10)?;
    branch_t.require_columns(11)?;
    cost_t.require_columns(4)?;

    let mut index_of: HashMap<i64, usize> = HashMap::new();
    let mut buses = Vec::with_capacity(bus_t.rows.len());
    let mut loads = Vec::new();
    for (r, row) in bus_t.rows.iter().enumerate() {
        let label = row[0] as i64;
        if row[0].fract() != 0.0 || index_of.insert(label, r).is_some() {
            return Err(Error::MalformedCase(format!(
                "mpc.bus row {}: bus number {} is not a unique integer",
                r + 1,
                row[0]
            )));
        }
        let pd = row[2];
        let kind = match row[1] as i64 {
            3 => BusKind::Slack,
            2 => BusKind::Generator,
            1 if pd != 0.0 => BusKind::Load,
            1 | 4 => BusKind::Passive,
            other => {
                return Err(Error::MalformedCase(format!(
                    "mpc.bus row {}: unknown bus type {other}",
                    r + 1
                )))
            }
        };
        buses.push(Bus { id: r, kind, label });
        if pd != 0.0 {
            loads.push(Load {
                bus: r,
                p_demand: pd / base_mva,
            });
        }
    }
    let resolve = |table: &str, r: usize, value: f64| -> Result<usize> {
        index_of.get(&(value as i64)).copied().ok_or_else(|| {
            Error::MalformedCase(format!(
                "mpc.{table} row {}: unknown bus number {value}",
                r + 1
            ))
        })
    };

    if cost_t.rows.len() < gen_t.rows.len() {
        return Err(Error::MalformedCase(format!(
            "mpc.gencost has {} rows but mpc.gen has {}",
            cost_t.rows.len(),
            gen_t.rows.len()
        )));
    }
    let mut generators = Vec::new();
    for (r, row) in gen_t.rows.iter().enumerate() {
        if row[7] <= 0.0 {
            continue;
        }
        let bus = resolve("gen", r, row[0])?;
        let cost = &cost_t.rows[r];
        if cost[0] as i64 != 2 {
            return Err(Error::MalformedCase(format!(
                "mpc.gencost row {}: only polynomial (model 2) costs are supported",
                r + 1
            )));
        }
        let ncoef = cost[3] as usize;
        if !(1..=3).contains(&ncoef) || cost.len() < 4 + ncoef {
            return Err(Error::MalformedCase(format!(
                "mpc.gencost row {}: expected 1 to 3 coefficients with matching columns",
                r + 1
            )));
        }
        // Coefficients are listed highest order first, constant term last.
        let coef = &cost[4..4 + ncoef];
        let (quad, lin) = match ncoef {
            3 => (coef[0], coef[1]),
            2 => (0.0, coef[0]),
            _ => (0.0, 0.0),
        };
        generators.push(Generator {
            bus,
            p_min: row[9] / base_mva,
            p_max: row[8] / base_mva,
            cost_linear: lin * base_mva,
            cost_quadratic: quad * base_mva * base_mva,
        });
    }

    let mut lines = Vec::new();
    let mut ignored = 0usize;
    for (r, row) in branch_t.rows.iter().enumerate() {
        if row[10] <= 0.0 {
            continue;
        }
        let from_bus = resolve("branch", r, row[0])?;
        let to_bus = resolve("branch", r, row[1])?;
        if row[2] != 0.0 || row[4] != 0.0 || row.get(8).is_some_and(|&t| t != 0.0 && t != 1.0) {
            ignored += 1;
        }
        lines.push(Line {
            id: lines.len(),
            from_bus,
            to_bus,
            susceptance: 1.0 / row[3],
            rating: row[5] / base_mva,
            in_service: true,
        });
    }
    if ignored > 0 {
        log::debug!("ignored resistance/charging/tap data on {ignored} branches");
    }

    let network = Network {
        base_mva,
        buses,
        lines,
        generators,
        loads,
    };
    let violations = network.validate();
    if !violations.is_empty() {
        let msg = violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::InfeasibleCase(msg));
    }
    Ok(network)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn bundled_case_has_expected_size() {
        let net = case30();
        assert_eq!(net.num_buses(), 30);
        assert_eq!(net.num_lines(), 41);
        assert_eq!(net.generators.len(), 6);
        assert!(net.validate().is_empty());
        assert!((net.total_demand() - 1.892).abs() < 1e-12);
    }

    #[test]
    fn ring_fixture_counts() {
        let net = ring3();
        assert_eq!(net.num_buses(), 3);
        assert_eq!(net.num_lines(), 3);
        assert_eq!(net.generators.len(), 1);
        assert_eq!(net.loads.len(), 1);
        assert_eq!(net.buses[0].kind, BusKind::Slack);
        assert_eq!(net.lines[2].from_bus, 2);
        assert_eq!(net.lines[2].to_bus, 1);
        assert!((net.loads[0].p_demand - 0.5).abs() < 1e-15);
        assert!((net.generators[0].cost_linear - 100.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_malformed() {
        assert!(matches!(parse_case(""), Err(Error::MalformedCase(_))));
    }

    #[test]
    fn short_branch_row_names_table_and_row() {
        let text = RING3.replace("1 3 0 1 0 100 100 100 0 0 1 -360 360;", "1 3 0 1;");
        match parse_case(&text) {
            Err(Error::MalformedCase(msg)) => {
                assert!(msg.contains("mpc.branch row 2"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_is_malformed() {
        let text = RING3.replace("2 1 50", "2 1 fifty");
        match parse_case(&text) {
            Err(Error::MalformedCase(msg)) => assert!(msg.contains("mpc.bus row 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_gencost_is_malformed() {
        let cut = RING3.find("mpc.gencost").unwrap();
        assert!(matches!(
            parse_case(&RING3[..cut]),
            Err(Error::MalformedCase(m)) if m.contains("gencost")
        ));
    }

    #[test]
    fn out_of_service_branch_dropped_and_order_kept() {
        let text = RING3.replace(
            "1 2 0 1 0 100 100 100 0 0 1 -360 360;",
            "1 2 0 1 0 100 100 100 0 0 0 -360 360;",
        );
        let net = parse_case(&text).unwrap();
        assert_eq!(net.num_lines(), 2);
        assert_eq!((net.lines[0].from_bus, net.lines[0].to_bus), (0, 2));
        assert_eq!(net.lines[1].id, 1);
    }

    #[test]
    fn demand_above_capacity_is_infeasible_case() {
        let text = RING3.replace("2 1 50", "2 1 500");
        assert!(matches!(parse_case(&text), Err(Error::InfeasibleCase(_))));
    }

    #[test]
    fn zero_rating_yields_one_violation() {
        let mut net = ring3();
        net.lines[1].rating = 0.0;
        let v = net.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].entity, "line 1");
    }

    #[test]
    fn disconnected_fixture_yields_connectivity_violation() {
        let mut net = ring3();
        // Dropping both lines into bus 1 isolates it.
        net.lines.retain(|l| l.from_bus != 1 && l.to_bus != 1);
        for (i, l) in net.lines.iter_mut().enumerate() {
            l.id = i;
        }
        let v = net.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].rule.contains("disconnected"));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let net = case30();
        let back = Network::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(net, back);
    }
}
