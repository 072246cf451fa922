//! Plot-ready data files and the cross-experiment comparison table.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{penalize_observation, PenaltySettings};
use crate::attack::BudgetConstraint;
use crate::campaign::{best_record, EvaluationRecord, Mode, Phase};
use crate::cascade::CascadeTrace;
use crate::error::{Error, Result};

/// Components above this count as tightened.
pub const NONZERO_THRESHOLD: f64 = 1e-3;

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

/// Writes through a temporary sibling so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<EvaluationRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Io(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct HistogramRow {
    failures: usize,
    count: u64,
}

pub fn write_histogram(path: &Path, hist: &[u64]) -> Result<()> {
    let rows: Vec<HistogramRow> = hist
        .iter()
        .enumerate()
        .map(|(failures, &count)| HistogramRow { failures, count })
        .collect();
    write_csv(path, &rows)
}

/// One row per line; column `pK` counts traces where the line failed K-th.
pub fn write_failure_order(path: &Path, matrix: &[Vec<u64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let n = matrix.first().map_or(0, |r| r.len());
    let mut header = vec!["line".to_string()];
    header.extend((1..=n).map(|k| format!("p{k}")));
    w.write_record(&header).map_err(csv_error)?;
    for (line, row) in matrix.iter().enumerate() {
        let mut rec = vec![line.to_string()];
        rec.extend(row.iter().map(|c| c.to_string()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_traces(path: &Path, traces: &[CascadeTrace]) -> Result<()> {
    write_jsonl(path, traces)
}

#[derive(Debug, Serialize)]
struct ProgressionRow {
    index: usize,
    phase: Phase,
    raw_objective: f64,
    transformed_objective: f64,
    l1_norm: f64,
    feasible: bool,
    best_so_far: f64,
}

/// Objective and budget use per evaluation, with the running best allowed
/// by the mode.
pub fn write_progression(path: &Path, records: &[EvaluationRecord]) -> Result<()> {
    let mut best = f64::NEG_INFINITY;
    let rows: Vec<ProgressionRow> = records
        .iter()
        .map(|r| {
            if !r.mode.is_constrained() || r.feasible {
                best = best.max(r.raw_objective);
            }
            ProgressionRow {
                index: r.index,
                phase: r.phase,
                raw_objective: r.raw_objective,
                transformed_objective: r.transformed_objective,
                l1_norm: r.l1_norm,
                feasible: r.feasible,
                best_so_far: best,
            }
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TimingRow {
    pub index: usize,
    pub wall_time: f64,
}

pub fn write_timings(path: &Path, records: &[EvaluationRecord]) -> Result<()> {
    let rows: Vec<TimingRow> = records
        .iter()
        .map(|r| TimingRow {
            index: r.index,
            wall_time: r.wall_time,
        })
        .collect();
    write_csv(path, &rows)
}

fn read_timings(path: &Path) -> Option<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).ok()?;
    r.deserialize::<TimingRow>()
        .map(|row| row.ok().map(|t| t.wall_time))
        .collect()
}

/// Disagreement between a stored record field and its recomputation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub file: PathBuf,
    pub index: usize,
    pub field: &'static str,
    pub stored: String,
    pub recomputed: String,
}

pub fn check_record(file: &Path, r: &EvaluationRecord) -> Vec<Mismatch> {
    let mut out = Vec::new();
    let mut push = |field, stored: String, recomputed: String| {
        out.push(Mismatch {
            file: file.to_path_buf(),
            index: r.index,
            field,
            stored,
            recomputed,
        })
    };
    let l1 = r.x.l1_norm();
    if l1.to_bits() != r.l1_norm.to_bits() {
        push("l1_norm", r.l1_norm.to_string(), l1.to_string());
    }
    let budget = r.budget.and_then(|b| BudgetConstraint::new(b).ok());
    let feasible = budget.map_or(true, |b| b.value(r.x.as_slice()) <= 0.0);
    if feasible != r.feasible {
        push("feasible", r.feasible.to_string(), feasible.to_string());
    }
    let penalty = r.rho.and_then(|p| PenaltySettings::new(p).ok());
    let transformed = match (r.mode, budget, penalty) {
        (Mode::Pobo, Some(b), Some(p)) => {
            penalize_observation(r.raw_objective, r.x.as_slice(), &b, &p)
        }
        _ => r.raw_objective,
    };
    if transformed.to_bits() != r.transformed_objective.to_bits() {
        push(
            "transformed_objective",
            r.transformed_objective.to_string(),
            transformed.to_string(),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub experiment: String,
    pub mode: Mode,
    pub phase: Phase,
    pub evaluations: usize,
    pub best_index: Option<usize>,
    pub best_l1_norm: Option<f64>,
    pub best_objective: Option<f64>,
    pub best_nonzero: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonzeroRow {
    pub experiment: String,
    pub index: usize,
    pub phase: Phase,
    pub nonzero: usize,
    pub l1_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WallTimeRow {
    pub experiment: String,
    pub evaluations: usize,
    pub total: f64,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub nonzero: Vec<NonzeroRow>,
    pub wall_times: Vec<WallTimeRow>,
    pub mismatches: Vec<Mismatch>,
}

pub struct Experiment {
    pub name: String,
    pub path: PathBuf,
    pub records: Vec<EvaluationRecord>,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let records = read_records(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("records");
        let name = match path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            Some(dir) if stem == "records" => dir.to_string(),
            _ => stem.to_string(),
        };
        Ok(Experiment {
            name,
            path: path.to_path_buf(),
            records,
        })
    }

    fn mode(&self) -> Option<Mode> {
        self.records.first().map(|r| r.mode)
    }
}

fn wall_time_row(name: &str, mut t: Vec<f64>) -> Option<WallTimeRow> {
    if t.is_empty() {
        return None;
    }
    t.sort_by(|a, b| a.total_cmp(b));
    let n = t.len();
    let median = if n % 2 == 1 {
        t[n / 2]
    } else {
        0.5 * (t[n / 2 - 1] + t[n / 2])
    };
    let total: f64 = t.iter().sum();
    Some(WallTimeRow {
        experiment: name.to_string(),
        evaluations: n,
        total,
        mean: total / n as f64,
        median,
        min: t[0],
        max: t[n - 1],
    })
}

/// Builds the comparison, ordering experiments by mode and then by input order.
pub fn build_report(mut experiments: Vec<Experiment>) -> Report {
    experiments.sort_by_key(|e| e.mode());
    let mut report = Report::default();
    for e in &experiments {
        let Some(mode) = e.mode() else { continue };
        for r in &e.records {
            report.mismatches.extend(check_record(&e.path, r));
            report.nonzero.push(NonzeroRow {
                experiment: e.name.clone(),
                index: r.index,
                phase: r.phase,
                nonzero: r.x.nonzero_count(NONZERO_THRESHOLD),
                l1_norm: r.l1_norm,
            });
        }
        for phase in [Phase::Init, Phase::Bo] {
            let subset: Vec<EvaluationRecord> =
                e.records.iter().filter(|r| r.phase == phase).cloned().collect();
            if subset.is_empty() {
                continue;
            }
            let best = best_record(&subset, mode);
            report.rows.push(ReportRow {
                experiment: e.name.clone(),
                mode,
                phase,
                evaluations: subset.len(),
                best_index: best.map(|b| b.index),
                best_l1_norm: best.map(|b| b.l1_norm),
                best_objective: best.map(|b| b.raw_objective),
                best_nonzero: best.map(|b| b.x.nonzero_count(NONZERO_THRESHOLD)),
            });
        }
        let timings = e
            .path
            .parent()
            .map(|d| d.join("timings.csv"))
            .and_then(|p| read_timings(&p));
        if let Some(row) = timings.and_then(|t| wall_time_row(&e.name, t)) {
            report.wall_times.push(row);
        }
    }
    report
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Aligned plain-text rendering of the comparison table.
pub fn render_table(rows: &[ReportRow]) -> String {
    let header = ["experiment", "mode", "phase", "evals", "best", "l1_norm", "objective", "nonzero"];
    let body: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.experiment.clone(),
                r.mode.name().to_string(),
                match r.phase {
                    Phase::Init => "init".into(),
                    Phase::Bo => "bo".into(),
                },
                r.evaluations.to_string(),
                opt(&r.best_index),
                r.best_l1_norm.map_or("-".into(), |v| format!("{v:.4}")),
                r.best_objective.map_or("-".into(), |v| format!("{v:.4}")),
                opt(&r.best_nonzero),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for row in &body {
        line(row.iter().map(|s| s.as_str()).collect(), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::TighteningVector;

    fn rec(mode: Mode, x: Vec<f64>, y: f64) -> EvaluationRecord {
        let x = TighteningVector::new(x).unwrap();
        EvaluationRecord {
            index: 1,
            phase: Phase::Init,
            mode,
            budget: None,
            rho: None,
            l1_norm: x.l1_norm(),
            x,
            raw_objective: y,
            transformed_objective: y,
            std_error: 0.0,
            feasible: true,
            seed: 0,
            wall_time: 0.0,
        }
    }

    #[test]
    fn tampered_norm_is_flagged() {
        let mut r = rec(Mode::Random, vec![0.5, 0.25], 1.0);
        assert!(check_record(Path::new("a"), &r).is_empty());
        r.l1_norm = 0.7;
        let m = check_record(Path::new("a"), &r);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].field, "l1_norm");
    }

    #[test]
    fn rows_follow_mode_order() {
        let exps = vec![
            Experiment {
                name: "b".into(),
                path: "b.jsonl".into(),
                records: vec![rec(Mode::Random, vec![0.2, 0.2], 2.0)],
            },
            Experiment {
                name: "a".into(),
                path: "a.jsonl".into(),
                records: vec![rec(Mode::Minimal, vec![0.0, 0.0], 1.0)],
            },
        ];
        let rep = build_report(exps);
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].mode, Mode::Minimal);
        assert_eq!(rep.rows[0].best_l1_norm, Some(0.0));
        let text = render_table(&rep.rows);
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn wall_time_median() {
        let row = wall_time_row("e", vec![3.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(row.median, 2.5);
        assert_eq!(row.total, 10.0);
    }
}
