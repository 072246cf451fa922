//! Attack campaigns: random initial phase, batched BO phase, and baselines.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    maximize_acquisition_box, maximize_acquisition_l1, penalize_observation, AcquisitionResult,
    OptimizerSettings, PenaltySettings,
};
use crate::attack::{BudgetConstraint, TighteningVector};
use crate::cascade::{estimate_severity, RateModel, SimulationOptions, DEFAULT_SIMULATIONS, DEFAULT_T_MAX};
use crate::error::{Error, Result};
use crate::gp::{fit, select_lengthscale, GpPosterior, KernelParams, DEFAULT_NOISE_VARIANCE};
use crate::grid::Network;
use crate::powerflow::{solve_equilibrium, DispatchState};
use crate::seed::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Minimal,
    Maximal,
    Random,
    FeasibleRandom,
    UnconstrainedBo,
    Cabo,
    Pobo,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Minimal,
        Mode::Maximal,
        Mode::Random,
        Mode::FeasibleRandom,
        Mode::UnconstrainedBo,
        Mode::Cabo,
        Mode::Pobo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Minimal => "minimal",
            Mode::Maximal => "maximal",
            Mode::Random => "random",
            Mode::FeasibleRandom => "feasible_random",
            Mode::UnconstrainedBo => "unconstrained_bo",
            Mode::Cabo => "cabo",
            Mode::Pobo => "pobo",
        }
    }

    pub fn is_bo(&self) -> bool {
        matches!(self, Mode::UnconstrainedBo | Mode::Cabo | Mode::Pobo)
    }

    /// Whether the best attack must respect the budget.
    pub fn is_constrained(&self) -> bool {
        matches!(self, Mode::Cabo | Mode::Pobo | Mode::FeasibleRandom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub mode: Mode,
    #[serde(default = "default_evals")]
    pub init_evals: usize,
    #[serde(default = "default_evals")]
    pub bo_evals: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default = "default_simulations")]
    pub simulations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
    #[serde(default)]
    pub rate_model: RateModel,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
}

fn default_evals() -> usize {
    256
}
fn default_batch() -> usize {
    12
}
fn default_simulations() -> usize {
    DEFAULT_SIMULATIONS
}
fn default_t_max() -> f64 {
    DEFAULT_T_MAX
}
fn default_noise() -> f64 {
    DEFAULT_NOISE_VARIANCE
}

impl CampaignConfig {
    pub fn new(mode: Mode) -> Self {
        CampaignConfig {
            mode,
            init_evals: default_evals(),
            bo_evals: default_evals(),
            batch_size: default_batch(),
            budget: None,
            rho: None,
            simulations: default_simulations(),
            seed: 0,
            t_max: default_t_max(),
            noise_variance: default_noise(),
            rate_model: RateModel::default(),
            optimizer: OptimizerSettings::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: CampaignConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return cfg("batch_size must be at least 1".into());
        }
        if self.simulations == 0 {
            return cfg("simulations must be at least 1".into());
        }
        if !(self.t_max > 0.0) {
            return cfg("t_max must be positive".into());
        }
        if !(self.noise_variance >= 0.0) {
            return cfg("noise_variance must be non-negative".into());
        }
        if matches!(self.mode, Mode::Cabo | Mode::Pobo | Mode::FeasibleRandom) && self.budget.is_none()
        {
            return cfg(format!("mode {} requires field `budget`", self.mode.name()));
        }
        if self.mode == Mode::Pobo && self.rho.is_none() {
            return cfg("mode pobo requires field `rho`".into());
        }
        if let Some(b) = self.budget {
            BudgetConstraint::new(b).map_err(|e| Error::Config(format!("budget: {e}")))?;
        }
        if let Some(r) = self.rho {
            PenaltySettings::new(r).map_err(|e| Error::Config(format!("rho: {e}")))?;
        }
        self.rate_model
            .validate()
            .map_err(|e| Error::Config(format!("rate_model: {e}")))?;
        self.optimizer
            .validate()
            .map_err(|e| Error::Config(format!("optimizer: {e}")))?;
        Ok(())
    }

    /// Number of records the campaign produces.
    pub fn total_evals(&self) -> usize {
        match self.mode {
            Mode::Minimal | Mode::Maximal => 1,
            _ => self.init_evals + self.bo_evals,
        }
    }

    fn budget(&self) -> Option<BudgetConstraint> {
        self.budget.and_then(|b| BudgetConstraint::new(b).ok())
    }

    fn penalty(&self) -> Option<PenaltySettings> {
        self.rho.and_then(|r| PenaltySettings::new(r).ok())
    }

    /// `[start, end)` of the batch containing record position `pos`.
    fn batch_bounds(&self, pos: usize) -> (usize, usize) {
        let total = self.total_evals();
        let (phase_start, phase_end) = if pos < self.init_evals.min(total) {
            (0, self.init_evals.min(total))
        } else {
            (self.init_evals.min(total), total)
        };
        let start = phase_start + (pos - phase_start) / self.batch_size * self.batch_size;
        (start, (start + self.batch_size).min(phase_end))
    }
}

/// A black-box function of the tightening vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &TighteningVector, seed: u64) -> Result<Evaluation>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub std_error: f64,
}

/// Severity of a tightening attack on a network.
pub struct CascadeObjective<'a> {
    pub network: &'a Network,
    pub equilibrium: DispatchState,
    pub model: RateModel,
    pub options: SimulationOptions,
}

impl<'a> CascadeObjective<'a> {
    pub fn new(network: &'a Network, config: &CampaignConfig) -> Result<Self> {
        Ok(CascadeObjective {
            network,
            equilibrium: solve_equilibrium(network)?,
            model: config.rate_model,
            options: SimulationOptions {
                simulations: config.simulations,
                t_max: config.t_max,
            },
        })
    }
}

impl Objective for CascadeObjective<'_> {
    fn dim(&self) -> usize {
        self.network.num_lines()
    }

    fn evaluate(&self, x: &TighteningVector, seed: u64) -> Result<Evaluation> {
        let est = estimate_severity(
            self.network,
            x,
            &self.equilibrium,
            &self.model,
            &self.options,
            seed,
        )?;
        Ok(Evaluation {
            value: est.mean_failures,
            std_error: est.std_error,
        })
    }
}

/// Wraps a deterministic closure as an objective.
pub struct FnObjective<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &TighteningVector, _seed: u64) -> Result<Evaluation> {
        Ok(Evaluation {
            value: (self.f)(x.as_slice()),
            std_error: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Bo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    /// 1-based position in the campaign.
    pub index: usize,
    pub phase: Phase,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub x: TighteningVector,
    pub raw_objective: f64,
    pub transformed_objective: f64,
    pub std_error: f64,
    pub l1_norm: f64,
    pub feasible: bool,
    pub seed: u64,
    #[serde(skip)]
    pub wall_time: f64,
}

impl EvaluationRecord {
    /// Value the surrogate is trained on.
    pub fn target(&self) -> f64 {
        self.transformed_objective
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub index: usize,
    pub phase: Phase,
    pub x: TighteningVector,
    pub raw_objective: f64,
    pub l1_norm: f64,
    pub feasible: bool,
}

/// Argmax of the raw objective among records allowed by the mode.
pub fn best_record(records: &[EvaluationRecord], mode: Mode) -> Option<&EvaluationRecord> {
    records
        .iter()
        .filter(|r| !mode.is_constrained() || r.feasible)
        .fold(None, |best: Option<&EvaluationRecord>, r| match best {
            Some(b) if b.raw_objective >= r.raw_objective => Some(b),
            _ => Some(r),
        })
}

impl BestSummary {
    pub fn from_record(r: &EvaluationRecord) -> Self {
        BestSummary {
            index: r.index,
            phase: r.phase,
            x: r.x.clone(),
            raw_objective: r.raw_objective,
            l1_norm: r.l1_norm,
            feasible: r.feasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub config: CampaignConfig,
    pub dim: usize,
    /// Shared kernel lengthscale, chosen once the initial phase is complete.
    pub lengthscale: Option<f64>,
    pub records: Vec<EvaluationRecord>,
    pub wall_times: Vec<f64>,
}

impl Checkpoint {
    pub fn new(config: &CampaignConfig, dim: usize) -> Self {
        Checkpoint {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            dim,
            lengthscale: None,
            records: Vec::new(),
            wall_times: Vec::new(),
        }
    }

    /// The surrogate training set: every record's input and target.
    pub fn training_set(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            self.records.iter().map(|r| r.x.as_slice().to_vec()).collect(),
            self.records.iter().map(|r| r.target()).collect(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cp: Checkpoint = serde_json::from_str(text)?;
        for (r, t) in cp.records.iter_mut().zip(&cp.wall_times) {
            r.wall_time = *t;
        }
        Ok(cp)
    }
}

/// Stop signals and progress hooks for a running campaign.
#[derive(Default)]
pub struct Control<'a> {
    pub interrupt: Option<&'a AtomicBool>,
    /// Stop once this many records exist, as if interrupted.
    pub stop_after: Option<usize>,
    pub on_progress: Option<&'a mut dyn FnMut(&Checkpoint) -> Result<()>>,
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub checkpoint: Checkpoint,
    pub best: Option<BestSummary>,
    pub interrupted: bool,
}

impl CampaignOutcome {
    pub fn records(&self) -> &[EvaluationRecord] {
        &self.checkpoint.records
    }
}

/// Rescales `u` to sum to `min(lambda, dim)` inside the unit box, clipping at
/// one and spreading the excess over the unclipped components.
pub fn rescale_to_budget(u: &[f64], lambda: f64) -> Vec<f64> {
    let dim = u.len();
    if lambda >= dim as f64 {
        return vec![1.0; dim];
    }
    let total: f64 = u.iter().sum();
    let mut x: Vec<f64> = if total > 0.0 {
        u.iter().map(|v| v * lambda / total).collect()
    } else {
        vec![lambda / dim as f64; dim]
    };
    for _ in 0..dim {
        let excess: f64 = x.iter().map(|v| (v - 1.0).max(0.0)).sum();
        if excess <= 0.0 {
            break;
        }
        x.iter_mut().for_each(|v| *v = v.min(1.0));
        let free: f64 = x.iter().filter(|v| **v < 1.0).sum();
        if free <= 0.0 {
            let slots = x.iter().filter(|v| **v < 1.0).count().max(1) as f64;
            x.iter_mut()
                .filter(|v| **v < 1.0)
                .for_each(|v| *v += excess / slots);
        } else {
            x.iter_mut()
                .filter(|v| **v < 1.0)
                .for_each(|v| *v += excess * *v / free);
        }
    }
    x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    x
}

pub fn sample_feasible_random<R: Rng>(rng: &mut R, dim: usize, lambda: f64) -> TighteningVector {
    let u: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
    TighteningVector::clamped(rescale_to_budget(&u, lambda))
}

fn sample_uniform<R: Rng>(rng: &mut R, dim: usize) -> TighteningVector {
    TighteningVector::clamped((0..dim).map(|_| rng.gen()).collect())
}

/// Acquires `batch_size` points, inserting each with the lie `best` and
/// refitting before the next. Candidates within 1e-6 of an earlier pick are
/// skipped; `fallback(k)` supplies slot `k` when every candidate is taken.
pub fn constant_liar_batch<A, F>(
    gp: &GpPosterior,
    best: f64,
    batch_size: usize,
    mut acquire: A,
    mut fallback: F,
) -> Result<Vec<Vec<f64>>>
where
    A: FnMut(&GpPosterior, f64, usize) -> AcquisitionResult,
    F: FnMut(usize) -> Vec<f64>,
{
    let mut current = gp.clone();
    let mut picked: Vec<Vec<f64>> = Vec::with_capacity(batch_size);
    for k in 0..batch_size {
        let result = acquire(&current, best, k);
        let distinct = |p: &[f64]| {
            picked.iter().all(|q| {
                p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() > 1e-6
            })
        };
        let point = result
            .candidates
            .iter()
            .map(|c| c.point.clone())
            .find(|p| distinct(p))
            .unwrap_or_else(|| fallback(k));
        if k + 1 < batch_size {
            current = current.with_observation(point.clone(), best)?;
        }
        picked.push(point);
    }
    Ok(picked)
}

struct Planner<'a> {
    config: &'a CampaignConfig,
    dim: usize,
}

impl Planner<'_> {
    fn random_point(&self, index: usize) -> TighteningVector {
        let mut rng = seed::rng_for(self.config.seed, &[tag::SAMPLE, index as u64]);
        match (self.config.mode, self.config.budget) {
            (Mode::FeasibleRandom, Some(l)) => sample_feasible_random(&mut rng, self.dim, l),
            _ => sample_uniform(&mut rng, self.dim),
        }
    }

    /// Feasible random point used when a CABO batch runs out of candidates.
    fn fallback_point(&self, index: usize) -> Vec<f64> {
        let mut rng = seed::rng_for(self.config.seed, &[tag::SAMPLE, index as u64]);
        match (self.config.mode, self.config.budget) {
            (Mode::Cabo, Some(l)) => {
                let scale = rng.gen::<f64>();
                sample_feasible_random(&mut rng, self.dim, l)
                    .as_slice()
                    .iter()
                    .map(|v| v * scale)
                    .collect()
            }
            _ => sample_uniform(&mut rng, self.dim).as_slice().to_vec(),
        }
    }

    /// Points for record positions `[start, end)` given the records before `start`.
    fn plan(
        &self,
        start: usize,
        end: usize,
        history: &[EvaluationRecord],
        lengthscale: &mut Option<f64>,
    ) -> Result<Vec<TighteningVector>> {
        let config = self.config;
        match config.mode {
            Mode::Minimal => return Ok(vec![TighteningVector::zeros(self.dim)]),
            Mode::Maximal => return Ok(vec![TighteningVector::ones(self.dim)]),
            _ => {}
        }
        let bo_phase = config.mode.is_bo() && start >= config.init_evals;
        if !bo_phase || history.is_empty() {
            return Ok((start..end).map(|i| self.random_point(i)).collect());
        }
        let xs: Vec<Vec<f64>> = history.iter().map(|r| r.x.as_slice().to_vec()).collect();
        let ys: Vec<f64> = history.iter().map(|r| r.target()).collect();
        let ell = match *lengthscale {
            Some(l) => l,
            None => {
                let l = select_lengthscale(&xs, &ys, 1.0, config.noise_variance)?;
                *lengthscale = Some(l);
                l
            }
        };
        let params = KernelParams::shared(1.0, ell, config.noise_variance);
        let gp = fit(&xs, &ys, &params)?;
        let best = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let budget = config.budget();
        let acquire = |g: &GpPosterior, b: f64, k: usize| {
            let settings = OptimizerSettings {
                seed: seed::derive(config.seed, &[tag::ACQUISITION, start as u64, k as u64]) as u32,
                ..config.optimizer.clone()
            };
            match (config.mode, budget) {
                (Mode::Cabo, Some(budget)) => maximize_acquisition_l1(g, b, &budget, &settings),
                _ => maximize_acquisition_box(g, b, &settings),
            }
        };
        let points = constant_liar_batch(&gp, best, end - start, acquire, |k| {
            self.fallback_point(start + k)
        })?;
        Ok(points.into_iter().map(TighteningVector::clamped).collect())
    }
}

fn make_record(
    config: &CampaignConfig,
    index: usize,
    x: TighteningVector,
    eval: Evaluation,
    seed: u64,
    wall_time: f64,
) -> EvaluationRecord {
    let budget = config.budget();
    let l1_norm = x.l1_norm();
    let feasible = budget.map_or(true, |b| b.value(x.as_slice()) <= 0.0);
    let transformed = match (config.mode, budget, config.penalty()) {
        (Mode::Pobo, Some(b), Some(p)) => penalize_observation(eval.value, x.as_slice(), &b, &p),
        _ => eval.value,
    };
    EvaluationRecord {
        index: index + 1,
        phase: if config.mode.is_bo() && index >= config.init_evals {
            Phase::Bo
        } else {
            Phase::Init
        },
        mode: config.mode,
        budget: config.budget,
        rho: config.rho,
        x,
        raw_objective: eval.value,
        transformed_objective: transformed,
        std_error: eval.std_error,
        l1_norm,
        feasible,
        seed,
        wall_time,
    }
}

/// Runs (or resumes) a campaign against any objective.
pub fn run_campaign_with<O: Objective>(
    config: &CampaignConfig,
    objective: &O,
    resume: Option<Checkpoint>,
    mut control: Control<'_>,
) -> Result<CampaignOutcome> {
    config.validate()?;
    let dim = objective.dim();
    let mut state = match resume {
        Some(cp) => {
            if cp.config != *config {
                return Err(Error::Config(
                    "checkpoint was written with a different configuration".into(),
                ));
            }
            if cp.dim != dim {
                return Err(Error::DimensionMismatch {
                    what: "checkpoint dimension",
                    expected: dim,
                    actual: cp.dim,
                });
            }
            cp
        }
        None => Checkpoint::new(config, dim),
    };
    let total = config.total_evals();
    if state.records.len() > total {
        return Err(Error::Integrity(format!(
            "checkpoint holds {} records but the campaign has {total}",
            state.records.len()
        )));
    }
    let planner = Planner { config, dim };
    let mut interrupted = false;
    while state.records.len() < total {
        if control
            .interrupt
            .is_some_and(|flag| flag.load(Ordering::SeqCst))
            || control.stop_after.is_some_and(|n| state.records.len() >= n)
        {
            interrupted = true;
            break;
        }
        let done = state.records.len();
        let (start, end) = config.batch_bounds(done);
        // A resumed partial batch is replanned from the records before it.
        let mut lengthscale = state.lengthscale;
        let points = planner.plan(start, end, &state.records[..start], &mut lengthscale)?;
        state.lengthscale = lengthscale;
        for (offset, rec) in state.records[start..done].iter().enumerate() {
            if rec.x != points[offset] {
                return Err(Error::Integrity(format!(
                    "record {} does not match its replanned point",
                    rec.index
                )));
            }
        }
        let todo: Vec<(usize, TighteningVector)> = points
            .into_iter()
            .enumerate()
            .skip(done - start)
            .map(|(o, x)| (start + o, x))
            .collect();
        let results: Vec<Result<EvaluationRecord>> = todo
            .into_par_iter()
            .map(|(i, x)| {
                let s = seed::derive(config.seed, &[tag::EVALUATION, i as u64]);
                let t0 = Instant::now();
                let eval = objective.evaluate(&x, s)?;
                Ok(make_record(config, i, x, eval, s, t0.elapsed().as_secs_f64()))
            })
            .collect();
        for r in results {
            let rec = r?;
            if control.stop_after.is_some_and(|n| state.records.len() >= n) {
                break;
            }
            state.wall_times.push(rec.wall_time);
            state.records.push(rec);
        }
        if let Some(hook) = control.on_progress.as_mut() {
            hook(&state)?;
        }
    }
    let best = best_record(&state.records, config.mode).map(BestSummary::from_record);
    Ok(CampaignOutcome {
        checkpoint: state,
        best,
        interrupted,
    })
}

/// Runs a campaign on the cascade severity of `network`.
pub fn run_campaign(config: &CampaignConfig, network: &Network) -> Result<CampaignOutcome> {
    let objective = CascadeObjective::new(network, config)?;
    run_campaign_with(config, &objective, None, Control::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy() -> FnObjective<impl Fn(&[f64]) -> f64 + Sync> {
        FnObjective {
            dim: 3,
            f: |x: &[f64]| -x.iter().map(|v| (v - 0.3).powi(2)).sum::<f64>(),
        }
    }

    fn small(mode: Mode) -> CampaignConfig {
        CampaignConfig {
            init_evals: 8,
            bo_evals: 8,
            batch_size: 4,
            seed: 11,
            ..CampaignConfig::new(mode)
        }
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_to_budget(&[0.2, 0.2], 1.0), vec![0.5, 0.5]);
        assert_eq!(rescale_to_budget(&[0.1, 0.9, 0.3], 5.0), vec![1.0; 3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = sample_feasible_random(&mut rng, 41, 15.0);
            assert!((x.l1_norm() - 15.0).abs() <= 1e-9);
            assert!(x.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let skewed = rescale_to_budget(&[1.0, 0.01, 0.01, 0.01], 2.0);
        assert!((skewed.iter().sum::<f64>() - 2.0).abs() <= 1e-12);
        assert_eq!(skewed[0], 1.0);
    }

    #[test]
    fn batch_bounds_split_phases() {
        let c = CampaignConfig {
            init_evals: 5,
            bo_evals: 6,
            batch_size: 4,
            ..CampaignConfig::new(Mode::UnconstrainedBo)
        };
        assert_eq!(c.batch_bounds(0), (0, 4));
        assert_eq!(c.batch_bounds(4), (4, 5));
        assert_eq!(c.batch_bounds(5), (5, 9));
        assert_eq!(c.batch_bounds(10), (9, 11));
    }

    #[test]
    fn record_count_and_phases() {
        let out = run_campaign_with(&small(Mode::UnconstrainedBo), &toy(), None, Control::default())
            .unwrap();
        let recs = out.records();
        assert_eq!(recs.len(), 16);
        assert!(recs.iter().enumerate().all(|(i, r)| r.index == i + 1));
        assert_eq!(recs.iter().filter(|r| r.phase == Phase::Bo).count(), 8);
        assert!(out.checkpoint.lengthscale.is_some());
    }

    #[test]
    fn baselines_produce_one_record() {
        for (mode, norm) in [(Mode::Minimal, 0.0), (Mode::Maximal, 3.0)] {
            let out = run_campaign_with(&small(mode), &toy(), None, Control::default()).unwrap();
            assert_eq!(out.records().len(), 1);
            assert_eq!(out.records()[0].l1_norm, norm);
        }
    }

    #[test]
    fn missing_fields_are_named() {
        let e = CampaignConfig::from_toml("mode = \"pobo\"\nbudget = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("rho"), "{e}");
        let e = CampaignConfig::from_toml("mode = \"cabo\"\n").unwrap_err();
        assert!(e.to_string().contains("budget"), "{e}");
        assert!(CampaignConfig::from_toml("mode = \"random\"\nbugdet = 3\n").is_err());
        let c = CampaignConfig::from_toml("mode = \"random\"\n").unwrap();
        assert_eq!(c, CampaignConfig::new(Mode::Random));
    }

    #[test]
    fn pobo_records_are_penalized_exactly() {
        let c = CampaignConfig {
            budget: Some(1.0),
            rho: Some(2.0),
            ..small(Mode::Pobo)
        };
        let out = run_campaign_with(&c, &toy(), None, Control::default()).unwrap();
        for r in out.records() {
            let expected = r.raw_objective + 2.0 * (1.0 - r.x.l1_norm()).min(0.0);
            assert_eq!(r.transformed_objective, expected);
            assert_eq!(r.feasible, r.transformed_objective == r.raw_objective);
        }
    }

    #[test]
    fn cabo_proposals_are_feasible() {
        let c = CampaignConfig {
            budget: Some(0.5),
            ..small(Mode::Cabo)
        };
        let out = run_campaign_with(&c, &toy(), None, Control::default()).unwrap();
        for r in out.records().iter().filter(|r| r.phase == Phase::Bo) {
            assert!(r.l1_norm <= 0.5 + 1e-9, "{}", r.l1_norm);
        }
        assert!(out.best.unwrap().l1_norm <= 0.5 + 1e-9);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let c = small(Mode::UnconstrainedBo);
        let full = run_campaign_with(&c, &toy(), None, Control::default()).unwrap();
        let cut = run_campaign_with(
            &c,
            &toy(),
            None,
            Control {
                stop_after: Some(10),
                ..Control::default()
            },
        )
        .unwrap();
        assert!(cut.interrupted);
        assert_eq!(cut.records().len(), 10);
        let resumed =
            run_campaign_with(&c, &toy(), Some(cut.checkpoint), Control::default()).unwrap();
        let json = |o: &CampaignOutcome| serde_json::to_string(o.records()).unwrap();
        assert_eq!(json(&resumed), json(&full));
    }

    #[test]
    fn liar_batch_is_distinct() {
        let xs = vec![vec![0.1, 0.1], vec![0.9, 0.2], vec![0.5, 0.8]];
        let ys = vec![0.0, 1.0, 0.5];
        let gp = fit(&xs, &ys, &KernelParams::shared(1.0, 0.3, 0.01)).unwrap();
        let settings = OptimizerSettings::default();
        let pts = constant_liar_batch(
            &gp,
            1.0,
            3,
            |g, b, _| maximize_acquisition_box(g, b, &settings),
            |_| vec![0.5, 0.5],
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..i {
                let d: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d.sqrt() > 1e-6);
            }
        }
        let single = constant_liar_batch(
            &gp,
            1.0,
            1,
            |g, b, _| maximize_acquisition_box(g, b, &settings),
            |_| vec![0.5, 0.5],
        )
        .unwrap();
        assert_eq!(single[0], maximize_acquisition_box(&gp, 1.0, &settings).point);
        assert_eq!(gp.len(), 3);
    }
}
