//! Guided policy search: importance-sampled policy optimization with
//! guiding samples from trajectory optimization and on-policy samples.
//!
//! Per terrain the expected return is estimated by self-normalized
//! importance sampling,
//!
//! ```text
//! w_i = pi(tau_i) / q(tau_i),   Z = sum_i w_i,   J = sum_i (w_i / Z) R_i
//! ```
//!
//! where `q` is the uniform mixture of the samplers that produced samples on
//! that terrain: its guiding controller and every registered policy
//! snapshot. The optimized objective is the terrain average of
//! `J + lambda ln Z`; the second term rewards policies that keep some
//! probability mass on the samples. All weight arithmetic is in log space
//! and action log-densities leave out the shared dynamics terms.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::config::Config;
use crate::demo::{self, Demonstration};
use crate::error::{Error, Result};
use crate::eval;
use crate::optim::{self, Method};
use crate::policy::{self, InputScaling, PolicyParams, PolicySource};
use crate::rng::{self, stream};
use crate::rollout::{self, Trajectory};
use crate::terrain::Terrain;
use crate::trajopt::{self, LinearGaussianController};
use crate::walker::WalkerModel;

/// Below this (before shifting) every weight has underflowed.
const LN_Z_FLOOR: f64 = -690.775_527_898_213_7; // ln 1e-300

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Self-normalized importance-sampling estimate for one group of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IsEstimate {
    /// Weighted mean return.
    pub value: f64,
    /// `ln Z`, the log of the unnormalized weight sum.
    pub log_z: f64,
    pub ess: f64,
    /// Normalized weights, summing to one.
    pub weights: Vec<f64>,
    /// Every weight underflowed: the estimate is carried by numerical noise.
    pub degenerate: bool,
}

impl IsEstimate {
    pub fn weight_sum_error(&self) -> f64 {
        (self.weights.iter().sum::<f64>() - 1.0).abs()
    }
}

/// Estimates the expected return under the target from samples of the
/// proposal. Inputs are per-sample log-densities and returns.
pub fn estimate(log_target: &[f64], log_proposal: &[f64], returns: &[f64]) -> Result<IsEstimate> {
    let m = returns.len();
    if m == 0 || log_target.len() != m || log_proposal.len() != m {
        return Err(Error::Dimension(format!(
            "estimate needs equal non-empty inputs, got {}, {}, {}",
            log_target.len(),
            log_proposal.len(),
            m
        )));
    }
    let lw: Vec<f64> = log_target.iter().zip(log_proposal).map(|(p, q)| p - q).collect();
    if lw.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("importance log-weights"));
    }
    let log_z = log_sum_exp(&lw);
    if !log_z.is_finite() {
        return Err(Error::NonFinite("importance weight normalizer"));
    }
    let mut weights: Vec<f64> = lw.iter().map(|v| (v - log_z).exp()).collect();
    // renormalize away the rounding left by the shift
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    let value = weights.iter().zip(returns).map(|(w, r)| w * r).sum();
    let ess = (1.0 / weights.iter().map(|w| w * w).sum::<f64>()).clamp(1.0, m as f64);
    Ok(IsEstimate {
        value,
        log_z,
        ess,
        degenerate: log_z < LN_Z_FLOOR && ess < 1.0 + 1e-6,
        weights,
    })
}

/// Objective `value + lambda ln Z` and the coefficients `c_i` such that its
/// gradient is `sum_i c_i grad log pi(tau_i)`.
pub fn objective_terms(
    log_target: &[f64],
    log_proposal: &[f64],
    returns: &[f64],
    lambda: f64,
) -> Result<(IsEstimate, f64, Vec<f64>)> {
    let est = estimate(log_target, log_proposal, returns)?;
    let coeffs = est
        .weights
        .iter()
        .zip(returns)
        .map(|(w, r)| w * (r - est.value + lambda))
        .collect();
    let obj = est.value + lambda * est.log_z;
    Ok((est, obj, coeffs))
}

/// A distribution that generated samples.
#[derive(Debug, Clone)]
pub enum Sampler {
    /// Guiding controller of one terrain (index into the set's terrains).
    Guide {
        terrain: usize,
        controller: LinearGaussianController,
    },
    /// The policy as it was after a GPS iteration.
    Policy { iteration: usize, params: PolicyParams },
}

impl Sampler {
    /// Whether this sampler draws on `terrain` and so enters its mixture.
    pub fn covers(&self, terrain: usize) -> bool {
        match self {
            Sampler::Guide { terrain: t, .. } => *t == terrain,
            Sampler::Policy { .. } => true,
        }
    }

    pub fn log_density(&self, traj: &Trajectory) -> Result<f64> {
        match self {
            Sampler::Guide { controller, .. } => controller.traj_log_prob(&traj.states, &traj.actions),
            Sampler::Policy { params, .. } => Ok(params.traj_log_prob(&traj.features, &traj.actions)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub terrain: usize,
    pub sampler: usize,
    pub traj: Trajectory,
    /// Return over the full horizon (see [`Trajectory::padded_return`]).
    pub ret: f64,
    /// Log-density under each registered sampler that covers the terrain.
    pub log_q: Vec<Option<f64>>,
}

/// Samples grouped by terrain, with the samplers that drew them.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub terrains: usize,
    pub horizon: usize,
    samplers: Vec<Sampler>,
    samples: Vec<Sample>,
}

impl SampleSet {
    pub fn new(terrains: usize, horizon: usize) -> Self {
        Self {
            terrains,
            horizon,
            samplers: Vec::new(),
            samples: Vec::new(),
        }
    }

    pub fn samplers(&self) -> &[Sampler] {
        &self.samplers
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Registers a sampler and scores every existing sample it covers.
    pub fn register(&mut self, sampler: Sampler) -> Result<usize> {
        if let Sampler::Guide { terrain, .. } = &sampler {
            if *terrain >= self.terrains {
                return Err(Error::InvalidArgument(format!("no terrain {terrain}")));
            }
        }
        let scores = crate::par::map(&self.samples, |s| -> Result<Option<f64>> {
            if sampler.covers(s.terrain) {
                sampler.log_density(&s.traj).map(Some)
            } else {
                Ok(None)
            }
        });
        for (s, lp) in self.samples.iter_mut().zip(scores) {
            s.log_q.push(lp?);
        }
        self.samplers.push(sampler);
        Ok(self.samplers.len() - 1)
    }

    /// Adds trajectories drawn by `sampler` on `terrain`, scoring them under
    /// every covering sampler.
    pub fn add(&mut self, terrain: usize, sampler: usize, trajs: Vec<Trajectory>) -> Result<()> {
        if sampler >= self.samplers.len() {
            return Err(Error::InvalidArgument(format!(
                "sampler {sampler} is not registered"
            )));
        }
        if !self.samplers[sampler].covers(terrain) {
            return Err(Error::InvalidArgument(format!(
                "sampler {sampler} does not draw on terrain {terrain}"
            )));
        }
        let samplers = &self.samplers;
        let horizon = self.horizon;
        let scored = crate::par::map(&trajs, |traj| -> Result<Vec<Option<f64>>> {
            samplers
                .iter()
                .map(|q| {
                    if q.covers(terrain) {
                        q.log_density(traj).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect()
        });
        for (traj, log_q) in trajs.into_iter().zip(scored) {
            let ret = traj.padded_return(horizon);
            self.samples.push(Sample {
                terrain,
                sampler,
                traj,
                ret,
                log_q: log_q?,
            });
        }
        Ok(())
    }

    /// Log-density of each sample under its terrain's mixture proposal.
    pub fn log_proposals(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| {
                let lq: Vec<f64> = s.log_q.iter().flatten().copied().collect();
                log_sum_exp(&lq) - (lq.len() as f64).ln()
            })
            .collect()
    }

    /// Sample indices per terrain; terrains without samples are empty.
    pub fn by_terrain(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.terrains];
        for (i, s) in self.samples.iter().enumerate() {
            out[s.terrain].push(i);
        }
        out
    }

    pub fn count(&self, terrain: usize, sampler: usize) -> usize {
        self.samples
            .iter()
            .filter(|s| s.terrain == terrain && s.sampler == sampler)
            .count()
    }
}

/// Value of the GPS objective for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    /// One estimate per terrain that has samples.
    pub per_terrain: Vec<IsEstimate>,
}

impl Evaluation {
    pub fn mean_log_z(&self) -> f64 {
        mean(self.per_terrain.iter().map(|e| e.log_z))
    }

    pub fn mean_ess(&self) -> f64 {
        mean(self.per_terrain.iter().map(|e| e.ess))
    }

    pub fn degenerate(&self) -> bool {
        self.per_terrain.iter().any(|e| e.degenerate)
    }

    pub fn weight_sum_error(&self) -> f64 {
        self.per_terrain
            .iter()
            .map(IsEstimate::weight_sum_error)
            .fold(0.0, f64::max)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Objective evaluator with the mixture densities cached.
pub struct Objective<'a> {
    set: &'a SampleSet,
    log_q: Vec<f64>,
    groups: Vec<Vec<usize>>,
    pub lambda: f64,
}

impl<'a> Objective<'a> {
    pub fn new(set: &'a SampleSet, lambda: f64) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::InvalidArgument("the sample set is empty".into()));
        }
        let groups = set.by_terrain().into_iter().filter(|g| !g.is_empty()).collect();
        Ok(Self {
            set,
            log_q: set.log_proposals(),
            groups,
            lambda,
        })
    }

    fn combine(&self, log_p: &[f64]) -> Result<(Evaluation, Vec<Vec<f64>>)> {
        let mut per_terrain = Vec::with_capacity(self.groups.len());
        let mut coeffs = Vec::with_capacity(self.groups.len());
        let mut total = 0.0;
        for g in &self.groups {
            let lp: Vec<f64> = g.iter().map(|&i| log_p[i]).collect();
            let lq: Vec<f64> = g.iter().map(|&i| self.log_q[i]).collect();
            let r: Vec<f64> = g.iter().map(|&i| self.set.samples[i].ret).collect();
            let (est, obj, c) = objective_terms(&lp, &lq, &r, self.lambda)?;
            total += obj;
            per_terrain.push(est);
            coeffs.push(c);
        }
        let k = self.groups.len() as f64;
        Ok((
            Evaluation {
                objective: total / k,
                per_terrain,
            },
            coeffs,
        ))
    }

    pub fn value(&self, params: &PolicyParams) -> Result<Evaluation> {
        let log_p = crate::par::map(&self.set.samples, |s| {
            params.traj_log_prob(&s.traj.features, &s.traj.actions)
        });
        Ok(self.combine(&log_p)?.0)
    }

    pub fn value_and_gradient(&self, params: &PolicyParams) -> Result<(Evaluation, Vec<f64>)> {
        let n = params.theta.len();
        let parts = crate::par::map(&self.set.samples, |s| {
            let mut g = vec![0.0; n];
            let lp = params.traj_log_prob_grad(&s.traj.features, &s.traj.actions, 1.0, &mut g);
            (lp, g)
        });
        let log_p: Vec<f64> = parts.iter().map(|(lp, _)| *lp).collect();
        let (eval, coeffs) = self.combine(&log_p)?;
        let k = self.groups.len() as f64;
        let mut grad = vec![0.0; n];
        for (g, c) in self.groups.iter().zip(&coeffs) {
            for (&i, ci) in g.iter().zip(c) {
                let scale = ci / k;
                grad.iter_mut()
                    .zip(&parts[i].1)
                    .for_each(|(a, b)| *a += scale * b);
            }
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective gradient"));
        }
        Ok((eval, grad))
    }
}

/// Outcome of maximizing the objective on a fixed sample set.
#[derive(Debug, Clone)]
pub struct PolicyStep {
    pub params: PolicyParams,
    pub start: Evaluation,
    pub end: Evaluation,
    pub evals: usize,
    pub converged: bool,
    /// Largest `|sum w - 1|` seen in any evaluation.
    pub weight_sum_error: f64,
}

pub fn optimize_policy(
    start: &PolicyParams,
    set: &SampleSet,
    lambda: f64,
    method: Method,
    max_evals: usize,
) -> Result<PolicyStep> {
    let obj = Objective::new(set, lambda)?;
    let arch = start.arch;
    let mut worst: f64 = 0.0;
    let first = obj.value(start)?;
    worst = worst.max(first.weight_sum_error());
    let (params, evals, converged) = if max_evals == 0 {
        (start.clone(), 0, true)
    } else {
        let f = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
            let p = PolicyParams {
                arch,
                theta: theta.to_vec(),
            };
            let (e, g) = obj.value_and_gradient(&p)?;
            worst = worst.max(e.weight_sum_error());
            Ok((e.objective, g))
        };
        let opts = optim::Options {
            max_evals,
            ..optim::Options::default()
        };
        let scaling = InputScaling::from_data(set.samples().iter().map(|s| s.traj.features.as_slice()));
        let out = policy::maximize_scaled(f, start, &scaling, method, &opts)?;
        (PolicyParams { arch, theta: out.x }, out.evals, out.converged)
    };
    let end = obj.value(&params)?;
    worst = worst.max(end.weight_sum_error());
    Ok(PolicyStep {
        params,
        start: first,
        end,
        evals,
        converged,
        weight_sum_error: worst,
    })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub objective: f64,
    /// Terrain mean of `ln Z`.
    pub log_z: f64,
    pub ess: f64,
    pub train_success: f64,
    pub wallclock_s: f64,
}

pub const LOG_HEADER: &str = "iter,objective,Z,ess,train_success,wallclock_s";

/// The training log as CSV. The `Z` column holds `ln Z` averaged over
/// terrains: `Z` itself routinely under- or overflows.
pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            r.iter, r.objective, r.log_z, r.ess, r.train_success, r.wallclock_s
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct GuideSummary {
    pub terrain_id: u64,
    pub demo_source: demo::DemoSource,
    pub demo_reward: f64,
    pub ilqg_rewards: Vec<f64>,
    pub ilqg_converged: bool,
}

impl GuideSummary {
    pub fn final_reward(&self) -> f64 {
        *self.ilqg_rewards.last().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: PolicyParams,
    pub init_params: PolicyParams,
    pub log: Vec<LogRow>,
    pub guides: Vec<GuideSummary>,
    pub method: Method,
    /// Guiding samples drawn per terrain.
    pub guiding_counts: Vec<usize>,
    /// On-policy samples drawn per terrain, for each iteration.
    pub policy_counts: Vec<Vec<usize>>,
    /// Registered samplers after each iteration (index 0: before the loop).
    pub registry_sizes: Vec<usize>,
    /// Horizon of every guiding and on-policy rollout.
    pub rollout_lengths: Vec<usize>,
    /// Largest `|sum w - 1|` over every objective evaluation of the run.
    pub weight_sum_error: f64,
    /// Mean squared error of the supervised policy mean on the guiding
    /// actions, and of always predicting zero.
    pub supervised_mse: f64,
    pub zero_mse: f64,
    pub warnings: Vec<String>,
}

/// Training progress messages, one line each.
pub type Progress<'a> = &'a mut dyn FnMut(&str);

fn load_demos(cfg: &Config) -> Result<Vec<Option<Demonstration>>> {
    if cfg.demo_files.is_empty() {
        return Ok(vec![None; cfg.train_terrains.len()]);
    }
    cfg.demo_files
        .iter()
        .map(|p| Demonstration::load(p).map(Some))
        .collect()
}

struct Prepared {
    controller: LinearGaussianController,
    summary: GuideSummary,
    samples: Vec<Trajectory>,
}

fn prepare_terrain(
    cfg: &Config,
    model: &WalkerModel,
    id: u64,
    terrain: &Terrain,
    demo: Option<Demonstration>,
) -> Result<Prepared> {
    let wrap = |e: Error| Error::TerrainOptimization {
        terrain: id,
        source: Box::new(e),
    };
    let demo = match demo {
        Some(d) => d,
        None => demo::scripted_demo(model, terrain, cfg.horizon).map_err(wrap)?,
    };
    let guide = trajopt::optimize_demo(
        model,
        terrain,
        &demo,
        &cfg.ilqg_options(),
        cfg.alpha_q,
        cfg.covariance_bounds(),
    )
    .map_err(wrap)?;
    let seed = rng::derive(cfg.seed, &[stream::GUIDING, id]);
    let samples = guide
        .controller
        .sample(model, terrain, cfg.guiding_samples, seed)?;
    Ok(Prepared {
        summary: GuideSummary {
            terrain_id: id,
            demo_source: demo.source,
            demo_reward: guide.demo_reward,
            ilqg_rewards: guide.result.reward_trace.clone(),
            ilqg_converged: guide.result.converged,
        },
        controller: guide.controller,
        samples,
    })
}

/// On-policy rollouts of the stochastic policy, `n` per terrain.
fn policy_samples(
    model: &WalkerModel,
    params: &PolicyParams,
    terrains: &[(u64, Terrain)],
    n: usize,
    seed: u64,
    iteration: usize,
    horizon: usize,
) -> Result<Vec<Vec<Trajectory>>> {
    let jobs: Vec<(usize, usize)> = (0..terrains.len())
        .flat_map(|k| (0..n).map(move |i| (k, i)))
        .collect();
    let trajs = crate::par::map(&jobs, |&(k, i)| {
        let (id, terrain) = &terrains[k];
        let s = rng::derive(seed, &[stream::POLICY, iteration as u64, *id, i as u64]);
        let mut src = PolicySource::new(params, false);
        rollout::rollout(model, &mut src, terrain, s, horizon)
    });
    let mut out = vec![Vec::with_capacity(n); terrains.len()];
    for ((k, _), t) in jobs.into_iter().zip(trajs) {
        out[k].push(t?);
    }
    Ok(out)
}

/// Runs the full pipeline: guiding distributions per training terrain,
/// supervised initialization, then `n_gps` rounds of policy optimization
/// and on-policy sampling.
pub fn train(cfg: &Config, progress: Progress<'_>) -> Result<TrainResult> {
    cfg.validate()?;
    let clock = Instant::now();
    let model = cfg.model();
    let arch = cfg.architecture()?;
    let method = cfg.effective_method();
    let terrains = cfg.build_terrains(&cfg.train_terrains)?;
    let demos = load_demos(cfg)?;
    let criteria = cfg.criteria();
    let eval_seed = rng::derive(cfg.seed, &[stream::EVAL]);
    let mut warnings = Vec::new();
    if method != cfg.optimizer {
        progress(&format!(
            "hard rectifier: using {method} instead of {}",
            cfg.optimizer
        ));
    }

    let jobs: Vec<(usize, Option<Demonstration>)> = demos.into_iter().enumerate().collect();
    let prepared = crate::par::map(&jobs, |(k, d)| {
        let (id, terrain) = &terrains[*k];
        prepare_terrain(cfg, &model, *id, terrain, d.clone())
    });
    let mut set = SampleSet::new(terrains.len(), cfg.horizon);
    let mut guides = Vec::new();
    let mut guiding_counts = Vec::new();
    let mut rollout_lengths = Vec::new();
    for (k, p) in prepared.into_iter().enumerate() {
        let p = p?;
        let s = &p.summary;
        progress(&format!(
            "terrain {}: demo ({:?}) reward {:.2} -> iLQG {:.2} after {} iterations",
            s.terrain_id,
            s.demo_source,
            s.demo_reward,
            s.final_reward(),
            s.ilqg_rewards.len() - 1
        ));
        rollout_lengths.push(p.controller.horizon());
        let id = set.register(Sampler::Guide {
            terrain: k,
            controller: p.controller,
        })?;
        guiding_counts.push(p.samples.len());
        set.add(k, id, p.samples)?;
        guides.push(p.summary);
    }

    // supervised initialization on the guiding samples
    let start = PolicyParams::init(arch, rng::derive(cfg.seed, &[stream::INIT]));
    let data: Vec<(&[_], &[_])> = set
        .samples()
        .iter()
        .map(|s| (s.traj.features.as_slice(), s.traj.actions.as_slice()))
        .collect();
    let fit = policy::supervised_fit(start, &data, method, cfg.supervised_evals)?;
    let supervised_mse = policy::action_mse(&fit.params, &data);
    let zero = PolicyParams::new(arch, vec![0.0; arch.param_count()])?;
    let zero_mse = policy::action_mse(&zero, &data);
    drop(data);
    progress(&format!(
        "supervised init: log-likelihood {:.3} -> {:.3}, action mse {:.3} (zero predictor {:.3})",
        fit.initial_likelihood, fit.final_likelihood, supervised_mse, zero_mse
    ));
    let init_params = fit.params;
    let mut params = init_params.clone();

    let objective = Objective::new(&set, cfg.lambda)?;
    let e0 = objective.value(&params)?;
    let mut weight_sum_error = e0.weight_sum_error();
    let success0 = eval::evaluate(
        &model,
        &params,
        &terrains,
        cfg.eval_trials,
        eval_seed,
        cfg.horizon,
        &criteria,
    )?
    .success_fraction();
    let mut log = vec![LogRow {
        iter: 0,
        objective: e0.objective,
        log_z: e0.mean_log_z(),
        ess: e0.mean_ess(),
        train_success: success0,
        wallclock_s: clock.elapsed().as_secs_f64(),
    }];
    drop(objective);
    progress(&format!(
        "iter 0: objective {:.3} ess {:.2} train success {:.2}",
        e0.objective,
        e0.mean_ess(),
        success0
    ));

    let mut registry_sizes = vec![set.samplers().len()];
    let mut policy_counts = Vec::new();
    for iter in 1..=cfg.n_gps {
        let step = optimize_policy(&params, &set, cfg.lambda, method, cfg.gps_evals)?;
        weight_sum_error = weight_sum_error.max(step.weight_sum_error);
        if step.end.degenerate() {
            let w = format!("iteration {iter}: degenerate importance weights");
            progress(&format!("warning: {w}"));
            warnings.push(w);
        }
        params = step.params;

        let snapshot = set.register(Sampler::Policy {
            iteration: iter,
            params: params.clone(),
        })?;
        let drawn = policy_samples(
            &model,
            &params,
            &terrains,
            cfg.policy_samples,
            cfg.seed,
            iter,
            cfg.horizon,
        )?;
        let mut counts = Vec::new();
        for (k, trajs) in drawn.into_iter().enumerate() {
            counts.push(trajs.len());
            rollout_lengths.push(cfg.horizon);
            set.add(k, snapshot, trajs)?;
        }
        policy_counts.push(counts);
        registry_sizes.push(set.samplers().len());

        let e = Objective::new(&set, cfg.lambda)?.value(&params)?;
        weight_sum_error = weight_sum_error.max(e.weight_sum_error());
        let success = eval::evaluate(
            &model,
            &params,
            &terrains,
            cfg.eval_trials,
            eval_seed,
            cfg.horizon,
            &criteria,
        )?
        .success_fraction();
        progress(&format!(
            "iter {iter}: objective {:.3} -> {:.3} ({} evals), re-estimated {:.3}, ess {:.2}, train success {:.2}",
            step.start.objective,
            step.end.objective,
            step.evals,
            e.objective,
            e.mean_ess(),
            success
        ));
        log.push(LogRow {
            iter,
            objective: e.objective,
            log_z: e.mean_log_z(),
            ess: e.mean_ess(),
            train_success: success,
            wallclock_s: clock.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainResult {
        params,
        init_params,
        log,
        guides,
        method,
        guiding_counts,
        policy_counts,
        registry_sizes,
        rollout_lengths,
        weight_sum_error,
        supervised_mse,
        zero_mse,
        warnings,
    })
}

pub fn save_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    std::fs::write(path, log_csv(rows)).map_err(|e| Error::io(path, e))
}
