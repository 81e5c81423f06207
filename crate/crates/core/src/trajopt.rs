//! iLQG trajectory optimization and linear-Gaussian guiding controllers.
//!
//! The optimizer works on any [`Problem`]: a deterministic discrete-time
//! system with a per-step reward, its linearization and the reward's
//! quadratic expansion. Internally everything is expressed as a cost
//! (negated reward) to be minimized.
//!
//! Regularization adds `mu I` to the value Hessian inside the control
//! curvature, `Q_uu = l_uu + B^T (V_xx + mu I) B`, which shrinks the gains
//! towards zero as `mu` grows. `mu` starts at [`IlqgOptions::mu_init`], is
//! multiplied by 10 whenever `Q_uu` is not positive definite (up to
//! [`IlqgOptions::mu_max`]), and divided by 10 after every accepted
//! iteration (snapping to zero below 1e-6).

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rand_distr::{Distribution, StandardNormal};

use crate::demo::Demonstration;
use crate::error::{Error, Result};
use crate::features::{self, FeatureVector};
use crate::rng::{self, Rng};
use crate::rollout::{self, ActionSource, Trajectory};
use crate::terrain::Terrain;
use crate::walker::{state_difference, Torques, WalkerModel, WalkerState, NU, NX};

/// Quadratic expansion of the per-step reward.
#[derive(Debug, Clone)]
pub struct RewardExpansion {
    pub rx: DVector<f64>,
    pub ru: DVector<f64>,
    pub rxx: DMatrix<f64>,
    pub ruu: DMatrix<f64>,
    pub rux: DMatrix<f64>,
}

/// A finite-horizon deterministic control problem.
pub trait Problem: Sync {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn step(&self, t: usize, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    /// Jacobians `(A, B)` of `step`.
    fn linearize(&self, t: usize, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
    fn reward(&self, t: usize, x: &[f64], u: &[f64]) -> Result<f64>;
    fn reward_expansion(&self, t: usize, x: &[f64], u: &[f64]) -> Result<RewardExpansion>;

    /// Reward, gradient and Hessian of the final state. Zero by default.
    fn terminal(&self, x: &[f64]) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let n = x.len();
        Ok((0.0, DVector::zeros(n), DMatrix::zeros(n, n)))
    }

    /// `a - b` in the tangent space of the state.
    fn state_diff(&self, a: &[f64], b: &[f64]) -> DVector<f64> {
        DVector::from_iterator(a.len(), a.iter().zip(b).map(|(a, b)| a - b))
    }

    /// Projects an action onto the admissible set.
    fn clamp_action(&self, u: &mut [f64]) {
        let _ = u;
    }
}

/// A state/action sequence with its total reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Nominal {
    /// `T + 1` states.
    pub xs: Vec<Vec<f64>>,
    pub us: Vec<Vec<f64>>,
    pub total_reward: f64,
}

impl Nominal {
    pub fn horizon(&self) -> usize {
        self.us.len()
    }
}

/// Rolls `us` out from `x0` and scores the result.
pub fn evaluate<P: Problem + ?Sized>(problem: &P, x0: &[f64], us: &[Vec<f64>]) -> Result<Nominal> {
    let mut xs = Vec::with_capacity(us.len() + 1);
    xs.push(x0.to_vec());
    let mut total = 0.0;
    for (t, u) in us.iter().enumerate() {
        total += problem.reward(t, &xs[t], u)?;
        let next = problem.step(t, &xs[t], u)?;
        xs.push(next);
    }
    total += problem.terminal(xs.last().unwrap())?.0;
    Ok(Nominal {
        xs,
        us: us.to_vec(),
        total_reward: total,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlqgOptions {
    pub max_iters: usize,
    /// Stop once an iteration improves the total reward by less than this.
    pub min_improvement: f64,
    pub mu_init: f64,
    pub mu_max: f64,
    /// Step sizes tried are `1, 1/2, ..., 2^-line_search_steps`.
    pub line_search_steps: u32,
}

impl Default for IlqgOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            min_improvement: 1e-4,
            mu_init: 1e-3,
            mu_max: 1e6,
            line_search_steps: 10,
        }
    }
}

/// Local linear feedback law and the control curvature behind it.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub k: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    /// Cost-form `Q_uu` (positive definite), i.e. minus the reward curvature.
    pub quu: Vec<DMatrix<f64>>,
    /// Predicted reward change of a full step is `dv[0] + dv[1]`; a step of
    /// size `a` predicts `a dv[0] + a^2 dv[1]`.
    pub dv: [f64; 2],
}

/// Linearization and reward expansion along a nominal.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub rewards: Vec<RewardExpansion>,
    pub terminal: (DVector<f64>, DMatrix<f64>),
}

/// Linearizes `problem` along `nom`. A step whose linearization fails
/// reuses `fallback` at that step if given, otherwise the preceding step.
pub fn local_model<P: Problem + ?Sized>(
    problem: &P,
    nom: &Nominal,
    fallback: Option<&LocalModel>,
) -> Result<LocalModel> {
    let horizon = nom.horizon();
    let lin: Vec<Result<(DMatrix<f64>, DMatrix<f64>)>> =
        crate::par::map_range(horizon, |t| problem.linearize(t, &nom.xs[t], &nom.us[t]));
    let mut a: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    let mut b: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    for (t, r) in lin.into_iter().enumerate() {
        let (at, bt) = match r {
            Ok(ab) => ab,
            Err(Error::LinearizationFailed { .. }) | Err(Error::Diverged { .. }) => {
                if let Some(prev) = fallback {
                    (prev.a[t].clone(), prev.b[t].clone())
                } else if t > 0 {
                    (a[t - 1].clone(), b[t - 1].clone())
                } else {
                    return Err(Error::LinearizationFailed { step: t });
                }
            }
            Err(e) => return Err(e),
        };
        a.push(at);
        b.push(bt);
    }
    let rewards = (0..horizon)
        .map(|t| problem.reward_expansion(t, &nom.xs[t], &nom.us[t]))
        .collect::<Result<Vec<_>>>()?;
    let (_, vx, vxx) = problem.terminal(nom.xs.last().unwrap())?;
    Ok(LocalModel {
        a,
        b,
        rewards,
        terminal: (vx, vxx),
    })
}

/// Riccati-like recursion in cost form. Fails with the offending step if
/// `Q_uu` is not positive definite.
pub fn backward_pass(model: &LocalModel, mu: f64) -> std::result::Result<BackwardPass, usize> {
    let horizon = model.a.len();
    let nx = model.terminal.0.len();
    // value of the cost-to-go: gradient and Hessian
    let mut vx = -&model.terminal.0;
    let mut vxx = -&model.terminal.1;
    let mut k = vec![DVector::zeros(0); horizon];
    let mut gains = vec![DMatrix::zeros(0, 0); horizon];
    let mut quu_all = vec![DMatrix::zeros(0, 0); horizon];
    let mut dv = [0.0; 2];
    let reg = DMatrix::<f64>::identity(nx, nx) * mu;
    for t in (0..horizon).rev() {
        let (a, b, r) = (&model.a[t], &model.b[t], &model.rewards[t]);
        let qx = -&r.rx + a.transpose() * &vx;
        let qu = -&r.ru + b.transpose() * &vx;
        let qxx = -&r.rxx + a.transpose() * &vxx * a;
        let bv = b.transpose() * &vxx;
        let quu = -&r.ruu + &bv * b;
        let quu = (&quu + quu.transpose()) * 0.5;
        let qux = -&r.rux + &bv * a;
        // the regularized terms only shape the gains; the value update below
        // uses the exact expansion
        let breg = b.transpose() * &reg;
        let quu_reg = &quu + &breg * b;
        let qux_reg = &qux + &breg * a;
        let Some(chol) = quu_reg.clone().cholesky() else {
            return Err(t);
        };
        let kt = -chol.solve(&qu);
        let kk = -chol.solve(&qux_reg);
        dv[0] += kt.dot(&qu);
        dv[1] += 0.5 * kt.dot(&(&quu * &kt));
        vx = &qx + kk.transpose() * &quu * &kt + kk.transpose() * &qu + qux.transpose() * &kt;
        let v = &qxx + kk.transpose() * &quu * &kk + kk.transpose() * &qux + qux.transpose() * &kk;
        vxx = (&v + v.transpose()) * 0.5;
        k[t] = kt;
        gains[t] = kk;
        quu_all[t] = quu_reg;
    }
    // report in reward units
    Ok(BackwardPass {
        k,
        gains,
        quu: quu_all,
        dv: [-dv[0], -dv[1]],
    })
}

/// Backward pass with regularization escalated by 10x from `mu` until it
/// succeeds. Returns the pass and the `mu` that worked.
pub fn regularized_backward_pass(model: &LocalModel, mu: f64, mu_max: f64) -> Result<(BackwardPass, f64)> {
    let mut mu = mu;
    loop {
        match backward_pass(model, mu) {
            Ok(bp) => return Ok((bp, mu)),
            Err(step) => {
                if mu >= mu_max {
                    return Err(Error::RegularizationFailed { step, mu });
                }
                mu = if mu == 0.0 { 1e-6 } else { (mu * 10.0).min(mu_max) };
            }
        }
    }
}

/// Closed-loop rollout `u_t = u^_t + alpha k_t + K_t (x_t - x^_t)`.
pub fn forward_pass<P: Problem + ?Sized>(
    problem: &P,
    nom: &Nominal,
    bp: &BackwardPass,
    alpha: f64,
) -> Result<Nominal> {
    let horizon = nom.horizon();
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut us = Vec::with_capacity(horizon);
    xs.push(nom.xs[0].clone());
    let mut total = 0.0;
    for t in 0..horizon {
        let dx = problem.state_diff(&xs[t], &nom.xs[t]);
        let du = &bp.k[t] * alpha + &bp.gains[t] * dx;
        let mut u: Vec<f64> = nom.us[t].iter().zip(du.iter()).map(|(u, d)| u + d).collect();
        problem.clamp_action(&mut u);
        total += problem.reward(t, &xs[t], &u)?;
        let next = problem.step(t, &xs[t], &u)?;
        xs.push(next);
        us.push(u);
    }
    total += problem.terminal(xs.last().unwrap())?.0;
    Ok(Nominal {
        xs,
        us,
        total_reward: total,
    })
}

#[derive(Debug, Clone)]
pub struct IlqgResult {
    pub nominal: Nominal,
    /// Backward pass at the final nominal with the smallest regularization
    /// that kept `Q_uu` positive definite.
    pub final_pass: BackwardPass,
    pub final_mu: f64,
    /// Total reward of the initial sequence and after every accepted iteration.
    pub reward_trace: Vec<f64>,
    pub iterations: usize,
    /// True when the run stopped on small improvement or a failed line search.
    pub converged: bool,
}

/// Optimizes the action sequence `us0` from `x0`.
pub fn ilqg<P: Problem + ?Sized>(
    problem: &P,
    x0: &[f64],
    us0: &[Vec<f64>],
    opts: &IlqgOptions,
) -> Result<IlqgResult> {
    if us0.is_empty() {
        return Err(Error::InvalidArgument("iLQG needs at least one action".into()));
    }
    let mut nom = evaluate(problem, x0, us0)?;
    let mut trace = vec![nom.total_reward];
    let mut mu = opts.mu_init;
    let mut model = local_model(problem, &nom, None)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        let (bp, used) = regularized_backward_pass(&model, mu, opts.mu_max)?;
        mu = used;
        let mut accepted = None;
        for i in 0..=opts.line_search_steps {
            let alpha = 0.5f64.powi(i as i32);
            match forward_pass(problem, &nom, &bp, alpha) {
                Ok(cand) if cand.total_reward > nom.total_reward => {
                    accepted = Some(cand);
                    break;
                }
                Ok(_) => {}
                Err(Error::Diverged { .. }) | Err(Error::OffTerrain { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        let Some(cand) = accepted else {
            converged = true;
            break;
        };
        iterations += 1;
        let improvement = cand.total_reward - nom.total_reward;
        nom = cand;
        trace.push(nom.total_reward);
        mu = if mu * 0.1 < 1e-6 { 0.0 } else { mu * 0.1 };
        model = local_model(problem, &nom, Some(&model))?;
        if improvement < opts.min_improvement {
            converged = true;
            break;
        }
    }
    let (final_pass, final_mu) = regularized_backward_pass(&model, 0.0, opts.mu_max)?;
    Ok(IlqgResult {
        nominal: nom,
        final_pass,
        final_mu,
        reward_trace: trace,
        iterations,
        converged,
    })
}

/// The walker on one terrain as an iLQG problem. Steps are noise-free and
/// actions are clamped to the torque limit.
pub struct WalkerProblem<'a> {
    pub model: &'a WalkerModel,
    pub terrain: &'a Terrain,
}

fn state_of(x: &[f64], t: usize) -> WalkerState {
    WalkerState::from_vector(x, t)
}

fn torques_of(u: &[f64]) -> Torques {
    std::array::from_fn(|i| u[i])
}

impl Problem for WalkerProblem<'_> {
    fn nx(&self) -> usize {
        NX
    }

    fn nu(&self) -> usize {
        NU
    }

    fn step(&self, t: usize, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let s = self
            .model
            .step(&state_of(x, t), &torques_of(u), self.terrain, &[0.0; NU])?;
        // the trunk leaving the map ends the usable horizon
        self.terrain.height_at(s.trunk_x())?;
        Ok(s.to_vector().to_vec())
    }

    fn linearize(&self, t: usize, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (a, b) = self
            .model
            .linearize(&state_of(x, t), &torques_of(u), self.terrain)?;
        Ok((
            DMatrix::from_row_slice(NX, NX, &a),
            DMatrix::from_row_slice(NX, NU, &b),
        ))
    }

    fn reward(&self, _t: usize, x: &[f64], u: &[f64]) -> Result<f64> {
        features::reward(
            &state_of(x, 0),
            &self.model.clamp_torques(&torques_of(u)),
            self.terrain,
        )
    }

    fn reward_expansion(&self, _t: usize, x: &[f64], u: &[f64]) -> Result<RewardExpansion> {
        let d = features::reward_derivatives(&state_of(x, 0), &torques_of(u), self.terrain)?;
        Ok(RewardExpansion {
            rx: DVector::from_column_slice(d.rx.as_slice()),
            ru: DVector::from_column_slice(d.ru.as_slice()),
            rxx: DMatrix::from_column_slice(NX, NX, d.rxx.as_slice()),
            ruu: DMatrix::from_column_slice(NU, NU, d.ruu.as_slice()),
            rux: DMatrix::zeros(NU, NX),
        })
    }

    fn state_diff(&self, a: &[f64], b: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&state_difference(a, b))
    }

    fn clamp_action(&self, u: &mut [f64]) {
        let lim = self.model.torque_limit;
        u.iter_mut().for_each(|v| *v = v.clamp(-lim, lim));
    }
}

/// Bounds on the standard deviation of guiding actions, per eigendirection.
/// The walker's control curvature is dominated by the small torque penalty,
/// so the raw `Q_uu^-1` spreads over tens of newton-metres; the ceiling keeps
/// guiding samples near the optimized gait.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceBounds {
    pub min_std: f64,
    pub max_std: f64,
}

impl Default for CovarianceBounds {
    fn default() -> Self {
        Self {
            min_std: 0.01,
            max_std: 0.5,
        }
    }
}

type Gain = SMatrix<f64, NU, NX>;
type Cov = SMatrix<f64, NU, NU>;

/// Time-varying linear-Gaussian controller
/// `u_t ~ N(sat(u^_t + k_t + K_t (x_t - x^_t)), C_t)`, where `sat` clips to
/// the torque limit.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianController {
    pub nominal_states: Vec<[f64; NX]>,
    pub nominal_actions: Vec<Torques>,
    pub gains: Vec<Gain>,
    pub offsets: Vec<SVector<f64, NU>>,
    pub covariances: Vec<Cov>,
    pub torque_limit: f64,
    chol: Vec<Cov>,
    inv: Vec<Cov>,
    log_norm: Vec<f64>,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

impl LinearGaussianController {
    pub fn new(
        nominal_states: Vec<[f64; NX]>,
        nominal_actions: Vec<Torques>,
        gains: Vec<Gain>,
        offsets: Vec<SVector<f64, NU>>,
        covariances: Vec<Cov>,
        torque_limit: f64,
    ) -> Result<Self> {
        let horizon = nominal_actions.len();
        if nominal_states.len() < horizon
            || gains.len() != horizon
            || offsets.len() != horizon
            || covariances.len() != horizon
        {
            return Err(Error::Dimension(
                "controller sequences disagree on the horizon".into(),
            ));
        }
        let mut chol = Vec::with_capacity(horizon);
        let mut inv = Vec::with_capacity(horizon);
        let mut log_norm = Vec::with_capacity(horizon);
        for c in &covariances {
            let ch = c
                .cholesky()
                .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?;
            let l = ch.l();
            let half_log_det: f64 = (0..NU).map(|i| l[(i, i)].ln()).sum();
            log_norm.push(-half_log_det - NU as f64 * HALF_LN_2PI);
            inv.push(ch.inverse());
            chol.push(l);
        }
        Ok(Self {
            nominal_states,
            nominal_actions,
            gains,
            offsets,
            covariances,
            torque_limit,
            chol,
            inv,
            log_norm,
        })
    }

    /// Builds the guiding distribution from an iLQG result:
    /// `C_t = alpha_q Q_uu^-1` with its eigenvalues clipped to the bounds.
    /// The nominal is a converged optimum, so the offsets are zero.
    pub fn from_ilqg(
        result: &IlqgResult,
        alpha_q: f64,
        bounds: CovarianceBounds,
        torque_limit: f64,
    ) -> Result<Self> {
        if !(alpha_q > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha_q must be positive, got {alpha_q}"
            )));
        }
        let nom = &result.nominal;
        let bp = &result.final_pass;
        let states = nom.xs.iter().map(|x| std::array::from_fn(|i| x[i])).collect();
        let actions = nom.us.iter().map(|u| torques_of(u)).collect();
        let gains = bp.gains.iter().map(|k| Gain::from_fn(|i, j| k[(i, j)])).collect();
        let offsets = vec![SVector::zeros(); nom.horizon()];
        let (lo, hi) = (bounds.min_std.powi(2), bounds.max_std.powi(2));
        let covariances = bp
            .quu
            .iter()
            .map(|q| {
                let q = Cov::from_fn(|i, j| q[(i, j)]);
                let eig = q.symmetric_eigen();
                let vals = eig.eigenvalues.map(|l| (alpha_q / l.max(1e-300)).clamp(lo, hi));
                let c = eig.eigenvectors * Cov::from_diagonal(&vals) * eig.eigenvectors.transpose();
                (c + c.transpose()) * 0.5
            })
            .collect();
        Self::new(states, actions, gains, offsets, covariances, torque_limit)
    }

    pub fn horizon(&self) -> usize {
        self.nominal_actions.len()
    }

    /// Action mean at step `t`, saturated at the torque limit: commands
    /// beyond it have no further effect on the walker, and feedback on
    /// large deviations would otherwise ask for thousands of newton-metres.
    pub fn mean(&self, t: usize, state: &WalkerState) -> Torques {
        let dx = SVector::<f64, NX>::from(state_difference(&state.to_vector(), &self.nominal_states[t]));
        let m = SVector::<f64, NU>::from(self.nominal_actions[t]) + self.offsets[t] + self.gains[t] * dx;
        m.map(|v| v.clamp(-self.torque_limit, self.torque_limit)).into()
    }

    pub fn action_log_prob(&self, t: usize, mean: &Torques, u: &Torques) -> f64 {
        let r = SVector::<f64, NU>::from(*u) - SVector::<f64, NU>::from(*mean);
        self.log_norm[t] - 0.5 * r.dot(&(self.inv[t] * r))
    }

    /// Sum over steps of the action log-density; dynamics terms excluded.
    pub fn traj_log_prob(&self, states: &[WalkerState], actions: &[Torques]) -> Result<f64> {
        if actions.len() > self.horizon() {
            return Err(Error::Dimension(format!(
                "trajectory has {} steps, controller {}",
                actions.len(),
                self.horizon()
            )));
        }
        Ok(actions
            .iter()
            .enumerate()
            .map(|(t, u)| self.action_log_prob(t, &self.mean(t, &states[t]), u))
            .sum())
    }

    pub fn sample_action(&self, t: usize, mean: &Torques, rng: &mut Rng) -> Torques {
        let z = SVector::<f64, NU>::from_fn(|_, _| StandardNormal.sample(rng));
        let u = SVector::<f64, NU>::from(*mean) + self.chol[t] * z;
        u.into()
    }

    /// `n` guiding rollouts with motor noise; sample `i` uses the seed
    /// derived from `(seed, i)`. Diverged samples are kept.
    pub fn sample(
        &self,
        model: &WalkerModel,
        terrain: &Terrain,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Trajectory>> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one guiding sample".into()));
        }
        let results = crate::par::map_range(n, |i| {
            let mut src = GuidingSource { controller: self };
            rollout::rollout(
                model,
                &mut src,
                terrain,
                rng::derive(seed, &[i as u64]),
                self.horizon(),
            )
        });
        results.into_iter().collect()
    }
}

/// Samples actions from a [`LinearGaussianController`] during a rollout.
pub struct GuidingSource<'a> {
    pub controller: &'a LinearGaussianController,
}

impl ActionSource for GuidingSource<'_> {
    fn reset(&mut self) {}

    fn act(
        &mut self,
        t: usize,
        state: &WalkerState,
        _features: &FeatureVector,
        rng: &mut Rng,
    ) -> Result<(Torques, f64)> {
        let c = self.controller;
        if t >= c.horizon() {
            return Err(Error::InvalidArgument(format!(
                "controller horizon {} exceeded at step {t}",
                c.horizon()
            )));
        }
        let mean = c.mean(t, state);
        let u = c.sample_action(t, &mean, rng);
        Ok((u, c.action_log_prob(t, &mean, &u)))
    }
}

/// Outcome of refining a demonstration on one terrain.
#[derive(Debug, Clone)]
pub struct Guide {
    pub controller: LinearGaussianController,
    pub result: IlqgResult,
    /// Total reward of the demonstration's actions replayed noise-free.
    pub demo_reward: f64,
}

/// Optimizes a demonstration's actions with iLQG and wraps the result as a
/// guiding distribution. The horizon is the demonstration's length.
pub fn optimize_demo(
    model: &WalkerModel,
    terrain: &Terrain,
    demo: &Demonstration,
    opts: &IlqgOptions,
    alpha_q: f64,
    bounds: CovarianceBounds,
) -> Result<Guide> {
    let problem = WalkerProblem { model, terrain };
    let x0 = demo.states[0].to_vector();
    let us: Vec<Vec<f64>> = demo
        .actions
        .iter()
        .map(|u| model.clamp_torques(u).to_vec())
        .collect();
    let result = ilqg(&problem, &x0, &us, opts)?;
    let controller = LinearGaussianController::from_ilqg(&result, alpha_q, bounds, model.torque_limit)?;
    Ok(Guide {
        controller,
        demo_reward: result.reward_trace[0],
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_guide(horizon: usize, iters: usize) -> (WalkerModel, Terrain, Demonstration, Guide) {
        let model = WalkerModel::default();
        let terrain = Terrain::flat(12.0);
        let demo = crate::demo::scripted_demo(&model, &terrain, horizon).unwrap();
        let opts = IlqgOptions {
            max_iters: iters,
            ..Default::default()
        };
        let guide = optimize_demo(&model, &terrain, &demo, &opts, 1.0, CovarianceBounds::default()).unwrap();
        (model, terrain, demo, guide)
    }

    #[test]
    fn improves_scripted_demo() {
        let (_, _, demo, guide) = flat_guide(80, 3);
        assert_eq!(guide.controller.horizon(), demo.len());
        let trace = &guide.result.reward_trace;
        assert!(guide.result.iterations >= 1);
        assert!(trace.last().unwrap() > &guide.demo_reward);
        assert!(trace.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn covariance_within_bounds() {
        let (_, _, _, guide) = flat_guide(40, 1);
        let b = CovarianceBounds::default();
        for c in &guide.controller.covariances {
            let eig = c.symmetric_eigen().eigenvalues;
            for l in eig.iter() {
                assert!(*l >= b.min_std.powi(2) * (1.0 - 1e-9) && *l <= b.max_std.powi(2) * (1.0 + 1e-9));
            }
            assert!((c - c.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn recorded_density_matches_controller() {
        let (model, terrain, _, guide) = flat_guide(40, 1);
        let samples = guide.controller.sample(&model, &terrain, 3, 11).unwrap();
        for s in &samples {
            let lp = guide.controller.traj_log_prob(&s.states, &s.actions).unwrap();
            assert!((lp - s.log_density_sum()).abs() < 1e-8 * lp.abs().max(1.0));
        }
        let again = guide.controller.sample(&model, &terrain, 3, 11).unwrap();
        assert_eq!(samples, again);
    }

    #[test]
    fn gaussian_density_matches_closed_form() {
        // diagonal covariance: the density factorizes
        let var = [0.5, 1.0, 2.0, 0.25, 4.0, 1.5];
        let cov = Cov::from_diagonal(&SVector::from(var));
        let c = LinearGaussianController::new(
            vec![[0.0; NX]; 2],
            vec![[0.0; NU]],
            vec![Gain::zeros()],
            vec![SVector::zeros()],
            vec![cov],
            100.0,
        )
        .unwrap();
        let mean = [0.1, -0.2, 0.3, 0.0, 1.0, -1.0];
        let u = [0.5, 0.5, -0.5, 0.2, 0.0, 2.0];
        let expected: f64 = (0..NU)
            .map(|i| {
                let r = u[i] - mean[i];
                -0.5 * (2.0 * std::f64::consts::PI * var[i]).ln() - r * r / (2.0 * var[i])
            })
            .sum();
        assert!((c.action_log_prob(0, &mean, &u) - expected).abs() < 1e-12);
    }

    #[test]
    fn guiding_source_rejects_steps_past_horizon() {
        let (model, terrain, _, guide) = flat_guide(20, 1);
        let mut src = GuidingSource {
            controller: &guide.controller,
        };
        let s = model.initial_state(&terrain).unwrap();
        let f = [0.0; crate::features::FEATURE_DIM];
        let mut rng = crate::rng::rng(0);
        assert!(src.act(19, &s, &f, &mut rng).is_ok());
        assert!(matches!(
            src.act(20, &s, &f, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_positive_alpha_rejected() {
        let (_, _, _, guide) = flat_guide(20, 1);
        let r = LinearGaussianController::from_ilqg(&guide.result, 0.0, CovarianceBounds::default(), 100.0);
        assert!(r.is_err());
    }

    #[test]
    fn zero_step_reproduces_walker_nominal() {
        let (model, terrain, _, guide) = flat_guide(30, 1);
        let p = WalkerProblem {
            model: &model,
            terrain: &terrain,
        };
        let nom = &guide.result.nominal;
        assert_eq!(
            &forward_pass(&p, nom, &guide.result.final_pass, 0.0).unwrap(),
            nom
        );
    }

    #[test]
    fn scaling_covariance_shifts_on_mean_density() {
        let (_, _, _, guide) = flat_guide(25, 1);
        let c = &guide.controller;
        let wide = LinearGaussianController::new(
            c.nominal_states.clone(),
            c.nominal_actions.clone(),
            c.gains.clone(),
            c.offsets.clone(),
            c.covariances.iter().map(|m| m * 4.0).collect(),
            c.torque_limit,
        )
        .unwrap();
        let states: Vec<WalkerState> = c
            .nominal_states
            .iter()
            .enumerate()
            .map(|(t, x)| WalkerState::from_vector(x, t))
            .collect();
        let a = c.traj_log_prob(&states, &c.nominal_actions).unwrap();
        let b = wide.traj_log_prob(&states, &c.nominal_actions).unwrap();
        let expected = -(c.horizon() as f64) * NU as f64 * 2f64.ln();
        assert!((b - a - expected).abs() < 1e-9);
        // the on-mean trajectory is the mode
        let mut shifted = c.nominal_actions.clone();
        shifted[3][2] += 0.01;
        assert!(c.traj_log_prob(&states, &shifted).unwrap() < a);
    }

    #[test]
    fn guiding_deviations_are_centred() {
        let (model, terrain, _, guide) = flat_guide(20, 1);
        let c = &guide.controller;
        let n = 1000;
        let samples = c.sample(&model, &terrain, n, 3).unwrap();
        let mut sum = SVector::<f64, NU>::zeros();
        let mut count = 0usize;
        for s in &samples {
            for (t, u) in s.actions.iter().enumerate() {
                let d = SVector::from(*u) - SVector::from(c.mean(t, &s.states[t]));
                // whiten so every component has unit variance
                sum += c.chol[t].solve_lower_triangular(&d).unwrap();
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let se = 1.0 / (count as f64).sqrt();
        assert!(mean.amax() < 3.0 * se, "mean {mean} se {se}");
    }
}
