//! Fixtures shared by the GPS integration tests and the acceptance run.
#![allow(dead_code)]

use gpslab::features::FeatureVector;
use gpslab::gps::{estimate, Objective, SampleSet, Sampler};
use gpslab::policy::{Activation, Architecture, Kind, PolicyParams};
use gpslab::rng::{self, Rng};
use gpslab::rollout::{RolloutStatus, Trajectory};
use gpslab::walker::{Torques, WalkerState, NQ, NU};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Initialized network with every parameter, biases and log-stds included,
/// nudged away from zero.
pub fn random_params(kind: Kind, hidden: usize, act: Activation, seed: u64) -> PolicyParams {
    let arch = Architecture::new(kind, hidden, act).unwrap();
    let mut p = PolicyParams::init(arch, seed);
    let mut r = rng::rng(seed ^ 0x5eed);
    let n = p.theta.len();
    for v in &mut p.theta[..n - NU] {
        *v += 0.1 * normal(&mut r);
    }
    for v in &mut p.theta[n - NU..] {
        *v = -0.3 + 0.2 * normal(&mut r);
    }
    p
}

/// Parameters a small random step away from `p`.
pub fn perturbed(p: &PolicyParams, size: f64, seed: u64) -> PolicyParams {
    let mut r = rng::rng(seed);
    let mut q = p.clone();
    q.theta.iter_mut().for_each(|v| *v += size * normal(&mut r));
    q
}

/// A trajectory of random features whose actions are drawn from `policy`.
/// Only features, actions and rewards matter to the objective; states are
/// placeholders.
pub fn synthetic_traj(policy: &PolicyParams, t: usize, rng: &mut Rng) -> Trajectory {
    let mut hidden = policy.initial_hidden();
    let std = policy.std();
    let mut features = Vec::with_capacity(t);
    let mut actions = Vec::with_capacity(t);
    let mut rewards = Vec::with_capacity(t);
    for _ in 0..t {
        let x: FeatureVector = std::array::from_fn(|_| normal(rng));
        let mean = policy.forward(&x, &mut hidden).unwrap();
        let u: Torques = std::array::from_fn(|j| mean[j] + std[j] * normal(rng));
        features.push(x);
        actions.push(u);
        rewards.push(-0.5 + 0.2 * normal(rng));
    }
    let state = WalkerState {
        q: [0.0; NQ],
        qd: [0.0; NQ],
        time_index: 0,
    };
    Trajectory {
        states: vec![state; t + 1],
        contacts: vec![[false; 2]; t + 1],
        features,
        actions,
        rewards,
        log_density: vec![0.0; t],
        status: RolloutStatus::Complete,
    }
}

/// Two terrains of policy-drawn samples from two snapshots.
pub fn synthetic_set(base: &PolicyParams, t: usize, per_snapshot: usize, seed: u64) -> SampleSet {
    let mut set = SampleSet::new(2, t);
    let mut r = rng::rng(seed);
    for iteration in 0..2 {
        let params = perturbed(base, 0.05, seed + 1 + iteration as u64);
        let id = set
            .register(Sampler::Policy {
                iteration,
                params: params.clone(),
            })
            .unwrap();
        for terrain in 0..2 {
            let trajs = (0..per_snapshot)
                .map(|_| synthetic_traj(&params, t, &mut r))
                .collect();
            set.add(terrain, id, trajs).unwrap();
        }
    }
    set
}

/// Largest relative disagreement between the analytic objective gradient
/// and central differences, with parameters where the objective is not
/// smooth at step `h` (a hard-rectifier kink in reach) skipped. Returns the
/// error and the number of skipped parameters.
pub fn objective_gradient_error(set: &SampleSet, params: &PolicyParams, lambda: f64) -> (f64, usize) {
    let obj = Objective::new(set, lambda).unwrap();
    let (_, g) = obj.value_and_gradient(params).unwrap();
    let f = |p: &PolicyParams| obj.value(p).unwrap().objective;
    let central = |i: usize, h: f64| {
        let mut q = params.clone();
        q.theta[i] += h;
        let up = f(&q);
        q.theta[i] -= 2.0 * h;
        (up - f(&q)) / (2.0 * h)
    };
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for i in 0..g.len() {
        let h = 1e-5;
        let fd = central(i, h);
        let fd_half = central(i, h / 2.0);
        let denom = fd.abs().max(g[i].abs()).max(1e-3 * scale);
        // away from kinks the two steps agree to O(h^2)
        if (fd - fd_half).abs() > 1e-6 * denom.max(1.0) {
            skipped += 1;
            continue;
        }
        worst = worst.max((fd - g[i]).abs() / denom);
    }
    (worst, skipped)
}

/// Log-density of `N(mean, 1)`.
pub fn log_unit_normal(u: f64, mean: f64) -> f64 {
    -0.5 * (u - mean).powi(2) - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// One-step toy problem: policy `N(theta, 1)`, samples from `N(0, 1)`,
/// reward `-u^2`. Returns the estimate and its delta-method standard error.
pub fn toy_estimate(theta: f64, n: usize, seed: u64) -> (f64, f64) {
    let mut r = rng::rng(seed);
    let u: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let lt: Vec<f64> = u.iter().map(|&u| log_unit_normal(u, theta)).collect();
    let lq: Vec<f64> = u.iter().map(|&u| log_unit_normal(u, 0.0)).collect();
    let ret: Vec<f64> = u.iter().map(|&u| -u * u).collect();
    let e = estimate(&lt, &lq, &ret).unwrap();
    let var: f64 = e
        .weights
        .iter()
        .zip(&ret)
        .map(|(w, r)| w * w * (r - e.value).powi(2))
        .sum();
    (e.value, var.sqrt())
}

pub fn toy_truth(theta: f64) -> f64 {
    -(theta * theta + 1.0)
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median absolute error and median standard error of the toy estimate
/// over `reps` independent repetitions.
pub fn toy_errors(theta: f64, n: usize, reps: usize) -> (f64, f64) {
    let (errs, ses): (Vec<f64>, Vec<f64>) = (0..reps)
        .map(|k| {
            let (v, se) = toy_estimate(theta, n, rng::derive(17, &[n as u64, k as u64]));
            ((v - toy_truth(theta)).abs(), se)
        })
        .unzip();
    (median(errs), median(ses))
}
