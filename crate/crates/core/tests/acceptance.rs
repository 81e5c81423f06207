//! Acceptance run: every criterion is checked at its stated tolerance and
//! reported on one line. Runs without the libtest harness so the report is
//! always printed; the process fails if any gated criterion fails.

mod common;

use std::time::Instant;

use common::*;
use gpslab::config::Config;
use gpslab::gps::{train, Objective, SampleSet, Sampler, TrainResult};
use gpslab::optim::Method;
use gpslab::policy::{Activation, Kind};
use gpslab::terrain::Terrain;
use gpslab::trajopt::{ilqg, IlqgOptions, Problem, RewardExpansion};
use gpslab::walker::{WalkerModel, WalkerState, NQ, NU};
use nalgebra::{DMatrix, DVector};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1() -> Outcome {
    let mut worst_soft: f64 = 0.0;
    let mut worst_hard: f64 = 0.0;
    let mut skipped = 0;
    for (k, kind) in [Kind::Shallow, Kind::Deep, Kind::Recurrent]
        .into_iter()
        .enumerate()
    {
        for act in [Activation::Soft, Activation::Hard] {
            for inst in 0..20u64 {
                let seed = 1000 * k as u64 + 100 * (act == Activation::Hard) as u64 + inst;
                let base = random_params(kind, 8, act, seed);
                let set = synthetic_set(&base, 10, 2, seed + 7);
                let target = perturbed(&base, 0.05, seed + 11);
                let lambda = 0.01 + 0.05 * inst as f64;
                let (err, skip) = objective_gradient_error(&set, &target, lambda);
                skipped += skip;
                match act {
                    Activation::Soft => worst_soft = worst_soft.max(err),
                    _ => worst_hard = worst_hard.max(err),
                }
            }
        }
    }
    outcome(
        worst_soft < 1e-5 && worst_hard < 1e-4,
        format!(
            "policy objective gradient vs central differences, 3 kinds x 2 activations x 20 instances: \
             max rel err soft {worst_soft:.2e} (< 1e-5), hard {worst_hard:.2e} (< 1e-4, {skipped} kink-adjacent params skipped)"
        ),
    )
}

/// Double integrator `p' = p + dt v, v' = v + dt u` with quadratic cost.
struct DoubleIntegrator {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl DoubleIntegrator {
    fn new() -> Self {
        let dt = 0.1;
        Self {
            a: DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]),
            q: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.1])),
            r: DMatrix::from_element(1, 1, 0.01),
        }
    }
}

impl Problem for DoubleIntegrator {
    fn nx(&self) -> usize {
        2
    }
    fn nu(&self) -> usize {
        1
    }
    fn step(&self, _t: usize, x: &[f64], u: &[f64]) -> gpslab::Result<Vec<f64>> {
        let x = &self.a * DVector::from_column_slice(x) + &self.b * DVector::from_column_slice(u);
        Ok(x.as_slice().to_vec())
    }
    fn linearize(&self, _t: usize, _x: &[f64], _u: &[f64]) -> gpslab::Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.a.clone(), self.b.clone()))
    }
    fn reward(&self, _t: usize, x: &[f64], u: &[f64]) -> gpslab::Result<f64> {
        let x = DVector::from_column_slice(x);
        let u = DVector::from_column_slice(u);
        Ok(-(x.dot(&(&self.q * &x)) + u.dot(&(&self.r * &u))))
    }
    fn reward_expansion(&self, _t: usize, x: &[f64], u: &[f64]) -> gpslab::Result<RewardExpansion> {
        let x = DVector::from_column_slice(x);
        let u = DVector::from_column_slice(u);
        Ok(RewardExpansion {
            rx: -(&self.q * x) * 2.0,
            ru: -(&self.r * u) * 2.0,
            rxx: -&self.q * 2.0,
            ruu: -&self.r * 2.0,
            rux: DMatrix::zeros(1, 2),
        })
    }
    fn terminal(&self, x: &[f64]) -> gpslab::Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let x = DVector::from_column_slice(x);
        Ok((-x.dot(&(&self.q * &x)), -(&self.q * x) * 2.0, -&self.q * 2.0))
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let p = DoubleIntegrator::new();
    let horizon = 50;
    let x0 = [1.0, -0.5];
    let res = ilqg(&p, &x0, &vec![vec![0.0]; horizon], &IlqgOptions::default()).unwrap();

    // discrete Riccati recursion on the cost matrices
    let mut pm = p.q.clone();
    let mut gain_err: f64 = 0.0;
    for t in (0..horizon).rev() {
        let s = &p.r + p.b.transpose() * &pm * &p.b;
        let k = -s.try_inverse().unwrap() * p.b.transpose() * &pm * &p.a;
        pm = &p.q + p.a.transpose() * &pm * &p.a + p.a.transpose() * &pm * &p.b * &k;
        gain_err = gain_err.max((&k - &res.final_pass.gains[t]).amax());
    }
    let x = DVector::from_column_slice(&x0);
    let optimal = -x.dot(&(&pm * &x));
    let cost_err = (res.nominal.total_reward - optimal).abs() / optimal.abs();
    outcome(
        res.iterations <= 3 && gain_err < 1e-6 && cost_err < 1e-6,
        format!(
            "double-integrator LQR T=50: {} iterations (<= 3), max gain err {gain_err:.2e}, rel cost err {cost_err:.2e} (< 1e-6), {:.2}s",
            res.iterations,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let theta = 0.6;
    let sizes = [1_000, 10_000, 100_000];
    let errs: Vec<(f64, f64)> = sizes.iter().map(|&n| toy_errors(theta, n, 20)).collect();
    let monotone = errs.windows(2).all(|w| w[1].0 < w[0].0);
    let (err, se) = errs[2];
    outcome(
        monotone && err <= 2.0 * se,
        format!(
            "1-D Gaussian toy, theta={theta}: median |err| {:.2e} / {:.2e} / {:.2e} at 1e3/1e4/1e5 samples (20 reps), \
             at 1e5 {err:.2e} vs 2 SE = {:.2e}",
            errs[0].0,
            errs[1].0,
            errs[2].0,
            2.0 * se
        ),
    )
}

fn criterion_4(smoke: &TrainResult) -> Outcome {
    let base = random_params(Kind::Shallow, 8, Activation::Soft, 4);
    let mut set = SampleSet::new(1, 10);
    let id = set
        .register(Sampler::Policy {
            iteration: 0,
            params: base.clone(),
        })
        .unwrap();
    let mut r = gpslab::rng::rng(4);
    let trajs: Vec<_> = (0..25).map(|_| synthetic_traj(&base, 10, &mut r)).collect();
    set.add(0, id, trajs).unwrap();
    let e = Objective::new(&set, 0.01).unwrap().value(&base).unwrap();
    let est = &e.per_terrain[0];
    let m = est.weights.len() as f64;
    let dev = est.weights.iter().fold(0.0f64, |d, w| d.max((w - 1.0 / m).abs()));
    let mean = set.samples().iter().map(|s| s.ret).sum::<f64>() / m;
    let value_err = (est.value - mean).abs();
    outcome(
        dev < 1e-10 && value_err <= 1e-12 * mean.abs() && smoke.weight_sum_error <= 1e-12,
        format!(
            "on-policy weights max deviation {dev:.2e} (< 1e-10), estimate - sample mean {value_err:.2e}; \
             max |sum w - 1| over the smoke run {:.2e} (<= 1e-12)",
            smoke.weight_sum_error
        ),
    )
}

fn criterion_5() -> Outcome {
    let model = WalkerModel::default();

    // ballistic flight, 1 s
    let sky = Terrain::flat(50.0);
    let mut s = WalkerState {
        q: [4.0, 8.0, 0.15, 0.5, -0.7, 0.2, -0.4, -0.3, -0.1],
        qd: [0.8, 2.0, 0.4, -1.5, 1.0, 2.0, 1.1, -0.6, -1.3],
        time_index: 0,
    };
    let e0 = model.energy(&s);
    let mut drift: f64 = 0.0;
    for _ in 0..(1.0 / model.dt).round() as usize {
        s = model.step(&s, &[0.0; NU], &sky, &[0.0; NU]).unwrap();
        drift = drift.max(((model.energy(&s) - e0) / e0).abs());
    }

    // standing under a joint-holding controller
    let ground = Terrain::flat(5.0);
    let hold = |s: &WalkerState| -> [f64; NU] {
        const KP: [f64; 3] = [300.0, 300.0, 600.0];
        const KD: [f64; 3] = [20.0, 10.0, 10.0];
        std::array::from_fn(|i| -KP[i % 3] * s.q[3 + i] - KD[i % 3] * s.qd[3 + i])
    };
    let mut s = model.initial_state(&ground).unwrap();
    let mut pen: f64 = 0.0;
    for _ in 0..200 {
        s = model.step(&s, &hold(&s), &ground, &[0.0; NU]).unwrap();
        pen = pen.max(model.max_penetration(&s, &ground).unwrap());
    }
    let standing = s.q[1] > 1.0;

    // two stochastic policy rollouts with one seed
    let terrain = Terrain::generate(5, 10.0).unwrap();
    let policy = random_params(Kind::Shallow, 8, Activation::Soft, 5);
    let run = || gpslab::eval::policy_rollout(&model, &policy, &terrain, 77, 300).unwrap();
    let (a, b) = (run(), run());
    let exact = a.states.len() == b.states.len()
        && a.states.iter().zip(&b.states).all(|(x, y)| {
            (0..NQ).all(|i| x.q[i].to_bits() == y.q[i].to_bits() && x.qd[i].to_bits() == y.qd[i].to_bits())
        });
    outcome(
        drift < 1e-3 && pen < 5e-3 && standing && exact,
        format!(
            "ballistic energy drift {:.4}% over 1 s (< 0.1%), standing penetration {:.2} mm (< 5 mm), \
             rollout bit-exact: {exact}",
            100.0 * drift,
            1e3 * pen
        ),
    )
}

fn criterion_6() -> Outcome {
    let allowed = [-10.0, -5.0, 0.0, 5.0, 10.0];
    let mut count = 0;
    let mut bad = 0;
    let mut seed = 1;
    let mut deterministic = true;
    while count < 10_000 {
        let t = Terrain::generate(seed, 100.0).unwrap();
        deterministic &= t == Terrain::generate(seed, 100.0).unwrap();
        // the flat run-up is not part of the random profile
        for seg in t.segments().iter().skip(1) {
            if !allowed.contains(&seg.slope) || !(0.5..=1.0).contains(&seg.length) {
                bad += 1;
            }
            count += 1;
        }
        seed += 1;
    }
    outcome(
        bad == 0 && deterministic,
        format!("{count} segments from {} seeds: {bad} outside slope/length bounds, per-seed determinism: {deterministic}", seed - 1),
    )
}

fn criterion_7(smoke: &TrainResult) -> Outcome {
    let d = Config::default();
    let guiding = smoke.guiding_counts.iter().all(|&n| n == 80);
    let policy = smoke.policy_counts.iter().flatten().all(|&n| n == 10);
    let horizon = smoke.rollout_lengths.iter().all(|&h| h == 700);
    let hard = Config {
        activation: Activation::Hard,
        ..Config::default()
    };
    let selects_gd = hard.effective_method() == Method::GradientDescent
        && Config::default().effective_method() == Method::Lbfgs;
    outcome(
        d.guiding_samples == 80 && d.policy_samples == 10 && d.horizon == 700 && guiding && policy && horizon && selects_gd,
        format!(
            "smoke run drew {:?} guiding samples, {:?} on-policy per iteration, rollout horizons all 700: {horizon}; \
             hard rectifier selects gradient descent: {selects_gd}",
            smoke.guiding_counts, smoke.policy_counts
        ),
    )
}

fn criterion_8(smoke: &TrainResult) -> Outcome {
    let g = &smoke.guides[0];
    let improved = g.final_reward() > g.demo_reward;
    let ratio = smoke.supervised_mse / smoke.zero_mse;
    let init = smoke.log.first().unwrap().train_success;
    let fin = smoke.log.last().unwrap().train_success;
    outcome(
        improved && ratio <= 0.25 && fin >= init,
        format!(
            "iLQG reward {:.1} -> {:.1}; supervised MSE {:.2} = {:.1}% of zero baseline {:.2} (<= 25%); \
             train success init {init:.2} -> final {fin:.2}{}",
            g.demo_reward,
            g.final_reward(),
            smoke.supervised_mse,
            100.0 * ratio,
            smoke.zero_mse,
            if fin == 0.0 && init == 0.0 {
                " (holds only trivially: neither policy completes a trial)"
            } else {
                ""
            }
        ),
    )
}

fn test_success(cfg: &Config, r: &TrainResult) -> f64 {
    let terrains = cfg.build_terrains(&cfg.test_terrains).unwrap();
    gpslab::eval::evaluate(
        &cfg.model(),
        &r.params,
        &terrains,
        cfg.eval_trials,
        cfg.seed,
        cfg.horizon,
        &cfg.criteria(),
    )
    .unwrap()
    .success_fraction()
}

fn criterion_9(n_gps: usize) -> Outcome {
    let mut rates = Vec::new();
    for train_terrains in ["1", "1-5"] {
        let mut cfg = Config::default();
        cfg.set("train_terrains", train_terrains).unwrap();
        cfg.n_gps = n_gps;
        let r = train(&cfg, &mut |m: &str| println!("    [{train_terrains}] {m}")).unwrap();
        rates.push(test_success(&cfg, &r));
    }
    outcome(
        rates[1] >= rates[0],
        format!(
            "test success with 1 training terrain {:.2}, with 5 terrains {:.2} (shallow H=20 soft, {n_gps} GPS iterations)",
            rates[0],
            rates[1],
        ) + if rates[1] == 0.0 && rates[0] == 0.0 { "; both zero, so the trend is not observed" } else { "" },
    )
}

fn main() {
    let total = Instant::now();
    let mut failed = Vec::new();
    let mut report = |n: usize, gated: bool, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let verdict = match (o.pass, gated) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "INFO (not met)",
        };
        println!(
            "criterion {n}: {verdict}{} - {} [{:.1}s]",
            if gated { "" } else { " (informational)" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if gated && !o.pass {
            failed.push(n);
        }
    };

    report(1, true, &mut criterion_1);
    report(2, true, &mut criterion_2);
    report(3, true, &mut criterion_3);
    report(5, true, &mut criterion_5);
    report(6, true, &mut criterion_6);

    println!("  training the smoke configuration (flat terrain, shallow H=20 soft, 5 GPS iterations)");
    let smoke_start = Instant::now();
    let smoke_cfg =
        Config::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.cfg"))
            .unwrap();
    let smoke = train(&smoke_cfg, &mut |m: &str| println!("    {m}")).unwrap();
    println!("  smoke run took {:.0}s", smoke_start.elapsed().as_secs_f64());
    report(4, true, &mut || criterion_4(&smoke));
    report(7, true, &mut || criterion_7(&smoke));
    report(8, true, &mut || criterion_8(&smoke));
    report(9, false, &mut || criterion_9(3));

    println!("acceptance finished in {:.0}s", total.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
