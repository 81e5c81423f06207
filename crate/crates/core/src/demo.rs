//! Demonstrations for initializing trajectory optimization: a scripted
//! walking controller, and ingestion of recorded traces.
//!
//! The scripted gait is a finite-state stepping controller. Each step the
//! swing leg is driven toward a world-frame thigh angle that is corrected
//! by the trunk's offset and velocity relative to the stance ankle, the
//! stance hip holds the torso upright, and both ankles keep their feet
//! parallel to the local ground.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::rng::Rng;
use crate::rollout::{self, parse_trace, ActionSource, RolloutStatus};
use crate::terrain::Terrain;
use crate::walker::{Torques, WalkerModel, WalkerState, JOINT_OFFSET, NU};

/// Where a demonstration came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoSource {
    File,
    Scripted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    /// `actions.len() + 1` states.
    pub states: Vec<WalkerState>,
    pub actions: Vec<Torques>,
    pub source: DemoSource,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Average forward trunk velocity over the demonstration.
    pub fn mean_velocity(&self, dt: f64) -> f64 {
        let (a, b) = (self.states.first().unwrap(), self.states.last().unwrap());
        (b.trunk_x() - a.trunk_x()) / (self.len() as f64 * dt)
    }

    /// Largest state mismatch when the actions are replayed noise-free from
    /// the first state. Reported, never enforced.
    pub fn replay_drift(&self, model: &WalkerModel, terrain: &Terrain) -> Result<f64> {
        let mut s = self.states[0].clone();
        let mut worst: f64 = 0.0;
        for (t, u) in self.actions.iter().enumerate() {
            s = model.step(&s, u, terrain, &[0.0; NU])?;
            let d = crate::walker::state_difference(&s.to_vector(), &self.states[t + 1].to_vector());
            worst = worst.max(d.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        Ok(worst)
    }

    /// Reads a trace file (the rollout trace CSV schema). Rows without an
    /// action end the demonstration.
    pub fn from_trace(text: &str) -> Result<Self> {
        let data = parse_trace(text)?;
        if data.actions.is_empty() {
            return Err(Error::parse("demonstration", 1, "no actions"));
        }
        Ok(Self {
            states: data.states,
            actions: data.actions,
            source: DemoSource::File,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_trace(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitParams {
    /// Time after which the swing foot is put down regardless of contact.
    pub step_time: f64,
    /// Fraction of `step_time` before touchdown may end a step.
    pub min_step_fraction: f64,
    /// Swing thigh angle target (world frame, forward positive).
    pub swing_hip: f64,
    /// Feedback on trunk offset ahead of the stance ankle.
    pub c_d: f64,
    /// Feedback on trunk forward velocity.
    pub c_v: f64,
    /// Swing knee target during the first part of the step, then later.
    pub swing_knee: [f64; 2],
    /// Fraction of the step at which the swing knee starts extending.
    pub knee_switch: f64,
    pub stance_knee: f64,
    /// Trunk orientation target; negative leans forward.
    pub torso_angle: f64,
    /// (kp, kd) for hip, knee, ankle and torso.
    pub hip_gains: (f64, f64),
    pub knee_gains: (f64, f64),
    pub ankle_gains: (f64, f64),
    pub torso_gains: (f64, f64),
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            step_time: 0.274,
            min_step_fraction: 0.5,
            swing_hip: 0.272,
            c_d: 0.766,
            c_v: 0.255,
            swing_knee: [-1.455, -0.05],
            knee_switch: 0.843,
            stance_knee: -0.237,
            torso_angle: -0.036,
            hip_gains: (159.5, 15.3),
            knee_gains: (300.0, 30.0),
            ankle_gains: (209.6, 8.4),
            torso_gains: (308.1, 46.6),
        }
    }
}

/// Deterministic stepping controller. Leg 0 is the right leg.
#[derive(Debug, Clone)]
pub struct ScriptedGait<'a> {
    model: &'a WalkerModel,
    terrain: &'a Terrain,
    pub params: GaitParams,
    stance: usize,
    phase_time: f64,
}

impl<'a> ScriptedGait<'a> {
    pub fn new(model: &'a WalkerModel, terrain: &'a Terrain, params: GaitParams) -> Self {
        Self {
            model,
            terrain,
            params,
            stance: 1,
            phase_time: 0.0,
        }
    }

    fn ankle_x(&self, state: &WalkerState, leg: usize) -> f64 {
        let pts = self.model.contact_points(state);
        let (heel, toe) = (pts[2 * leg], pts[2 * leg + 1]);
        let f = self.model.ankle_offset / self.model.foot.length;
        heel[0] + f * (toe[0] - heel[0])
    }

    fn torques(&self, state: &WalkerState) -> Result<Torques> {
        let p = &self.params;
        let (q, qd) = (&state.q, &state.qd);
        let (st, sw) = (self.stance, 1 - self.stance);
        let j = |leg: usize, k: usize| JOINT_OFFSET + 3 * leg + k;
        let pd = |(kp, kd): (f64, f64), err: f64, rate: f64| kp * err - kd * rate;
        let s = (self.phase_time / p.step_time).min(1.0);
        let mut u = [0.0; NU];

        let d = state.trunk_x() - self.ankle_x(state, st);
        let target = p.swing_hip + p.c_d * d + p.c_v * qd[0];
        let thigh = q[2] + q[j(sw, 0)];
        let thigh_rate = qd[2] + qd[j(sw, 0)];
        u[3 * sw] = pd(p.hip_gains, target - thigh, thigh_rate);

        let torso = pd(p.torso_gains, p.torso_angle - q[2], qd[2]);
        u[3 * st] = -torso - u[3 * sw];

        let knee = if s < p.knee_switch {
            p.swing_knee[0]
        } else {
            p.swing_knee[1]
        };
        u[3 * sw + 1] = pd(p.knee_gains, knee - q[j(sw, 1)], qd[j(sw, 1)]);
        u[3 * st + 1] = pd(p.knee_gains, p.stance_knee - q[j(st, 1)], qd[j(st, 1)]);

        for leg in [st, sw] {
            let x = self.ankle_x(state, leg).clamp(0.0, self.terrain.extent());
            let ground = self.terrain.slope_at(x)?;
            let foot = q[2] + q[j(leg, 0)] + q[j(leg, 1)] + q[j(leg, 2)];
            let foot_rate = qd[2] + qd[j(leg, 0)] + qd[j(leg, 1)] + qd[j(leg, 2)];
            u[3 * leg + 2] = pd(p.ankle_gains, ground - foot, foot_rate);
        }
        Ok(self.model.clamp_torques(&u))
    }

    fn advance(&mut self, state: &WalkerState) -> Result<()> {
        let p = &self.params;
        self.phase_time += self.model.dt;
        let contacts = self.model.contact_forces(state, self.terrain)?;
        let touchdown =
            contacts[1 - self.stance].in_contact && self.phase_time >= p.min_step_fraction * p.step_time;
        if touchdown || self.phase_time >= p.step_time {
            self.stance = 1 - self.stance;
            self.phase_time = 0.0;
        }
        Ok(())
    }
}

impl ActionSource for ScriptedGait<'_> {
    fn reset(&mut self) {
        self.stance = 1;
        self.phase_time = 0.0;
    }

    fn act(
        &mut self,
        _t: usize,
        state: &WalkerState,
        _features: &FeatureVector,
        _rng: &mut Rng,
    ) -> Result<(Torques, f64)> {
        let u = self.torques(state)?;
        self.advance(state)?;
        Ok((u, 0.0))
    }
}

/// Minimum number of steps a scripted demonstration must stay upright.
pub const DEMO_MIN_STEPS: usize = 100;
const FALL_HEIGHT: f64 = 0.9;

/// Variations tried in order until one stays upright for
/// [`DEMO_MIN_STEPS`] steps.
// tuned numbers, not approximations of constants
#[allow(clippy::approx_constant)]
fn variants() -> Vec<GaitParams> {
    let base = GaitParams::default();
    vec![
        base.clone(),
        GaitParams {
            step_time: 0.258,
            swing_hip: 0.331,
            c_d: 0.702,
            c_v: 0.210,
            swing_knee: [-1.547, -0.05],
            knee_switch: 0.775,
            stance_knee: -0.261,
            torso_angle: -0.035,
            hip_gains: (176.3, 13.8),
            ankle_gains: (188.2, 7.5),
            torso_gains: (364.4, 46.5),
            ..base.clone()
        },
        GaitParams {
            step_time: 0.267,
            swing_hip: 0.254,
            c_d: 0.406,
            c_v: 0.206,
            swing_knee: [-1.375, -0.05],
            knee_switch: 0.763,
            stance_knee: -0.275,
            torso_angle: -0.001,
            hip_gains: (315.6, 21.2),
            ankle_gains: (118.0, 4.7),
            torso_gains: (209.4, 11.0),
            ..base.clone()
        },
        GaitParams {
            step_time: 0.318,
            swing_hip: 0.217,
            c_d: 0.273,
            c_v: 0.375,
            swing_knee: [-1.001, -0.05],
            knee_switch: 0.788,
            stance_knee: -0.059,
            torso_angle: -0.18,
            hip_gains: (416.6, 22.9),
            ankle_gains: (44.6, 4.5),
            torso_gains: (573.0, 73.0),
            ..base
        },
    ]
}

/// Runs one gait variant noise-free for `horizon` steps.
pub fn run_gait(
    model: &WalkerModel,
    terrain: &Terrain,
    params: GaitParams,
    horizon: usize,
) -> Result<rollout::Trajectory> {
    let quiet = WalkerModel {
        motor_noise: 0.0,
        ..model.clone()
    };
    let mut gait = ScriptedGait::new(&quiet, terrain, params);
    rollout::rollout(&quiet, &mut gait, terrain, 0, horizon)
}

fn first_fall(traj: &rollout::Trajectory, terrain: &Terrain) -> Option<usize> {
    traj.states
        .iter()
        .position(|s| crate::features::trunk_height(s, terrain).is_ok_and(|h| h < FALL_HEIGHT))
}

/// Scripted demonstration of `horizon` steps on `terrain`.
///
/// Each gait variant is tried in turn; a variant is rejected if the walker
/// falls or the simulation diverges within the first [`DEMO_MIN_STEPS`]
/// steps. Later falls are kept: the demonstration only has to seed
/// trajectory optimization. The demonstration ends early if the walker
/// reaches the end of the terrain.
pub fn scripted_demo(model: &WalkerModel, terrain: &Terrain, horizon: usize) -> Result<Demonstration> {
    let traj = scripted_trajectory(model, terrain, horizon)?;
    Ok(Demonstration {
        states: traj.states,
        actions: traj.actions,
        source: DemoSource::Scripted,
    })
}

/// The noise-free rollout behind [`scripted_demo`], with rewards and
/// contact flags, for writing as a trace.
pub fn scripted_trajectory(
    model: &WalkerModel,
    terrain: &Terrain,
    horizon: usize,
) -> Result<rollout::Trajectory> {
    let mut best = 0;
    for params in variants() {
        let traj = run_gait(model, terrain, params, horizon)?;
        let fall = first_fall(&traj, terrain);
        let upright = fall.unwrap_or(traj.states.len()).min(match traj.status {
            RolloutStatus::Diverged { step } => step,
            _ => usize::MAX,
        });
        if upright >= DEMO_MIN_STEPS.min(horizon) {
            return Ok(traj);
        }
        best = best.max(upright);
    }
    Err(Error::DemoFailed { steps: best })
}
