//! Closed-loop simulation of the walker under a stochastic action source.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{self, FeatureVector, HEIGHT_WEIGHT, TARGET_HEIGHT, TARGET_VX};
use crate::rng::{self, Rng};
use crate::terrain::Terrain;
use crate::walker::{Torques, WalkerModel, WalkerState, NQ, NU};

/// Per-step reward credited to the steps a diverged rollout never reached:
/// the reward of a motionless trunk lying on the ground.
pub const DIVERGED_STEP_REWARD: f64 =
    -(TARGET_VX * TARGET_VX) - HEIGHT_WEIGHT * TARGET_HEIGHT * TARGET_HEIGHT;

/// Something that picks actions during a rollout: a neural policy, a
/// linear-Gaussian controller or a scripted gait.
pub trait ActionSource {
    /// Called once before the first step.
    fn reset(&mut self);

    /// Draws the action for step `t` and returns it with its log-density
    /// under this source (0 for deterministic sources).
    fn act(
        &mut self,
        t: usize,
        state: &WalkerState,
        features: &FeatureVector,
        rng: &mut Rng,
    ) -> Result<(Torques, f64)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutStatus {
    Complete,
    /// The simulation blew up while stepping from `step`.
    Diverged {
        step: usize,
    },
    /// The walker left the terrain at `step`.
    OffTerrain {
        step: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `len() + 1` states.
    pub states: Vec<WalkerState>,
    /// Contact flags `[right, left]` for every state.
    pub contacts: Vec<[bool; 2]>,
    /// Policy features of every state that received an action.
    pub features: Vec<FeatureVector>,
    /// Sampled actions, before clamping.
    pub actions: Vec<Torques>,
    /// Rewards of the applied (clamped) actions.
    pub rewards: Vec<f64>,
    /// Per-step log-density of each action under the sampling source.
    pub log_density: Vec<f64>,
    pub status: RolloutStatus,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RolloutStatus::Diverged { .. })
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Return over a `horizon`-step episode. Steps a truncated rollout did
    /// not reach are credited with [`DIVERGED_STEP_REWARD`] after a
    /// divergence and with the last observed reward after leaving the map.
    pub fn padded_return(&self, horizon: usize) -> f64 {
        let missing = horizon.saturating_sub(self.len()) as f64;
        let fill = match self.status {
            RolloutStatus::Complete => 0.0,
            RolloutStatus::Diverged { .. } => DIVERGED_STEP_REWARD,
            RolloutStatus::OffTerrain { .. } => self.rewards.last().copied().unwrap_or(DIVERGED_STEP_REWARD),
        };
        self.total_reward() + missing * fill
    }

    pub fn log_density_sum(&self) -> f64 {
        self.log_density.iter().sum()
    }
}

fn off_terrain_or<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::OffTerrain { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs `source` for up to `horizon` steps from the standing start.
///
/// Motor noise with per-joint std `model.motor_noise` is drawn after each
/// action from the same stream, so a rollout is a pure function of its
/// inputs and `seed`.
pub fn rollout(
    model: &WalkerModel,
    source: &mut dyn ActionSource,
    terrain: &Terrain,
    seed: u64,
    horizon: usize,
) -> Result<Trajectory> {
    rollout_from(
        model,
        source,
        terrain,
        model.initial_state(terrain)?,
        seed,
        horizon,
    )
}

pub fn rollout_from(
    model: &WalkerModel,
    source: &mut dyn ActionSource,
    terrain: &Terrain,
    start: WalkerState,
    seed: u64,
    horizon: usize,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidArgument(
            "rollout horizon must be at least 1".into(),
        ));
    }
    let mut rng = rng::rng(seed);
    source.reset();
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        contacts: Vec::with_capacity(horizon + 1),
        features: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        log_density: Vec::with_capacity(horizon),
        status: RolloutStatus::Complete,
    };
    let mut state = start;
    let Some(contacts) = off_terrain_or(model.contact_forces(&state, terrain))? else {
        return Err(Error::OffTerrain {
            x: state.trunk_x(),
            extent: terrain.extent(),
        });
    };
    traj.contacts
        .push([contacts[0].in_contact, contacts[1].in_contact]);
    let mut contacts = contacts;
    for t in 0..horizon {
        let Some(feat) = off_terrain_or(features::features(model, &state, &contacts, terrain))? else {
            traj.status = RolloutStatus::OffTerrain { step: t };
            break;
        };
        let (action, logp) = source.act(t, &state, &feat, &mut rng)?;
        let noise: Torques = std::array::from_fn(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            model.motor_noise * z
        });
        let applied = model.clamp_torques(&action);
        let r = match off_terrain_or(features::reward(&state, &applied, terrain))? {
            Some(r) => r,
            None => {
                traj.status = RolloutStatus::OffTerrain { step: t };
                break;
            }
        };
        let next = match model.step(&state, &action, terrain, &noise) {
            Ok(s) => s,
            Err(Error::Diverged { .. }) => {
                traj.status = RolloutStatus::Diverged { step: t };
                break;
            }
            Err(Error::OffTerrain { .. }) => {
                traj.status = RolloutStatus::OffTerrain { step: t };
                break;
            }
            Err(e) => return Err(e),
        };
        let next_contacts = match off_terrain_or(model.contact_forces(&next, terrain))? {
            Some(c) => c,
            None => {
                traj.status = RolloutStatus::OffTerrain { step: t };
                break;
            }
        };
        traj.states.push(state);
        traj.features.push(feat);
        traj.actions.push(action);
        traj.rewards.push(r);
        traj.log_density.push(logp);
        traj.contacts
            .push([next_contacts[0].in_contact, next_contacts[1].in_contact]);
        state = next;
        contacts = next_contacts;
    }
    traj.states.push(state);
    traj.contacts.truncate(traj.states.len());
    Ok(traj)
}

/// Column names of the trajectory trace format.
pub fn trace_header() -> String {
    let mut cols = vec!["t".to_string(), "x".into(), "y".into(), "theta".into()];
    cols.extend((1..=6).map(|i| format!("j{i}")));
    cols.extend(["xd".to_string(), "yd".into(), "thetad".into()]);
    cols.extend((1..=6).map(|i| format!("jd{i}")));
    cols.extend((1..=6).map(|i| format!("u{i}")));
    cols.extend(["reward".to_string(), "contactL".into(), "contactR".into()]);
    cols.join(",")
}

/// One row per state. The final state has no action, so its action and
/// reward fields are empty.
pub fn trace_csv(traj: &Trajectory) -> String {
    let mut out = trace_header();
    out.push('\n');
    for (t, s) in traj.states.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for v in s.q.iter().chain(&s.qd) {
            write!(out, ",{v}").unwrap();
        }
        match traj.actions.get(t) {
            Some(u) => {
                for v in u {
                    write!(out, ",{v}").unwrap();
                }
                write!(out, ",{}", traj.rewards[t]).unwrap();
            }
            None => out.push_str(",,,,,,,"),
        }
        let [r, l] = traj.contacts[t];
        writeln!(out, ",{},{}", l as u8, r as u8).unwrap();
    }
    out
}

pub fn write_trace(path: &Path, traj: &Trajectory) -> Result<()> {
    std::fs::write(path, trace_csv(traj)).map_err(|e| Error::io(path, e))
}

/// States and actions read back from a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceData {
    pub states: Vec<WalkerState>,
    pub actions: Vec<Torques>,
}

/// Parses a trace by column name. Rows without actions must be trailing.
pub fn parse_trace(text: &str) -> Result<TraceData> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::parse("trace", 1, "empty file"))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::parse("trace", 1, format!("missing column {name}")))
    };
    let mut q_cols = vec![col("x")?, col("y")?, col("theta")?];
    let mut qd_cols = vec![col("xd")?, col("yd")?, col("thetad")?];
    for i in 1..=6 {
        q_cols.push(col(&format!("j{i}"))?);
        qd_cols.push(col(&format!("jd{i}"))?);
    }
    let u_cols: Vec<usize> = (1..=6).map(|i| col(&format!("u{i}"))).collect::<Result<_>>()?;

    let mut data = TraceData {
        states: Vec::new(),
        actions: Vec::new(),
    };
    for (row, line) in lines.enumerate() {
        let lineno = row + 2;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(Error::parse("trace", lineno, "wrong number of fields"));
        }
        let num = |c: usize| -> Result<f64> {
            fields[c]
                .parse::<f64>()
                .map_err(|e| Error::parse("trace", lineno, format!("{}: {e}", names[c])))
        };
        let mut q = [0.0; NQ];
        let mut qd = [0.0; NQ];
        for i in 0..NQ {
            q[i] = num(q_cols[i])?;
            qd[i] = num(qd_cols[i])?;
        }
        if data.states.len() > data.actions.len() {
            return Err(Error::parse("trace", lineno, "state after a row without action"));
        }
        let time_index = data.states.len();
        data.states.push(WalkerState { q, qd, time_index });
        if u_cols.iter().all(|&c| fields[c].is_empty()) {
            continue;
        }
        let mut u = [0.0; NU];
        for (k, &c) in u_cols.iter().enumerate() {
            u[k] = num(c)?;
        }
        data.actions.push(u);
    }
    Ok(data)
}
