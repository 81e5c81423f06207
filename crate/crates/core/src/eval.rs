//! Success-fraction evaluation of a policy over sets of terrains.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, PolicySource};
use crate::rng::{self, stream};
use crate::rollout::{self, Trajectory};
use crate::terrain::Terrain;
use crate::walker::WalkerModel;

/// What counts as "did not fall and kept moving forward".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criteria {
    /// Minimum trunk height above the local ground at every step.
    pub h_fall: f64,
    /// Minimum mean forward velocity over the rollout.
    pub v_min: f64,
}

impl Default for Criteria {
    fn default() -> Self {
        Self {
            h_fall: 0.9,
            v_min: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub success: bool,
    pub mean_vx: f64,
    pub min_height: f64,
    pub steps: usize,
    pub diverged: bool,
}

/// Judges one rollout. Leaving the end of the terrain is not a failure in
/// itself: the checks apply to the part that was simulated.
pub fn is_success(traj: &Trajectory, terrain: &Terrain, dt: f64, criteria: &Criteria) -> Result<Diagnostics> {
    let mut min_height = f64::INFINITY;
    for s in &traj.states {
        if !s.is_finite() {
            min_height = f64::NEG_INFINITY;
            break;
        }
        // the last state of a truncated rollout may lie past the map's end
        let ground = terrain.extended_height_and_gradient(s.trunk_x()).0;
        min_height = min_height.min(s.trunk_y() - ground);
    }
    let steps = traj.len();
    let mean_vx = if steps == 0 {
        0.0
    } else {
        let (a, b) = (&traj.states[0], &traj.states[steps]);
        (b.trunk_x() - a.trunk_x()) / (steps as f64 * dt)
    };
    let diverged = traj.diverged();
    let success = !diverged && steps > 0 && min_height >= criteria.h_fall && mean_vx >= criteria.v_min;
    Ok(Diagnostics {
        success,
        mean_vx: if mean_vx.is_finite() { mean_vx } else { 0.0 },
        min_height,
        steps,
        diverged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub terrain_id: u64,
    pub trial: usize,
    pub diagnostics: Diagnostics,
    /// Logged for diagnostics only; never used to decide success.
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub trials: Vec<Trial>,
}

impl EvalReport {
    pub fn successes(&self) -> usize {
        self.trials.iter().filter(|t| t.diagnostics.success).count()
    }

    /// Successes over all trials; 0 for an empty report.
    pub fn success_fraction(&self) -> f64 {
        if self.trials.is_empty() {
            0.0
        } else {
            self.successes() as f64 / self.trials.len() as f64
        }
    }

    /// Success fraction per terrain, in order of first appearance.
    pub fn per_terrain(&self) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, usize, usize)> = Vec::new();
        for t in &self.trials {
            let i = match out.iter().position(|(id, _, _)| *id == t.terrain_id) {
                Some(i) => i,
                None => {
                    out.push((t.terrain_id, 0, 0));
                    out.len() - 1
                }
            };
            out[i].1 += t.diagnostics.success as usize;
            out[i].2 += 1;
        }
        out.into_iter()
            .map(|(id, s, n)| (id, s as f64 / n as f64))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("terrain_id,trial,success,mean_vx,min_height,steps\n");
        for t in &self.trials {
            let d = &t.diagnostics;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                t.terrain_id, t.trial, d.success as u8, d.mean_vx, d.min_height, d.steps
            )
            .unwrap();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Seed of the motor noise for one evaluation trial.
pub fn trial_seed(seed: u64, terrain_id: u64, trial: usize) -> u64 {
    rng::derive(seed, &[stream::EVAL, terrain_id, trial as u64])
}

/// Rolls out the policy mean (motor noise still applies) on one terrain.
pub fn policy_rollout(
    model: &WalkerModel,
    policy: &PolicyParams,
    terrain: &Terrain,
    seed: u64,
    horizon: usize,
) -> Result<Trajectory> {
    let mut src = PolicySource::new(policy, true);
    rollout::rollout(model, &mut src, terrain, seed, horizon)
}

/// Runs `trials` rollouts of the policy mean on each `(id, terrain)`.
/// Diverged trials count as failures.
pub fn evaluate(
    model: &WalkerModel,
    policy: &PolicyParams,
    terrains: &[(u64, Terrain)],
    trials: usize,
    seed: u64,
    horizon: usize,
    criteria: &Criteria,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument(
            "trials per terrain must be at least 1".into(),
        ));
    }
    if terrains.is_empty() {
        return Err(Error::InvalidArgument("no terrains to evaluate on".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..terrains.len())
        .flat_map(|k| (0..trials).map(move |i| (k, i)))
        .collect();
    let results = crate::par::map(&jobs, |&(k, i)| -> Result<Trial> {
        let (id, terrain) = &terrains[k];
        let traj = policy_rollout(model, policy, terrain, trial_seed(seed, *id, i), horizon)?;
        Ok(Trial {
            terrain_id: *id,
            trial: i,
            diagnostics: is_success(&traj, terrain, model.dt, criteria)?,
            total_reward: traj.total_reward(),
        })
    });
    Ok(EvalReport {
        trials: results.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::RolloutStatus;
    use crate::walker::{WalkerState, NQ};

    fn straight_line(vx: f64, height: f64, steps: usize, dt: f64) -> Trajectory {
        let states = (0..=steps)
            .map(|t| {
                let mut q = [0.0; NQ];
                q[0] = 0.3 + vx * dt * t as f64;
                q[1] = height;
                let mut qd = [0.0; NQ];
                qd[0] = vx;
                WalkerState { q, qd, time_index: t }
            })
            .collect();
        Trajectory {
            states,
            contacts: vec![[false; 2]; steps + 1],
            features: vec![[0.0; crate::features::FEATURE_DIM]; steps],
            actions: vec![[0.0; 6]; steps],
            rewards: vec![0.0; steps],
            log_density: vec![0.0; steps],
            status: RolloutStatus::Complete,
        }
    }

    #[test]
    fn walking_at_target_succeeds() {
        let t = Terrain::flat(12.0);
        let d = is_success(
            &straight_line(1.2, 1.5, 700, 0.01),
            &t,
            0.01,
            &Criteria::default(),
        )
        .unwrap();
        assert!(d.success);
        assert!((d.mean_vx - 1.2).abs() < 1e-9);
        assert_eq!(d.min_height, 1.5);
        assert_eq!(d.steps, 700);
    }

    #[test]
    fn fallen_or_stationary_fails() {
        let t = Terrain::flat(12.0);
        let c = Criteria::default();
        let mut fell = straight_line(1.2, 1.5, 100, 0.01);
        fell.states.last_mut().unwrap().q[1] = 0.2;
        assert!(!is_success(&fell, &t, 0.01, &c).unwrap().success);
        assert!(
            !is_success(&straight_line(0.0, 1.5, 100, 0.01), &t, 0.01, &c)
                .unwrap()
                .success
        );
        let mut blew_up = straight_line(1.2, 1.5, 100, 0.01);
        blew_up.status = RolloutStatus::Diverged { step: 100 };
        assert!(!is_success(&blew_up, &t, 0.01, &c).unwrap().success);
    }

    #[test]
    fn running_off_the_map_can_succeed() {
        let t = Terrain::flat(3.0);
        let mut traj = straight_line(1.2, 1.5, 300, 0.01);
        traj.status = RolloutStatus::OffTerrain { step: 300 };
        assert!(is_success(&traj, &t, 0.01, &Criteria::default()).unwrap().success);
    }

    fn report(flags: &[bool]) -> EvalReport {
        EvalReport {
            trials: flags
                .iter()
                .enumerate()
                .map(|(i, &s)| Trial {
                    terrain_id: (i / 5) as u64,
                    trial: i % 5,
                    diagnostics: Diagnostics {
                        success: s,
                        mean_vx: 0.0,
                        min_height: 0.0,
                        steps: 0,
                        diverged: false,
                    },
                    total_reward: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn fraction_arithmetic() {
        let flags: Vec<bool> = (0..50).map(|i| i < 27).collect();
        assert!((report(&flags).success_fraction() - 0.54).abs() < 1e-15);
        assert_eq!(report(&[false; 10]).success_fraction(), 0.0);
        let per = report(&flags).per_terrain();
        assert_eq!(per.len(), 10);
        assert_eq!(per[0], (0, 1.0));
        assert_eq!(per[5].1, 0.4);
    }

    #[test]
    fn fraction_is_monotone_in_added_trials() {
        let base: Vec<bool> = (0..17).map(|i| i % 3 == 0).collect();
        let f = report(&base).success_fraction();
        let mut worse = base.clone();
        worse.push(false);
        let mut better = base;
        better.push(true);
        assert!(report(&worse).success_fraction() <= f);
        assert!(report(&better).success_fraction() >= f);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let model = WalkerModel::default();
        let arch = crate::policy::Architecture::new(
            crate::policy::Kind::Shallow,
            4,
            crate::policy::Activation::Soft,
        )
        .unwrap();
        let policy = PolicyParams::init(arch, 9);
        let terrains = vec![(1, Terrain::generate(1, 12.0).unwrap()), (0, Terrain::flat(12.0))];
        let c = Criteria::default();
        let a = evaluate(&model, &policy, &terrains, 2, 5, 60, &c).unwrap();
        let b = evaluate(&model, &policy, &terrains, 2, 5, 60, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 4);
        // an untrained network collapses
        assert_eq!(a.success_fraction(), 0.0);
        assert!(evaluate(&model, &policy, &terrains, 0, 5, 60, &c).is_err());
    }

    #[test]
    fn csv_has_one_row_per_trial() {
        let csv = report(&[true, false, true]).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "terrain_id,trial,success,mean_vx,min_height,steps");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,0,1,"));
    }
}
