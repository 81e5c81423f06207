//! Policy input features and the locomotion reward.
//!
//! Feature layout (30 entries):
//!
//! | index  | content                                                    |
//! |--------|------------------------------------------------------------|
//! | 0      | trunk height above the local ground                        |
//! | 1, 2   | cos, sin of trunk orientation                              |
//! | 3..=8  | joint angles (r_hip, r_knee, r_ankle, l_hip, l_knee, l_ankle) |
//! | 9..=11 | trunk vx, vy, angular velocity                             |
//! | 12..=17| joint velocities                                           |
//! | 18, 19 | contact indicators, right foot then left foot              |
//! | 20..=29| (x, y) of right foot, left foot, right knee, left knee and torso top in the trunk frame |
//!
//! The horizontal trunk position never enters the features.

use nalgebra::{SMatrix, SVector};

use crate::error::Result;
use crate::terrain::Terrain;
use crate::walker::{Contacts, Torques, WalkerModel, WalkerState, JOINT_OFFSET, NQ, NU, NX};

pub const FEATURE_DIM: usize = 30;
pub type FeatureVector = [f64; FEATURE_DIM];

pub const TORQUE_WEIGHT: f64 = 1e-4;
pub const TARGET_VX: f64 = 1.2;
pub const TARGET_HEIGHT: f64 = 1.5;
pub const HEIGHT_WEIGHT: f64 = 10.0;

/// Trunk height above the terrain directly below it.
pub fn trunk_height(state: &WalkerState, terrain: &Terrain) -> Result<f64> {
    Ok(state.trunk_y() - terrain.height_at(state.trunk_x())?)
}

pub fn features(
    model: &WalkerModel,
    state: &WalkerState,
    contacts: &Contacts,
    terrain: &Terrain,
) -> Result<FeatureVector> {
    let mut f = [0.0; FEATURE_DIM];
    let theta = state.q[2];
    let (s, c) = theta.sin_cos();
    f[0] = trunk_height(state, terrain)?;
    f[1] = c;
    f[2] = s;
    f[3..9].copy_from_slice(&state.q[JOINT_OFFSET..]);
    f[9..12].copy_from_slice(&state.qd[..3]);
    f[12..18].copy_from_slice(&state.qd[JOINT_OFFSET..]);
    f[18] = contacts[0].in_contact as u8 as f64;
    f[19] = contacts[1].in_contact as u8 as f64;
    for (k, p) in model.body_points(state).iter().enumerate() {
        f[20 + 2 * k] = c * p[0] + s * p[1];
        f[21 + 2 * k] = -s * p[0] + c * p[1];
    }
    Ok(f)
}

/// `-1e-4 |u|^2 - (vx - 1.2)^2 - 10 (py - 1.5)^2` with `py` the trunk
/// height above local ground and `vx` the world-frame trunk velocity.
pub fn reward(state: &WalkerState, action: &Torques, terrain: &Terrain) -> Result<f64> {
    let py = trunk_height(state, terrain)?;
    let vx = state.qd[0];
    let u2: f64 = action.iter().map(|u| u * u).sum();
    Ok(-TORQUE_WEIGHT * u2 - (vx - TARGET_VX).powi(2) - HEIGHT_WEIGHT * (py - TARGET_HEIGHT).powi(2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardDerivatives {
    pub rx: SVector<f64, NX>,
    pub ru: SVector<f64, NU>,
    pub rxx: SMatrix<f64, NX, NX>,
    pub ruu: SMatrix<f64, NU, NU>,
}

/// Analytic first and second derivatives of [`reward`] with respect to the
/// flat state `[q, qd]` and the action. The terrain is treated as locally
/// linear, so `d py / d x = -tan(slope)`.
pub fn reward_derivatives(
    state: &WalkerState,
    action: &Torques,
    terrain: &Terrain,
) -> Result<RewardDerivatives> {
    let (ground, dh) = terrain.height_and_gradient(state.trunk_x())?;
    let dpy = state.trunk_y() - ground - TARGET_HEIGHT;
    let dvx = state.qd[0] - TARGET_VX;
    // gradient of py w.r.t. (x, y)
    let g = [-dh, 1.0];

    let mut rx = SVector::<f64, NX>::zeros();
    rx[0] = -2.0 * HEIGHT_WEIGHT * dpy * g[0];
    rx[1] = -2.0 * HEIGHT_WEIGHT * dpy * g[1];
    rx[NQ] = -2.0 * dvx;

    let mut rxx = SMatrix::<f64, NX, NX>::zeros();
    for i in 0..2 {
        for j in 0..2 {
            rxx[(i, j)] = -2.0 * HEIGHT_WEIGHT * g[i] * g[j];
        }
    }
    rxx[(NQ, NQ)] = -2.0;

    let ru = SVector::<f64, NU>::from_iterator(action.iter().map(|u| -2.0 * TORQUE_WEIGHT * u));
    let ruu = SMatrix::<f64, NU, NU>::identity() * (-2.0 * TORQUE_WEIGHT);
    Ok(RewardDerivatives { rx, ru, rxx, ruu })
}
