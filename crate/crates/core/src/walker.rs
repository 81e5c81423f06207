//! Planar seven-link biped.
//!
//! Generalized coordinates are `[x, y, theta, r_hip, r_knee, r_ankle,
//! l_hip, l_knee, l_ankle]` where `(x, y)` is the torso center of mass,
//! `theta` the torso orientation (counter-clockwise, 0 = upright) and the
//! six joint angles are relative to the parent link. With every angle at
//! zero the legs hang straight down and the feet point forward along +x.
//!
//! The equations of motion `M(q) qdd = tau + g(q) + c(q, qd) + J_c^T f_c`
//! are assembled from per-link center-of-mass Jacobians and integrated
//! with semi-implicit Euler. Ground contact uses penalty springs at the
//! heel and toe of each foot; the ankle sits `ankle_offset` ahead of the
//! heel. The hip, knees and torso top carry the same springs so that a
//! fallen walker lies on the ground; they do not count as foot contact.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::terrain::Terrain;

pub const NQ: usize = 9;
pub const NX: usize = 2 * NQ;
pub const NU: usize = 6;

pub type Vec9 = [f64; NQ];
pub type Torques = [f64; NU];
type Mat9 = SMatrix<f64, NQ, NQ>;

/// Index of the first joint coordinate in `q`.
pub const JOINT_OFFSET: usize = 3;
pub const JOINT_NAMES: [&str; NU] = ["r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle"];

/// Initial trunk x on every terrain.
pub const START_X: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub length: f64,
    pub mass: f64,
    /// Rotational inertia about the center of mass.
    pub inertia: f64,
    /// Distance from the proximal joint to the center of mass.
    pub com_offset: f64,
}

impl Link {
    /// Uniform rod with its center of mass at the midpoint.
    pub fn rod(length: f64, mass: f64) -> Self {
        Self {
            length,
            mass,
            inertia: mass * length * length / 12.0,
            com_offset: 0.5 * length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactParams {
    /// Normal spring stiffness k_p, N/m.
    pub stiffness: f64,
    /// Normal damping k_d, N·s/m.
    pub damping: f64,
    /// Coulomb coefficient mu.
    pub friction: f64,
    /// Tangential viscous coefficient k_t, N·s/m.
    pub tangential_damping: f64,
    /// Width of the penetration ramp used when linearizing.
    pub smoothing: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness: 4.0e4,
            damping: 1.0e2,
            friction: 1.0,
            tangential_damping: 1.0e3,
            smoothing: 1.0e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkerModel {
    pub torso: Link,
    pub thigh: Link,
    pub shin: Link,
    pub foot: Link,
    pub torque_limit: f64,
    pub gravity: f64,
    pub contact: ContactParams,
    /// Control period.
    pub dt: f64,
    pub substeps: usize,
    /// Per-joint standard deviation of the additive motor noise.
    pub motor_noise: f64,
    /// Reflected actuator inertia added to each joint coordinate.
    pub armature: f64,
    /// Distance from the heel to the ankle along the foot.
    pub ankle_offset: f64,
}

impl Default for WalkerModel {
    fn default() -> Self {
        Self {
            torso: Link::rod(1.0, 10.0),
            thigh: Link::rod(0.5, 4.5),
            shin: Link::rod(0.5, 3.0),
            foot: Link::rod(0.2, 1.0),
            torque_limit: 100.0,
            gravity: 9.81,
            contact: ContactParams::default(),
            dt: 0.01,
            substeps: 10,
            motor_noise: 1.0,
            armature: 0.1,
            ankle_offset: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkerState {
    pub q: Vec9,
    pub qd: Vec9,
    pub time_index: usize,
}

impl WalkerState {
    pub fn to_vector(&self) -> [f64; NX] {
        let mut x = [0.0; NX];
        x[..NQ].copy_from_slice(&self.q);
        x[NQ..].copy_from_slice(&self.qd);
        x
    }

    pub fn from_vector(x: &[f64], time_index: usize) -> Self {
        let mut q = [0.0; NQ];
        let mut qd = [0.0; NQ];
        q.copy_from_slice(&x[..NQ]);
        qd.copy_from_slice(&x[NQ..NX]);
        Self { q, qd, time_index }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).all(|v| v.is_finite())
    }

    pub fn trunk_x(&self) -> f64 {
        self.q[0]
    }

    pub fn trunk_y(&self) -> f64 {
        self.q[1]
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a - TAU * ((a + PI) / TAU).floor();
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// `a - b` on the flat state vector, with joint-angle entries wrapped.
pub fn state_difference(a: &[f64], b: &[f64]) -> [f64; NX] {
    let mut d = [0.0; NX];
    for i in 0..NX {
        d[i] = a[i] - b[i];
    }
    for i in JOINT_OFFSET..NQ {
        d[i] = wrap_angle(d[i]);
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FootContact {
    /// Net contact force on the foot in world coordinates.
    pub force: [f64; 2],
    pub in_contact: bool,
}

/// Per-foot contact result, index 0 = right, 1 = left.
pub type Contacts = [FootContact; 2];

// Kinematic frames: torso, then thigh/shin/foot for the right and left leg.
const FRAMES: usize = 7;
const FRAME_COORDS: [&[usize]; FRAMES] = [
    &[2],
    &[2, 3],
    &[2, 3, 4],
    &[2, 3, 4, 5],
    &[2, 6],
    &[2, 6, 7],
    &[2, 6, 7, 8],
];

#[derive(Debug, Clone, Copy)]
struct Frame {
    // unit axis of the link and its derivative w.r.t. the frame angle
    axis: [f64; 2],
    axis_d: [f64; 2],
    omega: f64,
}

#[derive(Debug, Clone, Copy)]
struct Point {
    p: [f64; 2],
    v: [f64; 2],
    jac: [[f64; NQ]; 2],
    // acceleration at zero generalized acceleration
    bias: [f64; 2],
}

impl Point {
    fn base(q: &Vec9, qd: &Vec9) -> Self {
        let mut jac = [[0.0; NQ]; 2];
        jac[0][0] = 1.0;
        jac[1][1] = 1.0;
        Self {
            p: [q[0], q[1]],
            v: [qd[0], qd[1]],
            jac,
            bias: [0.0; 2],
        }
    }

    fn offset(&self, frames: &[Frame; FRAMES], f: usize, c: f64) -> Self {
        let fr = &frames[f];
        let mut out = *self;
        for k in 0..2 {
            out.p[k] += c * fr.axis[k];
            out.v[k] += c * fr.omega * fr.axis_d[k];
            out.bias[k] -= c * fr.omega * fr.omega * fr.axis[k];
            for &j in FRAME_COORDS[f] {
                out.jac[k][j] += c * fr.axis_d[k];
            }
        }
        out
    }
}

/// Positions, velocities and Jacobians of every body point the simulator
/// and the feature map need.
#[derive(Debug, Clone)]
struct Kinematics {
    coms: [Point; FRAMES],
    // heel/toe per foot: [r_heel, r_toe, l_heel, l_toe]
    contacts: [Point; 4],
    knees: [Point; 2],
    torso_top: Point,
    /// Points that only touch the ground after a fall: hip, knees, torso top.
    guards: [Point; 4],
}

fn frames(q: &Vec9, qd: &Vec9) -> [Frame; FRAMES] {
    use std::f64::consts::FRAC_PI_2;
    let mut out = [Frame {
        axis: [0.0; 2],
        axis_d: [0.0; 2],
        omega: 0.0,
    }; FRAMES];
    for (f, coords) in FRAME_COORDS.iter().enumerate() {
        let angle: f64 = coords.iter().map(|&j| q[j]).sum();
        let omega: f64 = coords.iter().map(|&j| qd[j]).sum();
        // torso axis points up, leg links down, feet forward
        let beta = match f {
            0 => FRAC_PI_2,
            3 | 6 => 0.0,
            _ => -FRAC_PI_2,
        };
        let (s, c) = (angle + beta).sin_cos();
        out[f] = Frame {
            axis: [c, s],
            axis_d: [-s, c],
            omega,
        };
    }
    out
}

impl WalkerModel {
    pub fn validate(&self) -> Result<()> {
        for (name, l) in [
            ("torso", &self.torso),
            ("thigh", &self.thigh),
            ("shin", &self.shin),
            ("foot", &self.foot),
        ] {
            if !(l.length > 0.0 && l.mass > 0.0 && l.inertia > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} link needs positive length, mass and inertia"
                )));
            }
        }
        if !(self.ankle_offset >= 0.0 && self.ankle_offset <= self.foot.length) {
            return Err(Error::InvalidArgument("ankle must lie on the foot".into()));
        }
        if !(self.armature >= 0.0) {
            return Err(Error::InvalidArgument("armature must be non-negative".into()));
        }
        if !(self.torque_limit > 0.0 && self.dt > 0.0 && self.substeps > 0) {
            return Err(Error::InvalidArgument(
                "torque limit, dt and substeps must be positive".into(),
            ));
        }
        Ok(())
    }

    fn link(&self, frame: usize) -> &Link {
        match frame {
            0 => &self.torso,
            1 | 4 => &self.thigh,
            2 | 5 => &self.shin,
            _ => &self.foot,
        }
    }

    /// Nominal height of the torso center of mass above the ground when
    /// standing straight with flat feet.
    pub fn standing_height(&self) -> f64 {
        self.torso.com_offset + self.thigh.length + self.shin.length
    }

    fn kinematics(&self, q: &Vec9, qd: &Vec9) -> Kinematics {
        let fr = frames(q, qd);
        let base = Point::base(q, qd);
        let hip = base.offset(&fr, 0, -self.torso.com_offset);
        let torso_top = base.offset(&fr, 0, self.torso.length - self.torso.com_offset);
        let mut coms = [base; FRAMES];
        let mut contacts = [base; 4];
        let mut knees = [base; 2];
        for leg in 0..2 {
            let (ft, fs, ff) = (1 + 3 * leg, 2 + 3 * leg, 3 + 3 * leg);
            coms[ft] = hip.offset(&fr, ft, self.thigh.com_offset);
            let knee = hip.offset(&fr, ft, self.thigh.length);
            coms[fs] = knee.offset(&fr, fs, self.shin.com_offset);
            let ankle = knee.offset(&fr, fs, self.shin.length);
            let back = self.ankle_offset;
            coms[ff] = ankle.offset(&fr, ff, self.foot.com_offset - back);
            contacts[2 * leg] = ankle.offset(&fr, ff, -back);
            contacts[2 * leg + 1] = ankle.offset(&fr, ff, self.foot.length - back);
            knees[leg] = knee;
        }
        Kinematics {
            coms,
            contacts,
            knees,
            torso_top,
            guards: [hip, knees[0], knees[1], torso_top],
        }
    }

    fn mass_matrix(&self, kin: &Kinematics) -> Mat9 {
        let mut m = Mat9::zeros();
        for (f, com) in kin.coms.iter().enumerate() {
            let link = self.link(f);
            for i in 0..NQ {
                for j in i..NQ {
                    let v = link.mass * (com.jac[0][i] * com.jac[0][j] + com.jac[1][i] * com.jac[1][j]);
                    m[(i, j)] += v;
                }
            }
            let coords = FRAME_COORDS[f];
            for &i in coords {
                for &j in coords {
                    if j >= i {
                        m[(i, j)] += link.inertia;
                    }
                }
            }
        }
        for i in JOINT_OFFSET..NQ {
            m[(i, i)] += self.armature;
        }
        for i in 0..NQ {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
        m
    }

    /// Generalized mass matrix at configuration `q`.
    pub fn mass_matrix_at(&self, q: &Vec9) -> [[f64; NQ]; NQ] {
        let kin = self.kinematics(q, &[0.0; NQ]);
        let m = self.mass_matrix(&kin);
        let mut out = [[0.0; NQ]; NQ];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
        }
        out
    }

    /// Kinetic plus gravitational potential energy.
    pub fn energy(&self, state: &WalkerState) -> f64 {
        let kin = self.kinematics(&state.q, &state.qd);
        let mut e = 0.0;
        for (f, com) in kin.coms.iter().enumerate() {
            let link = self.link(f);
            let omega: f64 = FRAME_COORDS[f].iter().map(|&j| state.qd[j]).sum();
            e += 0.5 * link.mass * (com.v[0] * com.v[0] + com.v[1] * com.v[1]);
            e += 0.5 * link.inertia * omega * omega;
            e += link.mass * self.gravity * com.p[1];
        }
        e + 0.5 * self.armature * state.qd[JOINT_OFFSET..].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn total_mass(&self) -> f64 {
        (0..FRAMES).map(|f| self.link(f).mass).sum()
    }

    /// World positions of the contact points: r_heel, r_toe, l_heel, l_toe.
    pub fn contact_points(&self, state: &WalkerState) -> [[f64; 2]; 4] {
        let kin = self.kinematics(&state.q, &state.qd);
        kin.contacts.map(|p| p.p)
    }

    /// Positions relative to the torso center of mass, in world axes, of
    /// the right foot, left foot, right knee, left knee and torso top.
    pub fn body_points(&self, state: &WalkerState) -> [[f64; 2]; 5] {
        let kin = self.kinematics(&state.q, &state.qd);
        let rel = |p: &Point| [p.p[0] - state.q[0], p.p[1] - state.q[1]];
        [
            rel(&kin.coms[3]),
            rel(&kin.coms[6]),
            rel(&kin.knees[0]),
            rel(&kin.knees[1]),
            rel(&kin.torso_top),
        ]
    }

    /// Canonical standing pose: upright torso above a straight pair of legs
    /// with flat feet resting on the ground at `START_X`.
    pub fn initial_state(&self, terrain: &Terrain) -> Result<WalkerState> {
        let ground = terrain.height_at(START_X)?;
        let mut q = [0.0; NQ];
        q[0] = START_X;
        q[1] = ground + self.standing_height();
        Ok(WalkerState {
            q,
            qd: [0.0; NQ],
            time_index: 0,
        })
    }

    fn point_contact(&self, point: &Point, terrain: &Terrain, smooth: bool) -> Result<(f64, [f64; 2], bool)> {
        let (h, dh) = terrain.extended_height_and_gradient(point.p[0]);
        let cos_s = 1.0 / (1.0 + dh * dh).sqrt();
        let sin_s = dh * cos_s;
        let normal = [-sin_s, cos_s];
        let tangent = [cos_s, sin_s];
        let pen = (h - point.p[1]) * cos_s;
        let vn = point.v[0] * normal[0] + point.v[1] * normal[1];
        let vt = point.v[0] * tangent[0] + point.v[1] * tangent[1];
        let c = &self.contact;
        let fn_raw = if smooth {
            let w = c.smoothing;
            let (ramp, slope) = if pen <= 0.0 {
                (0.0, 0.0)
            } else if pen < w {
                (pen * pen / (2.0 * w), pen / w)
            } else {
                (pen - 0.5 * w, 1.0)
            };
            c.stiffness * ramp - c.damping * vn * slope
        } else if pen > 0.0 {
            c.stiffness * pen - c.damping * vn
        } else {
            0.0
        };
        let f_n = fn_raw.max(0.0);
        let limit = c.friction * f_n;
        let f_t = (-c.tangential_damping * vt).clamp(-limit, limit);
        let force = [
            f_n * normal[0] + f_t * tangent[0],
            f_n * normal[1] + f_t * tangent[1],
        ];
        Ok((pen, force, pen > 0.0))
    }

    fn contacts_from(
        &self,
        kin: &Kinematics,
        terrain: &Terrain,
        smooth: bool,
    ) -> Result<([[f64; 2]; 4], Contacts)> {
        let mut point_forces = [[0.0; 2]; 4];
        let mut feet = Contacts::default();
        for (i, point) in kin.contacts.iter().enumerate() {
            let (_, f, touching) = self.point_contact(point, terrain, smooth)?;
            point_forces[i] = f;
            let foot = &mut feet[i / 2];
            foot.force[0] += f[0];
            foot.force[1] += f[1];
            foot.in_contact |= touching;
        }
        Ok((point_forces, feet))
    }

    /// Penalty contact forces on each foot (heel plus toe) and the contact
    /// indicators.
    pub fn contact_forces(&self, state: &WalkerState, terrain: &Terrain) -> Result<Contacts> {
        let kin = self.kinematics(&state.q, &state.qd);
        Ok(self.contacts_from(&kin, terrain, false)?.1)
    }

    /// Largest penetration depth over the four contact points (0 if none).
    pub fn max_penetration(&self, state: &WalkerState, terrain: &Terrain) -> Result<f64> {
        let kin = self.kinematics(&state.q, &state.qd);
        let mut worst: f64 = 0.0;
        for point in &kin.contacts {
            worst = worst.max(self.point_contact(point, terrain, false)?.0);
        }
        Ok(worst)
    }

    /// Generalized accelerations for applied joint torques `tau`.
    fn accelerations(
        &self,
        q: &Vec9,
        qd: &Vec9,
        tau: &Torques,
        terrain: &Terrain,
        smooth: bool,
    ) -> Result<Vec9> {
        let kin = self.kinematics(q, qd);
        let m = self.mass_matrix(&kin);
        let mut rhs = SVector::<f64, NQ>::zeros();
        for (i, t) in tau.iter().enumerate() {
            rhs[JOINT_OFFSET + i] += t;
        }
        for (f, com) in kin.coms.iter().enumerate() {
            let mass = self.link(f).mass;
            let force = [-mass * com.bias[0], -mass * (self.gravity + com.bias[1])];
            for j in 0..NQ {
                rhs[j] += com.jac[0][j] * force[0] + com.jac[1][j] * force[1];
            }
        }
        let (point_forces, _) = self.contacts_from(&kin, terrain, smooth)?;
        for (point, f) in kin.contacts.iter().zip(&point_forces) {
            for j in 0..NQ {
                rhs[j] += point.jac[0][j] * f[0] + point.jac[1][j] * f[1];
            }
        }
        // a fallen walker rests on the ground instead of sinking through it
        for point in &kin.guards {
            let (pen, f, _) = self.point_contact(point, terrain, smooth)?;
            if pen > 0.0 {
                for j in 0..NQ {
                    rhs[j] += point.jac[0][j] * f[0] + point.jac[1][j] * f[1];
                }
            }
        }
        let chol = m
            .cholesky()
            .ok_or(Error::NonFinite("mass matrix factorization"))?;
        let qdd = chol.solve(&rhs);
        Ok(std::array::from_fn(|i| qdd[i]))
    }

    pub fn clamp_torques(&self, action: &Torques) -> Torques {
        action.map(|u| u.clamp(-self.torque_limit, self.torque_limit))
    }

    /// Advances one control period with the action held constant. `noise`
    /// is the motor-noise draw for this period, added after clamping.
    pub fn step(
        &self,
        state: &WalkerState,
        action: &Torques,
        terrain: &Terrain,
        noise: &Torques,
    ) -> Result<WalkerState> {
        self.step_impl(state, action, terrain, noise, false)
    }

    fn step_impl(
        &self,
        state: &WalkerState,
        action: &Torques,
        terrain: &Terrain,
        noise: &Torques,
        smooth: bool,
    ) -> Result<WalkerState> {
        let clamped = self.clamp_torques(action);
        let tau: Torques = std::array::from_fn(|i| clamped[i] + noise[i]);
        let h = self.dt / self.substeps as f64;
        let mut q = state.q;
        let mut qd = state.qd;
        let diverged = Error::Diverged {
            step: state.time_index,
        };
        for _ in 0..self.substeps {
            let qdd = match self.accelerations(&q, &qd, &tau, terrain, smooth) {
                Ok(a) => a,
                Err(Error::NonFinite(_)) => return Err(diverged),
                Err(e) => return Err(e),
            };
            for i in 0..NQ {
                qd[i] += h * qdd[i];
                q[i] += h * qd[i];
            }
            if !q.iter().chain(&qd).all(|v| v.is_finite() && v.abs() < 1e4) {
                return Err(diverged);
            }
        }
        for angle in &mut q[JOINT_OFFSET..] {
            *angle = wrap_angle(*angle);
        }
        Ok(WalkerState {
            q,
            qd,
            time_index: state.time_index + 1,
        })
    }

    /// One-control-step map on flat vectors, noise-free, with smoothed
    /// contact. This is the function `linearize` differentiates.
    pub fn smoothed_transition(&self, x: &[f64], u: &Torques, terrain: &Terrain) -> Result<[f64; NX]> {
        let s = WalkerState::from_vector(x, 0);
        Ok(self.step_impl(&s, u, terrain, &[0.0; NU], true)?.to_vector())
    }

    /// Central finite-difference Jacobians `(A, B)` of the smoothed
    /// one-step map, row-major `NX x NX` and `NX x NU`.
    pub fn linearize(
        &self,
        state: &WalkerState,
        action: &Torques,
        terrain: &Terrain,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        const H: f64 = 1e-5;
        let failed = |_| Error::LinearizationFailed {
            step: state.time_index,
        };
        let x0 = state.to_vector();
        let mut a = vec![0.0; NX * NX];
        let mut b = vec![0.0; NX * NU];
        for j in 0..NX {
            let mut xp = x0;
            let mut xm = x0;
            xp[j] += H;
            xm[j] -= H;
            let fp = self.smoothed_transition(&xp, action, terrain).map_err(failed)?;
            let fm = self.smoothed_transition(&xm, action, terrain).map_err(failed)?;
            let d = state_difference(&fp, &fm);
            for i in 0..NX {
                a[i * NX + j] = d[i] / (2.0 * H);
            }
        }
        for j in 0..NU {
            let mut up = *action;
            let mut um = *action;
            up[j] += H;
            um[j] -= H;
            let fp = self.smoothed_transition(&x0, &up, terrain).map_err(failed)?;
            let fm = self.smoothed_transition(&x0, &um, terrain).map_err(failed)?;
            let d = state_difference(&fp, &fm);
            for i in 0..NX {
                b[i * NU + j] = d[i] / (2.0 * H);
            }
        }
        Ok((a, b))
    }
}
