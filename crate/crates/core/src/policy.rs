//! Gaussian neural-network policies with hand-written backpropagation.
//!
//! A policy maps the 30 features to the mean of a diagonal Gaussian over
//! the six joint torques; the per-joint log standard deviations are free
//! parameters. Three architectures are supported:
//!
//! * shallow: one hidden layer,
//! * deep: two hidden layers of equal width,
//! * recurrent: one hidden layer whose activations are fed back as extra
//!   inputs at the next step, starting from zero.
//!
//! Flat parameter order: input weights (row-major, hidden x 30), hidden
//! biases, then the second-layer weights and biases (deep) or the recurrent
//! weights (recurrent, row-major), then output weights (row-major, 6 x
//! hidden), output biases and the six log standard deviations.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::optim::{self, Method};
use crate::rng::{self, Rng};
use crate::rollout::ActionSource;
use crate::walker::{Torques, WalkerState, NU};

pub const LOG_STD_MIN: f64 = -4.605_170_185_988_091; // ln 0.01
pub const LOG_STD_MAX: f64 = std::f64::consts::LN_10;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Shallow,
    Deep,
    Recurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    /// `log(1 + e^z)`
    Soft,
    /// `max(0, z)`
    Hard,
    /// Logistic units; available to reproduce how badly they do.
    Sigmoid,
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shallow" => Ok(Self::Shallow),
            "deep" => Ok(Self::Deep),
            "recurrent" => Ok(Self::Recurrent),
            _ => Err(Error::InvalidArgument(format!(
                "unknown architecture {s:?} (shallow|deep|recurrent)"
            ))),
        }
    }
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Shallow => "shallow",
            Self::Deep => "deep",
            Self::Recurrent => "recurrent",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" | "soft_rect" => Ok(Self::Soft),
            "hard" | "hard_rect" => Ok(Self::Hard),
            "sigmoid" => Ok(Self::Sigmoid),
            _ => Err(Error::InvalidArgument(format!(
                "unknown activation {s:?} (soft|hard|sigmoid)"
            ))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Soft => "soft",
            Self::Hard => "hard",
            Self::Sigmoid => "sigmoid",
        })
    }
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Self::Soft => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Self::Hard => z.max(0.0),
            Self::Sigmoid => logistic(z),
        }
    }

    /// Derivative; the hard rectifier uses 0 at the kink.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Soft => logistic(z),
            Self::Hard => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Sigmoid => {
                let s = logistic(z);
                s * (1.0 - s)
            }
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub kind: Kind,
    pub hidden: usize,
    pub activation: Activation,
}

/// Offsets of the parameter blocks in the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    /// Second layer weights (deep) or recurrent weights.
    w2: usize,
    b2: usize,
    wo: usize,
    bo: usize,
    log_std: usize,
    len: usize,
}

impl Architecture {
    pub fn new(kind: Kind, hidden: usize, activation: Activation) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidArgument("hidden units must be positive".into()));
        }
        Ok(Self {
            kind,
            hidden,
            activation,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }

    fn layout(&self) -> Layout {
        let h = self.hidden;
        let w1 = 0;
        let b1 = w1 + h * FEATURE_DIM;
        let w2 = b1 + h;
        let (b2, wo) = match self.kind {
            Kind::Shallow => (w2, w2),
            Kind::Deep => (w2 + h * h, w2 + h * h + h),
            Kind::Recurrent => (w2 + h * h, w2 + h * h),
        };
        let bo = wo + NU * h;
        let log_std = bo + NU;
        Layout {
            w1,
            b1,
            w2,
            b2,
            wo,
            bo,
            log_std,
            len: log_std + NU,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: Architecture,
    pub theta: Vec<f64>,
}

/// Activations saved by a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
struct Tape {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
}

impl PolicyParams {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != arch.param_count() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, found {}",
                arch.param_count(),
                theta.len()
            )));
        }
        Ok(Self { arch, theta })
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero,
    /// unit standard deviations.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = rng::rng(seed);
        let l = arch.layout();
        let h = arch.hidden;
        let mut theta = vec![0.0; l.len];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in &mut theta[range] {
                *v = rng.random_range(-s..=s);
            }
        };
        fill(l.w1..l.b1, FEATURE_DIM);
        match arch.kind {
            Kind::Shallow => {}
            Kind::Deep => fill(l.w2..l.b2, h),
            Kind::Recurrent => fill(l.w2..l.b2, h),
        }
        fill(l.wo..l.bo, h);
        Self { arch, theta }
    }

    fn layout(&self) -> Layout {
        self.arch.layout()
    }

    pub fn log_std(&self) -> [f64; NU] {
        let l = self.layout();
        std::array::from_fn(|j| self.theta[l.log_std + j].clamp(LOG_STD_MIN, LOG_STD_MAX))
    }

    pub fn std(&self) -> [f64; NU] {
        self.log_std().map(f64::exp)
    }

    /// Fresh hidden state: empty for feed-forward nets, zeros otherwise.
    pub fn initial_hidden(&self) -> Vec<f64> {
        match self.arch.kind {
            Kind::Recurrent => vec![0.0; self.arch.hidden],
            _ => Vec::new(),
        }
    }

    fn forward_tape(&self, x: &[f64], h_prev: &[f64], tape: &mut Tape) -> Torques {
        let l = self.layout();
        let n = self.arch.hidden;
        let act = self.arch.activation;
        let th = &self.theta;
        tape.z1.resize(n, 0.0);
        tape.a1.resize(n, 0.0);
        for i in 0..n {
            let row = &th[l.w1 + i * FEATURE_DIM..l.w1 + (i + 1) * FEATURE_DIM];
            let mut z = th[l.b1 + i];
            for (w, x) in row.iter().zip(x) {
                z += w * x;
            }
            if self.arch.kind == Kind::Recurrent {
                let row = &th[l.w2 + i * n..l.w2 + (i + 1) * n];
                for (w, h) in row.iter().zip(h_prev) {
                    z += w * h;
                }
            }
            tape.z1[i] = z;
            tape.a1[i] = act.apply(z);
        }
        let top = if self.arch.kind == Kind::Deep {
            tape.z2.resize(n, 0.0);
            tape.a2.resize(n, 0.0);
            for i in 0..n {
                let row = &th[l.w2 + i * n..l.w2 + (i + 1) * n];
                let mut z = th[l.b2 + i];
                for (w, a) in row.iter().zip(&tape.a1) {
                    z += w * a;
                }
                tape.z2[i] = z;
                tape.a2[i] = act.apply(z);
            }
            &tape.a2
        } else {
            &tape.a1
        };
        std::array::from_fn(|j| {
            let row = &th[l.wo + j * n..l.wo + (j + 1) * n];
            let mut m = th[l.bo + j];
            for (w, a) in row.iter().zip(top) {
                m += w * a;
            }
            m
        })
    }

    /// Mean action for features `x`. For recurrent nets `hidden` is read
    /// as the previous hidden state and overwritten with the new one.
    pub fn forward(&self, x: &FeatureVector, hidden: &mut Vec<f64>) -> Result<Torques> {
        let recurrent = self.arch.kind == Kind::Recurrent;
        if recurrent && hidden.len() != self.arch.hidden {
            return Err(Error::Dimension(format!(
                "hidden state has {} entries, expected {}",
                hidden.len(),
                self.arch.hidden
            )));
        }
        if !recurrent && !hidden.is_empty() {
            return Err(Error::Dimension(
                "feed-forward policy takes no hidden state".into(),
            ));
        }
        let mut tape = Tape::default();
        let mean = self.forward_tape(x, hidden, &mut tape);
        if recurrent {
            hidden.copy_from_slice(&tape.a1);
        }
        Ok(mean)
    }

    /// `log N(u; mean, diag(std^2))`.
    pub fn action_log_prob(&self, mean: &Torques, u: &Torques) -> f64 {
        let ls = self.log_std();
        (0..NU)
            .map(|j| {
                let z = (u[j] - mean[j]) * (-ls[j]).exp();
                -0.5 * z * z - ls[j] - HALF_LN_2PI
            })
            .sum()
    }

    /// Log-density of a whole action sequence given its features,
    /// replaying the hidden state from zero. Dynamics terms are excluded.
    pub fn traj_log_prob(&self, features: &[FeatureVector], actions: &[Torques]) -> f64 {
        let mut hidden = self.initial_hidden();
        let mut tape = Tape::default();
        let mut total = 0.0;
        for (x, u) in features.iter().zip(actions) {
            let mean = self.forward_tape(x, &hidden, &mut tape);
            if self.arch.kind == Kind::Recurrent {
                hidden.copy_from_slice(&tape.a1);
            }
            total += self.action_log_prob(&mean, u);
        }
        total
    }

    /// Returns the trajectory log-density and adds `scale` times its
    /// gradient to `grad`. Recurrent nets are differentiated through the
    /// whole sequence.
    pub fn traj_log_prob_grad(
        &self,
        features: &[FeatureVector],
        actions: &[Torques],
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        assert_eq!(grad.len(), self.theta.len());
        let l = self.layout();
        let n = self.arch.hidden;
        let th = &self.theta;
        let ls = self.log_std();
        let inv_var = ls.map(|s| (-2.0 * s).exp());
        let t_len = features.len().min(actions.len());
        let recurrent = self.arch.kind == Kind::Recurrent;

        let mut tapes = Vec::with_capacity(if recurrent { t_len } else { 1 });
        let mut hidden = self.initial_hidden();
        let mut total = 0.0;
        let mut d_rec_next = vec![0.0; if recurrent { n } else { 0 }];
        // Feed-forward nets are differentiated step by step; recurrent
        // ones need every tape before running backward in time.
        let mut dmeans = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut tape = Tape::default();
            let mean = self.forward_tape(&features[t], &hidden, &mut tape);
            total += self.action_log_prob(&mean, &actions[t]);
            let mut dmean = [0.0; NU];
            for j in 0..NU {
                let r = actions[t][j] - mean[j];
                dmean[j] = scale * r * inv_var[j];
                let raw = th[l.log_std + j];
                if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                    grad[l.log_std + j] += scale * (r * r * inv_var[j] - 1.0);
                }
            }
            if recurrent {
                hidden.copy_from_slice(&tape.a1);
                tapes.push(tape);
                dmeans.push(dmean);
            } else {
                self.backward_step(&features[t], &[], &tape, &dmean, None, grad);
            }
        }
        if recurrent {
            let zeros = vec![0.0; n];
            for t in (0..t_len).rev() {
                let h_prev = if t == 0 { &zeros } else { &tapes[t - 1].a1 };
                let mut dz = vec![0.0; n];
                self.backward_step(
                    &features[t],
                    h_prev,
                    &tapes[t],
                    &dmeans[t],
                    Some((&d_rec_next, &mut dz)),
                    grad,
                );
                // dL/dh_{t-1} through the recurrent weights
                for k in 0..n {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += th[l.w2 + i * n + k] * dz[i];
                    }
                    d_rec_next[k] = s;
                }
            }
        }
        total
    }

    /// Backpropagates one step. For recurrent nets `rec` carries the
    /// gradient flowing into this step's hidden activations from the next
    /// step, and receives this step's pre-activation gradient.
    fn backward_step(
        &self,
        x: &[f64],
        h_prev: &[f64],
        tape: &Tape,
        dmean: &Torques,
        rec: Option<(&[f64], &mut [f64])>,
        grad: &mut [f64],
    ) {
        let l = self.layout();
        let n = self.arch.hidden;
        let act = self.arch.activation;
        let th = &self.theta;
        let top = if self.arch.kind == Kind::Deep {
            &tape.a2
        } else {
            &tape.a1
        };
        let mut dtop = vec![0.0; n];
        for j in 0..NU {
            let d = dmean[j];
            if d == 0.0 {
                continue;
            }
            grad[l.bo + j] += d;
            for i in 0..n {
                grad[l.wo + j * n + i] += d * top[i];
                dtop[i] += d * th[l.wo + j * n + i];
            }
        }
        let mut da1 = if self.arch.kind == Kind::Deep {
            let mut da1 = vec![0.0; n];
            for i in 0..n {
                let dz = dtop[i] * act.derivative(tape.z2[i]);
                if dz == 0.0 {
                    continue;
                }
                grad[l.b2 + i] += dz;
                for k in 0..n {
                    grad[l.w2 + i * n + k] += dz * tape.a1[k];
                    da1[k] += dz * th[l.w2 + i * n + k];
                }
            }
            da1
        } else {
            dtop
        };
        let mut dz_out = None;
        if let Some((from_next, dz_out_buf)) = rec {
            for (d, r) in da1.iter_mut().zip(from_next) {
                *d += r;
            }
            dz_out = Some(dz_out_buf);
        }
        let mut dz1 = vec![0.0; n];
        for i in 0..n {
            let dz = da1[i] * act.derivative(tape.z1[i]);
            dz1[i] = dz;
            if dz == 0.0 {
                continue;
            }
            grad[l.b1 + i] += dz;
            let row = &mut grad[l.w1 + i * FEATURE_DIM..l.w1 + (i + 1) * FEATURE_DIM];
            for (g, x) in row.iter_mut().zip(x) {
                *g += dz * x;
            }
            if self.arch.kind == Kind::Recurrent {
                for k in 0..n {
                    grad[l.w2 + i * n + k] += dz * h_prev[k];
                }
            }
        }
        if let Some(out) = dz_out {
            out.copy_from_slice(&dz1);
        }
    }

    pub fn to_text(&self) -> String {
        let a = &self.arch;
        let mut out = format!(
            "policy v1 kind={} H={} act={}\n{}\n",
            a.kind,
            a.hidden,
            a.activation,
            self.theta.len()
        );
        for v in &self.theta {
            writeln!(out, "{v:e}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::parse("checkpoint", line, msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let rest = header
            .strip_prefix("policy v1 ")
            .ok_or_else(|| bad(1, format!("bad header {header:?}")))?;
        let (mut kind, mut hidden, mut activation) = (None, None, None);
        for field in rest.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad(1, format!("bad header field {field:?}")))?;
            match k {
                "kind" => kind = Some(v.parse::<Kind>().map_err(|e| bad(1, e.to_string()))?),
                "H" => hidden = Some(v.parse::<usize>().map_err(|e| bad(1, format!("H: {e}")))?),
                "act" => activation = Some(v.parse::<Activation>().map_err(|e| bad(1, e.to_string()))?),
                _ => return Err(bad(1, format!("unknown header field {k:?}"))),
            }
        }
        let arch = Architecture::new(
            kind.ok_or_else(|| bad(1, "missing kind".into()))?,
            hidden.ok_or_else(|| bad(1, "missing H".into()))?,
            activation.ok_or_else(|| bad(1, "missing act".into()))?,
        )?;
        let declared: usize = lines
            .next()
            .ok_or_else(|| bad(2, "missing parameter count".into()))?
            .trim()
            .parse()
            .map_err(|e| bad(2, format!("parameter count: {e}")))?;
        let expected = arch.param_count();
        if declared != expected {
            return Err(Error::Dimension(format!(
                "checkpoint declares {declared} parameters but {} H={} needs {expected}",
                arch.kind, arch.hidden
            )));
        }
        let mut theta = Vec::with_capacity(expected);
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|e| bad(i + 3, format!("{e}")))?;
            if !v.is_finite() {
                return Err(bad(i + 3, "non-finite parameter".into()));
            }
            theta.push(v);
        }
        if theta.len() != expected {
            return Err(Error::Dimension(format!(
                "checkpoint holds {} parameters, expected {expected}",
                theta.len()
            )));
        }
        Ok(Self { arch, theta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Standardization of the network inputs, used to precondition
/// optimization. Parameters are optimized in the coordinates of a network
/// that sees `(x - mean) / scale`, and folded back into the first-layer
/// weights and biases, so the network function and file format are those
/// of the plain parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaling {
    pub mean: FeatureVector,
    pub scale: FeatureVector,
}

impl InputScaling {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; FEATURE_DIM],
            scale: [1.0; FEATURE_DIM],
        }
    }

    /// Per-feature mean and standard deviation over all steps. Constant
    /// features are left untouched.
    pub fn from_data<'a>(sequences: impl IntoIterator<Item = &'a [FeatureVector]>) -> Self {
        let mut sum = [0.0; FEATURE_DIM];
        let mut sq = [0.0; FEATURE_DIM];
        let mut n = 0usize;
        for seq in sequences {
            for x in seq {
                for i in 0..FEATURE_DIM {
                    sum[i] += x[i];
                    sq[i] += x[i] * x[i];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity();
        }
        let mut out = Self::identity();
        for i in 0..FEATURE_DIM {
            let m = sum[i] / n as f64;
            let sd = (sq[i] / n as f64 - m * m).max(0.0).sqrt();
            if sd > 1e-6 {
                out.mean[i] = m;
                out.scale[i] = sd;
            }
        }
        out
    }

    /// Scaled-coordinate parameters to plain ones.
    pub fn to_plain(&self, arch: Architecture, theta: &[f64]) -> Vec<f64> {
        let l = arch.layout();
        let mut out = theta.to_vec();
        for h in 0..arch.hidden {
            let row = l.w1 + h * FEATURE_DIM;
            let mut shift = 0.0;
            for i in 0..FEATURE_DIM {
                let w = theta[row + i] / self.scale[i];
                out[row + i] = w;
                shift += w * self.mean[i];
            }
            out[l.b1 + h] = theta[l.b1 + h] - shift;
        }
        out
    }

    /// Inverse of [`Self::to_plain`].
    pub fn to_scaled(&self, arch: Architecture, theta: &[f64]) -> Vec<f64> {
        let l = arch.layout();
        let mut out = theta.to_vec();
        for h in 0..arch.hidden {
            let row = l.w1 + h * FEATURE_DIM;
            let mut shift = 0.0;
            for i in 0..FEATURE_DIM {
                out[row + i] = theta[row + i] * self.scale[i];
                shift += theta[row + i] * self.mean[i];
            }
            out[l.b1 + h] = theta[l.b1 + h] + shift;
        }
        out
    }

    /// Gradient with respect to the scaled coordinates, given the gradient
    /// with respect to the plain ones (transpose of the linear map).
    pub fn pull_back(&self, arch: Architecture, grad: &[f64]) -> Vec<f64> {
        let l = arch.layout();
        let mut out = grad.to_vec();
        for h in 0..arch.hidden {
            let row = l.w1 + h * FEATURE_DIM;
            let gb = grad[l.b1 + h];
            for i in 0..FEATURE_DIM {
                out[row + i] = (grad[row + i] - gb * self.mean[i]) / self.scale[i];
            }
        }
        out
    }
}

/// Maximizes `f` over the parameters of `start`'s architecture, searching
/// in input-standardized coordinates. `f` sees plain parameters; the
/// outcome's `x` is plain too.
pub fn maximize_scaled<F>(
    mut f: F,
    start: &PolicyParams,
    scaling: &InputScaling,
    method: Method,
    opts: &optim::Options,
) -> Result<optim::Outcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let arch = start.arch;
    let x0 = scaling.to_scaled(arch, &start.theta);
    let mut out = optim::maximize(
        |theta: &[f64]| {
            let (v, g) = f(&scaling.to_plain(arch, theta))?;
            Ok((v, scaling.pull_back(arch, &g)))
        },
        &x0,
        method,
        opts,
    )?;
    out.x = scaling.to_plain(arch, &out.x);
    Ok(out)
}

/// Mean squared action error of the policy mean over a set of sequences.
pub fn action_mse(params: &PolicyParams, data: &[(&[FeatureVector], &[Torques])]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (features, actions) in data {
        let mut hidden = params.initial_hidden();
        for (x, u) in features.iter().zip(actions.iter()) {
            let m = params
                .forward(x, &mut hidden)
                .expect("hidden state sized by the policy");
            sum += m.iter().zip(u).map(|(m, u)| (m - u).powi(2)).sum::<f64>();
            count += NU;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[derive(Debug, Clone)]
pub struct SupervisedOutcome {
    pub params: PolicyParams,
    /// Mean per-step log-likelihood before and after.
    pub initial_likelihood: f64,
    pub final_likelihood: f64,
    pub evals: usize,
}

/// Fits `start` to the action sequences by maximizing their mean per-step
/// log-likelihood. The mean network is fitted first with the standard
/// deviations held fixed (a least-squares problem), then each standard
/// deviation is set to its maximizer, the clamped residual RMS. Both stages
/// only increase the likelihood. `max_evals = 0` returns `start` unchanged.
pub fn supervised_fit(
    start: PolicyParams,
    data: &[(&[FeatureVector], &[Torques])],
    method: Method,
    max_evals: usize,
) -> Result<SupervisedOutcome> {
    let steps: usize = data.iter().map(|(f, a)| f.len().min(a.len())).sum();
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "supervised fit needs at least one sample step".into(),
        ));
    }
    let arch = start.arch;
    let l = arch.layout();
    let likelihood = |theta: &[f64]| -> (f64, Vec<f64>) {
        let p = PolicyParams {
            arch,
            theta: theta.to_vec(),
        };
        let parts: Vec<(f64, Vec<f64>)> = crate::par::map(data, |(f, a)| {
            let mut g = vec![0.0; theta.len()];
            let lp = p.traj_log_prob_grad(f, a, 1.0 / steps as f64, &mut g);
            (lp, g)
        });
        let mut grad = vec![0.0; theta.len()];
        let mut value = 0.0;
        for (lp, g) in parts {
            value += lp;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        (value / steps as f64, grad)
    };
    let (initial, _) = likelihood(&start.theta);
    if !initial.is_finite() {
        return Err(Error::NonFinite("initial supervised likelihood"));
    }
    if max_evals == 0 {
        return Ok(SupervisedOutcome {
            params: start,
            initial_likelihood: initial,
            final_likelihood: initial,
            evals: 1,
        });
    }
    let opts = optim::Options {
        max_evals,
        ..optim::Options::default()
    };
    let scaling = InputScaling::from_data(data.iter().map(|(f, _)| *f));
    let mean_only = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, mut g) = likelihood(theta);
        g[l.log_std..].iter_mut().for_each(|g| *g = 0.0);
        Ok((v, g))
    };
    let out = maximize_scaled(mean_only, &start, &scaling, method, &opts)?;
    let mut params = PolicyParams { arch, theta: out.x };
    let mut value = out.value;

    // closed-form standard deviations for the fitted mean
    let mut sq = [0.0; NU];
    for (features, actions) in data {
        let mut hidden = params.initial_hidden();
        for (x, u) in features.iter().zip(actions.iter()) {
            let m = params.forward(x, &mut hidden)?;
            for j in 0..NU {
                sq[j] += (u[j] - m[j]).powi(2);
            }
        }
    }
    let mut tuned = params.clone();
    for j in 0..NU {
        tuned.theta[l.log_std + j] =
            (0.5 * (sq[j] / steps as f64).max(1e-300).ln()).clamp(LOG_STD_MIN, LOG_STD_MAX);
    }
    let (v, _) = likelihood(&tuned.theta);
    if v >= value {
        params = tuned;
        value = v;
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("supervised likelihood"));
    }
    Ok(SupervisedOutcome {
        params,
        initial_likelihood: initial,
        final_likelihood: value,
        evals: out.evals + 1,
    })
}

/// Runs a policy as an action source.
#[derive(Debug, Clone)]
pub struct PolicySource<'a> {
    params: &'a PolicyParams,
    hidden: Vec<f64>,
    /// Act with the mean instead of sampling.
    pub deterministic: bool,
}

impl<'a> PolicySource<'a> {
    pub fn new(params: &'a PolicyParams, deterministic: bool) -> Self {
        Self {
            params,
            hidden: params.initial_hidden(),
            deterministic,
        }
    }
}

impl ActionSource for PolicySource<'_> {
    fn reset(&mut self) {
        self.hidden = self.params.initial_hidden();
    }

    fn act(
        &mut self,
        _t: usize,
        _state: &WalkerState,
        features: &FeatureVector,
        rng: &mut Rng,
    ) -> Result<(Torques, f64)> {
        let mean = self.params.forward(features, &mut self.hidden)?;
        let u = if self.deterministic {
            mean
        } else {
            let std = self.params.std();
            std::array::from_fn(|j| {
                let z: f64 = StandardNormal.sample(rng);
                mean[j] + std[j] * z
            })
        };
        Ok((u, self.params.action_log_prob(&mean, &u)))
    }
}
