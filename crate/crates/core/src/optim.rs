//! Deterministic batch optimizers: limited-memory BFGS with a strong-Wolfe
//! line search, and gradient ascent with backtracking.
//!
//! Both maximize. Only improving iterates are accepted, so the returned
//! value is never below the starting value.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lbfgs,
    GradientDescent,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbfgs" => Ok(Self::Lbfgs),
            "gd" => Ok(Self::GradientDescent),
            _ => Err(Error::InvalidArgument(format!(
                "unknown optimizer {s:?} (lbfgs|gd)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lbfgs => "lbfgs",
            Self::GradientDescent => "gd",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    pub max_evals: usize,
    pub grad_tol: f64,
    /// Stop when an accepted step improves the objective by less than this.
    pub improvement_tol: f64,
    pub history: usize,
    /// Initial step of gradient ascent.
    pub step: f64,
    /// Strong-Wolfe curvature constant; smaller means more exact line searches.
    pub curvature: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_evals: 200,
            grad_tol: 1e-5,
            improvement_tol: 1e-8,
            history: 10,
            step: 1e-3,
            curvature: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub evals: usize,
    pub iterations: usize,
    /// False when the run ended on a failed line search or the budget.
    pub converged: bool,
    /// Objective after every accepted iteration, starting with the initial value.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(x, d)| x + alpha * d).collect()
}

/// Wraps the objective for minimization and counts evaluations.
/// Non-finite values are mapped to +inf so line searches back off.
struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evals += 1;
        let (v, mut g) = (self.f)(x)?;
        if !v.is_finite() || g.iter().any(|g| !g.is_finite()) {
            return Ok((f64::INFINITY, vec![0.0; x.len()]));
        }
        g.iter_mut().for_each(|g| *g = -*g);
        Ok((-v, g))
    }
}

/// Maximizes `f`, which returns the objective and its gradient.
pub fn maximize<F>(f: F, x0: &[f64], method: Method, opts: &Options) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut obj = Counted { f, evals: 0 };
    let (f0, g0) = obj.eval(x0)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite("objective at the starting point"));
    }
    let start = State {
        x: x0.to_vec(),
        f: f0,
        g: g0,
    };
    let (best, iterations, converged, trace) = match method {
        Method::Lbfgs => lbfgs(&mut obj, start, opts)?,
        Method::GradientDescent => gradient_steps(&mut obj, start, opts)?,
    };
    Ok(Outcome {
        x: best.x,
        value: -best.f,
        grad: best.g.iter().map(|g| -g).collect(),
        evals: obj.evals,
        iterations,
        converged,
        trace: trace.into_iter().map(|v| -v).collect(),
    })
}

#[derive(Clone)]
struct State {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

type Run = (State, usize, bool, Vec<f64>);

fn lbfgs<F>(obj: &mut Counted<F>, mut cur: State, opts: &Options) -> Result<Run>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut trace = vec![cur.f];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    loop {
        if norm(&cur.g) < opts.grad_tol {
            return Ok((cur, iterations, true, trace));
        }
        if obj.evals >= opts.max_evals {
            return Ok((cur, iterations, false, trace));
        }
        // two-loop recursion
        let mut d: Vec<f64> = cur.g.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(d, y)| *d -= a * y);
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|d| *d *= gamma);
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(d, s)| *d += (a - b) * s);
        }
        let mut slope = dot(&cur.g, &d);
        if !(slope < 0.0) {
            // not a descent direction: restart from steepest descent
            mem.clear();
            d = cur.g.iter().map(|g| -g).collect();
            slope = dot(&cur.g, &d);
        }
        let alpha0 = if mem.is_empty() {
            (1.0 / norm(&cur.g)).min(1.0)
        } else {
            1.0
        };
        let Some(next) = strong_wolfe(obj, &cur, &d, slope, alpha0, opts)? else {
            return Ok((cur, iterations, false, trace));
        };
        iterations += 1;
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if mem.len() == opts.history {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let improvement = cur.f - next.f;
        cur = next;
        trace.push(cur.f);
        if improvement < opts.improvement_tol {
            return Ok((cur, iterations, true, trace));
        }
    }
}

const C1: f64 = 1e-4;

/// Line search satisfying the strong Wolfe conditions (bracketing then
/// zoom with cubic interpolation). Returns `None` if no acceptable point
/// was found; an improving point that fails only the curvature condition
/// is still returned once the budget runs out.
fn strong_wolfe<F>(
    obj: &mut Counted<F>,
    cur: &State,
    d: &[f64],
    slope0: f64,
    alpha0: f64,
    opts: &Options,
) -> Result<Option<State>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let at = |obj: &mut Counted<F>, a: f64| -> Result<(State, f64)> {
        let x = axpy(&cur.x, a, d);
        let (f, g) = obj.eval(&x)?;
        let s = dot(&g, d);
        Ok((State { x, f, g }, s))
    };
    let mut best: Option<State> = None;
    let remember = |s: &State, best: &mut Option<State>| {
        if s.f < cur.f && best.as_ref().is_none_or(|b| s.f < b.f) {
            *best = Some(s.clone());
        }
    };
    let (max_evals, c2) = (opts.max_evals, opts.curvature);
    let (mut a_prev, mut f_prev, mut s_prev) = (0.0, cur.f, slope0);
    let mut a = alpha0;
    for i in 0..20 {
        if obj.evals >= max_evals {
            return Ok(best);
        }
        let (st, s) = at(obj, a)?;
        remember(&st, &mut best);
        if st.f > cur.f + C1 * a * slope0 || (i > 0 && st.f >= f_prev) {
            return zoom(
                obj,
                cur,
                d,
                slope0,
                (a_prev, f_prev, s_prev),
                (a, st.f, s),
                c2,
                max_evals,
                best,
            );
        }
        if s.abs() <= -c2 * slope0 {
            return Ok(Some(st));
        }
        if s >= 0.0 {
            return zoom(
                obj,
                cur,
                d,
                slope0,
                (a, st.f, s),
                (a_prev, f_prev, s_prev),
                c2,
                max_evals,
                best,
            );
        }
        a_prev = a;
        f_prev = st.f;
        s_prev = s;
        a *= 2.0;
    }
    Ok(best)
}

fn cubic_min(a: (f64, f64, f64), b: (f64, f64, f64)) -> Option<f64> {
    let (x0, f0, g0) = a;
    let (x1, f1, g1) = b;
    let d1 = g0 + g1 - 3.0 * (f0 - f1) / (x0 - x1);
    let disc = d1 * d1 - g0 * g1;
    if disc < 0.0 {
        return None;
    }
    let d2 = (x1 - x0).signum() * disc.sqrt();
    let x = x1 - (x1 - x0) * (g1 + d2 - d1) / (g1 - g0 + 2.0 * d2);
    x.is_finite().then_some(x)
}

#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    obj: &mut Counted<F>,
    cur: &State,
    d: &[f64],
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    c2: f64,
    max_evals: usize,
    mut best: Option<State>,
) -> Result<Option<State>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    for _ in 0..30 {
        if obj.evals >= max_evals {
            break;
        }
        let (a_min, a_max) = (lo.0.min(hi.0), lo.0.max(hi.0));
        let width = a_max - a_min;
        let a = match (hi.1.is_finite(), cubic_min(lo, hi)) {
            (true, Some(a)) if a > a_min + 0.1 * width && a < a_max - 0.1 * width => a,
            _ => 0.5 * (lo.0 + hi.0),
        };
        let x = axpy(&cur.x, a, d);
        let (f, g) = obj.eval(&x)?;
        let s = dot(&g, d);
        let st = State { x, f, g };
        if st.f < cur.f && best.as_ref().is_none_or(|b| st.f < b.f) {
            best = Some(st.clone());
        }
        if st.f > cur.f + C1 * a * slope0 || st.f >= lo.1 {
            hi = (a, st.f, s);
        } else {
            if s.abs() <= -c2 * slope0 {
                return Ok(Some(st));
            }
            if s * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, st.f, s);
        }
        if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1.0) {
            break;
        }
    }
    Ok(best)
}

fn gradient_steps<F>(obj: &mut Counted<F>, mut cur: State, opts: &Options) -> Result<Run>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut trace = vec![cur.f];
    let mut step = opts.step;
    let mut iterations = 0;
    loop {
        if norm(&cur.g) < opts.grad_tol {
            return Ok((cur, iterations, true, trace));
        }
        let mut accepted = None;
        for _ in 0..40 {
            if obj.evals >= opts.max_evals {
                break;
            }
            let x = axpy(&cur.x, -step, &cur.g);
            let (f, g) = obj.eval(&x)?;
            if f < cur.f {
                accepted = Some(State { x, f, g });
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            return Ok((cur, iterations, false, trace));
        };
        iterations += 1;
        let improvement = cur.f - next.f;
        cur = next;
        trace.push(cur.f);
        if improvement < opts.improvement_tol {
            return Ok((cur, iterations, true, trace));
        }
        step = (2.0 * step).min(opts.step);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // maximize -(x - c)^T D (x - c) / 2
    fn quadratic(c: Vec<f64>, diag: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let r: Vec<f64> = x.iter().zip(&c).map(|(x, c)| x - c).collect();
            let v = -0.5 * r.iter().zip(&diag).map(|(r, d)| d * r * r).sum::<f64>();
            Ok((v, r.iter().zip(&diag).map(|(r, d)| -d * r).collect()))
        }
    }

    #[test]
    fn lbfgs_solves_convex_quadratic() {
        let c = vec![1.0, -2.0, 0.5, 3.0, -1.0];
        let diag = vec![1.0, 2.0, 5.0, 0.5, 10.0];
        let opts = Options {
            grad_tol: 1e-10,
            improvement_tol: 0.0,
            ..Options::default()
        };
        let out = maximize(quadratic(c.clone(), diag), &[0.0; 5], Method::Lbfgs, &opts).unwrap();
        assert!(out.iterations <= 10, "{} iterations", out.iterations);
        for (x, c) in out.x.iter().zip(&c) {
            assert!((x - c).abs() < 1e-8);
        }
        assert!(out.value.abs() < 1e-8);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let out = maximize(
            quadratic(vec![2.0], vec![1.0]),
            &[2.0],
            Method::Lbfgs,
            &Options::default(),
        )
        .unwrap();
        assert_eq!(out.x, vec![2.0]);
        assert_eq!(out.evals, 1);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn gradient_ascent_is_monotone() {
        let opts = Options {
            step: 0.1,
            ..Options::default()
        };
        let out = maximize(
            quadratic(vec![1.0, -1.0], vec![1.0, 4.0]),
            &[0.0, 0.0],
            Method::GradientDescent,
            &opts,
        )
        .unwrap();
        assert!(out.trace.windows(2).all(|w| w[1] > w[0]));
        assert!(out.value > -1e-6);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((-v, g.iter().map(|g| -g).collect()))
        };
        let opts = Options {
            max_evals: 500,
            improvement_tol: 0.0,
            ..Options::default()
        };
        let out = maximize(f, &[-1.2, 1.0], Method::Lbfgs, &opts).unwrap();
        assert!(
            (out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4,
            "{:?}",
            out.x
        );
    }

    #[test]
    fn nonfinite_trial_points_are_backed_off() {
        // log barrier: undefined for x <= 0, maximum at x = 1
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = if x[0] > 0.0 { x[0].ln() - x[0] } else { f64::NAN };
            Ok((v, vec![1.0 / x[0] - 1.0]))
        };
        let out = maximize(f, &[5.0], Method::Lbfgs, &Options::default()).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-4);
    }
}
