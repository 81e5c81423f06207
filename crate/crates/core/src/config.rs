//! Run configuration: line-oriented `key = value` text.
//!
//! Blank lines and `#` comments are ignored. Every key must be one of the
//! documented keys below; unknown or repeated keys are errors. Terrain lists
//! are comma-separated tokens, each `flat`, a generator seed, or an
//! inclusive seed range `a-b`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::Criteria;
use crate::optim::Method;
use crate::policy::{Activation, Architecture, Kind};
use crate::terrain::Terrain;
use crate::trajopt::{CovarianceBounds, IlqgOptions};
use crate::walker::WalkerModel;

/// A terrain named in a config. The flat terrain has id 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerrainSpec {
    Flat,
    Seed(u64),
}

impl TerrainSpec {
    pub fn id(self) -> u64 {
        match self {
            TerrainSpec::Flat => 0,
            TerrainSpec::Seed(s) => s,
        }
    }

    pub fn build(self, min_extent: f64) -> Result<Terrain> {
        match self {
            TerrainSpec::Flat => {
                if !(min_extent.is_finite() && min_extent > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "min_extent must be positive, got {min_extent}"
                    )));
                }
                Ok(Terrain::flat(min_extent))
            }
            TerrainSpec::Seed(s) => Terrain::generate(s, min_extent),
        }
    }
}

fn parse_terrains(value: &str) -> std::result::Result<Vec<TerrainSpec>, String> {
    let mut out = Vec::new();
    for tok in value.split(',').map(str::trim) {
        if tok == "flat" {
            out.push(TerrainSpec::Flat);
        } else if let Some((a, b)) = tok.split_once('-') {
            let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range {tok:?}"))?;
            let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range {tok:?}"))?;
            if a == 0 || b < a {
                return Err(format!("bad seed range {tok:?}"));
            }
            out.extend((a..=b).map(TerrainSpec::Seed));
        } else {
            let s: u64 = tok.parse().map_err(|_| format!("bad terrain {tok:?}"))?;
            if s == 0 {
                return Err("terrain seed 0 is reserved for the flat terrain".into());
            }
            out.push(TerrainSpec::Seed(s));
        }
    }
    if out.is_empty() {
        return Err("empty terrain list".into());
    }
    Ok(out)
}

fn format_terrains(list: &[TerrainSpec]) -> String {
    list.iter()
        .map(|t| match t {
            TerrainSpec::Flat => "flat".to_string(),
            TerrainSpec::Seed(s) => s.to_string(),
        })
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub train_terrains: Vec<TerrainSpec>,
    pub test_terrains: Vec<TerrainSpec>,
    pub terrain_extent: f64,
    pub horizon: usize,
    pub arch: Kind,
    pub hidden: usize,
    pub activation: Activation,
    pub optimizer: Method,
    pub lambda: f64,
    pub alpha_q: f64,
    pub guide_min_std: f64,
    pub guide_max_std: f64,
    pub motor_noise: f64,
    pub n_gps: usize,
    pub guiding_samples: usize,
    pub policy_samples: usize,
    pub ilqg_iters: usize,
    pub ilqg_mu_init: f64,
    pub ilqg_min_improvement: f64,
    pub line_search_steps: u32,
    pub supervised_evals: usize,
    pub gps_evals: usize,
    pub eval_trials: usize,
    pub h_fall: f64,
    pub v_min: f64,
    /// One demonstration trace per training terrain, replacing the
    /// scripted gait. Empty means scripted.
    pub demo_files: Vec<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            train_terrains: (1..=10).map(TerrainSpec::Seed).collect(),
            test_terrains: (101..=110).map(TerrainSpec::Seed).collect(),
            terrain_extent: 10.0,
            horizon: 700,
            arch: Kind::Shallow,
            hidden: 20,
            activation: Activation::Soft,
            optimizer: Method::Lbfgs,
            lambda: 0.01,
            alpha_q: 1.0,
            guide_min_std: 0.01,
            guide_max_std: 0.5,
            motor_noise: WalkerModel::default().motor_noise,
            n_gps: 20,
            guiding_samples: 80,
            policy_samples: 10,
            ilqg_iters: 50,
            ilqg_mu_init: 1e-3,
            ilqg_min_improvement: 1e-4,
            line_search_steps: 10,
            supervised_evals: 500,
            gps_evals: 200,
            eval_trials: 5,
            h_fall: 0.9,
            v_min: 0.4,
            demo_files: Vec::new(),
        }
    }
}

/// Documented keys, in the order they are written out.
pub const KEYS: &[&str] = &[
    "seed",
    "train_terrains",
    "test_terrains",
    "terrain_extent",
    "horizon",
    "arch",
    "hidden",
    "activation",
    "optimizer",
    "lambda",
    "alpha_q",
    "guide_min_std",
    "guide_max_std",
    "motor_noise",
    "n_gps",
    "guiding_samples",
    "policy_samples",
    "ilqg_iters",
    "ilqg_mu_init",
    "ilqg_min_improvement",
    "line_search_steps",
    "supervised_evals",
    "gps_evals",
    "eval_trials",
    "h_fall",
    "v_min",
    "demo_files",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl Config {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |msg: String| Error::Config(format!("{key}: {msg}"));
        match key {
            "seed" => self.seed = num(key, value)?,
            "train_terrains" => self.train_terrains = parse_terrains(value).map_err(bad)?,
            "test_terrains" => self.test_terrains = parse_terrains(value).map_err(bad)?,
            "terrain_extent" => self.terrain_extent = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "arch" => self.arch = value.parse().map_err(|e: Error| bad(strip(e)))?,
            "hidden" => self.hidden = num(key, value)?,
            "activation" => self.activation = value.parse().map_err(|e: Error| bad(strip(e)))?,
            "optimizer" => self.optimizer = value.parse().map_err(|e: Error| bad(strip(e)))?,
            "lambda" => self.lambda = num(key, value)?,
            "alpha_q" => self.alpha_q = num(key, value)?,
            "guide_min_std" => self.guide_min_std = num(key, value)?,
            "guide_max_std" => self.guide_max_std = num(key, value)?,
            "motor_noise" => self.motor_noise = num(key, value)?,
            "n_gps" => self.n_gps = num(key, value)?,
            "guiding_samples" => self.guiding_samples = num(key, value)?,
            "policy_samples" => self.policy_samples = num(key, value)?,
            "ilqg_iters" => self.ilqg_iters = num(key, value)?,
            "ilqg_mu_init" => self.ilqg_mu_init = num(key, value)?,
            "ilqg_min_improvement" => self.ilqg_min_improvement = num(key, value)?,
            "line_search_steps" => self.line_search_steps = num(key, value)?,
            "supervised_evals" => self.supervised_evals = num(key, value)?,
            "gps_evals" => self.gps_evals = num(key, value)?,
            "eval_trials" => self.eval_trials = num(key, value)?,
            "h_fall" => self.h_fall = num(key, value)?,
            "v_min" => self.v_min = num(key, value)?,
            "demo_files" => {
                self.demo_files = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a config on top of the defaults and validates it.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", i + 1)));
            }
            seen.push(key);
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "seed" => self.seed.to_string(),
                "train_terrains" => format_terrains(&self.train_terrains),
                "test_terrains" => format_terrains(&self.test_terrains),
                "terrain_extent" => self.terrain_extent.to_string(),
                "horizon" => self.horizon.to_string(),
                "arch" => self.arch.to_string(),
                "hidden" => self.hidden.to_string(),
                "activation" => self.activation.to_string(),
                "optimizer" => self.optimizer.to_string(),
                "lambda" => self.lambda.to_string(),
                "alpha_q" => self.alpha_q.to_string(),
                "guide_min_std" => self.guide_min_std.to_string(),
                "guide_max_std" => self.guide_max_std.to_string(),
                "motor_noise" => self.motor_noise.to_string(),
                "n_gps" => self.n_gps.to_string(),
                "guiding_samples" => self.guiding_samples.to_string(),
                "policy_samples" => self.policy_samples.to_string(),
                "ilqg_iters" => self.ilqg_iters.to_string(),
                "ilqg_mu_init" => self.ilqg_mu_init.to_string(),
                "ilqg_min_improvement" => self.ilqg_min_improvement.to_string(),
                "line_search_steps" => self.line_search_steps.to_string(),
                "supervised_evals" => self.supervised_evals.to_string(),
                "gps_evals" => self.gps_evals.to_string(),
                "eval_trials" => self.eval_trials.to_string(),
                "h_fall" => self.h_fall.to_string(),
                "v_min" => self.v_min.to_string(),
                "demo_files" => self
                    .demo_files
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
                _ => unreachable!(),
            };
            writeln!(out, "{key} = {value}").unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.terrain_extent) {
            return fail("terrain_extent must be positive");
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1");
        }
        if self.hidden == 0 {
            return fail("hidden must be at least 1");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail("lambda must be non-negative");
        }
        if !positive(self.alpha_q) {
            return fail("alpha_q must be positive");
        }
        if !(positive(self.guide_min_std) && positive(self.guide_max_std))
            || self.guide_min_std > self.guide_max_std
        {
            return fail("need 0 < guide_min_std <= guide_max_std");
        }
        if !(self.motor_noise.is_finite() && self.motor_noise >= 0.0) {
            return fail("motor_noise must be non-negative");
        }
        if self.guiding_samples == 0 || self.eval_trials == 0 {
            return fail("guiding_samples and eval_trials must be at least 1");
        }
        if !positive(self.ilqg_mu_init) || !(self.ilqg_min_improvement >= 0.0) {
            return fail("ilqg_mu_init must be positive and ilqg_min_improvement non-negative");
        }
        if !self.h_fall.is_finite() || !self.v_min.is_finite() {
            return fail("h_fall and v_min must be finite");
        }
        if !self.demo_files.is_empty() && self.demo_files.len() != self.train_terrains.len() {
            return fail("demo_files needs one file per training terrain");
        }
        let mut ids: Vec<u64> = self.train_terrains.iter().map(|t| t.id()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return fail("training terrains must be distinct");
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(self.arch, self.hidden, self.activation)
    }

    /// Optimizer actually used for policy fitting: hard rectifiers always
    /// use gradient descent, which copes with the kinks where LBFGS stalls.
    pub fn effective_method(&self) -> Method {
        if self.activation == Activation::Hard {
            Method::GradientDescent
        } else {
            self.optimizer
        }
    }

    pub fn model(&self) -> WalkerModel {
        WalkerModel {
            motor_noise: self.motor_noise,
            ..WalkerModel::default()
        }
    }

    pub fn ilqg_options(&self) -> IlqgOptions {
        IlqgOptions {
            max_iters: self.ilqg_iters,
            min_improvement: self.ilqg_min_improvement,
            mu_init: self.ilqg_mu_init,
            line_search_steps: self.line_search_steps,
            ..IlqgOptions::default()
        }
    }

    pub fn covariance_bounds(&self) -> CovarianceBounds {
        CovarianceBounds {
            min_std: self.guide_min_std,
            max_std: self.guide_max_std,
        }
    }

    pub fn criteria(&self) -> Criteria {
        Criteria {
            h_fall: self.h_fall,
            v_min: self.v_min,
        }
    }

    pub fn build_terrains(&self, specs: &[TerrainSpec]) -> Result<Vec<(u64, Terrain)>> {
        specs
            .iter()
            .map(|t| Ok((t.id(), t.build(self.terrain_extent)?)))
            .collect()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}
