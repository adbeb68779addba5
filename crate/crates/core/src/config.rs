//! Line-oriented `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every value is parsed
//! into its typed form and formatted back canonically, so `dump` output
//! parses to the same configuration and dumps to the same bytes.

use crate::brownian::{BoundaryPolicy, SamplerConfig};
use crate::complex::{format_complex_list, parse_complex_list};
use crate::error::{Error, Result};
use crate::linear_model::{AmbientPoint, LinearFoliationModel};
use crate::lyapunov::InitialLaw;
use crate::metrics::{DensityRule, MetricProfile};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileChoice {
    Poincare,
    Accelerating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawChoice {
    FixedPoint,
    RadialLelong,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub lambda: Vec<Complex64>,
    pub x: Vec<Complex64>,
    pub profile: ProfileChoice,
    pub delta: f64,
    pub seed: u64,
    pub step: f64,
    pub horizon: f64,
    pub boundary_policy: BoundaryPolicy,
    pub n_paths: usize,
    pub first_path: u64,
    pub qr_stride: f64,
    pub times: Vec<f64>,
    pub law: LawChoice,
    pub inner: f64,
    pub outer: f64,
    pub epsilons: Vec<f64>,
    pub profiles: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lambda: vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)],
            x: vec![Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0)],
            profile: ProfileChoice::Accelerating,
            delta: 0.25,
            seed: 0,
            step: 1e-4,
            horizon: 1.0,
            boundary_policy: BoundaryPolicy::Absorb,
            n_paths: 100,
            first_path: 0,
            qr_stride: 0.1,
            times: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            law: LawChoice::FixedPoint,
            inner: (-8.0f64).exp(),
            outer: (-2.0f64).exp(),
            epsilons: [4.0f64, 8.0, 16.0, 32.0].iter().map(|u| (-u).exp()).collect(),
            profiles: vec!["accelerating:0.25".into(), "poincare".into()],
        }
    }
}

/// Keys in dump order.
pub const KEYS: [&str; 17] = [
    "lambda",
    "x",
    "profile",
    "delta",
    "seed",
    "step",
    "horizon",
    "boundary_policy",
    "n_paths",
    "first_path",
    "qr_stride",
    "times",
    "law",
    "inner",
    "outer",
    "epsilons",
    "profiles",
];

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Parse(format!("{key}: expected a finite number, got {v:?}")))
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Parse(format!("{key}: empty list")));
    }
    v.split(',').map(|p| parse_f64(key, p)).collect()
}

fn parse_int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| Error::Parse(format!("{key}: expected a nonnegative integer, got {v:?}")))
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Parses `poincare` or `accelerating:<delta>`.
pub fn parse_profile_spec(text: &str) -> Result<MetricProfile> {
    match text.split_once(':') {
        None if text == "poincare" => Ok(MetricProfile::poincare()),
        Some(("accelerating", d)) => MetricProfile::accelerating(parse_f64("profiles", d)?),
        _ => Err(Error::Parse(format!("profile spec {text:?}: expected poincare or accelerating:<delta>"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda" => self.lambda = parse_complex_list(value)?,
            "x" => self.x = parse_complex_list(value)?,
            "profile" => {
                self.profile = match value {
                    "poincare" => ProfileChoice::Poincare,
                    "accelerating" => ProfileChoice::Accelerating,
                    _ => return Err(Error::Parse(format!("profile: unknown value {value:?}"))),
                }
            }
            "delta" => self.delta = parse_f64(key, value)?,
            "seed" => self.seed = parse_int(key, value)?,
            "step" => self.step = parse_f64(key, value)?,
            "horizon" => self.horizon = parse_f64(key, value)?,
            "boundary_policy" => self.boundary_policy = BoundaryPolicy::parse(value)?,
            "n_paths" => self.n_paths = parse_int(key, value)?,
            "first_path" => self.first_path = parse_int(key, value)?,
            "qr_stride" => self.qr_stride = parse_f64(key, value)?,
            "times" => self.times = parse_f64_list(key, value)?,
            "law" => {
                self.law = match value {
                    "fixed_point" => LawChoice::FixedPoint,
                    "radial_lelong" => LawChoice::RadialLelong,
                    _ => return Err(Error::Parse(format!("law: unknown value {value:?}"))),
                }
            }
            "inner" => self.inner = parse_f64(key, value)?,
            "outer" => self.outer = parse_f64(key, value)?,
            "epsilons" => self.epsilons = parse_f64_list(key, value)?,
            "profiles" => {
                if value.is_empty() {
                    return Err(Error::Parse("profiles: empty list".into()));
                }
                let specs: Vec<String> = value.split(',').map(str::to_string).collect();
                for s in &specs {
                    parse_profile_spec(s)?;
                }
                self.profiles = specs;
            }
            _ => return Err(Error::Parse(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lambda" => format_complex_list(&self.lambda),
            "x" => format_complex_list(&self.x),
            "profile" => match self.profile {
                ProfileChoice::Poincare => "poincare",
                ProfileChoice::Accelerating => "accelerating",
            }
            .to_string(),
            "delta" => self.delta.to_string(),
            "seed" => self.seed.to_string(),
            "step" => self.step.to_string(),
            "horizon" => self.horizon.to_string(),
            "boundary_policy" => self.boundary_policy.label().to_string(),
            "n_paths" => self.n_paths.to_string(),
            "first_path" => self.first_path.to_string(),
            "qr_stride" => self.qr_stride.to_string(),
            "times" => join_f64(&self.times),
            "law" => match self.law {
                LawChoice::FixedPoint => "fixed_point",
                LawChoice::RadialLelong => "radial_lelong",
            }
            .to_string(),
            "inner" => self.inner.to_string(),
            "outer" => self.outer.to_string(),
            "epsilons" => join_f64(&self.epsilons),
            "profiles" => self.profiles.join(","),
            _ => return None,
        })
    }

    /// Applies one `key=value` assignment.
    pub fn apply_assignment(&mut self, text: &str) -> Result<()> {
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got {text:?}")))?;
        self.set(k.trim(), v.trim())
    }

    /// Parses a configuration file on top of the defaults. Later lines win.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            cfg.apply_assignment(line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push('=');
            out.push_str(&self.get(key).unwrap_or_default());
            out.push('\n');
        }
        out
    }

    pub fn model(&self) -> Result<LinearFoliationModel> {
        LinearFoliationModel::new(self.lambda.clone())
    }

    pub fn point(&self) -> Result<AmbientPoint> {
        AmbientPoint::new(self.x.clone())
    }

    pub fn metric_profile(&self) -> Result<MetricProfile> {
        match self.profile {
            ProfileChoice::Poincare => Ok(MetricProfile::poincare()),
            ProfileChoice::Accelerating => MetricProfile::accelerating(self.delta),
        }
    }

    pub fn density_rule(&self) -> Result<DensityRule> {
        Ok(DensityRule::Profile(self.metric_profile()?))
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        SamplerConfig::new(self.step, self.seed, self.horizon, self.boundary_policy)
    }

    pub fn initial_law(&self) -> Result<InitialLaw> {
        match self.law {
            LawChoice::FixedPoint => Ok(InitialLaw::FixedPoint(self.point()?)),
            LawChoice::RadialLelong => InitialLaw::radial_lelong(self.inner, self.outer),
        }
    }

    pub fn scan_profiles(&self) -> Result<Vec<MetricProfile>> {
        self.profiles.iter().map(|s| parse_profile_spec(s)).collect()
    }
}
