//! Training configuration and its flat `key = value` form.
//!
//! Every field is addressable by a dotted path (`lr.centers`,
//! `schedule.reinit_at`, `render.tile_size`, ...). A `[section]` header
//! prefixes the keys below it.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::density::{DensifyConfig, ResampleConfig};
use crate::kv::{self, KvError};
use crate::losses::{LossWeights, PatchConfig};
use crate::rasterizer::RenderConfig;

use super::optimizer::GroupRates;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error(transparent)]
    Syntax(#[from] KvError),
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("config key '{key}': cannot parse {value:?} as {expected}")]
    BadValue { key: String, value: String, expected: &'static str },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    /// Initial center rate, relative to the scene extent.
    pub centers: f64,
    /// Final center rate as a fraction of the initial one.
    pub centers_final: f64,
    pub rotations: f64,
    pub log_scales: f64,
    pub opacity: f64,
    pub sh: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { centers: 1.6e-4, centers_final: 0.01, rotations: 1e-3, log_scales: 5e-3, opacity: 5e-2, sh: 2.5e-3 }
    }
}

impl LearningRates {
    /// Rates at 1-based `iteration`; the center rate decays log-linearly
    /// over `total` iterations.
    pub fn at(&self, iteration: usize, total: usize, scene_extent: f64) -> GroupRates {
        let t = if total == 0 { 1.0 } else { (iteration as f64 / total as f64).clamp(0.0, 1.0) };
        let start = self.centers * scene_extent;
        let centers = (start.ln() * (1.0 - t) + (start * self.centers_final).ln() * t).exp();
        GroupRates { centers, rotations: self.rotations, log_scales: self.log_scales, opacity: self.opacity, sh: self.sh }
    }
}

/// Iterations (1-based) at which each stage switches on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    /// Depth-normal consistency.
    pub normal_from: usize,
    /// Per-pixel multi-view photometric loss.
    pub mv_from: usize,
    /// Per-Gaussian normal and multi-view losses.
    pub instance_from: usize,
    pub opacity_from: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    pub reinit_at: Vec<usize>,
    pub resample: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            normal_from: 1000,
            mv_from: 1000,
            instance_from: 3000,
            opacity_from: 0,
            densify_from: 500,
            densify_until: 15_000,
            densify_interval: 100,
            reinit_at: vec![5000, 10_000],
            resample: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub points: usize,
    pub opacity: f64,
    /// Nearest neighbors averaged for the initial scale.
    pub scale_neighbors: usize,
    /// Candidates used to bound the frustum intersection.
    pub bound_samples: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { points: 5000, opacity: 0.1, scale_neighbors: 3, bound_samples: 20_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborConfig {
    pub min_angle_deg: f64,
    pub max_angle_deg: f64,
    /// Closest qualifying views kept per reference view.
    pub candidates: usize,
}

impl Default for NeighborConfig {
    fn default() -> Self {
        Self { min_angle_deg: 5.0, max_angle_deg: 60.0, candidates: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iterations: usize,
    pub seed: u64,
    pub sh_degree: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Front-Gaussian depth tolerance for the per-Gaussian losses, relative
    /// to the scene extent.
    pub front_tolerance: f64,
    pub lr: LearningRates,
    pub weights: LossWeights,
    pub schedule: Schedule,
    pub init: InitConfig,
    pub neighbors: NeighborConfig,
    pub densify: DensifyConfig,
    pub resample: ResampleConfig,
    pub patch: PatchConfig,
    pub render: RenderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iterations: 30_000,
            seed: 0,
            sh_degree: 0,
            checkpoint_every: 5000,
            front_tolerance: 0.01,
            lr: LearningRates::default(),
            weights: LossWeights::default(),
            schedule: Schedule::default(),
            init: InitConfig::default(),
            neighbors: NeighborConfig::default(),
            densify: DensifyConfig::default(),
            resample: ResampleConfig::default(),
            patch: PatchConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Array(items) => {
            out.push((prefix.to_string(), items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")));
        }
        Value::Null => out.push((prefix.to_string(), "none".to_string())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn parse_number(key: &str, text: &str, like: Option<&Value>) -> Result<Value, ConfigError> {
    let bad = |expected| ConfigError::BadValue { key: key.to_string(), value: text.to_string(), expected };
    let integer = like.is_some_and(|v| v.is_u64() || v.is_i64());
    if integer {
        return text.parse::<u64>().map(Value::from).map_err(|_| bad("an unsigned integer"));
    }
    let f: f64 = text.parse().map_err(|_| bad("a number"))?;
    serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(|| bad("a finite number"))
}

fn parse_value(key: &str, text: &str, current: &Value) -> Result<Value, ConfigError> {
    let bad = |expected| ConfigError::BadValue { key: key.to_string(), value: text.to_string(), expected };
    match current {
        Value::Bool(_) => match text {
            "true" | "1" | "yes" | "on" => Ok(Value::Bool(true)),
            "false" | "0" | "no" | "off" => Ok(Value::Bool(false)),
            _ => Err(bad("a boolean")),
        },
        // optional fields accept "none"; required ones are rejected when
        // the result is deserialized
        Value::Number(_) | Value::Null if text.eq_ignore_ascii_case("none") => Ok(Value::Null),
        Value::Number(_) => parse_number(key, text, Some(current)),
        Value::Null => parse_number(key, text, None),
        Value::Array(items) => {
            let like = items.first().cloned().unwrap_or(Value::from(0u64));
            text.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| parse_number(key, t, Some(&like)))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        Value::String(_) => Ok(Value::String(text.to_string())),
        Value::Object(_) => Err(ConfigError::UnknownKey(key.to_string())),
    }
}

fn lookup<'a>(root: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    key.split('.').try_fold(root, |node, part| match node {
        Value::Object(map) => map.get_mut(part),
        _ => None,
    })
}

/// Replaces the existing leaf at dotted `key`, parsing `text` after the
/// leaf's current type.
pub fn set_json_path(root: &mut Value, key: &str, text: &str) -> Result<(), ConfigError> {
    let slot = lookup(root, key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
    *slot = parse_value(key, text, slot)?;
    Ok(())
}

impl TrainConfig {
    /// Sorted dotted `(key, value)` pairs covering every field.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out.sort();
        out
    }

    pub fn to_text(&self) -> String {
        let mut section = kv::Section::default();
        for (k, v) in self.to_pairs() {
            section.push(&k, v);
        }
        kv::render(&[section])
    }

    /// Applies dotted overrides in order.
    pub fn with_overrides<'a, I>(&self, pairs: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut root = serde_json::to_value(self).expect("config serializes");
        for (key, text) in pairs {
            set_json_path(&mut root, key, text)?;
        }
        serde_json::from_value(root).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        *self = self.with_overrides([(key, value)])?;
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        Self::default().merge_text(text)
    }

    pub fn merge_text(&self, text: &str) -> Result<Self, ConfigError> {
        let sections = kv::parse(text)?;
        let pairs: Vec<(String, String)> = sections
            .iter()
            .flat_map(|s| {
                s.entries.iter().map(move |(k, v)| {
                    let key = if s.name.is_empty() { k.clone() } else { format!("{}.{k}", s.name) };
                    (key, v.clone())
                })
            })
            .collect();
        self.with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Sets the run length and rescales every schedule iteration by the
    /// same factor. Intervals are kept.
    pub fn with_iterations(&self, total: usize) -> Self {
        let old = self.total_iterations.max(1) as f64;
        let f = |i: usize| ((i as f64) * total as f64 / old).round() as usize;
        let s = &self.schedule;
        let mut out = self.clone();
        out.total_iterations = total;
        out.schedule = Schedule {
            normal_from: f(s.normal_from),
            mv_from: f(s.mv_from),
            instance_from: f(s.instance_from),
            opacity_from: f(s.opacity_from),
            densify_from: f(s.densify_from),
            densify_until: f(s.densify_until),
            reinit_at: s.reinit_at.iter().map(|&i| f(i)).collect(),
            ..s.clone()
        };
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        for (name, v) in [
            ("lr.centers", self.lr.centers),
            ("lr.centers_final", self.lr.centers_final),
            ("lr.rotations", self.lr.rotations),
            ("lr.log_scales", self.lr.log_scales),
            ("lr.opacity", self.lr.opacity),
            ("lr.sh", self.lr.sh),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.weights.all_nonnegative() {
            return fail("loss weights must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.weights.rgb_dssim_mix) {
            return fail("weights.rgb_dssim_mix must lie in [0, 1]".into());
        }
        if self.sh_degree > 3 {
            return fail(format!("sh_degree {} above 3", self.sh_degree));
        }
        let s = &self.schedule;
        let total = self.total_iterations;
        let named = [
            ("schedule.normal_from", s.normal_from),
            ("schedule.mv_from", s.mv_from),
            ("schedule.instance_from", s.instance_from),
            ("schedule.opacity_from", s.opacity_from),
            ("schedule.densify_from", s.densify_from),
            ("schedule.densify_until", s.densify_until),
        ];
        for (name, v) in named.into_iter().chain(s.reinit_at.iter().map(|&v| ("schedule.reinit_at", v))) {
            if v > total {
                return fail(format!("{name} = {v} lies beyond total_iterations = {total}"));
            }
        }
        if s.densify_interval == 0 {
            return fail("schedule.densify_interval must be positive".into());
        }
        if self.init.points == 0 || self.init.scale_neighbors == 0 {
            return fail("init.points and init.scale_neighbors must be positive".into());
        }
        if !(0.0 < self.init.opacity && self.init.opacity < 1.0) {
            return fail(format!("init.opacity must lie in (0, 1), got {}", self.init.opacity));
        }
        let n = &self.neighbors;
        if !(0.0 <= n.min_angle_deg && n.min_angle_deg <= n.max_angle_deg && n.max_angle_deg <= 180.0) {
            return fail("neighbor angles must satisfy 0 <= min <= max <= 180".into());
        }
        if self.patch.patch_size % 2 == 0 || self.patch.patch_size < 3 {
            return fail("patch.patch_size must be odd and at least 3".into());
        }
        if self.render.tile_size == 0 {
            return fail("render.tile_size must be positive".into());
        }
        if !(self.front_tolerance > 0.0 && self.resample.front_tolerance > 0.0) {
            return fail("front tolerances must be positive".into());
        }
        Ok(())
    }
}

/// The canonical text of `cfg` parsed back; used to check that every field
/// is addressable.
pub fn round_trip(cfg: &TrainConfig) -> Result<TrainConfig, ConfigError> {
    TrainConfig::from_text(&cfg.to_text())
}
