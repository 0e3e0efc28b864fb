//! Experiment configuration: TOML schema, defaults merging, strict key checks and the regime guard.
//!
//! Schema (all sections optional; recipe defaults fill what is missing):
//!
//! ```toml
//! id = "run-name"
//! seed = 1
//! regime_slack = 2.0
//! [lattice]   d, l, w, sigma (d×d rows, default identity)
//! [model]     beta (1 or 2), regime ("subcritical" | "critical" | "supercritical"), gamma, tau
//! [poly]      family ("chebyshev" | "modified" | "renormalized"), degrees, cutoff
//! [sampling]  samples, probes
//! [output]    dir
//! [params]    recipe-specific keys
//! ```

use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{LabError, Result};
use crate::poly_engine::PolyFamily;
use crate::rbm_model::{ensemble_constants, BandProfile, Beta};
use crate::torus_walk::{classify, critical_gamma, Regime, TorusLattice};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeConfig {
    pub d: usize,
    pub l: usize,
    pub w: f64,
    pub sigma: Option<Vec<Vec<f64>>>,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig { d: 1, l: 32, w: 4.0, sigma: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub beta: Beta,
    pub regime: Option<Regime>,
    pub gamma: Option<f64>,
    pub tau: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { beta: Beta::Complex, regime: None, gamma: None, tau: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Chebyshev,
    #[default]
    Modified,
    Renormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PolyConfig {
    pub family: FamilyKind,
    pub degrees: Vec<usize>,
    /// Loop cutoff R of the renormalized family; defaults to the ensemble's choice.
    pub cutoff: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub samples: usize,
    pub probes: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { samples: 100, probes: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub id: String,
    pub seed: u64,
    pub regime_slack: f64,
    pub lattice: LatticeConfig,
    pub model: ModelConfig,
    pub poly: PolyConfig,
    pub sampling: SamplingConfig,
    pub output: OutputConfig,
    pub params: Table,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            id: String::new(),
            seed: 0,
            regime_slack: 2.0,
            lattice: LatticeConfig::default(),
            model: ModelConfig::default(),
            poly: PolyConfig::default(),
            sampling: SamplingConfig::default(),
            output: OutputConfig::default(),
            params: Table::new(),
        }
    }
}

const TOP_KEYS: &[&str] = &["id", "seed", "regime_slack", "lattice", "model", "poly", "sampling", "output", "params"];
const SECTION_KEYS: &[(&str, &[&str])] = &[
    ("lattice", &["d", "l", "w", "sigma"]),
    ("model", &["beta", "regime", "gamma", "tau"]),
    ("poly", &["family", "degrees", "cutoff"]),
    ("sampling", &["samples", "probes"]),
    ("output", &["dir"]),
];

/// Dotted names of keys in `user` that the schema (with `params` keys from the recipe) does not know.
pub fn unknown_keys(user: &Table, params: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in user {
        if !TOP_KEYS.contains(&k.as_str()) {
            out.push(k.clone());
            continue;
        }
        let allowed: &[&str] = match k.as_str() {
            "params" => params,
            other => match SECTION_KEYS.iter().find(|(s, _)| *s == other) {
                Some((_, keys)) => keys,
                None => continue,
            },
        };
        if let Value::Table(t) = v {
            out.extend(t.keys().filter(|sub| !allowed.contains(&sub.as_str())).map(|sub| format!("{k}.{sub}")));
        }
    }
    out
}

/// Overlays `user` on `base`, merging nested tables key by key.
pub fn merge_tables(base: &mut Table, user: &Table) {
    for (k, v) in user {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(u)) => merge_tables(b, u),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn parse_table(text: &str, what: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| LabError::Config(format!("{what}: {e}")))
}

impl ExperimentConfig {
    /// Recipe defaults overlaid with an optional user file. Unknown keys are errors under
    /// `strict` and warnings otherwise; the returned list holds the warnings.
    pub fn load(defaults: &str, user: Option<&str>, params: &[&str], strict: bool) -> Result<(Self, Vec<String>)> {
        let mut table = parse_table(defaults, "recipe defaults")?;
        let mut warnings = Vec::new();
        if let Some(text) = user {
            let user = parse_table(text, "config")?;
            let unknown = unknown_keys(&user, params);
            if !unknown.is_empty() {
                let msg = format!("unknown config keys: {}", unknown.join(", "));
                if strict {
                    return Err(LabError::Config(msg));
                }
                warnings.push(msg);
            }
            merge_tables(&mut table, &user);
        }
        let cfg: ExperimentConfig =
            Table::try_into(table).map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        warnings.extend(cfg.validate(strict)?);
        Ok((cfg, warnings))
    }

    /// Positive counts and the regime guard. A regime mismatch is an error under `strict`
    /// and a returned warning otherwise.
    pub fn validate(&self, strict: bool) -> Result<Vec<String>> {
        let s = &self.sampling;
        if s.samples == 0 || s.probes == 0 {
            return Err(LabError::Config("sampling.samples and sampling.probes must be positive".into()));
        }
        if !(self.regime_slack >= 1.0) {
            return Err(LabError::Config(format!("regime_slack must be at least 1, got {}", self.regime_slack)));
        }
        let lat = self.lattice()?;
        let mut warnings = Vec::new();
        if let Some(msg) = self.regime_mismatch(&lat)? {
            if strict {
                return Err(LabError::Regime(msg));
            }
            warnings.push(msg);
        }
        Ok(warnings)
    }

    fn regime_mismatch(&self, lat: &TorusLattice) -> Result<Option<String>> {
        let g = critical_gamma(lat);
        let slack = self.regime_slack;
        Ok(match self.model.regime {
            None => None,
            Some(Regime::Critical) => {
                let target = self
                    .model
                    .gamma
                    .ok_or_else(|| LabError::Config("regime \"critical\" requires model.gamma".into()))?;
                if !(target > 0.0) {
                    return Err(LabError::Config("model.gamma must be positive".into()));
                }
                (g / target > slack || target / g > slack).then(|| {
                    format!("critical config declares gamma = {target} but W/L^(1-d/6) = {g:.4} (slack {slack})")
                })
            }
            Some(r) => {
                let found = classify(lat, slack);
                (found != r).then(|| {
                    format!("config declares {r:?} but W/L^(1-d/6) = {g:.4} classifies as {found:?} at slack {slack}")
                })
            }
        })
    }

    pub fn lattice(&self) -> Result<TorusLattice> {
        let c = &self.lattice;
        let sigma = match &c.sigma {
            None => DMatrix::identity(c.d, c.d),
            Some(rows) => {
                if rows.len() != c.d || rows.iter().any(|r| r.len() != c.d) {
                    return Err(LabError::Config(format!("lattice.sigma must be {0}×{0}", c.d)));
                }
                DMatrix::from_row_iterator(c.d, c.d, rows.iter().flatten().copied())
            }
        };
        TorusLattice::new(c.d, c.l, c.w, sigma).map_err(|e| LabError::Config(e.to_string()))
    }

    /// Polynomial family from `[poly]`, with ensemble constants taken from `profile`.
    pub fn family(&self, profile: &BandProfile) -> Result<PolyFamily> {
        let a4 = crate::rbm_model::a4(profile);
        match self.poly.family {
            FamilyKind::Chebyshev => Ok(PolyFamily::ChebyshevU),
            FamilyKind::Modified => PolyFamily::modified(a4),
            FamilyKind::Renormalized => {
                let r = self.poly.cutoff.unwrap_or_else(|| crate::rbm_model::default_cutoff(profile.lattice()));
                let c = ensemble_constants(profile, r)?;
                PolyFamily::renormalized(a4, c.a2l.into_iter().collect(), r)
            }
        }
    }

    fn param(&self, key: &str) -> Option<&Value> {
        self.params.get(key)
    }

    fn bad(key: &str, want: &str) -> LabError {
        LabError::Config(format!("params.{key} must be {want}"))
    }

    pub fn param_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.param(key) {
            None => Ok(default),
            Some(Value::Float(x)) => Ok(*x),
            Some(Value::Integer(i)) => Ok(*i as f64),
            Some(_) => Err(Self::bad(key, "a number")),
        }
    }

    pub fn param_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.param(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(_) => Err(Self::bad(key, "a nonnegative integer")),
        }
    }

    pub fn param_f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.param(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(Self::bad(key, "a list of numbers")),
                })
                .collect(),
            Some(_) => Err(Self::bad(key, "a list of numbers")),
        }
    }

    pub fn param_usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.param(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                    _ => Err(Self::bad(key, "a list of nonnegative integers")),
                })
                .collect(),
            Some(_) => Err(Self::bad(key, "a list of nonnegative integers")),
        }
    }
}
