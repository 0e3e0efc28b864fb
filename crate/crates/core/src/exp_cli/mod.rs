//! Seeded experiment runner: a static recipe registry, TOML configs, prediction comparisons,
//! and `result.csv` / `manifest.json` outputs.

pub mod cli;
pub mod compare;
pub mod config;
pub mod output;
mod recipes;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use compare::{compare_to_prediction, Comparison, Measurement, Prediction, PredictionKind, Thresholds, Verdict};
pub use config::ExperimentConfig;
pub use output::{read_results, ResultRow, RowSink, MANIFEST_FILE, RESULT_FILE, RESULT_HEADER, TRUNCATION_MARKER};

use crate::error::{LabError, Result};

/// A registered recipe.
pub struct RecipeInfo {
    pub name: &'static str,
    /// The claim the recipe probes.
    pub anchor: &'static str,
    pub description: &'static str,
    /// Keys accepted under `[params]`.
    pub params: &'static [&'static str],
    /// TOML defaults, overlaid by the user config.
    pub defaults: &'static str,
    run: fn(&mut RunContext) -> Result<()>,
}

impl std::fmt::Debug for RecipeInfo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecipeInfo").field("name", &self.name).field("anchor", &self.anchor).finish()
    }
}

pub fn recipes() -> &'static [RecipeInfo] {
    recipes::REGISTRY
}

pub fn find_recipe(name: &str) -> Result<&'static RecipeInfo> {
    recipes().iter().find(|r| r.name == name).ok_or_else(|| LabError::UnknownRecipe {
        name: name.to_string(),
        valid: recipes().iter().map(|r| r.name).collect::<Vec<_>>().join(", "),
    })
}

/// Recipe defaults overlaid with `user` (TOML text); returns the config and load warnings.
pub fn load_config(recipe: &str, user: Option<&str>, strict: bool) -> Result<(ExperimentConfig, Vec<String>)> {
    let info = find_recipe(recipe)?;
    let (mut cfg, warnings) = ExperimentConfig::load(info.defaults, user, info.params, strict)?;
    if cfg.id.is_empty() {
        cfg.id = info.name.to_string();
    }
    Ok((cfg, warnings))
}

static CANCELLED: AtomicBool = AtomicBool::new(false);

/// Asks running recipes to stop at the next chunk boundary.
pub fn request_cancel() {
    CANCELLED.store(true, Ordering::SeqCst);
}

fn check_cancelled() -> Result<()> {
    if CANCELLED.load(Ordering::SeqCst) {
        Err(LabError::Cancelled)
    } else {
        Ok(())
    }
}

/// Samples per cancellation check.
const CHUNK: usize = 256;

/// Maps `f` over 0..count on the current rayon pool, in index order, checking for cancellation between chunks.
pub(crate) fn par_samples<T: Send>(count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    while start < count {
        check_cancelled()?;
        let end = (start + CHUNK).min(count);
        out.par_extend((start..end).into_par_iter().map(&f));
        start = end;
    }
    Ok(out)
}

/// First 16 hex digits of SHA-256 over the recipe name and the JSON config echo, output section excluded.
pub fn params_hash(recipe: &str, cfg: &ExperimentConfig) -> Result<String> {
    let mut cfg = cfg.clone();
    cfg.output = Default::default();
    let mut h = Sha256::new();
    h.update(recipe.as_bytes());
    h.update(serde_json::to_vec(&cfg)?);
    Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
}

/// State a recipe writes into.
pub struct RunContext<'a> {
    pub config: &'a ExperimentConfig,
    hash: String,
    sink: RowSink,
    comparisons: Vec<Comparison>,
    warnings: Vec<String>,
    thresholds: Thresholds,
}

impl RunContext<'_> {
    /// Emits one estimate row.
    pub fn row(&mut self, quantity: &str, n: impl ToString, value: f64, stderr: f64, samples: usize, seed: u64) -> Result<()> {
        let row = ResultRow {
            quantity: quantity.to_string(),
            value,
            stderr,
            n: n.to_string(),
            samples,
            seed,
            params_hash: self.hash.clone(),
        };
        self.sink.push(row)
    }

    /// Records a comparison.
    pub fn compare(&mut self, m: Measurement, p: Prediction) -> Result<()> {
        let c = compare_to_prediction(&m, &p, self.thresholds)?;
        self.comparisons.push(c);
        Ok(())
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub pass: usize,
    pub marginal: usize,
    pub fail: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub rbmlab: &'static str,
    pub result_schema: u32,
}

/// Everything a run produced; serialized as `manifest.json` (rows go to `result.csv`).
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub id: String,
    pub recipe: String,
    pub anchor: String,
    pub config: ExperimentConfig,
    pub params_hash: String,
    pub seed: u64,
    /// How per-sample seeds follow from `seed`.
    pub seed_derivation: &'static str,
    pub versions: Versions,
    pub started_unix: u64,
    pub runtime_seconds: f64,
    pub threads: usize,
    pub warnings: Vec<String>,
    pub comparisons: Vec<Comparison>,
    pub summary: Summary,
    pub truncated: Option<String>,
    pub outputs: Vec<PathBuf>,
    #[serde(skip)]
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    pub fn failed(&self) -> bool {
        self.summary.fail > 0
    }

    /// 0 when no comparison failed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.failed())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Worker count; the global rayon pool when absent.
    pub threads: Option<usize>,
    /// Warnings collected before the run (config loading).
    pub warnings: Vec<String>,
    pub thresholds: Thresholds,
}

fn summarize(cs: &[Comparison]) -> Summary {
    let mut s = Summary::default();
    for c in cs {
        match c.verdict {
            Verdict::Pass => s.pass += 1,
            Verdict::Marginal => s.marginal += 1,
            Verdict::Fail => s.fail += 1,
        }
    }
    s
}

/// Runs a recipe on a loaded config; writes `result.csv` and `manifest.json` when an output
/// directory is given. A failing run leaves a truncation marker and a manifest behind.
pub fn execute(recipe: &str, config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    let info = find_recipe(recipe)?;
    let hash = params_hash(info.name, config)?;
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let sink = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            RowSink::create(&dir.join(RESULT_FILE))?
        }
        None => RowSink::memory(),
    };
    let mut ctx = RunContext {
        config,
        hash: hash.clone(),
        sink,
        comparisons: Vec::new(),
        warnings: opts.warnings.clone(),
        thresholds: opts.thresholds,
    };
    let pool = match opts.threads {
        Some(t) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| LabError::Resource(format!("thread pool: {e}")))?,
        ),
        None => None,
    };
    let threads = pool.as_ref().map_or_else(rayon::current_num_threads, |p| p.current_num_threads());
    let outcome = match &pool {
        Some(p) => p.install(|| (info.run)(&mut ctx)),
        None => (info.run)(&mut ctx),
    };
    let truncated = match &outcome {
        Ok(()) => None,
        Err(e) => {
            ctx.sink.truncate(&e.to_string())?;
            Some(e.to_string())
        }
    };
    let outputs = opts
        .out_dir
        .as_ref()
        .map(|d| vec![d.join(RESULT_FILE), d.join(MANIFEST_FILE)])
        .unwrap_or_default();
    let result = ExperimentResult {
        id: config.id.clone(),
        recipe: info.name.to_string(),
        anchor: info.anchor.to_string(),
        config: config.clone(),
        params_hash: hash,
        seed: config.seed,
        seed_derivation: "sample i uses stats::sub_seed(seed, i); recipe stages offset i by fixed blocks",
        versions: Versions { rbmlab: env!("CARGO_PKG_VERSION"), result_schema: 1 },
        started_unix,
        runtime_seconds: started.elapsed().as_secs_f64(),
        threads,
        warnings: ctx.warnings,
        summary: summarize(&ctx.comparisons),
        comparisons: ctx.comparisons,
        truncated,
        outputs,
        rows: ctx.sink.into_rows(),
    };
    if let Some(dir) = &opts.out_dir {
        output::write_json(&dir.join(MANIFEST_FILE), &result)?;
    }
    outcome.map(|()| result)
}

/// Default output directory for a run id.
pub fn default_out_dir(id: &str) -> PathBuf {
    Path::new("results").join(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_complete_and_anchored() {
        let names: Vec<&str> = recipes().iter().map(|r| r.name).collect();
        assert_eq!(
            names,
            [
                "llt_check",
                "heat_kernel",
                "identity_suite",
                "moment_reduction",
                "edge_universality",
                "factorization",
                "critical_scan",
                "tail_decay",
                "tadpole_demo",
                "diagram_tables",
                "constants"
            ]
        );
        for r in recipes() {
            assert!(!r.anchor.is_empty() && !r.description.is_empty(), "{}", r.name);
            let (cfg, warnings) = load_config(r.name, None, true).unwrap();
            assert!(warnings.is_empty(), "{}: {warnings:?}", r.name);
            assert_eq!(cfg.id, r.name);
            for k in cfg.params.keys() {
                assert!(r.params.contains(&k.as_str()), "{}: default key {k} not declared", r.name);
            }
        }
    }

    #[test]
    fn unknown_recipe_lists_valid_names() {
        match find_recipe("nope") {
            Err(LabError::UnknownRecipe { name, valid }) => {
                assert_eq!(name, "nope");
                assert!(valid.contains("llt_check") && valid.contains("constants"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_tracks_config() {
        let (a, _) = load_config("llt_check", None, true).unwrap();
        let mut b = a.clone();
        assert_eq!(params_hash("llt_check", &a).unwrap(), params_hash("llt_check", &b).unwrap());
        b.seed += 1;
        assert_ne!(params_hash("llt_check", &a).unwrap(), params_hash("llt_check", &b).unwrap());
        assert_eq!(params_hash("llt_check", &a).unwrap().len(), 16);
    }

    #[test]
    fn par_samples_keeps_order() {
        let v = par_samples(1000, |i| i * 2).unwrap();
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}
