//! Command-line front end: `rbmlab <recipe> [--config PATH] [--seed S] [--out DIR] [--threads T] [--strict]`.

use std::io::Write;
use std::path::PathBuf;

use clap::Parser;

use super::{default_out_dir, execute, load_config, recipes, RunOptions, Verdict};
use crate::error::{LabError, Result};

#[derive(Debug, Parser)]
#[command(name = "rbmlab", version, about = "Seeded random band matrix experiments")]
pub struct Cli {
    /// Recipe to run, or `list` to print the registry.
    pub recipe: String,
    /// TOML file overlaid on the recipe defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: output.dir, else results/<id>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Reject unknown config keys and regime mismatches instead of warning.
    #[arg(long)]
    pub strict: bool,
    /// Print the effective config as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

fn list(out: &mut impl Write) -> Result<()> {
    for r in recipes() {
        writeln!(out, "{:<18} {}", r.name, r.description)?;
        writeln!(out, "{:<18} anchor: {}", "", r.anchor)?;
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

fn run_inner(cli: &Cli, out: &mut impl Write) -> Result<i32> {
    if cli.recipe == "list" {
        list(out)?;
        return Ok(0);
    }
    let text = cli.config.as_ref().map(std::fs::read_to_string).transpose()?;
    let (mut cfg, warnings) = load_config(&cli.recipe, text.as_deref(), cli.strict)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads == Some(0) {
        return Err(LabError::invalid("--threads must be positive"));
    }
    if cli.print_config {
        let text = toml::to_string(&cfg).map_err(|e| LabError::Config(e.to_string()))?;
        write!(out, "{text}")?;
        return Ok(0);
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let dir = cli.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| default_out_dir(&cfg.id));
    let opts = RunOptions { out_dir: Some(dir.clone()), threads: cli.threads, warnings, ..Default::default() };
    let result = execute(&cli.recipe, &cfg, &opts)?;
    writeln!(out, "{} [{}] seed {} hash {}", result.recipe, result.anchor, result.seed, result.params_hash)?;
    for c in &result.comparisons {
        let label = if c.n.is_empty() { c.quantity.clone() } else { format!("{} [{}]", c.quantity, c.n) };
        writeln!(
            out,
            "{:<8} {label}: {:.6e} ± {} vs {:.6e} [{}] z={} ratio={}",
            c.verdict.label(),
            c.measurement,
            c.stderr.map_or_else(|| "-".into(), |s| format!("{s:.2e}")),
            c.prediction,
            c.source,
            fmt_opt(c.z),
            fmt_opt(c.ratio),
        )?;
    }
    let s = result.summary;
    writeln!(
        out,
        "{} rows, {} pass, {} marginal, {} fail; wrote {}",
        result.rows.len(),
        s.pass,
        s.marginal,
        s.fail,
        dir.display()
    )?;
    if result.comparisons.iter().any(|c| c.verdict == Verdict::Marginal) {
        eprintln!("note: marginal comparisons do not change the exit code");
    }
    Ok(result.exit_code())
}

/// Runs the CLI and returns the process exit code: 0 pass, 1 statistical fail, 2 usage error, 3 resource error.
pub fn run(cli: &Cli, out: &mut impl Write) -> i32 {
    match run_inner(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
