//! Loading of the files and command lines the subcommands share.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use ktune_core::cache::{Bundle, CacheEntry};
use ktune_core::configspace::{parse_space, ConfigSpace, ShapeKey};
use ktune_core::executor::{
    CostProfile, Evaluator, RunnerCommand, RunnerSession, SyntheticEvaluator,
};
use ktune_core::search::TuningResult;

use crate::exit::Failure;

pub fn read_file(path: &Path) -> Result<String, Failure> {
    if !path.exists() {
        return Err(Failure::usage(format!("{}: no such file", path.display())));
    }
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::from)
}

pub fn load_space(path: &Path) -> Result<ConfigSpace, Failure> {
    let text = read_file(path)?;
    parse_space(&text).map_err(|e| Failure::hard(format!("{}: {e}", path.display())))
}

pub fn load_profile(path: &Path) -> Result<CostProfile, Failure> {
    let text = read_file(path)?;
    CostProfile::from_json(&text).map_err(|e| Failure::hard(format!("{}: {e}", path.display())))
}

pub fn parse_shape(text: &str) -> Result<ShapeKey, Failure> {
    text.parse()
        .map_err(|e| Failure::usage(format!("shape `{text}`: {e}")))
}

/// One shape per line; blank lines and `#` comments are ignored.
pub fn read_shapes_file(path: &Path) -> Result<Vec<ShapeKey>, Failure> {
    read_file(path)?
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(parse_shape)
        .collect()
}

/// Where measurements come from.
#[derive(Debug, Clone)]
pub enum Source {
    Synthetic(PathBuf),
    Runner(String),
}

pub fn runner_command(text: &str) -> Result<RunnerCommand, Failure> {
    text.parse()
        .map_err(|e| Failure::usage(format!("runner command `{text}`: {e}")))
}

pub fn open_evaluator(
    source: &Source,
    space: &ConfigSpace,
    handshake_timeout: Duration,
) -> Result<Box<dyn Evaluator>, Failure> {
    match source {
        Source::Synthetic(path) => {
            let profile = load_profile(path)?;
            let ev = SyntheticEvaluator::new(profile, space)
                .map_err(|e| Failure::hard(format!("{}: {e}", path.display())))?;
            Ok(Box::new(ev))
        }
        Source::Runner(cmd) => {
            let command = runner_command(cmd)?;
            let session = RunnerSession::start(command, space.digest(), handshake_timeout)
                .with_context(|| format!("starting runner `{cmd}`"))?;
            Ok(Box::new(session))
        }
    }
}

/// Tuning results from an entry file, a bundle, a bare result, or a
/// directory of `.result.json` files.
pub fn load_results(path: &Path) -> Result<Vec<TuningResult>, Failure> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".result.json"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(load_results(&f)?);
        }
        return Ok(out);
    }
    let text = read_file(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let bad = |e: String| Failure::hard(format!("{}: {e}", path.display()));
    if value.get("entries").is_some() {
        let bundle = Bundle::from_json(&text).map_err(|e| bad(e.to_string()))?;
        return Ok(bundle.entries.into_iter().map(|e| e.result).collect());
    }
    if value.get("result").is_some() {
        let entry: CacheEntry = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        entry.check().map_err(|e| bad(e.to_string()))?;
        return Ok(vec![entry.result]);
    }
    let result: TuningResult = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
    result.check().map_err(bad)?;
    Ok(vec![result])
}

pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(Failure::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
