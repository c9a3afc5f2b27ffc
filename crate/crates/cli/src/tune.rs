use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use anyhow::Context;
use ktune_core::cache::{self, CacheEntry, CacheKey, CacheStore, StoreOutcome};
use ktune_core::configspace::{ConfigSpace, ShapeKey};
use ktune_core::executor::{EvalPlan, Evaluator};
use ktune_core::search::{run_search, ResultStatus, SearchBudget, SearchStrategy};
use serde::{Deserialize, Serialize};

use crate::exit::{CmdResult, Failure, HARD, OK, PARTIAL};
use crate::inputs::{self, Source};
use crate::{StrategyKind, TuneArgs};

const DEFAULT_MAX_WALL_MS: f64 = 24.0 * 3600.0 * 1000.0;

/// On-disk form of a tuning run. Relative paths are resolved against the
/// manifest's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    space: Option<PathBuf>,
    #[serde(default)]
    shapes: Vec<String>,
    shapes_file: Option<PathBuf>,
    synthetic: Option<PathBuf>,
    runner: Option<String>,
    #[serde(default)]
    runners: Vec<String>,
    #[serde(default)]
    parallel_runners: bool,
    strategy: Option<SearchStrategy>,
    budget: Option<SearchBudget>,
    plan: Option<EvalPlan>,
    cache_dir: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl Manifest {
    fn load(path: &Path) -> Result<Self, Failure> {
        let text = inputs::read_file(path)?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("manifest {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut m.space,
            &mut m.shapes_file,
            &mut m.synthetic,
            &mut m.cache_dir,
            &mut m.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(m)
    }
}

/// Everything a tuning run needs, after merging manifest and flags.
struct Plan {
    space: ConfigSpace,
    shapes: Vec<ShapeKey>,
    sources: Vec<Source>,
    strategy: SearchStrategy,
    budget: SearchBudget,
    eval: EvalPlan,
    handshake: Duration,
    cache_dir: PathBuf,
    out: Option<PathBuf>,
    force: bool,
}

fn default_schedule(reps: u32, rounds: usize) -> Vec<u32> {
    (0..rounds)
        .map(|i| {
            let shift = (rounds - 1 - i).min(31) as u32;
            (reps >> shift).max(1)
        })
        .collect()
}

fn resolve_strategy(
    base: Option<SearchStrategy>,
    a: &TuneArgs,
    reps: u32,
) -> Result<SearchStrategy, Failure> {
    let kind_of = |s: &SearchStrategy| match s {
        SearchStrategy::Exhaustive => StrategyKind::Exhaustive,
        SearchStrategy::Random { .. } => StrategyKind::Random,
        SearchStrategy::Halving { .. } => StrategyKind::Halving,
    };
    let base = base.filter(|s| a.strategy.is_none_or(|k| k == kind_of(s)));
    let kind = a
        .strategy
        .or(base.as_ref().map(kind_of))
        .unwrap_or(StrategyKind::Exhaustive);
    let strategy = match (kind, base) {
        (StrategyKind::Exhaustive, _) => SearchStrategy::Exhaustive,
        (StrategyKind::Random, base) => {
            let (b_seed, b_n) = match base {
                Some(SearchStrategy::Random { seed, n }) => (seed, Some(n)),
                _ => (0, None),
            };
            SearchStrategy::Random {
                seed: a.seed.unwrap_or(b_seed),
                n: a.samples
                    .or(b_n)
                    .ok_or_else(|| Failure::usage("the random strategy needs --samples"))?,
            }
        }
        (StrategyKind::Halving, base) => {
            let (seed, initial, keep, rounds, schedule) = match base {
                Some(SearchStrategy::Halving {
                    seed,
                    initial_fraction,
                    keep_fraction,
                    rounds,
                    reps_schedule,
                }) => (
                    seed,
                    initial_fraction,
                    keep_fraction,
                    rounds,
                    Some(reps_schedule),
                ),
                _ => (0, None, 0.5, 3, None),
            };
            let rounds = a
                .rounds
                .or(a.reps_schedule.as_ref().map(Vec::len))
                .unwrap_or(rounds);
            let reps_schedule = a
                .reps_schedule
                .clone()
                .or(schedule.filter(|s| s.len() == rounds))
                .unwrap_or_else(|| default_schedule(reps, rounds));
            SearchStrategy::Halving {
                seed: a.seed.unwrap_or(seed),
                initial_fraction: a.initial_fraction.or(initial),
                keep_fraction: a.keep_fraction.unwrap_or(keep),
                rounds,
                reps_schedule,
            }
        }
    };
    strategy.check().map_err(Failure::usage)?;
    Ok(strategy)
}

fn build_plan(a: &TuneArgs) -> Result<Plan, Failure> {
    let m = match &a.manifest {
        Some(path) => Manifest::load(path)?,
        None => Manifest::default(),
    };
    let space_path = a
        .space
        .clone()
        .or(m.space)
        .ok_or_else(|| Failure::usage("no space given (--space or manifest `space`)"))?;
    let space = inputs::load_space(&space_path)?;

    let mut shapes = Vec::new();
    let shape_texts = if a.shapes.is_empty() {
        &m.shapes
    } else {
        &a.shapes
    };
    for s in shape_texts {
        shapes.push(inputs::parse_shape(s)?);
    }
    if let Some(file) = a.shapes_file.as_ref().or(m.shapes_file.as_ref()) {
        shapes.extend(inputs::read_shapes_file(file)?);
    }
    if shapes.is_empty() {
        return Err(Failure::usage(
            "no shapes given (--shape, --shapes or manifest `shapes`)",
        ));
    }
    let mut seen = std::collections::HashSet::new();
    shapes.retain(|s| seen.insert(s.clone()));

    let mut runners = a.runners.clone();
    if runners.is_empty() && a.synthetic.is_none() {
        runners.extend(m.runner);
        runners.extend(m.runners);
    }
    let synthetic = a.synthetic.clone().or(if a.runners.is_empty() {
        m.synthetic
    } else {
        None
    });
    let sources: Vec<Source> = match (synthetic, runners.is_empty()) {
        (Some(p), true) => {
            if !p.exists() {
                return Err(Failure::usage(format!("{}: no such file", p.display())));
            }
            vec![Source::Synthetic(p)]
        }
        (None, false) => runners.into_iter().map(Source::Runner).collect(),
        (Some(_), false) => {
            return Err(Failure::usage(
                "give either a runner or --synthetic, not both",
            ))
        }
        (None, true) => return Err(Failure::usage("no runner or --synthetic profile given")),
    };
    if sources.len() > 1 && !(a.parallel_runners || m.parallel_runners) {
        return Err(Failure::usage("several runners need --parallel-runners"));
    }

    let mut eval = m.plan.unwrap_or_default();
    eval.warmups = a.warmups.unwrap_or(eval.warmups);
    eval.reps = a.reps.unwrap_or(eval.reps);
    eval.timeout_ms = a.timeout_ms.unwrap_or(eval.timeout_ms);
    if eval.reps == 0 {
        return Err(Failure::usage("--reps must be at least 1"));
    }

    let mut budget = m.budget.unwrap_or(SearchBudget {
        max_evaluations: None,
        max_wall_ms: Some(DEFAULT_MAX_WALL_MS),
    });
    if a.max_evals.is_some() {
        budget.max_evaluations = a.max_evals;
    }
    if a.max_wall_ms.is_some() {
        budget.max_wall_ms = a.max_wall_ms;
    }

    Ok(Plan {
        strategy: resolve_strategy(m.strategy, a, eval.reps)?,
        space,
        shapes,
        sources,
        budget,
        eval,
        handshake: Duration::from_millis(a.handshake_timeout_ms),
        cache_dir: a
            .cache_dir
            .clone()
            .or(m.cache_dir)
            .unwrap_or_else(cache::default_root),
        out: a.out.clone().or(m.out),
        force: a.force,
    })
}

#[derive(Debug, Serialize)]
struct ShapeSummary {
    shape: ShapeKey,
    key: String,
    cache: &'static str,
    status: ResultStatus,
    best: Option<ktune_core::search::BestConfig>,
    /// Evaluations performed by this invocation.
    evaluations: u64,
    counters: ktune_core::search::Counters,
    total_compile_ms: f64,
    total_run_ms: f64,
    total_wall_ms: f64,
    stop_reason: ktune_core::search::StopReason,
    stored: Option<&'static str>,
    file: Option<PathBuf>,
}

fn tune_shape(
    plan: &Plan,
    store: &CacheStore,
    evaluator: &mut dyn Evaluator,
    shape: &ShapeKey,
) -> Result<ShapeSummary, Failure> {
    let key = CacheKey::new(evaluator.fingerprint(), shape);
    let cached = if plan.force {
        None
    } else {
        store.lookup(evaluator.fingerprint(), shape)?
    };
    let (entry, cache, evaluations, stored) = match cached {
        Some(entry) => (entry, "hit", 0, None),
        None => {
            let result = run_search(
                &plan.space,
                shape,
                &plan.strategy,
                plan.budget,
                plan.eval,
                evaluator,
            )
            .with_context(|| format!("tuning {shape}"))?;
            let evaluations = result.trace.len() as u64;
            let entry = CacheEntry::new(result);
            let stored = match store.store(&entry, plan.force)? {
                StoreOutcome::Stored(_) => "stored",
                StoreOutcome::Replaced(_) => "replaced",
                StoreOutcome::KeptExisting(_) => "kept_existing",
                StoreOutcome::Unchanged(_) => "unchanged",
            };
            (entry, "miss", evaluations, Some(stored))
        }
    };
    let file = match &plan.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{}.result.json", key.short()));
            let mut text = serde_json::to_string_pretty(&serde_json::to_value(&entry)?)?;
            text.push('\n');
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            Some(path)
        }
        None => None,
    };
    let r = &entry.result;
    Ok(ShapeSummary {
        shape: shape.clone(),
        key: key.to_string(),
        cache,
        status: r.status,
        best: r.best.clone(),
        evaluations,
        counters: r.counters,
        total_compile_ms: r.time_split.total_compile_ms,
        total_run_ms: r.time_split.total_run_ms,
        total_wall_ms: r.time_split.total_wall_ms,
        stop_reason: r.stop_reason,
        stored,
        file,
    })
}

fn print_summary(s: &ShapeSummary, json: bool) {
    if json {
        println!("{}", serde_json::to_string(s).expect("summary serializes"));
        return;
    }
    let best = match &s.best {
        Some(b) => format!("best {} at {:.4} ms", b.config, b.median_ms),
        None => "no viable configuration".to_string(),
    };
    println!(
        "{}: {best} (cache {}, {} evaluations, compile {:.1} ms, run {:.1} ms, stopped: {})",
        s.shape, s.cache, s.evaluations, s.total_compile_ms, s.total_run_ms, s.stop_reason
    );
}

fn worker(
    plan: &Plan,
    source: &Source,
    queue: &Mutex<VecDeque<usize>>,
    results: &Mutex<Vec<Option<Result<ShapeSummary, Failure>>>>,
) {
    let setup = CacheStore::open(&plan.cache_dir)
        .map_err(Failure::from)
        .and_then(|store| {
            Ok((
                store,
                inputs::open_evaluator(source, &plan.space, plan.handshake)?,
            ))
        });
    let (store, mut evaluator) = match setup {
        Ok(pair) => pair,
        Err(f) => {
            if let Some(i) = queue.lock().expect("queue lock").pop_front() {
                results.lock().expect("results lock")[i] = Some(Err(f));
            }
            return;
        }
    };
    loop {
        let Some(i) = queue.lock().expect("queue lock").pop_front() else {
            break;
        };
        let out = tune_shape(plan, &store, evaluator.as_mut(), &plan.shapes[i]);
        let failed = out.is_err();
        results.lock().expect("results lock")[i] = Some(out);
        if failed {
            break;
        }
    }
}

pub fn run(args: TuneArgs) -> CmdResult {
    let plan = build_plan(&args)?;
    let queue = Mutex::new((0..plan.shapes.len()).collect::<VecDeque<_>>());
    let results = Mutex::new((0..plan.shapes.len()).map(|_| None).collect::<Vec<_>>());
    if plan.sources.len() == 1 {
        worker(&plan, &plan.sources[0], &queue, &results);
    } else {
        thread::scope(|s| {
            for source in &plan.sources {
                let (plan, queue, results) = (&plan, &queue, &results);
                s.spawn(move || worker(plan, source, queue, results));
            }
        });
    }
    let mut code = OK;
    let mut first_error = None;
    for (shape, r) in plan
        .shapes
        .iter()
        .zip(results.into_inner().expect("results lock"))
    {
        match r {
            Some(Ok(summary)) => {
                if summary.status == ResultStatus::NoViableConfiguration {
                    code = code.max(PARTIAL);
                }
                print_summary(&summary, args.json);
            }
            Some(Err(f)) => {
                eprintln!("error: {shape}: {:#}", f.error);
                first_error.get_or_insert(f);
            }
            None => eprintln!("{shape}: skipped after an earlier error"),
        }
    }
    match first_error {
        Some(f) => Err(Failure {
            code: f.code.max(HARD),
            error: anyhow::anyhow!("tuning failed"),
        }),
        None => Ok(code),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_doubles_up_to_reps() {
        assert_eq!(default_schedule(10, 3), [2, 5, 10]);
        assert_eq!(default_schedule(1, 3), [1, 1, 1]);
        assert_eq!(default_schedule(10, 1), [10]);
    }

    #[test]
    fn strategy_flags_override_manifest() {
        let base = SearchStrategy::Halving {
            seed: 1,
            initial_fraction: None,
            keep_fraction: 0.25,
            rounds: 2,
            reps_schedule: vec![3, 5],
        };
        let args = TuneArgs {
            seed: Some(9),
            ..TuneArgs::default()
        };
        match resolve_strategy(Some(base), &args, 10).unwrap() {
            SearchStrategy::Halving {
                seed,
                keep_fraction,
                reps_schedule,
                ..
            } => {
                assert_eq!(seed, 9);
                assert_eq!(keep_fraction, 0.25);
                assert_eq!(reps_schedule, [3, 5]);
            }
            other => panic!("{other:?}"),
        }
        let random = TuneArgs {
            strategy: Some(StrategyKind::Random),
            ..TuneArgs::default()
        };
        assert_eq!(
            resolve_strategy(None, &random, 10).unwrap_err().code,
            crate::exit::USAGE
        );
    }
}
