//! Budgeted exploration of a configuration space.
//!
//! [`run_search`] drives one evaluator sequentially and records every attempt
//! in the trace. The budget is checked between evaluations only; a
//! measurement is never cut short. Transient failures (timeouts) are retried
//! once. If more than half of all attempts end in a non-transient failure the
//! search aborts.

mod halving;

use std::cmp::Ordering;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::configspace::{ConfigSpace, KernelConfig, ShapeKey, SpaceError};
use crate::executor::{EnvFingerprint, EvalOutcome, EvalPlan, Evaluator};

pub use halving::{halving_round, planned_evaluations, RoundResult};

/// Below this many attempts the failure-rate abort only fires at the end.
const MIN_ATTEMPTS_FOR_EARLY_ABORT: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SearchStrategy {
    Exhaustive,
    /// Sampling without replacement from the seeded shuffle of the valid set.
    Random {
        seed: u64,
        n: usize,
    },
    /// Successive halving over a seeded sample.
    Halving {
        seed: u64,
        /// Fraction of the valid set sampled up front; `None` picks 1.0 for
        /// spaces of at most 64 valid configurations and 0.5 otherwise.
        initial_fraction: Option<f64>,
        keep_fraction: f64,
        rounds: usize,
        reps_schedule: Vec<u32>,
    },
}

impl SearchStrategy {
    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |msg: String| Err(SearchError::BadStrategy(msg));
        match self {
            SearchStrategy::Exhaustive => Ok(()),
            SearchStrategy::Random { n, .. } => {
                if *n == 0 {
                    return bad("random strategy needs n >= 1".into());
                }
                Ok(())
            }
            SearchStrategy::Halving {
                initial_fraction,
                keep_fraction,
                rounds,
                reps_schedule,
                ..
            } => {
                if let Some(f) = initial_fraction {
                    if !(*f > 0.0 && *f <= 1.0) {
                        return bad(format!("initial_fraction {f} outside (0, 1]"));
                    }
                }
                if !(*keep_fraction > 0.0 && *keep_fraction < 1.0) {
                    return bad(format!("keep_fraction {keep_fraction} outside (0, 1)"));
                }
                if *rounds == 0 {
                    return bad("halving needs at least one round".into());
                }
                if reps_schedule.len() != *rounds {
                    return bad(format!(
                        "reps_schedule has {} entries for {rounds} rounds",
                        reps_schedule.len()
                    ));
                }
                if reps_schedule.contains(&0) {
                    return bad("reps_schedule entries must be >= 1".into());
                }
                if reps_schedule.windows(2).any(|w| w[1] < w[0]) {
                    return bad("reps_schedule must be nondecreasing".into());
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_evaluations: Option<u64>,
    pub max_wall_ms: Option<f64>,
}

impl SearchBudget {
    pub fn unlimited() -> Self {
        SearchBudget::default()
    }

    pub fn evaluations(n: u64) -> Self {
        SearchBudget {
            max_evaluations: Some(n),
            max_wall_ms: None,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.max_evaluations.is_some() || self.max_wall_ms.is_some()
    }
}

/// One attempt: which configuration, what happened, and how long it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub config: String,
    pub outcome: EvalOutcome,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub evaluated: u64,
    pub ok: u64,
    pub invalid: u64,
    pub failed: u64,
}

impl Counters {
    pub fn from_trace(trace: &[TraceEntry]) -> Self {
        let mut c = Counters::default();
        for e in trace {
            c.evaluated += 1;
            match e.outcome {
                EvalOutcome::Ok(_) => c.ok += 1,
                EvalOutcome::Invalid { .. } => c.invalid += 1,
                EvalOutcome::Failure { .. } => c.failed += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeSplit {
    pub total_compile_ms: f64,
    pub total_run_ms: f64,
    pub total_wall_ms: f64,
}

impl TimeSplit {
    pub fn from_trace(trace: &[TraceEntry]) -> Self {
        let mut t = TimeSplit::default();
        for e in trace {
            if let Some(m) = e.outcome.measurement() {
                t.total_compile_ms += m.compile_ms();
                t.total_run_ms += m.run_ms();
            }
            t.total_wall_ms += e.wall_ms;
        }
        t
    }

    /// Share of wall time spent compiling, if any wall time was recorded.
    pub fn compile_share(&self) -> Option<f64> {
        (self.total_wall_ms > 0.0).then(|| self.total_compile_ms / self.total_wall_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConfig {
    pub config: KernelConfig,
    pub median_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Tuned,
    NoViableConfiguration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Exhausted,
    EvaluationBudget,
    WallBudget,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Exhausted => "exhausted",
            StopReason::EvaluationBudget => "evaluation budget",
            StopReason::WallBudget => "wall-clock budget",
        })
    }
}

/// Outcome of a whole search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub space_digest: String,
    pub shape: ShapeKey,
    pub fingerprint: EnvFingerprint,
    pub status: ResultStatus,
    pub best: Option<BestConfig>,
    pub trace: Vec<TraceEntry>,
    pub counters: Counters,
    pub time_split: TimeSplit,
    pub strategy: SearchStrategy,
    pub budget: SearchBudget,
    pub stop_reason: StopReason,
}

impl TuningResult {
    pub fn best_median_ms(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.median_ms)
    }

    /// Checks the internal consistency of a result, e.g. one read from disk.
    pub fn check(&self) -> Result<(), String> {
        if self.counters != Counters::from_trace(&self.trace) {
            return Err("counters disagree with trace".into());
        }
        let split = TimeSplit::from_trace(&self.trace);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        if !(close(split.total_compile_ms, self.time_split.total_compile_ms)
            && close(split.total_run_ms, self.time_split.total_run_ms)
            && close(split.total_wall_ms, self.time_split.total_wall_ms))
        {
            return Err("time split disagrees with trace".into());
        }
        if self.fingerprint.space_digest != self.space_digest {
            return Err("fingerprint space digest differs from result space digest".into());
        }
        let selected = select_best(&self.trace);
        match (&self.best, selected, self.status) {
            (None, None, ResultStatus::NoViableConfiguration) => Ok(()),
            (Some(best), Some(entry), ResultStatus::Tuned) => {
                if best.config.digest() != entry.config
                    || Some(best.median_ms) != entry.outcome.median_ms()
                {
                    return Err("best does not match the fastest ok trace entry".into());
                }
                Ok(())
            }
            _ => Err("best/status inconsistent with trace".into()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("search budget of zero")]
    ZeroBudget,
    #[error("invalid strategy: {0}")]
    BadStrategy(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("evaluator fingerprint is for space {found}, search space is {expected}")]
    SpaceMismatch { expected: String, found: String },
    #[error("aborting: {hard} of {attempts} evaluations failed hard (last: {last})")]
    TooManyFailures {
        hard: u64,
        attempts: u64,
        last: String,
    },
}

/// Ordering used for best selection: median, then config digest.
fn rank(a: (f64, &str), b: (f64, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

/// The Ok entry with the smallest median; ties go to the lexicographically
/// smallest config digest.
pub fn select_best(trace: &[TraceEntry]) -> Option<&TraceEntry> {
    trace
        .iter()
        .filter_map(|e| e.outcome.median_ms().map(|m| (m, e)))
        .min_by(|(ma, a), (mb, b)| rank((*ma, &a.config), (*mb, &b.config)))
        .map(|(_, e)| e)
}

/// Shared bookkeeping for one search: trace, budget, best so far.
pub(crate) struct Tracker<'a, E: Evaluator + ?Sized> {
    evaluator: &'a mut E,
    shape: &'a ShapeKey,
    plan: EvalPlan,
    budget: SearchBudget,
    pub(crate) trace: Vec<TraceEntry>,
    wall_ms: f64,
    hard_failures: u64,
    last_hard: String,
    pub(crate) stop: Option<StopReason>,
    best: Option<BestConfig>,
}

impl<'a, E: Evaluator + ?Sized> Tracker<'a, E> {
    pub(crate) fn new(
        evaluator: &'a mut E,
        shape: &'a ShapeKey,
        plan: EvalPlan,
        budget: SearchBudget,
    ) -> Self {
        Tracker {
            evaluator,
            shape,
            plan,
            budget,
            trace: Vec::new(),
            wall_ms: 0.0,
            hard_failures: 0,
            last_hard: String::new(),
            stop: None,
            best: None,
        }
    }

    fn budget_left(&mut self) -> bool {
        if self.stop.is_some() {
            return false;
        }
        if let Some(max) = self.budget.max_evaluations {
            if self.trace.len() as u64 >= max {
                self.stop = Some(StopReason::EvaluationBudget);
                return false;
            }
        }
        if let Some(max) = self.budget.max_wall_ms {
            if self.wall_ms >= max {
                self.stop = Some(StopReason::WallBudget);
                return false;
            }
        }
        true
    }

    fn record(&mut self, config: &KernelConfig, reps: u32) -> Result<EvalOutcome, SearchError> {
        let plan = EvalPlan { reps, ..self.plan };
        let eval = self.evaluator.evaluate(config, self.shape, &plan);
        self.wall_ms += eval.wall_ms;
        if let EvalOutcome::Failure {
            transient: false,
            reason,
        } = &eval.outcome
        {
            self.hard_failures += 1;
            self.last_hard = reason.clone();
            log::warn!("evaluation of {{{config}}} failed: {reason}");
        }
        if let Some(median_ms) = eval.outcome.median_ms() {
            let better = match &self.best {
                None => true,
                Some(b) => {
                    rank(
                        (median_ms, config.digest()),
                        (b.median_ms, b.config.digest()),
                    ) == Ordering::Less
                }
            };
            if better {
                self.best = Some(BestConfig {
                    config: config.clone(),
                    median_ms,
                });
            }
        }
        self.trace.push(TraceEntry {
            config: config.digest().to_string(),
            outcome: eval.outcome.clone(),
            wall_ms: eval.wall_ms,
        });
        self.check_failure_rate(false)?;
        Ok(eval.outcome)
    }

    fn check_failure_rate(&self, at_end: bool) -> Result<(), SearchError> {
        let attempts = self.trace.len() as u64;
        let enough = at_end || attempts >= MIN_ATTEMPTS_FOR_EARLY_ABORT;
        if enough && attempts > 0 && self.hard_failures * 2 > attempts {
            return Err(SearchError::TooManyFailures {
                hard: self.hard_failures,
                attempts,
                last: self.last_hard.clone(),
            });
        }
        Ok(())
    }

    /// Evaluates `config` at `reps` repetitions, retrying a transient
    /// failure once. `None` when the budget ran out before the first attempt.
    pub(crate) fn attempt(
        &mut self,
        config: &KernelConfig,
        reps: u32,
    ) -> Result<Option<EvalOutcome>, SearchError> {
        if !self.budget_left() {
            return Ok(None);
        }
        let outcome = self.record(config, reps)?;
        if outcome.is_transient_failure() && self.budget_left() {
            log::info!("retrying {{{config}}} after transient failure");
            return self.record(config, reps).map(Some);
        }
        Ok(Some(outcome))
    }

    pub(crate) fn default_reps(&self) -> u32 {
        self.plan.reps
    }

    fn finish(
        self,
        space: &ConfigSpace,
        strategy: &SearchStrategy,
    ) -> Result<TuningResult, SearchError> {
        self.check_failure_rate(true)?;
        debug_assert_eq!(
            self.best.as_ref().map(|b| b.config.digest().to_string()),
            select_best(&self.trace).map(|e| e.config.clone())
        );
        let status = if self.best.is_some() {
            ResultStatus::Tuned
        } else {
            ResultStatus::NoViableConfiguration
        };
        Ok(TuningResult {
            space_digest: space.digest().to_string(),
            shape: self.shape.clone(),
            fingerprint: self.evaluator.fingerprint().clone(),
            status,
            best: self.best,
            counters: Counters::from_trace(&self.trace),
            time_split: TimeSplit::from_trace(&self.trace),
            trace: self.trace,
            strategy: strategy.clone(),
            budget: self.budget,
            stop_reason: self.stop.unwrap_or(StopReason::Exhausted),
        })
    }
}

fn shuffled(space: &ConfigSpace, seed: u64) -> Result<Vec<KernelConfig>, SpaceError> {
    let mut all = space.enumerate().collect::<Result<Vec<_>, _>>()?;
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(all)
}

/// Explores `space` on `shape` with `strategy` until candidates or budget run out.
pub fn run_search<E: Evaluator + ?Sized>(
    space: &ConfigSpace,
    shape: &ShapeKey,
    strategy: &SearchStrategy,
    budget: SearchBudget,
    plan: EvalPlan,
    evaluator: &mut E,
) -> Result<TuningResult, SearchError> {
    strategy.check()?;
    if budget.max_evaluations == Some(0) || budget.max_wall_ms.is_some_and(|w| w <= 0.0) {
        return Err(SearchError::ZeroBudget);
    }
    let found = &evaluator.fingerprint().space_digest;
    if found != space.digest() {
        return Err(SearchError::SpaceMismatch {
            expected: space.digest().to_string(),
            found: found.clone(),
        });
    }
    let mut tracker = Tracker::new(evaluator, shape, plan, budget);
    let reps = tracker.default_reps();
    match strategy {
        SearchStrategy::Exhaustive => {
            for config in space.enumerate() {
                let config = config?;
                if tracker.attempt(&config, reps)?.is_none() {
                    break;
                }
            }
        }
        SearchStrategy::Random { seed, n } => {
            for config in shuffled(space, *seed)?.iter().take(*n) {
                if tracker.attempt(config, reps)?.is_none() {
                    break;
                }
            }
        }
        SearchStrategy::Halving {
            seed,
            initial_fraction,
            keep_fraction,
            rounds,
            reps_schedule,
        } => {
            let pool = shuffled(space, *seed)?;
            let fraction = initial_fraction.unwrap_or(if pool.len() <= 64 { 1.0 } else { 0.5 });
            let mut sample =
                ((fraction * pool.len() as f64).ceil() as usize).clamp(1, pool.len().max(1));
            if let Some(max) = budget.max_evaluations {
                while sample > 1 && planned_evaluations(sample, *keep_fraction, *rounds) > max {
                    sample -= 1;
                }
            }
            let mut candidates: Vec<KernelConfig> = pool.into_iter().take(sample).collect();
            for (round, &round_reps) in reps_schedule.iter().enumerate() {
                if candidates.is_empty() || tracker.stop.is_some() {
                    break;
                }
                let survivors =
                    halving::run_round(&mut tracker, &candidates, round_reps, *keep_fraction)?;
                log::debug!(
                    "halving round {round}: {} candidates, {} survive",
                    candidates.len(),
                    survivors.len()
                );
                if survivors.len() <= 1 {
                    break;
                }
                candidates = survivors;
            }
        }
    }
    tracker.finish(space, strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::{ParamDomain, ParamKind, Value};
    use crate::executor::{CostProfile, Evaluation, Measurement, SyntheticEvaluator};

    fn ab_space() -> ConfigSpace {
        ConfigSpace::new(
            "ab",
            vec![
                ParamDomain::new(
                    "A",
                    ParamKind::IntList {
                        values: vec![1, 2, 3],
                    },
                ),
                ParamDomain::new(
                    "B",
                    ParamKind::IntList {
                        values: vec![1, 2, 3, 4],
                    },
                ),
            ],
            &["A < B"],
        )
        .unwrap()
    }

    fn shape() -> ShapeKey {
        ShapeKey::from_pairs([("n", 1i64)]).unwrap()
    }

    fn synthetic(extra: &str) -> SyntheticEvaluator {
        let profile = CostProfile::from_json(&format!(
            r#"{{"base": 1.0, "targets": {{"A": 2, "B": 3}} {extra}}}"#
        ))
        .unwrap();
        SyntheticEvaluator::new(profile, &ab_space()).unwrap()
    }

    fn entry(config: &str, outcome: EvalOutcome) -> TraceEntry {
        TraceEntry {
            config: config.into(),
            outcome,
            wall_ms: 0.0,
        }
    }

    fn ok(median: f64) -> EvalOutcome {
        EvalOutcome::Ok(Measurement::new(0.0, vec![median], 0).unwrap())
    }

    #[test]
    fn select_best_rules() {
        let t = [entry("b", ok(2.0)), entry("a", ok(1.5))];
        assert_eq!(select_best(&t).unwrap().config, "a");
        let tie = [entry("d", ok(1.5)), entry("c", ok(1.5))];
        assert_eq!(select_best(&tie).unwrap().config, "c");
        let none = [entry("x", EvalOutcome::Invalid { reason: "r".into() })];
        assert!(select_best(&none).is_none());
    }

    #[test]
    fn exhaustive_finds_target() {
        let mut ev = synthetic("");
        let r = run_search(
            &ab_space(),
            &shape(),
            &SearchStrategy::Exhaustive,
            SearchBudget::unlimited(),
            EvalPlan::default(),
            &mut ev,
        )
        .unwrap();
        let best = r.best.as_ref().unwrap();
        assert_eq!(
            best.config,
            KernelConfig::from_pairs([("A", 2i64), ("B", 3)])
        );
        assert_eq!(best.median_ms, 1.0);
        assert_eq!(r.counters.evaluated, 6);
        assert_eq!(r.stop_reason, StopReason::Exhausted);
        r.check().unwrap();
    }

    #[test]
    fn random_covering_whole_space_matches_exhaustive() {
        let mut ev = synthetic("");
        let r = run_search(
            &ab_space(),
            &shape(),
            &SearchStrategy::Random { seed: 7, n: 6 },
            SearchBudget::unlimited(),
            EvalPlan::default(),
            &mut ev,
        )
        .unwrap();
        assert_eq!(
            r.best.unwrap().config,
            KernelConfig::from_pairs([("A", 2i64), ("B", 3)])
        );
        let mut digests: Vec<_> = r.trace.iter().map(|e| e.config.clone()).collect();
        digests.sort();
        digests.dedup();
        assert_eq!(digests.len(), 6);
    }

    #[test]
    fn budget_clamps() {
        let mut ev = synthetic("");
        let r = run_search(
            &ab_space(),
            &shape(),
            &SearchStrategy::Exhaustive,
            SearchBudget::evaluations(1),
            EvalPlan::default(),
            &mut ev,
        )
        .unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(
            r.best.unwrap().config,
            KernelConfig::from_pairs([("A", 1i64), ("B", 2)])
        );
        assert_eq!(r.stop_reason, StopReason::EvaluationBudget);

        let mut ev = synthetic(r#", "compile_ms": 5.0"#);
        let wall = SearchBudget {
            max_evaluations: None,
            max_wall_ms: Some(20.0),
        };
        let r = run_search(
            &ab_space(),
            &shape(),
            &SearchStrategy::Exhaustive,
            wall,
            EvalPlan::default(),
            &mut ev,
        )
        .unwrap();
        assert!(r.trace.len() < 6);
        assert_eq!(r.stop_reason, StopReason::WallBudget);
        assert!(r.time_split.compile_share().unwrap() > 0.0);
    }

    #[test]
    fn zero_budget_and_bad_strategy() {
        let mut ev = synthetic("");
        let err = run_search(
            &ab_space(),
            &shape(),
            &SearchStrategy::Exhaustive,
            SearchBudget::evaluations(0),
            EvalPlan::default(),
            &mut ev,
        )
        .unwrap_err();
        assert!(matches!(err, SearchError::ZeroBudget));
        let bad = SearchStrategy::Halving {
            seed: 1,
            initial_fraction: None,
            keep_fraction: 0.5,
            rounds: 2,
            reps_schedule: vec![5, 3],
        };
        assert!(matches!(bad.check(), Err(SearchError::BadStrategy(_))));
        assert!(SearchStrategy::Random { seed: 0, n: 0 }.check().is_err());
    }

    #[test]
    fn all_invalid_means_no_viable_configuration() {
        let mut ev = synthetic(r#", "invalid_rules": ["A > 0"]"#);
        let r = run_search(
            &ab_space(),
            &shape(),
            &SearchStrategy::Exhaustive,
            SearchBudget::unlimited(),
            EvalPlan::default(),
            &mut ev,
        )
        .unwrap();
        assert_eq!(r.status, ResultStatus::NoViableConfiguration);
        assert!(r.best.is_none());
        assert_eq!(r.counters.invalid, 6);
        r.check().unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains(r#""status":"no_viable_configuration""#));
    }

    /// Fails transiently on the first attempt of every config whose A is 2.
    struct Flaky {
        inner: SyntheticEvaluator,
        seen: std::collections::HashSet<String>,
        hard: bool,
    }

    impl Evaluator for Flaky {
        fn fingerprint(&self) -> &EnvFingerprint {
            self.inner.fingerprint()
        }

        fn evaluate(
            &mut self,
            config: &KernelConfig,
            shape: &ShapeKey,
            plan: &EvalPlan,
        ) -> Evaluation {
            if self.hard {
                return Evaluation {
                    outcome: EvalOutcome::failure("boom", false),
                    wall_ms: 1.0,
                };
            }
            if config.get("A") == Some(&Value::Int(2)) && self.seen.insert(config.digest().into()) {
                return Evaluation {
                    outcome: EvalOutcome::failure("timeout", true),
                    wall_ms: 1.0,
                };
            }
            self.inner.evaluate(config, shape, plan)
        }
    }

    #[test]
    fn transient_failures_are_retried_once() {
        let mut ev = Flaky {
            inner: synthetic(""),
            seen: Default::default(),
            hard: false,
        };
        let r = run_search(
            &ab_space(),
            &shape(),
            &SearchStrategy::Exhaustive,
            SearchBudget::unlimited(),
            EvalPlan::default(),
            &mut ev,
        )
        .unwrap();
        // (2,3) and (2,4) each fail once, then succeed.
        assert_eq!(r.counters.evaluated, 8);
        assert_eq!(r.counters.failed, 2);
        assert_eq!(r.counters.ok, 6);
        assert_eq!(
            r.best.as_ref().unwrap().config,
            KernelConfig::from_pairs([("A", 2i64), ("B", 3)])
        );
        r.check().unwrap();
    }

    #[test]
    fn mostly_hard_failures_abort() {
        let mut ev = Flaky {
            inner: synthetic(""),
            seen: Default::default(),
            hard: true,
        };
        let err = run_search(
            &ab_space(),
            &shape(),
            &SearchStrategy::Exhaustive,
            SearchBudget::unlimited(),
            EvalPlan::default(),
            &mut ev,
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                SearchError::TooManyFailures {
                    hard: 6,
                    attempts: 6,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn check_catches_tampering() {
        let mut ev = synthetic("");
        let mut r = run_search(
            &ab_space(),
            &shape(),
            &SearchStrategy::Exhaustive,
            SearchBudget::unlimited(),
            EvalPlan::default(),
            &mut ev,
        )
        .unwrap();
        r.counters.ok += 1;
        assert!(r.check().is_err());
        r.counters.ok -= 1;
        r.best.as_mut().unwrap().median_ms = 0.5;
        assert!(r.check().is_err());
    }

    #[test]
    fn space_mismatch_is_rejected() {
        let other = ConfigSpace::new(
            "other",
            vec![ParamDomain::new("A", ParamKind::Boolean)],
            &[] as &[&str],
        )
        .unwrap();
        let mut ev = synthetic("");
        let err = run_search(
            &other,
            &shape(),
            &SearchStrategy::Exhaustive,
            SearchBudget::unlimited(),
            EvalPlan::default(),
            &mut ev,
        )
        .unwrap_err();
        assert!(matches!(err, SearchError::SpaceMismatch { .. }));
    }
}
