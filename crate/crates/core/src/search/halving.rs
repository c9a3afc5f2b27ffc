use crate::configspace::{KernelConfig, ShapeKey};
use crate::executor::{EvalPlan, Evaluator};

use super::{rank, SearchBudget, SearchError, TraceEntry, Tracker};

/// `ceil(fraction * n)` without float noise turning 3.0000000000000004 into 4.
fn keep_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Evaluations a halving schedule needs when every candidate succeeds.
pub fn planned_evaluations(sample: usize, keep_fraction: f64, rounds: usize) -> u64 {
    let mut n = sample;
    let mut total = 0u64;
    for _ in 0..rounds {
        if n == 0 {
            break;
        }
        total += n as u64;
        n = keep_count(keep_fraction, n);
        if n <= 1 {
            break;
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub survivors: Vec<KernelConfig>,
    pub entries: Vec<TraceEntry>,
}

pub(super) fn run_round<E: Evaluator + ?Sized>(
    tracker: &mut Tracker<'_, E>,
    candidates: &[KernelConfig],
    reps: u32,
    keep_fraction: f64,
) -> Result<Vec<KernelConfig>, SearchError> {
    let mut ok: Vec<(f64, &KernelConfig)> = Vec::new();
    for config in candidates {
        match tracker.attempt(config, reps)? {
            None => break,
            Some(outcome) => {
                if let Some(median) = outcome.median_ms() {
                    ok.push((median, config));
                }
            }
        }
    }
    ok.sort_by(|a, b| rank((a.0, a.1.digest()), (b.0, b.1.digest())));
    let keep = keep_count(keep_fraction, ok.len());
    Ok(ok.into_iter().take(keep).map(|(_, c)| c.clone()).collect())
}

/// Evaluates every candidate at `reps` repetitions and keeps the fastest
/// `ceil(keep_fraction * ok_count)`. Invalid and failed candidates never
/// survive.
pub fn halving_round<E: Evaluator + ?Sized>(
    candidates: &[KernelConfig],
    shape: &ShapeKey,
    plan: EvalPlan,
    reps: u32,
    keep_fraction: f64,
    evaluator: &mut E,
) -> Result<RoundResult, SearchError> {
    if !(keep_fraction > 0.0 && keep_fraction < 1.0) {
        return Err(SearchError::BadStrategy(format!(
            "keep_fraction {keep_fraction} outside (0, 1)"
        )));
    }
    let mut tracker = Tracker::new(evaluator, shape, plan, SearchBudget::unlimited());
    let survivors = run_round(&mut tracker, candidates, reps, keep_fraction)?;
    tracker.check_failure_rate(true)?;
    Ok(RoundResult {
        survivors,
        entries: tracker.trace,
    })
}
