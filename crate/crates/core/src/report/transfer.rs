use serde::Serialize;

use crate::configspace::{ConfigSpace, KernelConfig, ShapeKey};
use crate::executor::{EvalOutcome, EvalPlan, Evaluator};
use crate::search::TuningResult;

use super::ReportError;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TransferStatus {
    Measured,
    /// The foreign configuration is not valid on the target.
    Invalid {
        reason: String,
    },
    /// The source platform found no viable configuration for the shape.
    NoSourceConfig,
}

/// One shape of a cross-platform transfer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferCell {
    pub source_platform: String,
    pub target_platform: String,
    pub shape: ShapeKey,
    pub config: Option<KernelConfig>,
    pub native_best_ms: Option<f64>,
    pub transferred_ms: Option<f64>,
    /// `native_best_ms / transferred_ms`.
    pub relative_perf: Option<f64>,
    #[serde(flatten)]
    pub status: TransferStatus,
}

impl TransferCell {
    pub fn is_invalid(&self) -> bool {
        matches!(self.status, TransferStatus::Invalid { .. })
    }

    /// Columns `source_platform,target_platform,shape,config,native_best_ms,transferred_ms,relative_perf,status,reason`.
    pub fn csv(cells: &[TransferCell]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "source_platform",
            "target_platform",
            "shape",
            "config",
            "native_best_ms",
            "transferred_ms",
            "relative_perf",
            "status",
            "reason",
        ])
        .expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in cells {
            let (status, reason) = match &c.status {
                TransferStatus::Measured => ("measured", ""),
                TransferStatus::Invalid { reason } => ("invalid", reason.as_str()),
                TransferStatus::NoSourceConfig => ("no_source_config", ""),
            };
            w.write_record([
                c.source_platform.as_str(),
                &c.target_platform,
                &c.shape.to_string(),
                &c.config.as_ref().map(|k| k.to_string()).unwrap_or_default(),
                &opt(c.native_best_ms),
                &opt(c.transferred_ms),
                &opt(c.relative_perf),
                status,
                reason,
            ])
            .expect("in-memory write");
        }
        super::finish_csv(w)
    }
}

fn find<'a>(results: &'a [TuningResult], shape: &ShapeKey) -> Option<&'a TuningResult> {
    results.iter().find(|r| &r.shape == shape)
}

/// Measures the source platform's best configurations on the target.
///
/// `from` holds the source platform's results and `to` the target's native
/// results, one per shape. `evaluator` measures on the target platform.
pub fn transfer_analysis<E: Evaluator + ?Sized>(
    from: &[TuningResult],
    space: &ConfigSpace,
    shapes: &[ShapeKey],
    evaluator: &mut E,
    to: &[TuningResult],
    plan: EvalPlan,
) -> Result<Vec<TransferCell>, ReportError> {
    let err = |m: String| ReportError::Transfer(m);
    for r in from.iter().chain(to) {
        if r.space_digest != space.digest() {
            return Err(err(format!(
                "result for {} was tuned on space {}, not {}",
                r.shape,
                r.space_digest,
                space.digest()
            )));
        }
    }
    let target_fp = evaluator.fingerprint().clone();
    if let Some(r) = to.iter().find(|r| r.fingerprint != target_fp) {
        return Err(err(format!(
            "target result for {} was measured on {}, evaluator is {}",
            r.shape,
            r.fingerprint.digest(),
            target_fp.digest()
        )));
    }
    let target_platform = target_fp.digest();
    let mut cells = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let src = find(from, shape).ok_or_else(|| err(format!("no source result for {shape}")))?;
        let native = find(to, shape).ok_or_else(|| err(format!("no target result for {shape}")))?;
        let mut cell = TransferCell {
            source_platform: src.fingerprint.digest(),
            target_platform: target_platform.clone(),
            shape: shape.clone(),
            config: src.best.as_ref().map(|b| b.config.clone()),
            native_best_ms: native.best_median_ms(),
            transferred_ms: None,
            relative_perf: None,
            status: TransferStatus::NoSourceConfig,
        };
        let Some(config) = cell.config.clone() else {
            cells.push(cell);
            continue;
        };
        let validation = space
            .validate(&config)
            .map_err(|e| err(format!("{shape}: {e}")))?;
        if let Some(v) = validation.violations.first() {
            cell.status = TransferStatus::Invalid {
                reason: v.to_string(),
            };
            cells.push(cell);
            continue;
        }
        let mut outcome = evaluator.evaluate(&config, shape, &plan).outcome;
        if outcome.is_transient_failure() {
            outcome = evaluator.evaluate(&config, shape, &plan).outcome;
        }
        match outcome {
            EvalOutcome::Ok(m) => {
                let t = m.median_ms();
                cell.transferred_ms = Some(t);
                cell.relative_perf = cell.native_best_ms.map(|n| n / t);
                cell.status = TransferStatus::Measured;
            }
            EvalOutcome::Invalid { reason } => cell.status = TransferStatus::Invalid { reason },
            EvalOutcome::Failure { reason, .. } => {
                return Err(err(format!(
                    "evaluating {config} on {shape} failed: {reason}"
                )))
            }
        }
        cells.push(cell);
    }
    Ok(cells)
}
