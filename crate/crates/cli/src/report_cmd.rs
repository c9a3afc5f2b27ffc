use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use ktune_core::configspace::ShapeKey;
use ktune_core::executor::EvalPlan;
use ktune_core::report::{
    normalize, relative_cdf, transfer_analysis, Anchor, BenchRow, BenchmarkTable, TransferCell,
};

use crate::exit::{CmdResult, Failure, OK};
use crate::inputs::{self, Source};
use crate::{AnchorArg, ReportCmd};

fn load_table(path: &Path) -> Result<BenchmarkTable, Failure> {
    let text = inputs::read_file(path)?;
    BenchmarkTable::from_csv(&text).map_err(|e| Failure::hard(format!("{}: {e}", path.display())))
}

/// Rows of `wanted`, or of the only implementation in the table.
fn pick(
    table: &BenchmarkTable,
    wanted: Option<&str>,
    path: &Path,
) -> Result<Vec<BenchRow>, Failure> {
    let impls: BTreeSet<&str> = table.rows().iter().map(|r| r.impl_name.as_str()).collect();
    match wanted {
        Some(name) => {
            if !impls.contains(name) {
                return Err(Failure::not_found(format!(
                    "{}: no rows for impl `{name}`",
                    path.display()
                )));
            }
            Ok(table.select(name))
        }
        None if impls.len() == 1 => Ok(table.rows().to_vec()),
        None => Err(Failure::usage(format!(
            "{} holds several implementations ({}); choose one",
            path.display(),
            impls.into_iter().collect::<Vec<_>>().join(", ")
        ))),
    }
}

pub fn run(cmd: ReportCmd) -> CmdResult {
    match cmd {
        ReportCmd::Normalize {
            input,
            baseline,
            x_key,
            anchor,
            out,
            json,
        } => {
            let table = load_table(&input)?;
            let x_key = match x_key {
                Some(k) => k,
                None => {
                    let dims: BTreeSet<&String> = table
                        .rows()
                        .iter()
                        .flat_map(|r| r.shape.dims().keys())
                        .collect();
                    match dims.into_iter().collect::<Vec<_>>().as_slice() {
                        [only] => (*only).clone(),
                        _ => return Err(Failure::usage("several shape columns; pass --x-key")),
                    }
                }
            };
            let anchor = match anchor {
                AnchorArg::PerGroup => Anchor::PerGroup,
                AnchorArg::Global => Anchor::Global,
            };
            let normalized = normalize(&table, &baseline, &x_key, anchor)?;
            let text = if json {
                serde_json::to_string_pretty(&normalized)? + "\n"
            } else {
                normalized.to_csv()
            };
            inputs::write_output(out.as_deref(), &text)?;
            Ok(OK)
        }
        ReportCmd::Cdf {
            baseline,
            candidate,
            baseline_impl,
            candidate_impl,
            out,
            json,
        } => {
            let base_table = load_table(&baseline)?;
            let cand_table = load_table(&candidate)?;
            let base = pick(&base_table, baseline_impl.as_deref(), &baseline)?;
            let cand = pick(&cand_table, candidate_impl.as_deref(), &candidate)?;
            let cdf = relative_cdf(&cand, &base)?;
            let text = if json {
                serde_json::to_string_pretty(&cdf)? + "\n"
            } else {
                cdf.to_csv()
            };
            inputs::write_output(out.as_deref(), &text)?;
            let s = &cdf.summary;
            eprintln!(
                "{} shapes: mean {:.4}, min {:.4}, max {:.4}, candidate at least as fast on {:.1}%",
                s.count,
                s.mean,
                s.min,
                s.max,
                s.frac_ge_1 * 100.0
            );
            Ok(OK)
        }
        ReportCmd::Transfer {
            from,
            to,
            space,
            runner,
            synthetic,
            shapes,
            warmups,
            reps,
            timeout_ms,
            out,
            json,
        } => {
            let space = inputs::load_space(&space)?;
            let mut source = Vec::new();
            for p in &from {
                source.extend(inputs::load_results(p)?);
            }
            let mut target = Vec::new();
            for p in &to {
                target.extend(inputs::load_results(p)?);
            }
            let shapes: Vec<ShapeKey> = if shapes.is_empty() {
                let mut seen = BTreeSet::new();
                source
                    .iter()
                    .filter(|r| seen.insert(r.shape.digest().to_string()))
                    .map(|r| r.shape.clone())
                    .collect()
            } else {
                shapes
                    .iter()
                    .map(|s| inputs::parse_shape(s))
                    .collect::<Result<_, _>>()?
            };
            let src = match (runner, synthetic) {
                (Some(r), _) => Source::Runner(r),
                (None, Some(p)) => Source::Synthetic(p),
                (None, None) => return Err(Failure::usage("give --runner or --synthetic")),
            };
            let mut plan = EvalPlan::default();
            plan.warmups = warmups.unwrap_or(plan.warmups);
            plan.reps = reps.unwrap_or(plan.reps);
            plan.timeout_ms = timeout_ms.unwrap_or(plan.timeout_ms);
            let mut evaluator = inputs::open_evaluator(&src, &space, Duration::from_secs(10))?;
            let cells =
                transfer_analysis(&source, &space, &shapes, evaluator.as_mut(), &target, plan)?;
            let text = if json {
                serde_json::to_string_pretty(&cells)? + "\n"
            } else {
                TransferCell::csv(&cells)
            };
            inputs::write_output(out.as_deref(), &text)?;
            Ok(OK)
        }
    }
}
