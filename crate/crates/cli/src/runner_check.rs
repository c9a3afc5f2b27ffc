use std::time::Duration;

use ktune_core::executor::protocol::{self, Reply, Request, PROTOCOL_VERSION};
use ktune_core::executor::{EvalOutcome, LineEvent, RunnerCommand, RunnerIdentity, RunnerProcess};
use serde::Serialize;
use serde_json::Value as Json;

use crate::exit::{CmdResult, Failure, HARD, OK};
use crate::inputs;
use crate::RunnerCheckArgs;

const PROBE_WARMUPS: u32 = 1;
const PROBE_REPS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Serialize)]
struct Assertion {
    name: &'static str,
    status: Status,
    detail: String,
}

#[derive(Default)]
struct Report {
    items: Vec<Assertion>,
}

impl Report {
    fn check(&mut self, name: &'static str, ok: bool, detail: impl Into<String>) -> bool {
        self.items.push(Assertion {
            name,
            status: if ok { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        });
        ok
    }

    fn skip(&mut self, names: &[&'static str]) {
        for &name in names {
            self.items.push(Assertion {
                name,
                status: Status::Skip,
                detail: "earlier assertion failed".into(),
            });
        }
    }

    fn failed(&self) -> usize {
        self.items
            .iter()
            .filter(|a| a.status != Status::Pass)
            .count()
    }
}

const HELLO_CHECKS: [&str; 5] = [
    "hello.reply",
    "hello.json",
    "hello.version",
    "hello.fingerprint",
    "hello.capabilities",
];
const EVALUATE_CHECKS: [&str; 3] = ["evaluate.reply", "evaluate.json", "evaluate.outcome"];

fn receive(process: &RunnerProcess, timeout: Duration) -> Result<String, String> {
    match process.recv(timeout) {
        Some(LineEvent::Line(line)) => Ok(line),
        Some(LineEvent::Eof) => Err("runner closed its output".into()),
        Some(LineEvent::Error(e)) => Err(format!("read error: {e}")),
        None => Err(format!("no reply within {} ms", timeout.as_millis())),
    }
}

fn check_hello(report: &mut Report, process: &RunnerProcess, timeout: Duration) -> bool {
    let line = match receive(process, timeout) {
        Ok(l) => l,
        Err(e) => {
            report.check("hello.reply", false, e);
            report.skip(&HELLO_CHECKS[1..]);
            return false;
        }
    };
    report.check("hello.reply", true, "");
    let value: Json = match serde_json::from_str(&line) {
        Ok(v @ Json::Object(_)) if v.get("type") == Some(&Json::from("hello")) => v,
        Ok(_) => {
            report.check("hello.json", false, format!("not a hello object: {line}"));
            report.skip(&HELLO_CHECKS[2..]);
            return false;
        }
        Err(e) => {
            report.check("hello.json", false, format!("invalid JSON ({e}): {line}"));
            report.skip(&HELLO_CHECKS[2..]);
            return false;
        }
    };
    report.check("hello.json", true, "");
    let version = value.get("protocol").and_then(Json::as_u64);
    let version_ok = report.check(
        "hello.version",
        version == Some(u64::from(PROTOCOL_VERSION)),
        match version {
            Some(v) => format!("runner speaks {v}, framework speaks {PROTOCOL_VERSION}"),
            None => "no numeric `protocol` field".to_string(),
        },
    );
    let fp = value.get("fingerprint").cloned().unwrap_or(Json::Null);
    let missing: Vec<&str> = RunnerIdentity::FIELDS
        .iter()
        .copied()
        .filter(|f| {
            fp.get(f)
                .and_then(Json::as_str)
                .is_none_or(|s| s.trim().is_empty())
        })
        .collect();
    let fp_ok = report.check(
        "hello.fingerprint",
        missing.is_empty(),
        if missing.is_empty() {
            String::new()
        } else {
            format!("missing or empty: {}", missing.join(", "))
        },
    );
    let caps: Vec<&str> = value
        .get("capabilities")
        .and_then(Json::as_array)
        .map(|a| a.iter().filter_map(Json::as_str).collect())
        .unwrap_or_default();
    let caps_ok = report.check(
        "hello.capabilities",
        caps.contains(&"evaluate"),
        format!("capabilities {caps:?}"),
    );
    let parsed_ok = protocol::parse_reply(&line).is_ok();
    version_ok && fp_ok && caps_ok && parsed_ok
}

fn check_evaluate(
    report: &mut Report,
    process: &mut RunnerProcess,
    request: &Request,
    timeout: Duration,
) -> bool {
    if let Err(e) = process.send(request) {
        report.check(
            "evaluate.reply",
            false,
            format!("could not send request: {e}"),
        );
        report.skip(&EVALUATE_CHECKS[1..]);
        return false;
    }
    let line = match receive(process, timeout) {
        Ok(l) => l,
        Err(e) => {
            report.check("evaluate.reply", false, e);
            report.skip(&EVALUATE_CHECKS[1..]);
            return false;
        }
    };
    report.check("evaluate.reply", true, "");
    let reply = match protocol::parse_reply(&line) {
        Ok(Reply::Result(r)) => r,
        Ok(Reply::Hello(_)) => {
            report.check(
                "evaluate.json",
                false,
                "hello received in reply to evaluate",
            );
            report.skip(&EVALUATE_CHECKS[2..]);
            return false;
        }
        Err(e) => {
            report.check("evaluate.json", false, format!("{e}: {line}"));
            report.skip(&EVALUATE_CHECKS[2..]);
            return false;
        }
    };
    report.check("evaluate.json", true, "");
    match reply.into_outcome(PROBE_WARMUPS, PROBE_REPS) {
        EvalOutcome::Ok(m) => report.check(
            "evaluate.outcome",
            true,
            format!("ok, median {:.4} ms over {} reps", m.median_ms(), m.reps()),
        ),
        EvalOutcome::Invalid { reason } => report.check(
            "evaluate.outcome",
            true,
            format!("probe reported invalid: {reason}"),
        ),
        EvalOutcome::Failure { reason, .. } => report.check("evaluate.outcome", false, reason),
    }
}

pub fn run(args: RunnerCheckArgs) -> CmdResult {
    let space = inputs::load_space(&args.space)?;
    let shape = inputs::parse_shape(&args.shape)?;
    let probe = space
        .enumerate()
        .next()
        .ok_or_else(|| Failure::usage("the space has no valid configuration to probe with"))?
        .map_err(Failure::hard)?;
    let command = match (&args.runner, &args.synthetic) {
        (Some(r), _) => inputs::runner_command(r)?,
        (None, Some(profile)) => {
            let exe = std::env::current_exe()?;
            RunnerCommand::new(
                exe.to_string_lossy(),
                [
                    "synth-runner".to_string(),
                    "--profile".into(),
                    profile.to_string_lossy().into_owned(),
                    "--space".into(),
                    args.space.to_string_lossy().into_owned(),
                ],
            )
        }
        (None, None) => return Err(Failure::usage("give --runner or --synthetic")),
    };
    let timeout = Duration::from_millis(args.timeout_ms);
    let mut report = Report::default();

    let mut process = match RunnerProcess::spawn(&command) {
        Ok(p) => {
            report.check("spawn", true, command.to_string());
            p
        }
        Err(e) => {
            report.check("spawn", false, format!("{command}: {e}"));
            report.skip(&HELLO_CHECKS);
            report.skip(&EVALUATE_CHECKS);
            report.skip(&["shutdown.exit"]);
            return finish(report, args.json);
        }
    };
    let hello_ok = match process.send(&Request::Hello {
        protocol: PROTOCOL_VERSION,
    }) {
        Ok(()) => check_hello(&mut report, &process, timeout),
        Err(e) => {
            report.check("hello.reply", false, format!("could not send hello: {e}"));
            report.skip(&HELLO_CHECKS[1..]);
            false
        }
    };
    if hello_ok {
        let request = Request::Evaluate {
            config: probe,
            shape,
            warmups: PROBE_WARMUPS,
            reps: PROBE_REPS,
        };
        check_evaluate(&mut report, &mut process, &request, timeout);
        let _ = process.send(&Request::Shutdown);
        process.close_stdin();
        match process.wait_exit(timeout) {
            Ok(Some(status)) => {
                report.check("shutdown.exit", status.success(), status.to_string());
            }
            Ok(None) => {
                report.check("shutdown.exit", false, "runner did not exit after shutdown");
            }
            Err(e) => {
                report.check("shutdown.exit", false, e.to_string());
            }
        }
    } else {
        report.skip(&EVALUATE_CHECKS);
        report.skip(&["shutdown.exit"]);
    }
    process.kill();
    let tail = process.stderr_tail();
    if !tail.is_empty() {
        log::info!("runner stderr:\n{}", tail.join("\n"));
    }
    finish(report, args.json)
}

fn finish(report: Report, json: bool) -> CmdResult {
    if json {
        println!("{}", serde_json::to_string_pretty(&report.items)?);
    } else {
        for a in &report.items {
            let tag = match a.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            if a.detail.is_empty() {
                println!("{tag} {}", a.name);
            } else {
                println!("{tag} {}: {}", a.name, a.detail);
            }
        }
    }
    let failed = report.failed();
    if failed == 0 {
        Ok(OK)
    } else {
        eprintln!("{failed} of {} assertions did not pass", report.items.len());
        Ok(HARD)
    }
}
