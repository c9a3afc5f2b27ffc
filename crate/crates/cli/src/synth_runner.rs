//! A runner serving the wire protocol from a synthetic cost profile, with
//! optional fault injection for exercising the executor's error handling.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use ktune_core::configspace::{KernelConfig, ShapeKey};
use ktune_core::digest::sha256_hex;
use ktune_core::executor::protocol::{hello_reply, parse_request, result_reply, Request};
use ktune_core::executor::{EvalOutcome, EvalPlan, Evaluator, SyntheticEvaluator};
use serde_json::json;

use crate::exit::{CmdResult, Failure, OK};
use crate::inputs;
use crate::SynthRunnerArgs;

#[derive(Debug, Default, Clone, PartialEq)]
struct Faults {
    garbled: bool,
    garbled_hello: bool,
    version: bool,
    silence: bool,
    hello_silence: bool,
    error: bool,
    bad_reps: bool,
    bad_shutdown: bool,
    die_after: Option<u64>,
    transient_rate: Option<f64>,
}

impl Faults {
    fn parse(specs: &[String]) -> Result<Self, Failure> {
        let mut f = Faults::default();
        for spec in specs {
            let (name, arg) = match spec.split_once('=') {
                Some((n, a)) => (n, Some(a)),
                None => (spec.as_str(), None),
            };
            let bad = || Failure::usage(format!("bad fault `{spec}`"));
            match (name, arg) {
                ("garbled", None) => f.garbled = true,
                ("garbled-hello", None) => f.garbled_hello = true,
                ("version", None) => f.version = true,
                ("silence", None) => f.silence = true,
                ("hello-silence", None) => f.hello_silence = true,
                ("error", None) => f.error = true,
                ("bad-reps", None) => f.bad_reps = true,
                ("bad-shutdown", None) => f.bad_shutdown = true,
                ("die-after", Some(n)) => f.die_after = Some(n.parse().map_err(|_| bad())?),
                ("transient-rate", Some(x)) => {
                    let rate: f64 = x.parse().map_err(|_| bad())?;
                    if !(0.0..=1.0).contains(&rate) {
                        return Err(bad());
                    }
                    f.transient_rate = Some(rate);
                }
                _ => return Err(bad()),
            }
        }
        Ok(f)
    }
}

/// Decides whether a request suffers a transient fault. Each (config, shape)
/// pair faults at most once; the state directory survives restarts.
struct TransientFaults {
    rate: f64,
    state: PathBuf,
}

impl TransientFaults {
    fn strikes(&self, config: &KernelConfig, shape: &ShapeKey) -> bool {
        let id = sha256_hex(format!("{}:{}", config.digest(), shape.digest()).as_bytes());
        let draw = u64::from_str_radix(&id[..16], 16).expect("hex digest") as f64 / u64::MAX as f64;
        if draw >= self.rate {
            return false;
        }
        let marker = self.state.join(&id[..32]);
        if marker.exists() {
            return false;
        }
        fs::write(&marker, b"").is_ok()
    }
}

fn emit(out: &mut impl Write, line: &str) -> io::Result<()> {
    writeln!(out, "{line}")?;
    out.flush()
}

pub fn run(args: SynthRunnerArgs) -> CmdResult {
    let space = inputs::load_space(&args.space)?;
    let profile = inputs::load_profile(&args.profile)?;
    let mut evaluator = SyntheticEvaluator::new(profile, &space)
        .map_err(|e| Failure::hard(format!("{}: {e}", args.profile.display())))?;
    let faults = Faults::parse(&args.faults)?;
    let transient = match (faults.transient_rate, &args.fault_state) {
        (Some(rate), Some(dir)) => {
            fs::create_dir_all(dir)?;
            Some(TransientFaults {
                rate,
                state: dir.clone(),
            })
        }
        (Some(_), None) => return Err(Failure::usage("transient-rate needs --fault-state")),
        (None, _) => None,
    };
    let identity = evaluator.profile().identity();

    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut served = 0u64;
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_request(&line) {
            Err(e) => {
                let reply = json!({"type": "result", "status": "error", "reason": e.to_string()});
                emit(&mut out, &reply.to_string())?;
            }
            Ok(Request::Hello { .. }) => {
                if faults.hello_silence {
                    continue;
                }
                if faults.garbled_hello {
                    emit(&mut out, "{\"type\":\"hello\",\"protocol\":")?;
                    continue;
                }
                let mut reply = hello_reply(&identity, &["evaluate"]);
                if faults.version {
                    reply["protocol"] = json!(2);
                }
                emit(&mut out, &reply.to_string())?;
            }
            Ok(Request::Evaluate {
                config,
                shape,
                warmups,
                reps,
            }) => {
                if faults.die_after.is_some_and(|n| served >= n) {
                    eprintln!("synth-runner: injected death after {served} evaluations");
                    std::process::exit(3);
                }
                served += 1;
                if faults.silence
                    || transient
                        .as_ref()
                        .is_some_and(|t| t.strikes(&config, &shape))
                {
                    continue;
                }
                if faults.garbled {
                    emit(
                        &mut out,
                        "{\"type\":\"result\",\"status\":\"ok\",\"latencies_ms\":[1.0,",
                    )?;
                    continue;
                }
                if faults.error {
                    let reply =
                        json!({"type": "result", "status": "error", "reason": "injected error"});
                    emit(&mut out, &reply.to_string())?;
                    continue;
                }
                let plan = EvalPlan {
                    warmups,
                    reps,
                    timeout_ms: 0,
                };
                let outcome = evaluator.evaluate(&config, &shape, &plan).outcome;
                let mut reply = result_reply(&outcome);
                if faults.bad_reps && matches!(outcome, EvalOutcome::Ok(_)) {
                    if let Some(list) = reply["latencies_ms"].as_array_mut() {
                        list.pop();
                    }
                }
                emit(&mut out, &reply.to_string())?;
            }
            Ok(Request::Shutdown) => {
                if faults.bad_shutdown {
                    std::process::exit(5);
                }
                return Ok(OK);
            }
        }
    }
    Ok(OK)
}
