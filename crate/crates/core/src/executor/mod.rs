//! Empirical evaluation of one (configuration, shape) pair.
//!
//! An [`Evaluator`] is either a [`RunnerSession`] driving an external
//! benchmark runner over the JSON Lines protocol in [`protocol`], or a
//! [`SyntheticEvaluator`] backed by a deterministic cost model.
//! Evaluations against one evaluator are strictly sequential.

pub mod protocol;
mod runner;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::configspace::{KernelConfig, ShapeKey};
use crate::digest::digest_of;

pub use runner::{LineEvent, RunnerCommand, RunnerError, RunnerProcess, RunnerSession};
pub use synthetic::{
    synthetic_latency, BaseModel, CostProfile, ModelError, NoiseSpec, ProfileError,
    SyntheticEvaluator,
};

/// Repetition plan for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub warmups: u32,
    pub reps: u32,
    pub timeout_ms: u64,
}

impl Default for EvalPlan {
    fn default() -> Self {
        EvalPlan {
            warmups: 3,
            reps: 10,
            timeout_ms: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasurementError {
    #[error("measurement has no latencies")]
    Empty,
    #[error("latency #{index} is {value}, expected a positive finite duration")]
    BadLatency { index: usize, value: f64 },
    #[error("compile time {0} is not a non-negative finite duration")]
    BadCompileTime(f64),
    #[error("reps field says {declared} but {actual} latencies are present")]
    RepsMismatch { declared: usize, actual: usize },
}

/// Timing of one successful evaluation, with compile time kept apart from
/// per-repetition run time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    compile_ms: f64,
    latencies_ms: Vec<f64>,
    warmups: u32,
    reps: usize,
    median_ms: f64,
}

impl Measurement {
    pub fn new(
        compile_ms: f64,
        latencies_ms: Vec<f64>,
        warmups: u32,
    ) -> Result<Self, MeasurementError> {
        if !(compile_ms.is_finite() && compile_ms >= 0.0) {
            return Err(MeasurementError::BadCompileTime(compile_ms));
        }
        if latencies_ms.is_empty() {
            return Err(MeasurementError::Empty);
        }
        if let Some((index, &value)) = latencies_ms
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(MeasurementError::BadLatency { index, value });
        }
        let median_ms = median(&latencies_ms);
        Ok(Measurement {
            compile_ms,
            reps: latencies_ms.len(),
            latencies_ms,
            warmups,
            median_ms,
        })
    }

    pub fn compile_ms(&self) -> f64 {
        self.compile_ms
    }

    pub fn latencies_ms(&self) -> &[f64] {
        &self.latencies_ms
    }

    pub fn warmups(&self) -> u32 {
        self.warmups
    }

    pub fn reps(&self) -> usize {
        self.reps
    }

    pub fn median_ms(&self) -> f64 {
        self.median_ms
    }

    pub fn run_ms(&self) -> f64 {
        self.latencies_ms.iter().sum()
    }
}

#[derive(Deserialize)]
struct RawMeasurement {
    compile_ms: f64,
    latencies_ms: Vec<f64>,
    warmups: u32,
    reps: Option<usize>,
}

impl<'de> Deserialize<'de> for Measurement {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawMeasurement::deserialize(deserializer)?;
        if let Some(declared) = raw.reps {
            if declared != raw.latencies_ms.len() {
                return Err(serde::de::Error::custom(MeasurementError::RepsMismatch {
                    declared,
                    actual: raw.latencies_ms.len(),
                }));
            }
        }
        Measurement::new(raw.compile_ms, raw.latencies_ms, raw.warmups)
            .map_err(serde::de::Error::custom)
    }
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

/// Result of evaluating one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum EvalOutcome {
    Ok(Measurement),
    /// The configuration cannot run on this platform.
    Invalid {
        reason: String,
    },
    /// Crash, timeout, or protocol breach.
    Failure {
        reason: String,
        transient: bool,
    },
}

impl EvalOutcome {
    pub fn measurement(&self) -> Option<&Measurement> {
        match self {
            EvalOutcome::Ok(m) => Some(m),
            _ => None,
        }
    }

    pub fn median_ms(&self) -> Option<f64> {
        self.measurement().map(Measurement::median_ms)
    }

    pub fn is_transient_failure(&self) -> bool {
        matches!(
            self,
            EvalOutcome::Failure {
                transient: true,
                ..
            }
        )
    }

    pub fn failure(reason: impl Into<String>, transient: bool) -> Self {
        EvalOutcome::Failure {
            reason: reason.into(),
            transient,
        }
    }
}

/// An outcome together with the wall time the evaluation consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outcome: EvalOutcome,
    pub wall_ms: f64,
}

/// What a runner reports about itself in its hello reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerIdentity {
    pub device_name: String,
    pub driver_version: String,
    pub toolchain_version: String,
    pub runner_id: String,
    pub runner_version: String,
    pub kernel_source_digest: String,
}

impl RunnerIdentity {
    pub const FIELDS: [&'static str; 6] = [
        "device_name",
        "driver_version",
        "toolchain_version",
        "runner_id",
        "runner_version",
        "kernel_source_digest",
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("fingerprint field `{0}` is empty")]
pub struct EmptyFieldError(pub &'static str);

/// The environment under which a tuning result is valid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvFingerprint {
    pub device_name: String,
    pub driver_version: String,
    pub toolchain_version: String,
    pub runner_id: String,
    pub runner_version: String,
    pub kernel_source_digest: String,
    pub space_digest: String,
    pub protocol_version: u32,
}

impl EnvFingerprint {
    pub fn new(
        identity: RunnerIdentity,
        space_digest: impl Into<String>,
        protocol_version: u32,
    ) -> Result<Self, EmptyFieldError> {
        let fp = EnvFingerprint {
            device_name: identity.device_name,
            driver_version: identity.driver_version,
            toolchain_version: identity.toolchain_version,
            runner_id: identity.runner_id,
            runner_version: identity.runner_version,
            kernel_source_digest: identity.kernel_source_digest,
            space_digest: space_digest.into(),
            protocol_version,
        };
        fp.check()?;
        Ok(fp)
    }

    pub fn check(&self) -> Result<(), EmptyFieldError> {
        let fields = [
            ("device_name", &self.device_name),
            ("driver_version", &self.driver_version),
            ("toolchain_version", &self.toolchain_version),
            ("runner_id", &self.runner_id),
            ("runner_version", &self.runner_version),
            ("kernel_source_digest", &self.kernel_source_digest),
            ("space_digest", &self.space_digest),
        ];
        for (name, value) in fields {
            if value.trim().is_empty() {
                return Err(EmptyFieldError(name));
            }
        }
        if self.protocol_version == 0 {
            return Err(EmptyFieldError("protocol_version"));
        }
        Ok(())
    }

    pub fn identity(&self) -> RunnerIdentity {
        RunnerIdentity {
            device_name: self.device_name.clone(),
            driver_version: self.driver_version.clone(),
            toolchain_version: self.toolchain_version.clone(),
            runner_id: self.runner_id.clone(),
            runner_version: self.runner_version.clone(),
            kernel_source_digest: self.kernel_source_digest.clone(),
        }
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }
}

/// Anything that can measure a configuration on a shape.
pub trait Evaluator {
    fn fingerprint(&self) -> &EnvFingerprint;

    fn evaluate(&mut self, config: &KernelConfig, shape: &ShapeKey, plan: &EvalPlan) -> Evaluation;
}

impl<E: Evaluator + ?Sized> Evaluator for &mut E {
    fn fingerprint(&self) -> &EnvFingerprint {
        (**self).fingerprint()
    }

    fn evaluate(&mut self, config: &KernelConfig, shape: &ShapeKey, plan: &EvalPlan) -> Evaluation {
        (**self).evaluate(config, shape, plan)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn fingerprint(&self) -> &EnvFingerprint {
        (**self).fingerprint()
    }

    fn evaluate(&mut self, config: &KernelConfig, shape: &ShapeKey, plan: &EvalPlan) -> Evaluation {
        (**self).evaluate(config, shape, plan)
    }
}
