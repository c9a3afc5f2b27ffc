//! Deterministic stand-in for a GPU.
//!
//! Latency of a configuration on a shape is
//!
//! ```text
//! base(shape) * prod_numeric (1 + w_p * |log2(v_p / t_p)|)
//!             * prod_other   (1 + w_p * [v_p != t_p])
//!             * (1 + u)
//! ```
//!
//! where `t_p` is the per-parameter target, `w_p` its weight, and `u` seeded
//! uniform noise in `[-rel, +rel]`. `base` is affine in the shape dimensions.
//! Parameters without a target contribute a factor of 1. Without noise the
//! minimizer over an unconstrained grid is the nearest-to-target assignment
//! per parameter.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::protocol::PROTOCOL_VERSION;
use super::{
    EnvFingerprint, EvalOutcome, EvalPlan, Evaluation, Evaluator, Measurement, RunnerIdentity,
};
use crate::configspace::{ConfigSpace, Constraint, ExprError, KernelConfig, ShapeKey, Value};
use crate::digest::digest_of;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseModel {
    Constant(f64),
    Affine {
        intercept: f64,
        #[serde(default)]
        coefficients: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub seed: u64,
    pub rel: f64,
}

/// Synthetic cost model loaded from a JSON profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub base: BaseModel,
    #[serde(default)]
    pub targets: BTreeMap<String, Value>,
    /// Weight per targeted parameter; missing weights default to 1.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub invalid_rules: Vec<String>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// Simulated compile time charged to every valid evaluation.
    #[serde(default)]
    pub compile_ms: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("cannot read profile {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed profile: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("weight for `{param}` is {weight}, expected a finite value >= 0")]
    BadWeight { param: String, weight: f64 },
    #[error("weight given for `{0}` which has no target")]
    WeightWithoutTarget(String),
    #[error("numeric target for `{param}` is {value}, expected > 0")]
    BadTarget { param: String, value: i64 },
    #[error("noise rel {0} outside [0, 0.5)")]
    BadNoise(f64),
    #[error("compile_ms {0} is not a non-negative finite duration")]
    BadCompileTime(f64),
    #[error("profile targets `{0}` which the space does not declare")]
    UnknownParam(String),
    #[error("target for `{param}` has the wrong type for its domain")]
    TargetType { param: String },
    #[error("invalid_rules[{index}] `{rule}`: {error}")]
    Rule {
        index: usize,
        rule: String,
        error: ExprError,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("configuration does not assign targeted parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{param}` has value {value}; the model needs a positive integer")]
    NonPositive { param: String, value: String },
    #[error("parameter `{0}` has a different type than its target")]
    TypeMismatch(String),
    #[error("shape lacks dimension `{0}` used by the base model")]
    MissingDim(String),
    #[error("shape dimension `{0}` is not an integer")]
    NonNumericDim(String),
    #[error("base latency {0} ms is not positive")]
    NonPositiveBase(f64),
}

impl CostProfile {
    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let profile: CostProfile = serde_json::from_str(text)?;
        profile.check()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<(), ProfileError> {
        for (param, &weight) in &self.weights {
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(ProfileError::BadWeight {
                    param: param.clone(),
                    weight,
                });
            }
            if !self.targets.contains_key(param) {
                return Err(ProfileError::WeightWithoutTarget(param.clone()));
            }
        }
        for (param, target) in &self.targets {
            if let Value::Int(v) = target {
                if *v <= 0 {
                    return Err(ProfileError::BadTarget {
                        param: param.clone(),
                        value: *v,
                    });
                }
            }
        }
        if let Some(noise) = self.noise {
            if !(noise.rel >= 0.0 && noise.rel < 0.5) {
                return Err(ProfileError::BadNoise(noise.rel));
            }
        }
        if !(self.compile_ms.is_finite() && self.compile_ms >= 0.0) {
            return Err(ProfileError::BadCompileTime(self.compile_ms));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }

    fn weight(&self, param: &str) -> f64 {
        self.weights.get(param).copied().unwrap_or(1.0)
    }

    pub fn base_ms(&self, shape: &ShapeKey) -> Result<f64, ModelError> {
        let base = match &self.base {
            BaseModel::Constant(v) => *v,
            BaseModel::Affine {
                intercept,
                coefficients,
            } => {
                let mut total = *intercept;
                for (dim, coef) in coefficients {
                    let value = shape
                        .get(dim)
                        .ok_or_else(|| ModelError::MissingDim(dim.clone()))?
                        .as_int()
                        .ok_or_else(|| ModelError::NonNumericDim(dim.clone()))?;
                    total += coef * value as f64;
                }
                total
            }
        };
        if !(base.is_finite() && base > 0.0) {
            return Err(ModelError::NonPositiveBase(base));
        }
        Ok(base)
    }

    /// Latency before noise.
    pub fn noise_free_ms(
        &self,
        config: &KernelConfig,
        shape: &ShapeKey,
    ) -> Result<f64, ModelError> {
        let mut latency = self.base_ms(shape)?;
        for (param, target) in &self.targets {
            let value = config
                .get(param)
                .ok_or_else(|| ModelError::MissingParam(param.clone()))?;
            let w = self.weight(param);
            let penalty = match (value, target) {
                (Value::Int(v), Value::Int(t)) => {
                    if *v <= 0 {
                        return Err(ModelError::NonPositive {
                            param: param.clone(),
                            value: v.to_string(),
                        });
                    }
                    (*v as f64 / *t as f64).log2().abs()
                }
                (Value::Bool(v), Value::Bool(t)) => f64::from(u8::from(v != t)),
                (Value::Str(v), Value::Str(t)) => f64::from(u8::from(v != t)),
                _ => return Err(ModelError::TypeMismatch(param.clone())),
            };
            latency *= 1.0 + w * penalty;
        }
        Ok(latency)
    }

    /// Relative noise `u` for one repetition; zero when noise is off.
    pub fn noise(&self, config: &KernelConfig, shape: &ShapeKey, rep: u64) -> f64 {
        let Some(noise) = self.noise.filter(|n| n.rel > 0.0) else {
            return 0.0;
        };
        let mut hasher = Sha256::new();
        hasher.update(noise.seed.to_le_bytes());
        hasher.update(config.digest().as_bytes());
        hasher.update(shape.digest().as_bytes());
        hasher.update(rep.to_le_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.random_range(-noise.rel..=noise.rel)
    }

    fn rep_latency(
        &self,
        config: &KernelConfig,
        shape: &ShapeKey,
        rep: u64,
    ) -> Result<f64, ModelError> {
        Ok(self.noise_free_ms(config, shape)? * (1.0 + self.noise(config, shape, rep)))
    }

    /// Runner identity reported for this profile.
    pub fn identity(&self) -> RunnerIdentity {
        let digest = self.digest();
        RunnerIdentity {
            device_name: "synthetic".into(),
            driver_version: "synthetic".into(),
            toolchain_version: digest.clone(),
            runner_id: "synthetic".into(),
            runner_version: env!("CARGO_PKG_VERSION").into(),
            kernel_source_digest: digest,
        }
    }
}

/// Single-draw latency: the noise-free model times `1 + u` for repetition 0.
pub fn synthetic_latency(
    profile: &CostProfile,
    config: &KernelConfig,
    shape: &ShapeKey,
) -> Result<f64, ModelError> {
    profile.rep_latency(config, shape, 0)
}

/// Evaluator backed by a [`CostProfile`] bound to one space.
///
/// Wall time is virtual: compile time plus every warm-up and timed
/// repetition, so budgets behave deterministically.
#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    profile: CostProfile,
    rules: Vec<Constraint>,
    /// Space parameter names in declaration order; rules index into it.
    param_order: Vec<String>,
    fingerprint: EnvFingerprint,
    evaluations: u64,
}

impl SyntheticEvaluator {
    pub fn new(profile: CostProfile, space: &ConfigSpace) -> Result<Self, ProfileError> {
        profile.check()?;
        for (param, target) in &profile.targets {
            let domain = space
                .param(param)
                .ok_or_else(|| ProfileError::UnknownParam(param.clone()))?;
            let type_ok = matches!(
                (&domain.kind, target),
                (crate::configspace::ParamKind::Boolean, Value::Bool(_))
                    | (
                        crate::configspace::ParamKind::Categorical { .. },
                        Value::Str(_)
                    )
            ) || (domain.is_numeric() && matches!(target, Value::Int(_)));
            if !type_ok {
                return Err(ProfileError::TargetType {
                    param: param.clone(),
                });
            }
        }
        let rules = profile
            .invalid_rules
            .iter()
            .enumerate()
            .map(|(index, rule)| {
                Constraint::compile(rule, space).map_err(|error| ProfileError::Rule {
                    index,
                    rule: rule.clone(),
                    error,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let fingerprint = EnvFingerprint::new(profile.identity(), space.digest(), PROTOCOL_VERSION)
            .expect("synthetic identity fields are nonempty");
        Ok(SyntheticEvaluator {
            profile,
            rules,
            param_order: space.params().iter().map(|p| p.name.clone()).collect(),
            fingerprint,
            evaluations: 0,
        })
    }

    pub fn profile(&self) -> &CostProfile {
        &self.profile
    }

    /// Number of `evaluate` calls served so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// The first invalid rule the configuration triggers, if any.
    pub fn invalid_rule(&self, config: &KernelConfig) -> Result<Option<&Constraint>, String> {
        let values: Vec<&Value> = self
            .param_order
            .iter()
            .map(|name| {
                config
                    .get(name)
                    .ok_or_else(|| format!("missing parameter `{name}`"))
            })
            .collect::<Result<_, _>>()?;
        for rule in &self.rules {
            match rule.eval(&values) {
                Ok(true) => return Ok(Some(rule)),
                Ok(false) => {}
                Err(e) => return Err(format!("rule `{rule}` failed to evaluate: {e}")),
            }
        }
        Ok(None)
    }
}

impl Evaluator for SyntheticEvaluator {
    fn fingerprint(&self) -> &EnvFingerprint {
        &self.fingerprint
    }

    fn evaluate(&mut self, config: &KernelConfig, shape: &ShapeKey, plan: &EvalPlan) -> Evaluation {
        self.evaluations += 1;
        let fail = |reason: String| Evaluation {
            outcome: EvalOutcome::failure(reason, false),
            wall_ms: 0.0,
        };
        match self.invalid_rule(config) {
            Ok(Some(rule)) => {
                return Evaluation {
                    outcome: EvalOutcome::Invalid {
                        reason: format!("rule: {rule}"),
                    },
                    wall_ms: 0.0,
                }
            }
            Ok(None) => {}
            Err(reason) => return fail(reason),
        }
        if plan.reps == 0 {
            return fail("plan requests zero repetitions".into());
        }
        let reps = u64::from(plan.reps);
        let timed: Result<Vec<f64>, ModelError> = (0..reps)
            .map(|rep| self.profile.rep_latency(config, shape, rep))
            .collect();
        let warm: Result<Vec<f64>, ModelError> = (reps..reps + u64::from(plan.warmups))
            .map(|rep| self.profile.rep_latency(config, shape, rep))
            .collect();
        let (timed, warm) = match (timed, warm) {
            (Ok(t), Ok(w)) => (t, w),
            (Err(e), _) | (_, Err(e)) => return fail(e.to_string()),
        };
        let wall_ms =
            self.profile.compile_ms + warm.iter().sum::<f64>() + timed.iter().sum::<f64>();
        match Measurement::new(self.profile.compile_ms, timed, plan.warmups) {
            Ok(m) => Evaluation {
                outcome: EvalOutcome::Ok(m),
                wall_ms,
            },
            Err(e) => fail(e.to_string()),
        }
    }
}
