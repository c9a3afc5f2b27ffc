use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::expr::{self, Ast, Compiled, EvalError, ExprError, ParamTable, ValueType};
use super::value::{KernelConfig, Value};
use crate::digest::digest_of;

/// Values a parameter may take, in enumeration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParamKind {
    IntList {
        values: Vec<i64>,
    },
    IntRange {
        lo: i64,
        hi: i64,
        #[serde(default = "default_step")]
        step: i64,
    },
    Pow2Range {
        lo: i64,
        hi: i64,
    },
    Categorical {
        values: Vec<String>,
    },
    Boolean,
}

fn default_step() -> i64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDomain {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

impl ParamDomain {
    pub fn new(name: impl Into<String>, kind: ParamKind) -> Self {
        ParamDomain {
            name: name.into(),
            kind,
        }
    }

    pub fn value_type(&self) -> ValueType {
        match self.kind {
            ParamKind::IntList { .. }
            | ParamKind::IntRange { .. }
            | ParamKind::Pow2Range { .. } => ValueType::Int,
            ParamKind::Categorical { .. } => ValueType::Str,
            ParamKind::Boolean => ValueType::Bool,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.value_type() == ValueType::Int
    }

    /// Number of values in the domain.
    pub fn len(&self) -> usize {
        match &self.kind {
            ParamKind::IntList { values } => values.len(),
            ParamKind::IntRange { lo, hi, step } => {
                if hi < lo || *step < 1 {
                    0
                } else {
                    ((*hi as i128 - *lo as i128) / *step as i128 + 1) as usize
                }
            }
            ParamKind::Pow2Range { lo, hi } => {
                if *lo < 1 || hi < lo {
                    0
                } else {
                    (hi.ilog2() - lo.ilog2() + 1) as usize
                }
            }
            ParamKind::Categorical { values } => values.len(),
            ParamKind::Boolean => 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `i`-th domain value; `i < self.len()`.
    pub fn value_at(&self, i: usize) -> Value {
        match &self.kind {
            ParamKind::IntList { values } => Value::Int(values[i]),
            ParamKind::IntRange { lo, step, .. } => Value::Int(lo + step * i as i64),
            ParamKind::Pow2Range { lo, .. } => Value::Int(lo << i),
            ParamKind::Categorical { values } => Value::Str(values[i].clone()),
            ParamKind::Boolean => Value::Bool(i == 1),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = Value> + '_ {
        (0..self.len()).map(move |i| self.value_at(i))
    }

    pub fn contains(&self, value: &Value) -> bool {
        match (&self.kind, value) {
            (ParamKind::IntList { values }, Value::Int(v)) => values.contains(v),
            (ParamKind::IntRange { lo, hi, step }, Value::Int(v)) => {
                v >= lo && v <= hi && (v - lo) % step == 0
            }
            (ParamKind::Pow2Range { lo, hi }, Value::Int(v)) => {
                v >= lo && v <= hi && (*v as u64).is_power_of_two()
            }
            (ParamKind::Categorical { values }, Value::Str(v)) => values.contains(v),
            (ParamKind::Boolean, Value::Bool(_)) => true,
            _ => false,
        }
    }

    fn check(&self) -> Result<(), String> {
        match &self.kind {
            ParamKind::IntList { values } => {
                if values.is_empty() {
                    return Err("empty domain".into());
                }
                if let Some(dup) = first_duplicate(values) {
                    return Err(format!("duplicate value {dup}"));
                }
            }
            ParamKind::IntRange { lo, hi, step } => {
                if lo > hi {
                    return Err(format!("empty domain: lo {lo} > hi {hi}"));
                }
                if *step < 1 {
                    return Err(format!("step must be >= 1, got {step}"));
                }
            }
            ParamKind::Pow2Range { lo, hi } => {
                for (label, v) in [("lo", lo), ("hi", hi)] {
                    if *v < 1 || !(*v as u64).is_power_of_two() {
                        return Err(format!("{label} {v} is not a power of two"));
                    }
                }
                if lo > hi {
                    return Err(format!("empty domain: lo {lo} > hi {hi}"));
                }
            }
            ParamKind::Categorical { values } => {
                if values.is_empty() {
                    return Err("empty domain".into());
                }
                if let Some(dup) = first_duplicate(values) {
                    return Err(format!("duplicate value {dup:?}"));
                }
            }
            ParamKind::Boolean => {}
        }
        Ok(())
    }
}

fn first_duplicate<T: Ord + Clone>(values: &[T]) -> Option<T> {
    let mut seen = BTreeSet::new();
    values.iter().find(|v| !seen.insert((*v).clone())).cloned()
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A dependency between parameters, e.g. `BLOCK_M % 32 == 0 || num_warps < 4`.
#[derive(Debug, Clone)]
pub struct Constraint {
    source: String,
    ast: Ast,
    compiled: Compiled,
    /// One past the highest referenced parameter index: the constraint can be
    /// decided once that many leading parameters are assigned.
    level: usize,
}

impl Constraint {
    /// Parses and binds `source` against `params`.
    pub fn compile<T: ParamTable + ?Sized>(source: &str, params: &T) -> Result<Self, ExprError> {
        let ast = expr::parse(source)?;
        let compiled = ast.compile(params)?;
        let level = ast
            .params()
            .into_iter()
            .filter_map(|name| params.lookup(name).map(|(i, _)| i + 1))
            .max()
            .unwrap_or(0);
        Ok(Constraint {
            source: source.trim().to_string(),
            ast,
            compiled,
            level,
        })
    }

    /// The constraint as written (trimmed).
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Layout-independent rendering used for digests.
    pub fn canonical(&self) -> String {
        self.ast.to_string()
    }

    pub fn eval(&self, values: &[&Value]) -> Result<bool, EvalError> {
        self.compiled.eval_bool(values)
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SpaceError {
    #[error("malformed space document at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("space name must be nonempty")]
    EmptySpaceName,
    #[error("space declares no parameters")]
    NoParams,
    #[error("params[{index}]: invalid parameter name `{name}`")]
    InvalidName { index: usize, name: String },
    #[error("params[{index}]: duplicate parameter `{name}` (first declared at params[{first}])")]
    DuplicateParam {
        index: usize,
        first: usize,
        name: String,
    },
    #[error("params[{index}] `{name}`: {reason}")]
    InvalidDomain {
        index: usize,
        name: String,
        reason: String,
    },
    #[error("constraints[{index}] `{source_text}`: {error}")]
    Constraint {
        index: usize,
        source_text: String,
        error: ExprError,
    },
    #[error("constraint `{constraint}` failed to evaluate at {{{config}}}: {error}")]
    Evaluation {
        constraint: String,
        config: String,
        error: EvalError,
    },
}

#[derive(Deserialize)]
struct SpaceDocument {
    name: String,
    params: Vec<ParamDomain>,
    #[serde(default)]
    constraints: Vec<String>,
}

/// A tunable parameter universe with inter-parameter constraints.
#[derive(Debug, Clone)]
pub struct ConfigSpace {
    name: String,
    params: Vec<ParamDomain>,
    constraints: Vec<Constraint>,
    by_level: Vec<Vec<usize>>,
    digest: String,
}

impl ParamTable for ConfigSpace {
    fn lookup(&self, name: &str) -> Option<(usize, ValueType)> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(|i| (i, self.params[i].value_type()))
    }
}

/// Parses a JSON space document.
pub fn parse_space(text: &str) -> Result<ConfigSpace, SpaceError> {
    let doc: SpaceDocument = serde_json::from_str(text).map_err(|e| SpaceError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    ConfigSpace::new(doc.name, doc.params, &doc.constraints)
}

impl ConfigSpace {
    pub fn new<S: AsRef<str>>(
        name: impl Into<String>,
        params: Vec<ParamDomain>,
        constraints: &[S],
    ) -> Result<Self, SpaceError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(SpaceError::EmptySpaceName);
        }
        if params.is_empty() {
            return Err(SpaceError::NoParams);
        }
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (index, p) in params.iter().enumerate() {
            if !is_identifier(&p.name) {
                return Err(SpaceError::InvalidName {
                    index,
                    name: p.name.clone(),
                });
            }
            if let Some(&first) = seen.get(p.name.as_str()) {
                return Err(SpaceError::DuplicateParam {
                    index,
                    first,
                    name: p.name.clone(),
                });
            }
            seen.insert(&p.name, index);
            p.check().map_err(|reason| SpaceError::InvalidDomain {
                index,
                name: p.name.clone(),
                reason,
            })?;
        }

        let mut space = ConfigSpace {
            name,
            params,
            constraints: Vec::new(),
            by_level: Vec::new(),
            digest: String::new(),
        };
        let mut compiled = Vec::with_capacity(constraints.len());
        for (index, text) in constraints.iter().enumerate() {
            let text = text.as_ref();
            let c = Constraint::compile(text, &space).map_err(|error| SpaceError::Constraint {
                index,
                source_text: text.trim().to_string(),
                error,
            })?;
            compiled.push(c);
        }
        let mut by_level = vec![Vec::new(); space.params.len() + 1];
        for (i, c) in compiled.iter().enumerate() {
            by_level[c.level].push(i);
        }
        space.constraints = compiled;
        space.by_level = by_level;
        space.digest = digest_of(&space.canonical_document());
        Ok(space)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[ParamDomain] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&ParamDomain> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// The document with constraints in canonical rendering; reparsing it
    /// yields a space with the same digest.
    pub fn canonical_document(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "params": self.params,
            "constraints": self.constraints.iter().map(Constraint::canonical).collect::<Vec<_>>(),
        })
    }

    /// Size of the unconstrained cartesian product (saturating).
    pub fn raw_cardinality(&self) -> u128 {
        self.params
            .iter()
            .fold(1u128, |acc, p| acc.saturating_mul(p.len() as u128))
    }

    /// Constraint-satisfying configurations, streamed in deterministic order:
    /// cartesian product with the first declared parameter varying slowest.
    ///
    /// Constraints are checked as soon as every parameter they reference is
    /// assigned, so infeasible subtrees are skipped without being visited.
    /// An evaluation error ends the stream after yielding the error.
    pub fn enumerate(&self) -> Enumerate<'_> {
        Enumerate {
            space: self,
            idx: vec![0; self.params.len()],
            values: self.params.iter().map(|p| p.value_at(0)).collect(),
            started: false,
            finished: false,
        }
    }

    /// Returns `(raw, valid)` point counts.
    pub fn cardinality(&self) -> Result<(u128, u128), SpaceError> {
        let mut valid = 0u128;
        for config in self.enumerate() {
            config?;
            valid += 1;
        }
        Ok((self.raw_cardinality(), valid))
    }

    /// Checks a configuration against domains and constraints.
    pub fn validate(&self, config: &KernelConfig) -> Result<Validation, StructuralError> {
        let missing: Vec<String> = self
            .params
            .iter()
            .filter(|p| config.get(&p.name).is_none())
            .map(|p| p.name.clone())
            .collect();
        let extra: Vec<String> = config
            .assignments()
            .keys()
            .filter(|k| self.param(k).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(StructuralError { missing, extra });
        }

        let values: Vec<&Value> = self
            .params
            .iter()
            .map(|p| config.get(&p.name).expect("presence checked"))
            .collect();
        let mut violations = Vec::new();
        for (p, v) in self.params.iter().zip(&values) {
            if !p.contains(v) {
                violations.push(Violation::Domain {
                    param: p.name.clone(),
                    value: (*v).clone(),
                });
            }
        }
        for c in &self.constraints {
            match c.eval(&values) {
                Ok(true) => {}
                Ok(false) => violations.push(Violation::Constraint(c.source.clone())),
                Err(error) => violations.push(Violation::ConstraintError {
                    constraint: c.source.clone(),
                    error,
                }),
            }
        }
        Ok(Validation { violations })
    }

    fn check_level(&self, level: usize, values: &[Value]) -> Result<bool, SpaceError> {
        let refs: Vec<&Value> = values.iter().collect();
        for &ci in &self.by_level[level] {
            let c = &self.constraints[ci];
            match c.eval(&refs) {
                Ok(true) => {}
                Ok(false) => return Ok(false),
                Err(error) => {
                    let config = self.params[..level]
                        .iter()
                        .zip(values)
                        .map(|(p, v)| format!("{}={v}", p.name))
                        .collect::<Vec<_>>()
                        .join(",");
                    return Err(SpaceError::Evaluation {
                        constraint: c.source.clone(),
                        config,
                        error,
                    });
                }
            }
        }
        Ok(true)
    }

    fn config_from(&self, values: &[Value]) -> KernelConfig {
        KernelConfig::new(
            self.params
                .iter()
                .zip(values)
                .map(|(p, v)| (p.name.clone(), v.clone()))
                .collect(),
        )
    }
}

/// Streaming iterator returned by [`ConfigSpace::enumerate`].
pub struct Enumerate<'a> {
    space: &'a ConfigSpace,
    idx: Vec<usize>,
    values: Vec<Value>,
    started: bool,
    finished: bool,
}

impl<'a> Enumerate<'a> {
    fn fail(&mut self, err: SpaceError) -> Option<Result<KernelConfig, SpaceError>> {
        self.finished = true;
        Some(Err(err))
    }
}

impl Iterator for Enumerate<'_> {
    type Item = Result<KernelConfig, SpaceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        let n = self.space.params.len();
        let mut level;
        if !self.started {
            self.started = true;
            match self.space.check_level(0, &self.values) {
                Ok(true) => {}
                Ok(false) => {
                    self.finished = true;
                    return None;
                }
                Err(e) => return self.fail(e),
            }
            level = 0;
            self.idx[0] = 0;
        } else {
            level = n - 1;
            self.idx[level] += 1;
        }
        loop {
            let domain = &self.space.params[level];
            if self.idx[level] >= domain.len() {
                if level == 0 {
                    self.finished = true;
                    return None;
                }
                level -= 1;
                self.idx[level] += 1;
                continue;
            }
            self.values[level] = domain.value_at(self.idx[level]);
            match self.space.check_level(level + 1, &self.values) {
                Ok(true) => {}
                Ok(false) => {
                    self.idx[level] += 1;
                    continue;
                }
                Err(e) => return self.fail(e),
            }
            if level == n - 1 {
                return Some(Ok(self.space.config_from(&self.values)));
            }
            level += 1;
            self.idx[level] = 0;
        }
    }
}

/// A configuration that does not assign exactly the space's parameters.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("configuration does not match the space (missing: {missing:?}, extra: {extra:?})")]
pub struct StructuralError {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Domain {
        param: String,
        value: Value,
    },
    Constraint(String),
    ConstraintError {
        constraint: String,
        error: EvalError,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Domain { param, value } => {
                write!(f, "{param}={value} is outside its domain")
            }
            Violation::Constraint(c) => write!(f, "constraint `{c}` does not hold"),
            Violation::ConstraintError { constraint, error } => {
                write!(f, "constraint `{constraint}` failed to evaluate: {error}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}
