//! Random spaces with natively evaluated constraints, used as brute-force
//! oracles by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ktune_core::configspace::{parse_space, ConfigSpace, KernelConfig, Value};
use ktune_core::executor::CostProfile;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

#[derive(Debug, Clone)]
pub enum Dom {
    Ints(Vec<i64>),
    Bools,
    Cats(Vec<String>),
}

impl Dom {
    pub fn values(&self) -> Vec<Value> {
        match self {
            Dom::Ints(v) => v.iter().map(|&i| Value::Int(i)).collect(),
            Dom::Bools => vec![Value::Bool(false), Value::Bool(true)],
            Dom::Cats(v) => v.iter().map(|s| Value::Str(s.clone())).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Term {
    P(usize),
    C(i64),
    Add(Box<Term>, Box<Term>),
    Sub(Box<Term>, Box<Term>),
    Mul(Box<Term>, Box<Term>),
    Div(Box<Term>, i64),
    Rem(Box<Term>, i64),
}

#[derive(Debug, Clone, Copy)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone)]
pub enum Cond {
    Cmp(Term, Cmp, Term),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
    Not(Box<Cond>),
    Flag(usize),
    Cat(usize, String),
}

#[derive(Debug, Clone)]
pub struct GenSpace {
    pub names: Vec<String>,
    pub doms: Vec<Dom>,
    pub constraints: Vec<Cond>,
    pub space: ConfigSpace,
}

impl Term {
    pub fn render(&self, names: &[String]) -> String {
        match self {
            Term::P(i) => names[*i].clone(),
            Term::C(c) => c.to_string(),
            Term::Add(a, b) => format!("({} + {})", a.render(names), b.render(names)),
            Term::Sub(a, b) => format!("({} - {})", a.render(names), b.render(names)),
            Term::Mul(a, b) => format!("({} * {})", a.render(names), b.render(names)),
            Term::Div(a, d) => format!("({} / {d})", a.render(names)),
            Term::Rem(a, d) => format!("({} % {d})", a.render(names)),
        }
    }

    pub fn eval(&self, row: &[Value]) -> i64 {
        match self {
            Term::P(i) => row[*i].as_int().expect("numeric parameter"),
            Term::C(c) => *c,
            Term::Add(a, b) => a.eval(row) + b.eval(row),
            Term::Sub(a, b) => a.eval(row) - b.eval(row),
            Term::Mul(a, b) => a.eval(row) * b.eval(row),
            Term::Div(a, d) => a.eval(row) / d,
            Term::Rem(a, d) => a.eval(row) % d,
        }
    }
}

impl Cond {
    pub fn render(&self, names: &[String]) -> String {
        match self {
            Cond::Cmp(a, op, b) => {
                let sym = match op {
                    Cmp::Lt => "<",
                    Cmp::Le => "<=",
                    Cmp::Gt => ">",
                    Cmp::Ge => ">=",
                    Cmp::Eq => "==",
                    Cmp::Ne => "!=",
                };
                format!("({} {sym} {})", a.render(names), b.render(names))
            }
            Cond::And(a, b) => format!("({} && {})", a.render(names), b.render(names)),
            Cond::Or(a, b) => format!("({} || {})", a.render(names), b.render(names)),
            Cond::Not(a) => format!("!{}", a.render(names)),
            Cond::Flag(i) => names[*i].clone(),
            Cond::Cat(i, s) => format!("({} == \"{s}\")", names[*i]),
        }
    }

    pub fn eval(&self, row: &[Value]) -> bool {
        match self {
            Cond::Cmp(a, op, b) => {
                let (a, b) = (a.eval(row), b.eval(row));
                match op {
                    Cmp::Lt => a < b,
                    Cmp::Le => a <= b,
                    Cmp::Gt => a > b,
                    Cmp::Ge => a >= b,
                    Cmp::Eq => a == b,
                    Cmp::Ne => a != b,
                }
            }
            Cond::And(a, b) => a.eval(row) && b.eval(row),
            Cond::Or(a, b) => a.eval(row) || b.eval(row),
            Cond::Not(a) => !a.eval(row),
            Cond::Flag(i) => row[*i] == Value::Bool(true),
            Cond::Cat(i, s) => row[*i] == Value::Str(s.clone()),
        }
    }
}

fn random_int_dom(rng: &mut ChaCha8Rng, max_len: usize) -> (Dom, Json) {
    match rng.random_range(0..3) {
        0 => {
            let len = rng.random_range(2..=max_len.max(2));
            let mut pool: Vec<i64> = (1..=64).collect();
            pool.shuffle(rng);
            let values: Vec<i64> = pool[..len].to_vec();
            (
                Dom::Ints(values.clone()),
                json!({"kind": "int-list", "values": values}),
            )
        }
        1 => {
            let step = rng.random_range(1..=3);
            let lo = rng.random_range(1..=8);
            let len = rng.random_range(2..=max_len.max(2)) as i64;
            let hi = lo + step * (len - 1) + rng.random_range(0..step);
            let values: Vec<i64> = (lo..=hi).step_by(step as usize).collect();
            (
                Dom::Ints(values),
                json!({"kind": "int-range", "lo": lo, "hi": hi, "step": step}),
            )
        }
        _ => {
            let lo_exp = rng.random_range(0..4);
            let len = rng.random_range(2..=max_len.clamp(2, 6)) as u32;
            let (lo, hi) = (1i64 << lo_exp, 1i64 << (lo_exp + len - 1));
            let values: Vec<i64> = (0..len).map(|k| lo << k).collect();
            (
                Dom::Ints(values),
                json!({"kind": "pow2-range", "lo": lo, "hi": hi}),
            )
        }
    }
}

fn random_term(rng: &mut ChaCha8Rng, ints: &[usize], depth: u32) -> Term {
    if depth == 0 || rng.random_bool(0.4) {
        return if rng.random_bool(0.7) {
            Term::P(*ints.choose(rng).unwrap())
        } else {
            Term::C(rng.random_range(0..=64))
        };
    }
    let a = Box::new(random_term(rng, ints, depth - 1));
    match rng.random_range(0..5) {
        0 => Term::Add(a, Box::new(random_term(rng, ints, depth - 1))),
        1 => Term::Sub(a, Box::new(random_term(rng, ints, depth - 1))),
        2 => Term::Mul(a, Box::new(random_term(rng, ints, depth - 1))),
        3 => Term::Div(a, rng.random_range(1..=8)),
        _ => Term::Rem(a, rng.random_range(1..=8)),
    }
}

/// A random boolean condition over the parameters of `doms`.
pub fn random_cond(rng: &mut ChaCha8Rng, doms: &[Dom], depth: u32) -> Cond {
    let ints: Vec<usize> = (0..doms.len())
        .filter(|&i| matches!(doms[i], Dom::Ints(_)))
        .collect();
    let others: Vec<usize> = (0..doms.len())
        .filter(|&i| !matches!(doms[i], Dom::Ints(_)))
        .collect();
    if depth == 0 || rng.random_bool(0.5) {
        if !others.is_empty() && (ints.is_empty() || rng.random_bool(0.25)) {
            let i = *others.choose(rng).unwrap();
            return match &doms[i] {
                Dom::Bools => Cond::Flag(i),
                Dom::Cats(v) => Cond::Cat(i, v.choose(rng).unwrap().clone()),
                Dom::Ints(_) => unreachable!(),
            };
        }
        let op = *[Cmp::Lt, Cmp::Le, Cmp::Gt, Cmp::Ge, Cmp::Eq, Cmp::Ne]
            .choose(rng)
            .unwrap();
        return Cond::Cmp(random_term(rng, &ints, 2), op, random_term(rng, &ints, 2));
    }
    let a = Box::new(random_cond(rng, doms, depth - 1));
    match rng.random_range(0..3) {
        0 => Cond::And(a, Box::new(random_cond(rng, doms, depth - 1))),
        1 => Cond::Or(a, Box::new(random_cond(rng, doms, depth - 1))),
        _ => Cond::Not(a),
    }
}

/// Cartesian product of `doms` in declaration order, last parameter fastest.
pub fn product(doms: &[Dom]) -> Vec<Vec<Value>> {
    let mut rows: Vec<Vec<Value>> = vec![Vec::new()];
    for d in doms {
        let values = d.values();
        rows = rows
            .into_iter()
            .flat_map(|r| {
                values.iter().map(move |v| {
                    let mut next = r.clone();
                    next.push(v.clone());
                    next
                })
            })
            .collect();
    }
    rows
}

impl GenSpace {
    pub fn config(&self, row: &[Value]) -> KernelConfig {
        KernelConfig::from_pairs(self.names.iter().cloned().zip(row.iter().cloned()))
    }

    pub fn row(&self, config: &KernelConfig) -> Vec<Value> {
        self.names
            .iter()
            .map(|n| config.get(n).expect("assigned").clone())
            .collect()
    }

    pub fn is_valid(&self, row: &[Value]) -> bool {
        self.constraints.iter().all(|c| c.eval(row))
    }

    /// The valid set computed without the library's enumerator.
    pub fn native_valid(&self) -> Vec<Vec<Value>> {
        product(&self.doms)
            .into_iter()
            .filter(|r| self.is_valid(r))
            .collect()
    }

    pub fn document(&self) -> String {
        self.space.canonical_document().to_string()
    }
}

/// Builds a random space with `params` parameters and `constraints`
/// constraints, without any bound on its size.
pub fn build_space(
    rng: &mut ChaCha8Rng,
    params: usize,
    constraints: usize,
    max_len: usize,
) -> GenSpace {
    let mut names = Vec::new();
    let mut doms = Vec::new();
    let mut decls = Vec::new();
    for i in 0..params {
        let name = format!("p{i}");
        let (dom, mut decl) = match rng.random_range(0..6) {
            0 => (Dom::Bools, json!({"kind": "boolean"})),
            1 => {
                let n = rng.random_range(2..=3);
                let values: Vec<String> =
                    ["x", "y", "z"][..n].iter().map(|s| s.to_string()).collect();
                (
                    Dom::Cats(values.clone()),
                    json!({"kind": "categorical", "values": values}),
                )
            }
            _ => random_int_dom(rng, max_len),
        };
        decl["name"] = json!(name);
        names.push(name);
        doms.push(dom);
        decls.push(decl);
    }
    let has_int = doms.iter().any(|d| matches!(d, Dom::Ints(_)));
    let conds: Vec<Cond> = if has_int {
        (0..constraints)
            .map(|_| random_cond(rng, &doms, 2))
            .collect()
    } else {
        Vec::new()
    };
    let text: Vec<String> = conds.iter().map(|c| c.render(&names)).collect();
    let doc = json!({"name": "generated", "params": decls, "constraints": text});
    let space = parse_space(&doc.to_string()).expect("generated space parses");
    GenSpace {
        names,
        doms,
        constraints: conds,
        space,
    }
}

/// A random space whose valid set has between 1 and `max_valid` members.
pub fn random_space(seed: u64, max_valid: usize) -> GenSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let params = rng.random_range(2..=4);
        let constraints = rng.random_range(0..=2);
        let g = build_space(&mut rng, params, constraints, 6);
        let n = g.native_valid().len();
        if (1..=max_valid).contains(&n) {
            return g;
        }
    }
}

/// A noise-free profile with random targets and weights for every parameter.
pub fn random_profile(rng: &mut ChaCha8Rng, g: &GenSpace, invalid_rules: &[String]) -> CostProfile {
    let mut targets = BTreeMap::new();
    let mut weights = BTreeMap::new();
    for (name, dom) in g.names.iter().zip(&g.doms) {
        let target = match dom {
            Dom::Ints(_) => json!(rng.random_range(1..=128)),
            Dom::Bools => json!(rng.random_bool(0.5)),
            Dom::Cats(v) => json!(v.choose(rng).unwrap()),
        };
        targets.insert(name.clone(), target);
        weights.insert(
            name.clone(),
            json!(f64::from(rng.random_range(5..=200)) / 100.0),
        );
    }
    let doc = json!({
        "base": f64::from(rng.random_range(10..=1000)) / 100.0,
        "targets": targets,
        "weights": weights,
        "invalid_rules": invalid_rules,
    });
    CostProfile::from_json(&doc.to_string()).expect("generated profile is valid")
}

/// The cost formula evaluated independently of the library, without noise.
pub fn native_latency(profile: &CostProfile, config: &KernelConfig) -> f64 {
    let base = match &profile.base {
        ktune_core::executor::BaseModel::Constant(c) => *c,
        other => panic!("native model only handles constant bases, got {other:?}"),
    };
    let mut latency = base;
    for (param, target) in &profile.targets {
        let w = profile.weights.get(param).copied().unwrap_or(1.0);
        let v = config.get(param).unwrap();
        let penalty = match (v, target) {
            (Value::Int(v), Value::Int(t)) => ((*v as f64) / (*t as f64)).log2().abs(),
            (a, b) => f64::from(u8::from(a != b)),
        };
        latency *= 1.0 + w * penalty;
    }
    latency
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
