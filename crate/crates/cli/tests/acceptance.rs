//! Acceptance suite: one PASS/FAIL line per criterion.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use common::{random_cond, random_profile, random_space, seeded, Dom, GenSpace};
use ktune_core::asmstats::{parse_asm, AsmDoc};
use ktune_core::cache::{CacheEntry, CacheStore};
use ktune_core::configspace::{parse_space, ConfigSpace, KernelConfig, ShapeKey, Value};
use ktune_core::executor::protocol::ProtocolError;
use ktune_core::executor::{
    synthetic_latency, CostProfile, EnvFingerprint, EvalOutcome, EvalPlan, Evaluator,
    RunnerCommand, RunnerError, RunnerSession, SyntheticEvaluator,
};
use ktune_core::report::{
    normalize, relative_cdf, transfer_analysis, Anchor, BenchRow, BenchmarkTable, TransferStatus,
};
use ktune_core::search::{run_search, SearchBudget, SearchStrategy, TuningResult};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Value as Json};
use tempfile::TempDir;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Option<f64>);

const KTUNE: &str = env!("CARGO_BIN_EXE_ktune");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture(rel: &str) -> PathBuf {
    fixtures().join(rel)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ktune(args: &[&str]) -> Output {
    Command::new(KTUNE).args(args).output().expect("ktune runs")
}

fn json_lines(out: &Output) -> Result<Vec<Json>, String> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| format!("bad JSON line `{l}`: {e}")))
        .collect()
}

fn best_digest(summary: &Json) -> Option<String> {
    let config: KernelConfig = serde_json::from_value(summary["best"]["config"].clone()).ok()?;
    Some(config.digest().to_string())
}

fn noise_free(n: i64) -> ShapeKey {
    ShapeKey::from_pairs([("n", n)]).unwrap()
}

const PLAN: EvalPlan = EvalPlan {
    warmups: 0,
    reps: 3,
    timeout_ms: 1000,
};

fn exhaustive(
    space: &ConfigSpace,
    shape: &ShapeKey,
    evaluator: &mut dyn Evaluator,
) -> Result<TuningResult, String> {
    run_search(
        space,
        shape,
        &SearchStrategy::Exhaustive,
        SearchBudget::unlimited(),
        PLAN,
        evaluator,
    )
    .map_err(|e| e.to_string())
}

/// Brute-force argmin of the model over `configs`, ties to the smaller digest.
fn argmin<'a>(
    profile: &CostProfile,
    configs: impl Iterator<Item = &'a KernelConfig>,
    shape: &ShapeKey,
) -> Option<(String, f64)> {
    configs
        .map(|c| {
            (
                c.digest().to_string(),
                synthetic_latency(profile, c, shape).unwrap(),
            )
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
}

fn oracle_equivalence() -> Check {
    let shape = noise_free(1024);
    let (mut smallest, mut largest) = (usize::MAX, 0);
    let seeds = 128u64;
    for seed in 0..seeds {
        let g = random_space(seed, 200);
        let profile = random_profile(&mut seeded(seed ^ 0xa5a5), &g, &[]);
        let valid: Vec<KernelConfig> = g.native_valid().iter().map(|r| g.config(r)).collect();
        ensure(g.space.enumerate().count() == valid.len(), || {
            format!("seed {seed}: enumeration size differs from brute force")
        })?;
        smallest = smallest.min(valid.len());
        largest = largest.max(valid.len());
        let (want, _) = argmin(&profile, valid.iter(), &shape).unwrap();
        let mut ev = SyntheticEvaluator::new(profile, &g.space).map_err(|e| e.to_string())?;
        let result = exhaustive(&g.space, &shape, &mut ev)?;
        let got = result.best.map(|b| b.config.digest().to_string());
        ensure(got.as_deref() == Some(want.as_str()), || {
            format!("seed {seed}: search best {got:?}, oracle {want}")
        })?;
    }
    Ok(format!(
        "{seeds} seeds, {smallest}..={largest} valid configs, all best digests equal"
    ))
}

fn cache_replay() -> Check {
    let cache = TempDir::new().unwrap();
    let manifest = fixture("manifests/flash_attention.a100.json");
    let args = [
        "tune",
        "--manifest",
        manifest.to_str().unwrap(),
        "--cache-dir",
        cache.path().to_str().unwrap(),
        "--json",
    ];
    let first = ktune(&args);
    ensure(first.status.success(), || {
        format!("first run: {}", String::from_utf8_lossy(&first.stderr))
    })?;
    let second = ktune(&args);
    ensure(second.status.success(), || {
        format!("second run: {}", String::from_utf8_lossy(&second.stderr))
    })?;
    let (a, b) = (json_lines(&first)?, json_lines(&second)?);
    ensure(a.len() == b.len() && !a.is_empty(), || {
        "shape counts differ".into()
    })?;
    let mut first_evals = 0;
    for (x, y) in a.iter().zip(&b) {
        ensure(x["cache"] == "miss" && y["cache"] == "hit", || {
            format!("cache states {} / {}", x["cache"], y["cache"])
        })?;
        first_evals += x["evaluations"].as_u64().unwrap_or(0);
        ensure(y["evaluations"] == 0, || {
            format!("second run evaluated {}", y["evaluations"])
        })?;
        let (dx, dy) = (best_digest(x), best_digest(y));
        ensure(dx.is_some() && dx == dy, || {
            format!("best digests {dx:?} vs {dy:?}")
        })?;
    }
    Ok(format!(
        "{} shapes: {first_evals} evaluations, then 0 with identical best digests",
        a.len()
    ))
}

fn fingerprint_sensitivity() -> Check {
    let dir = TempDir::new().unwrap();
    let space =
        parse_space(&fs::read_to_string(fixture("spaces/vector_add.space.json")).unwrap()).unwrap();
    let profile = CostProfile::load(&fixture("profiles/vector_add.profile.json"))
        .map_err(|e| e.to_string())?;
    let mut ev = SyntheticEvaluator::new(profile, &space).unwrap();
    let shape = noise_free(1 << 20);
    let result = exhaustive(&space, &shape, &mut ev)?;
    let fp = result.fingerprint.clone();
    CacheStore::open(dir.path())
        .and_then(|s| s.store(&CacheEntry::new(result), false))
        .map_err(|e| e.to_string())?;
    let store = CacheStore::open(dir.path()).map_err(|e| e.to_string())?;
    ensure(
        store
            .lookup(&fp, &shape)
            .map_err(|e| e.to_string())?
            .is_some(),
        || "unmodified fingerprint misses".into(),
    )?;
    let Json::Object(fields) = serde_json::to_value(&fp).unwrap() else {
        return Err("fingerprint is not an object".into());
    };
    let mut missed = Vec::new();
    for (name, value) in &fields {
        let mut mutated = fields.clone();
        mutated[name] = match value {
            Json::String(s) => json!(format!("{s}-changed")),
            Json::Number(n) => json!(n.as_u64().unwrap() + 1),
            other => return Err(format!("unexpected field type {other}")),
        };
        let changed: EnvFingerprint = serde_json::from_value(Json::Object(mutated)).unwrap();
        if store
            .lookup(&changed, &shape)
            .map_err(|e| e.to_string())?
            .is_none()
        {
            missed.push(name.clone());
        }
    }
    ensure(fields.len() == 8 && missed.len() == 8, || {
        format!(
            "{} of {} fields caused a miss: {missed:?}",
            missed.len(),
            fields.len()
        )
    })?;
    Ok(format!("8/8 fields miss ({})", missed.join(", ")))
}

/// Rules whose union covers 10-90% of the valid set, judged natively.
fn covering_rules(g: &GenSpace, seed: u64) -> Option<Vec<common::Cond>> {
    let mut rng = seeded(seed);
    let valid = g.native_valid();
    (0..200).find_map(|_| {
        let n = rng.random_range(1..=2);
        let rules: Vec<_> = (0..n).map(|_| random_cond(&mut rng, &g.doms, 2)).collect();
        let hit = valid
            .iter()
            .filter(|r| rules.iter().any(|c| c.eval(r)))
            .count();
        (0.1..=0.9)
            .contains(&(hit as f64 / valid.len() as f64))
            .then_some(rules)
    })
}

fn invalid_config_safety() -> Check {
    let shapes: Vec<ShapeKey> = (1..=3).map(noise_free).collect();
    let (mut scenarios, mut invalid_cells, mut measured_cells) = (0, 0, 0);
    let mut seed = 0u64;
    while scenarios < 100 {
        seed += 1;
        ensure(seed < 10_000, || "could not build enough scenarios".into())?;
        let g = random_space(seed, 200);
        if g.native_valid().len() < 10 {
            continue;
        }
        let Some(rules) = covering_rules(&g, seed ^ 0x51) else {
            continue;
        };
        scenarios += 1;
        let text: Vec<String> = rules.iter().map(|c| c.render(&g.names)).collect();
        let violates = |c: &KernelConfig| rules.iter().any(|r| r.eval(&g.row(c)));
        let a = random_profile(&mut seeded(seed ^ 0x52), &g, &[]);
        let b = random_profile(&mut seeded(seed ^ 0x53), &g, &text);
        let mut on_a = SyntheticEvaluator::new(a, &g.space).unwrap();
        let mut on_b = SyntheticEvaluator::new(b, &g.space).unwrap();
        let mut from = Vec::new();
        let mut to = Vec::new();
        for s in &shapes {
            from.push(exhaustive(&g.space, s, &mut on_a)?);
            let native = exhaustive(&g.space, s, &mut on_b)?;
            let best = native.best.as_ref().ok_or("rules left nothing viable")?;
            ensure(!violates(&best.config), || {
                format!("seed {seed}: best violates a rule")
            })?;
            to.push(native);
        }
        let cells = transfer_analysis(&from, &g.space, &shapes, &mut on_b, &to, PLAN)
            .map_err(|e| e.to_string())?;
        for cell in &cells {
            let bad = violates(cell.config.as_ref().unwrap());
            ensure(cell.is_invalid() == bad, || {
                format!(
                    "seed {seed}: cell {:?} for a config with violation={bad}",
                    cell.status
                )
            })?;
            if bad {
                invalid_cells += 1;
            } else {
                measured_cells += 1;
            }
        }
    }
    ensure(invalid_cells > 0 && measured_cells > 0, || {
        "scenarios never exercised both cases".into()
    })?;
    Ok(format!(
        "{scenarios} scenarios, {invalid_cells} invalid-marker and {measured_cells} measured cells, all matching brute force"
    ))
}

/// A 10 x 10 x 5 unconstrained grid with random distinct values.
fn grid_500(seed: u64) -> GenSpace {
    let mut rng = seeded(seed);
    let mut names = Vec::new();
    let mut doms = Vec::new();
    let mut decls = Vec::new();
    for (i, len) in [10usize, 10, 5].into_iter().enumerate() {
        let pool: Vec<i64> = (1..=256).collect();
        let values: Vec<i64> = pool.choose_multiple(&mut rng, len).copied().collect();
        let name = format!("p{i}");
        decls.push(json!({"name": name, "kind": "int-list", "values": values}));
        names.push(name);
        doms.push(Dom::Ints(values));
    }
    let space = parse_space(&json!({"name": "grid", "params": decls}).to_string()).unwrap();
    GenSpace {
        names,
        doms,
        constraints: Vec::new(),
        space,
    }
}

fn halving_quality() -> Check {
    let shape = noise_free(1);
    let mut good = 0;
    let mut worst_rank = 0;
    for seed in 0..100u64 {
        let g = grid_500(seed);
        let profile = random_profile(&mut seeded(seed ^ 0x77), &g, &[]);
        let all: Vec<KernelConfig> = g.native_valid().iter().map(|r| g.config(r)).collect();
        ensure(all.len() == 500, || {
            format!("seed {seed}: grid has {} points", all.len())
        })?;
        let strategy = SearchStrategy::Halving {
            seed,
            initial_fraction: None,
            keep_fraction: 0.25,
            rounds: 2,
            reps_schedule: vec![3, 5],
        };
        let mut ev = SyntheticEvaluator::new(profile.clone(), &g.space).unwrap();
        let result = run_search(
            &g.space,
            &shape,
            &strategy,
            SearchBudget::evaluations(125),
            PLAN,
            &mut ev,
        )
        .map_err(|e| e.to_string())?;
        ensure(result.counters.evaluated <= 125, || {
            format!("seed {seed}: {} evaluations", result.counters.evaluated)
        })?;
        let best = result.best.ok_or("no best")?;
        let latency = synthetic_latency(&profile, &best.config, &shape).unwrap();
        let rank = all
            .iter()
            .filter(|c| synthetic_latency(&profile, c, &shape).unwrap() < latency)
            .count();
        worst_rank = worst_rank.max(rank);
        if rank < 25 {
            good += 1;
        }
    }
    ensure(good >= 95, || {
        format!("only {good}/100 seeds within the top 5%")
    })?;
    Ok(format!(
        "{good}/100 seeds within the top 5% (worst rank {worst_rank} of 500), budget 125"
    ))
}

const MNEMONICS: &[&str] = &[
    "mov.u32",
    "add.s32",
    "ld.global.v4.b32",
    "st.shared.f32",
    "fma.rn.f32",
    "setp.lt.s32",
    "bra.uni",
    "v_add_f32",
    "s_waitcnt",
    "ret",
];

fn random_operand(rng: &mut impl Rng) -> String {
    match rng.random_range(0..6) {
        0 => format!("%r{}", rng.random_range(0..100)),
        1 => format!("0x{:x}", rng.random::<u16>()),
        2 => rng.random_range(-999..999).to_string(),
        3 => format!(
            "[%rd{}+{}]",
            rng.random_range(0..9),
            rng.random_range(0..512)
        ),
        4 => format!(
            "{{%f{}, %f{}}}",
            rng.random_range(0..9),
            rng.random_range(0..9)
        ),
        _ => format!("0f{:08X}", rng.random::<u32>()),
    }
}

fn render_program(program: &[(Option<u8>, &str)], rng: &mut impl Rng) -> String {
    let mut text = String::new();
    for (guard, mnemonic) in program {
        if let Some(p) = guard {
            text.push_str(&format!("@%p{p} "));
        }
        let operands: Vec<String> = (0..rng.random_range(0..4))
            .map(|_| random_operand(rng))
            .collect();
        text.push_str(&format!("{mnemonic} {};", operands.join(", ")));
        text.push(if rng.random_bool(0.3) { ' ' } else { '\n' });
    }
    text
}

fn asm_counting() -> Check {
    let expected: BTreeMap<String, Json> =
        serde_json::from_str(&fs::read_to_string(fixture("asm/expected.json")).unwrap()).unwrap();
    let out_dir = TempDir::new().unwrap();
    let corpus = fixture("asm/corpus");
    let out = ktune(&[
        "analyze-asm",
        corpus.to_str().unwrap(),
        "--out-dir",
        out_dir.path().to_str().unwrap(),
        "--json",
    ]);
    ensure(out.status.success(), || {
        String::from_utf8_lossy(&out.stderr).into_owned()
    })?;
    let report: Json =
        serde_json::from_str(&fs::read_to_string(out_dir.path().join("diversity.json")).unwrap())
            .map_err(|e| e.to_string())?;
    let sources = report["sources"].as_array().ok_or("no sources")?;
    ensure(
        expected.len() >= 20 && sources.len() == expected.len(),
        || {
            format!(
                "{} sources for {} expectations",
                sources.len(),
                expected.len()
            )
        },
    )?;
    for (file, want) in &expected {
        let id = Path::new(file).file_stem().unwrap().to_str().unwrap();
        let got = sources
            .iter()
            .find(|s| s["id"] == id)
            .ok_or_else(|| format!("{id} missing"))?;
        ensure(
            got["unique"] == want["unique"] && got["total"] == want["total"],
            || {
                format!(
                    "{file}: got {}/{} want {}/{}",
                    got["unique"], got["total"], want["unique"], want["total"]
                )
            },
        )?;
    }
    let mut rng = seeded(2024);
    let programs = 300;
    for _ in 0..programs {
        let program: Vec<(Option<u8>, &str)> = (0..rng.random_range(0..30))
            .map(|_| {
                let guard = rng.random_bool(0.2).then(|| rng.random_range(0..4));
                (guard, *MNEMONICS.choose(&mut rng).unwrap())
            })
            .collect();
        let want: Vec<String> = program.iter().map(|(_, m)| m.to_string()).collect();
        let a = parse_asm(&AsmDoc::new("a", render_program(&program, &mut rng))).mnemonics;
        let b = parse_asm(&AsmDoc::new("b", render_program(&program, &mut rng))).mnemonics;
        ensure(a == want && b == want, || {
            format!("operand rewrite changed mnemonics: {a:?} / {b:?}")
        })?;
    }
    Ok(format!(
        "{} corpus snippets exact, {programs} operand rewrites identical",
        expected.len()
    ))
}

const HAND_TABLE: &str = "\
impl,seq_len,batch,median_ms
base,512,1,2.0
base,512,2,4.0
base,512,4,8.0
cand,512,1,1.0
cand,512,2,3.0
cand,512,4,5.0
base,1024,1,4.0
base,1024,2,6.0
base,1024,4,10.0
cand,1024,1,2.0
cand,1024,2,5.0
cand,1024,4,8.0
";

fn rel_close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn all_close(got: &[f64], want: &[f64]) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(a, b)| rel_close(*a, *b))
}

fn random_table(rng: &mut impl Rng) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    let seqs = rng.random_range(1..=4);
    let batches = rng.random_range(1..=5);
    for imp in ["base", "cand"] {
        for s in 0..seqs {
            for b in 0..batches {
                rows.push(BenchRow {
                    impl_name: imp.into(),
                    shape: ShapeKey::from_pairs([("seq_len", 128i64 << s), ("batch", 1i64 << b)])
                        .unwrap(),
                    median_ms: rng.random_range(1e-3..1e3),
                });
            }
        }
    }
    rows
}

fn normalization_and_cdf() -> Check {
    let table = BenchmarkTable::from_csv(HAND_TABLE).map_err(|e| e.to_string())?;
    ensure(table.rows().len() == 12, || {
        "hand table must have 12 rows".into()
    })?;
    let per_group =
        normalize(&table, "base", "batch", Anchor::PerGroup).map_err(|e| e.to_string())?;
    let got: Vec<f64> = per_group.rows.iter().map(|r| r.normalized).collect();
    let want = [1.0, 2.0, 4.0, 0.5, 1.5, 2.5, 1.0, 1.5, 2.5, 0.5, 1.25, 2.0];
    ensure(all_close(&got, &want), || {
        format!("per-group normalized {got:?}")
    })?;
    ensure(got[0] == 1.0 && got[6] == 1.0, || {
        "leftmost baseline values are not exactly 1.0".into()
    })?;
    let global = normalize(&table, "base", "batch", Anchor::Global).map_err(|e| e.to_string())?;
    let got: Vec<f64> = global.rows.iter().map(|r| r.normalized).collect();
    let want = [1.0, 2.0, 4.0, 0.5, 1.5, 2.5, 2.0, 3.0, 5.0, 1.0, 2.5, 4.0];
    ensure(all_close(&got, &want), || {
        format!("global normalized {got:?}")
    })?;

    let cdf =
        relative_cdf(&table.select("cand"), &table.select("base")).map_err(|e| e.to_string())?;
    let want = [1.2, 1.25, 4.0 / 3.0, 1.6, 2.0, 2.0];
    ensure(all_close(&cdf.ratios(), &want), || {
        format!("cdf ratios {:?}", cdf.ratios())
    })?;
    let mean = want.iter().sum::<f64>() / 6.0;
    let s = &cdf.summary;
    ensure(
        rel_close(s.mean, mean) && s.min == 1.2 && s.max == 2.0 && s.frac_ge_1 == 1.0,
        || format!("cdf summary {s:?}"),
    )?;

    let mut rng = seeded(99);
    let tables = 50;
    for i in 0..tables {
        let rows = random_table(&mut rng);
        let c = 10f64.powf(rng.random_range(-6.0..6.0));
        let scaled: Vec<BenchRow> = rows
            .iter()
            .map(|r| BenchRow {
                median_ms: r.median_ms * c,
                ..r.clone()
            })
            .collect();
        let (t1, t2) = (
            BenchmarkTable::new(rows).unwrap(),
            BenchmarkTable::new(scaled).unwrap(),
        );
        let n1 = normalize(&t1, "base", "batch", Anchor::PerGroup).map_err(|e| e.to_string())?;
        let n2 = normalize(&t2, "base", "batch", Anchor::PerGroup).map_err(|e| e.to_string())?;
        let v1: Vec<f64> = n1.rows.iter().map(|r| r.normalized).collect();
        let v2: Vec<f64> = n2.rows.iter().map(|r| r.normalized).collect();
        ensure(all_close(&v1, &v2), || {
            format!("table {i}: normalization not scale invariant")
        })?;
        let r1 = relative_cdf(&t1.select("cand"), &t1.select("base")).map_err(|e| e.to_string())?;
        let r2 = relative_cdf(&t2.select("cand"), &t2.select("base")).map_err(|e| e.to_string())?;
        ensure(all_close(&r1.ratios(), &r2.ratios()), || {
            format!("table {i}: cdf not scale invariant")
        })?;
    }
    Ok(format!(
        "12-row table exact, {tables} random tables scale invariant to 1e-12"
    ))
}

fn transfer_adversarial() -> Check {
    let space = parse_space(
        r#"{"name": "tiles", "params": [
            {"name": "BLOCK_M", "kind": "int-list", "values": [16, 64, 128, 256]},
            {"name": "BLOCK_N", "kind": "pow2-range", "lo": 16, "hi": 128},
            {"name": "num_warps", "kind": "int-list", "values": [1, 2, 4, 8]}
        ]}"#,
    )
    .unwrap();
    // BLOCK_M 16 and 64 tie exactly on A; its noise picks one per shape.
    let a = CostProfile::from_json(
        r#"{"base": 1.0,
            "targets": {"BLOCK_M": 32, "BLOCK_N": 64, "num_warps": 4},
            "weights": {"BLOCK_M": 1.0, "BLOCK_N": 0.5, "num_warps": 0.5},
            "noise": {"seed": 7, "rel": 0.05}}"#,
    )
    .map_err(|e| e.to_string())?;
    let b = CostProfile::from_json(
        r#"{"base": 1.0,
            "targets": {"BLOCK_M": 256, "BLOCK_N": 64, "num_warps": 4},
            "weights": {"BLOCK_M": 3.0, "BLOCK_N": 0.5, "num_warps": 0.5},
            "invalid_rules": ["BLOCK_M == 64"]}"#,
    )
    .map_err(|e| e.to_string())?;
    let shapes: Vec<ShapeKey> = (1..=16).map(noise_free).collect();
    let mut on_a = SyntheticEvaluator::new(a, &space).unwrap();
    let mut on_b = SyntheticEvaluator::new(b, &space).unwrap();
    let mut from = Vec::new();
    let mut to = Vec::new();
    for s in &shapes {
        from.push(exhaustive(&space, s, &mut on_a)?);
        to.push(exhaustive(&space, s, &mut on_b)?);
    }
    let cells = transfer_analysis(&from, &space, &shapes, &mut on_b, &to, PLAN)
        .map_err(|e| e.to_string())?;
    let expected_perf = 1.0 / (1.0 + 3.0 * (16f64 / 256.0).log2().abs());
    let (mut slow, mut invalid, mut worst) = (0, 0, 0f64);
    for cell in &cells {
        let m = cell.config.as_ref().and_then(|c| c.get("BLOCK_M").cloned());
        match (&cell.status, m) {
            (TransferStatus::Measured, Some(Value::Int(16))) => {
                let r = cell.relative_perf.unwrap();
                ensure(rel_close(r, expected_perf) && r < 0.1, || {
                    format!("relative perf {r}")
                })?;
                worst = worst.max(r);
                slow += 1;
            }
            (TransferStatus::Invalid { .. }, Some(Value::Int(64))) => invalid += 1,
            (status, m) => return Err(format!("unexpected cell {status:?} for BLOCK_M={m:?}")),
        }
    }
    ensure(slow > 0 && invalid > 0, || {
        format!("{slow} slow and {invalid} invalid cells")
    })?;
    Ok(format!(
        "{} shapes: {slow} transfers at relative perf {worst:.4} (< 0.1), {invalid} invalid markers",
        cells.len()
    ))
}

fn synth_runner(profile: &Path, space: &Path, faults: &[&str]) -> Vec<String> {
    let mut args = vec![
        "synth-runner".to_string(),
        "--profile".into(),
        profile.to_string_lossy().into_owned(),
        "--space".into(),
        space.to_string_lossy().into_owned(),
    ];
    for f in faults {
        args.push("--fault".into());
        args.push((*f).into());
    }
    args
}

fn describe(outcome: &EvalOutcome) -> String {
    match outcome {
        EvalOutcome::Ok(_) => "ok".into(),
        EvalOutcome::Invalid { .. } => "invalid".into(),
        EvalOutcome::Failure {
            transient: true, ..
        } => "transient failure".into(),
        EvalOutcome::Failure {
            transient: false, ..
        } => "hard failure".into(),
    }
}

fn protocol_robustness() -> Check {
    let space_path = fixture("spaces/vector_add.space.json");
    let profile_path = fixture("profiles/vector_add.profile.json");
    let space = parse_space(&fs::read_to_string(&space_path).unwrap()).unwrap();
    let shape = noise_free(1 << 20);
    let config = space.enumerate().next().unwrap().unwrap();
    let plan = EvalPlan {
        warmups: 1,
        reps: 3,
        timeout_ms: 300,
    };
    let session = |faults: &[&str]| {
        RunnerSession::start(
            RunnerCommand::new(KTUNE, synth_runner(&profile_path, &space_path, faults)),
            space.digest(),
            Duration::from_secs(10),
        )
    };

    // Session level: fault -> outcome of successive evaluations.
    let table: [(&str, &[&str], &[&str]); 5] = [
        ("none", &[], &["ok", "ok"]),
        ("garbled", &["garbled"], &["hard failure", "hard failure"]),
        (
            "silence",
            &["silence"],
            &["transient failure", "transient failure"],
        ),
        ("death", &["die-after=1"], &["ok", "hard failure", "ok"]),
        ("error", &["error"], &["hard failure"]),
    ];
    for (name, faults, want) in table {
        let mut s = session(faults).map_err(|e| format!("{name}: {e}"))?;
        let got: Vec<String> = want
            .iter()
            .map(|_| describe(&s.evaluate(&config, &shape, &plan).outcome))
            .collect();
        ensure(got == want, || {
            format!("{name}: outcomes {got:?}, expected {want:?}")
        })?;
    }
    match session(&["version"]) {
        Err(RunnerError::Protocol(ProtocolError::VersionMismatch { .. })) => {}
        Err(e) => return Err(format!("version: wrong error {e}")),
        Ok(_) => return Err("version: handshake accepted a mismatched version".into()),
    }

    // CLI level: fault -> exit status of tune and runner-check.
    let cli_table: [(&str, &[&str], i32, i32); 5] = [
        ("none", &[], 0, 0),
        ("garbled", &["garbled"], 1, 1),
        ("version", &["version"], 1, 1),
        ("silence", &["silence"], 2, 1),
        ("death", &["die-after=0"], 1, 1),
    ];
    for (name, faults, tune_code, check_code) in cli_table {
        let cache = TempDir::new().unwrap();
        let mut runner = vec![KTUNE.to_string()];
        runner.extend(synth_runner(&profile_path, &space_path, faults));
        let runner = runner.join(" ");
        let out = ktune(&[
            "tune",
            "--runner",
            &runner,
            "--space",
            space_path.to_str().unwrap(),
            "--shape",
            "n=1048576",
            "--reps",
            "3",
            "--warmups",
            "1",
            "--timeout-ms",
            "100",
            "--cache-dir",
            cache.path().to_str().unwrap(),
        ]);
        ensure(out.status.code() == Some(tune_code), || {
            format!(
                "{name}: tune exited {:?}, expected {tune_code}",
                out.status.code()
            )
        })?;
        let out = ktune(&[
            "runner-check",
            "--runner",
            &runner,
            "--space",
            space_path.to_str().unwrap(),
            "--timeout-ms",
            "500",
        ]);
        ensure(out.status.code() == Some(check_code), || {
            format!(
                "{name}: runner-check exited {:?}, expected {check_code}",
                out.status.code()
            )
        })?;
    }

    // Tuning through 10% transient faults still finds the oracle best.
    let dir = TempDir::new().unwrap();
    let space_path = fixture("spaces/rms_norm.space.json");
    let space = parse_space(&fs::read_to_string(&space_path).unwrap()).unwrap();
    let mut profile: Json = serde_json::from_str(
        &fs::read_to_string(fixture("profiles/rms_norm.a100.profile.json")).unwrap(),
    )
    .unwrap();
    profile.as_object_mut().unwrap().remove("noise");
    let profile_path = dir.path().join("rms_norm.quiet.profile.json");
    fs::write(&profile_path, profile.to_string()).unwrap();
    let shape: ShapeKey = "tokens=4096,hidden=8192".parse().unwrap();
    let model = CostProfile::from_json(&profile.to_string()).map_err(|e| e.to_string())?;
    let configs: Vec<KernelConfig> = space.enumerate().map(Result::unwrap).collect();
    let (oracle, _) = argmin(&model, configs.iter(), &shape).unwrap();
    let mut runner = vec![KTUNE.to_string()];
    runner.extend(synth_runner(
        &profile_path,
        &space_path,
        &["transient-rate=0.1"],
    ));
    runner.push("--fault-state".into());
    runner.push(dir.path().join("faults").to_string_lossy().into_owned());
    let out = ktune(&[
        "tune",
        "--runner",
        &runner.join(" "),
        "--space",
        space_path.to_str().unwrap(),
        "--shape",
        "tokens=4096,hidden=8192",
        "--reps",
        "3",
        "--warmups",
        "0",
        "--timeout-ms",
        "200",
        "--cache-dir",
        dir.path().join("cache").to_str().unwrap(),
        "--json",
    ]);
    ensure(out.status.success(), || {
        format!(
            "transient tune failed: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    let summary = json_lines(&out)?.pop().ok_or("no summary")?;
    let failed = summary["counters"]["failed"].as_u64().unwrap_or(0);
    let got = best_digest(&summary);
    ensure(failed > 0, || "no transient fault was injected".into())?;
    ensure(got.as_deref() == Some(oracle.as_str()), || {
        format!("best {got:?}, oracle {oracle}")
    })?;
    Ok(format!(
        "session table 6/6, CLI exit table 5/5, oracle best through {failed} transient faults in {} configs",
        configs.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle equivalence", oracle_equivalence, Some(60.0)),
        ("cross-process cache replay", cache_replay, Some(5.0)),
        ("fingerprint sensitivity", fingerprint_sensitivity, None),
        ("invalid-config safety", invalid_config_safety, None),
        ("halving quality", halving_quality, Some(120.0)),
        ("asm counting", asm_counting, None),
        (
            "normalization and cdf arithmetic",
            normalization_and_cdf,
            None,
        ),
        (
            "transfer qualitative reproduction",
            transfer_adversarial,
            Some(5.0),
        ),
        ("protocol robustness", protocol_robustness, None),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if secs > l => Err(format!("took {secs:.1} s, limit {l} s")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.2} s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason} [{secs:.2} s]");
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
