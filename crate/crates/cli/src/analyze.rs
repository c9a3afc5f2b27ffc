use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ktune_core::asmstats::{diversity_report, stats, AsmDoc};

use crate::exit::{CmdResult, Failure, OK};
use crate::AsmArgs;

const EXTENSIONS: [&str; 3] = ["ptx", "s", "asm"];

fn has_asm_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn collect(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("listing {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && has_asm_extension(p))
                .collect();
            found.sort();
            files.extend(found);
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            return Err(Failure::usage(format!(
                "{}: no such file or directory",
                input.display()
            )));
        }
    }
    if files.is_empty() {
        return Err(Failure::usage("no .ptx, .s or .asm listings found"));
    }
    Ok(files)
}

pub fn run(args: AsmArgs) -> CmdResult {
    let files = collect(&args.inputs)?;
    let mut list = Vec::with_capacity(files.len());
    for f in &files {
        let doc = AsmDoc::load(f).with_context(|| format!("reading {}", f.display()))?;
        let s = stats(&doc);
        if s.diagnostics > 0 {
            log::info!(
                "{}: {} unparseable fragments skipped",
                f.display(),
                s.diagnostics
            );
        }
        list.push(s);
    }
    let report = diversity_report(&list, args.best.as_deref())?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let csv_path = args.out_dir.join("diversity.csv");
    let json_path = args.out_dir.join("diversity.json");
    fs::write(&csv_path, report.to_csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&report.to_json())? + "\n",
    )
    .with_context(|| format!("writing {}", json_path.display()))?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        for r in &report.rows {
            println!(
                "{:<32} unique {:>5}  total {:>7}{}",
                r.source_id,
                r.unique,
                r.total,
                if r.best { "  (best)" } else { "" }
            );
        }
        println!(
            "max unique {}  max total {}",
            report.max_unique, report.max_total
        );
    }
    Ok(OK)
}
