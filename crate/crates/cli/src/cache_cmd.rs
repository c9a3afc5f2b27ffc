use anyhow::Context;
use ktune_core::cache::{self, Bundle, CacheKey, CacheStore};
use serde_json::json;

use crate::exit::{CmdResult, Failure, OK};
use crate::inputs;
use crate::{CacheArgs, CacheCmd};

fn resolve(store: &CacheStore, text: &str) -> Result<CacheKey, Failure> {
    match store.resolve(text) {
        Ok(Some(key)) => Ok(key),
        Ok(None) => Err(Failure::not_found(format!(
            "no cache entry matches `{text}`"
        ))),
        Err(cache::CacheError::AmbiguousKey(k)) => Err(Failure::usage(format!(
            "key `{k}` is ambiguous; give more characters"
        ))),
        Err(e) => Err(e.into()),
    }
}

pub fn run(args: CacheArgs) -> CmdResult {
    let root = args.cache_dir.unwrap_or_else(cache::default_root);
    let store = CacheStore::open(&root)?;
    match args.command {
        CacheCmd::List { json } => {
            let mut rows = Vec::new();
            for item in store.list()? {
                let entry = store.get(&item.key)?;
                rows.push((item, entry));
            }
            if json {
                let list: Vec<_> = rows
                    .iter()
                    .map(|(item, entry)| {
                        json!({
                            "key": item.key.to_string(),
                            "file": item.file,
                            "shape": entry.as_ref().map(|e| e.shape.to_string()),
                            "best_median_ms": entry.as_ref().and_then(|e| e.result.best_median_ms()),
                            "created_at": entry.as_ref().map(|e| e.created_at),
                            "readable": entry.is_some(),
                        })
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&list)?);
            } else {
                println!("{:<18} {:>14}  {:<24} shape", "entry", "best_ms", "created");
                for (item, entry) in &rows {
                    let stem = item.file.trim_end_matches(".result.json");
                    match entry {
                        Some(e) => println!(
                            "{stem:<18} {:>14}  {:<24} {}",
                            e.result
                                .best_median_ms()
                                .map_or("-".to_string(), |m| format!("{m:.4}")),
                            e.created_at.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
                            e.shape
                        ),
                        None => println!("{stem:<18} {:>14}  {:<24} (unreadable)", "-", "-"),
                    }
                }
            }
            Ok(OK)
        }
        CacheCmd::Show { key } => {
            let key = resolve(&store, &key)?;
            let entry = store
                .get(&key)?
                .ok_or_else(|| Failure::not_found(format!("entry {key} is unreadable")))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::to_value(&entry)?)?
            );
            Ok(OK)
        }
        CacheCmd::Invalidate { key } => {
            let key = resolve(&store, &key)?;
            if !store.invalidate(&key)? {
                return Err(Failure::not_found(format!("no cache entry {key}")));
            }
            println!("invalidated {key}");
            Ok(OK)
        }
        CacheCmd::Export { keys, out } => {
            let keys = keys
                .iter()
                .map(|k| resolve(&store, k))
                .collect::<Result<Vec<_>, _>>()?;
            let bundle = store.export_bundle(&keys)?;
            let mut text = bundle.to_json();
            text.push('\n');
            inputs::write_output(out.as_deref(), &text)?;
            if out.is_some() {
                eprintln!("exported {} entries", bundle.entries.len());
            }
            Ok(OK)
        }
        CacheCmd::Import { bundle } => {
            let text = inputs::read_file(&bundle)?;
            let parsed = Bundle::from_json(&text)
                .with_context(|| format!("reading bundle {}", bundle.display()))?;
            let written = store.import_bundle(&parsed)?;
            println!("imported {written} of {} entries", parsed.entries.len());
            Ok(OK)
        }
    }
}
