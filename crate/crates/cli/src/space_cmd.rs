use std::io::{self, BufWriter, Write};

use serde_json::json;

use crate::exit::{CmdResult, Failure, OK};
use crate::inputs;
use crate::SpaceCmd;

pub fn run(cmd: SpaceCmd) -> CmdResult {
    match cmd {
        SpaceCmd::Check { file, json } => {
            let space = inputs::load_space(&file)?;
            if json {
                println!(
                    "{}",
                    json!({
                        "name": space.name(),
                        "digest": space.digest(),
                        "params": space.params().len(),
                        "constraints": space.constraints().iter().map(|c| c.canonical()).collect::<Vec<_>>(),
                    })
                );
            } else {
                println!("{}: ok", file.display());
                println!("name     {}", space.name());
                println!("digest   {}", space.digest());
                println!("params   {}", space.params().len());
                for c in space.constraints() {
                    println!("require  {}", c.canonical());
                }
            }
            Ok(OK)
        }
        SpaceCmd::Count { file, json } => {
            let space = inputs::load_space(&file)?;
            let (raw, valid) = space.cardinality().map_err(Failure::hard)?;
            if json {
                println!(
                    "{}",
                    json!({ "raw": raw.to_string(), "valid": valid.to_string() })
                );
            } else {
                println!("raw    {raw}");
                println!("valid  {valid}");
            }
            Ok(OK)
        }
        SpaceCmd::Enumerate { file, limit } => {
            let space = inputs::load_space(&file)?;
            let stdout = io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            for config in space.enumerate().take(limit.unwrap_or(usize::MAX)) {
                let config = config.map_err(Failure::hard)?;
                let line = serde_json::to_string(&config)?;
                if writeln!(out, "{line}").is_err() {
                    // reader went away, e.g. `| head`
                    return Ok(OK);
                }
            }
            let _ = out.flush();
            Ok(OK)
        }
    }
}
