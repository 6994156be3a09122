use std::fs;

use air_core::harness::{chair_metrics, Caption, ChairScores};
use serde::Serialize;

use crate::args::ChairArgs;
use crate::error::{CliError, CliResult};
use crate::output::write_json;

#[derive(Serialize)]
struct Report {
    captions: usize,
    #[serde(flatten)]
    scores: ChairScores,
}

pub fn run(a: &ChairArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.captions)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", a.captions.display())))?;
    let captions: Vec<Caption<String>> = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", a.captions.display())))?;
    let scores = chair_metrics(&captions)?;
    if scores.no_mentions {
        log::warn!("no object mentions; CHAIR_I reported as 0");
    }
    write_json(
        &a.out,
        &Report {
            captions: captions.len(),
            scores,
        },
    )?;
    println!("CHAIR_I {} CHAIR_S {}", scores.chair_i, scores.chair_s);
    Ok(())
}
