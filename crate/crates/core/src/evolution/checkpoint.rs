//! Plain-text run checkpoints.
//!
//! ```text
//! # diffbots checkpoint
//! config_hash <hex>
//! seed <u64>
//! generation <g>
//! next_id <id>
//! evaluated <count>
//! individual <id> <birth> <valid> <fitness> <initial> <size> <active_frac> <a> <b> <geometry> <springs>
//! stats <run CSV row>
//! ```
//!
//! Random streams are keyed by seed, generation and slot, so the seed and
//! generation are the whole generator state.

use std::fmt::Write as _;
use std::path::Path;

use super::{Individual, RunLog};
use crate::analysis::{parse_stats_row, stats_row};
use crate::error::{Error, Result};
use crate::lattice::Genome;

const MAGIC: &str = "# diffbots checkpoint";

pub fn to_text(log: &RunLog, config_hash: &str, seed: u64) -> String {
    let mut s = format!("{MAGIC}\nconfig_hash {config_hash}\nseed {seed}\n");
    let _ = writeln!(s, "generation {}", log.generation);
    let _ = writeln!(s, "next_id {}", log.next_id);
    let _ = writeln!(s, "evaluated {}", log.evaluated);
    for ind in &log.population {
        let _ = writeln!(
            s,
            "individual {} {} {} {} {} {} {} {}",
            ind.id,
            ind.birth_generation,
            ind.valid as u8,
            ind.fitness,
            ind.initial_performance,
            ind.size,
            ind.active_fraction,
            ind.genome
        );
    }
    for g in &log.history {
        let _ = writeln!(s, "stats {}", stats_row(g));
    }
    s
}

/// Header fields of a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub config_hash: String,
    pub seed: u64,
}

fn field<T: std::str::FromStr>(value: &str, line: usize, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parse(line, format!("bad {what}: {value:?}")))
}

/// Parses a checkpoint and its header.
pub fn parse(text: &str) -> Result<(CheckpointHeader, RunLog)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(Error::parse(1, "not a checkpoint file")),
    }
    let mut hash = None;
    let mut seed = None;
    let mut generation = None;
    let mut next_id = None;
    let mut evaluated = None;
    let mut population = Vec::new();
    let mut history = Vec::new();
    for (no, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        let rest = rest.trim();
        match key {
            "config_hash" => hash = Some(rest.to_string()),
            "seed" => seed = Some(field(rest, no, "seed")?),
            "generation" => generation = Some(field(rest, no, "generation")?),
            "next_id" => next_id = Some(field(rest, no, "next_id")?),
            "evaluated" => evaluated = Some(field(rest, no, "evaluated")?),
            "individual" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 11 {
                    return Err(Error::parse(no, format!("individual needs 11 fields, got {}", parts.len())));
                }
                let genome: Genome = parts[7..]
                    .join(" ")
                    .parse()
                    .map_err(|e| Error::parse(no, format!("genome: {e}")))?;
                population.push(Individual {
                    id: field(parts[0], no, "id")?,
                    birth_generation: field(parts[1], no, "birth generation")?,
                    valid: field::<u8>(parts[2], no, "valid flag")? != 0,
                    fitness: field(parts[3], no, "fitness")?,
                    initial_performance: field(parts[4], no, "initial performance")?,
                    size: field(parts[5], no, "size")?,
                    active_fraction: field(parts[6], no, "active fraction")?,
                    genome,
                    train_result: None,
                });
            }
            "stats" => history.push(parse_stats_row(rest, no)?),
            other => return Err(Error::parse(no, format!("unknown key {other:?}"))),
        }
    }
    let missing = |what: &str| Error::parse(0, format!("checkpoint lacks {what}"));
    let header = CheckpointHeader {
        config_hash: hash.ok_or_else(|| missing("config_hash"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
    };
    let log = RunLog {
        generation: generation.ok_or_else(|| missing("generation"))?,
        next_id: next_id.ok_or_else(|| missing("next_id"))?,
        evaluated: evaluated.ok_or_else(|| missing("evaluated"))?,
        population,
        history,
    };
    if log.history.len() != log.generation + 1 {
        return Err(Error::parse(
            0,
            format!("{} stats rows for generation {}", log.history.len(), log.generation),
        ));
    }
    Ok((header, log))
}

/// Parses a checkpoint, refusing one written under a different config.
pub fn from_text(text: &str, expected_hash: Option<&str>) -> Result<RunLog> {
    let (header, log) = parse(text)?;
    if let Some(expected) = expected_hash {
        if header.config_hash != expected {
            return Err(Error::ConfigHashMismatch {
                expected: expected.to_string(),
                found: header.config_hash,
            });
        }
    }
    Ok(log)
}

pub fn write(path: &Path, log: &RunLog, config_hash: &str, seed: u64) -> Result<()> {
    std::fs::write(path, to_text(log, config_hash, seed)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path, expected_hash: Option<&str>) -> Result<RunLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, expected_hash)
}
