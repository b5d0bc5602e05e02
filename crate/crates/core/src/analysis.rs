//! Per-generation statistics, rank correlation and the run CSV.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evolution::Individual;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_trained: f64,
    pub best_initial: f64,
    pub mean_trained: f64,
    pub sd_trained: f64,
    pub mean_initial: f64,
    pub sd_initial: f64,
    pub mean_size: f64,
    pub sd_size: f64,
    pub best_size: usize,
    pub largest_size: usize,
    pub mean_active_frac: f64,
    pub best_active_frac: f64,
    pub largest_active_frac: f64,
    pub invalid_count: usize,
}

pub const CSV_COLUMNS: [&str; 15] = [
    "generation",
    "best_trained",
    "best_initial",
    "mean_trained",
    "sd_trained",
    "mean_initial",
    "sd_initial",
    "mean_size",
    "sd_size",
    "best_size",
    "largest_size",
    "mean_active_frac",
    "best_active_frac",
    "largest_active_frac",
    "invalid_count",
];

/// Mean and population standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Index of the fittest individual; the earliest wins ties.
fn fittest(population: &[Individual]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, ind) in population.iter().enumerate() {
        if best.is_none_or(|b| ind.fitness > population[b].fitness) {
            best = Some(i);
        }
    }
    best
}

fn largest(population: &[Individual]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, ind) in population.iter().enumerate() {
        if best.is_none_or(|b| ind.size > population[b].size) {
            best = Some(i);
        }
    }
    best
}

/// Statistics of an evaluated population. `invalid_count` is the number of
/// individuals discarded by the validity filter in that generation.
pub fn generation_stats(population: &[Individual], generation: usize, invalid_count: usize) -> GenerationStats {
    let trained: Vec<f64> = population.iter().map(|i| i.fitness).collect();
    let initial: Vec<f64> = population.iter().map(|i| i.initial_performance).collect();
    let sizes: Vec<f64> = population.iter().map(|i| i.size as f64).collect();
    let fracs: Vec<f64> = population.iter().map(|i| i.active_fraction).collect();
    let (mean_trained, sd_trained) = mean_sd(&trained);
    let (mean_initial, sd_initial) = mean_sd(&initial);
    let (mean_size, sd_size) = mean_sd(&sizes);
    let (mean_active_frac, _) = mean_sd(&fracs);
    let best = fittest(population).map(|i| &population[i]);
    let big = largest(population).map(|i| &population[i]);
    GenerationStats {
        generation,
        best_trained: best.map_or(f64::NAN, |b| b.fitness),
        best_initial: best.map_or(f64::NAN, |b| b.initial_performance),
        mean_trained,
        sd_trained,
        mean_initial,
        sd_initial,
        mean_size,
        sd_size,
        best_size: best.map_or(0, |b| b.size),
        largest_size: big.map_or(0, |b| b.size),
        mean_active_frac,
        best_active_frac: best.map_or(f64::NAN, |b| b.active_fraction),
        largest_active_frac: big.map_or(f64::NAN, |b| b.active_fraction),
        invalid_count,
    }
}

/// Rank correlation between spring count and trained fitness.
pub fn size_fitness_correlation(individuals: &[Individual]) -> Result<f64> {
    let sizes: Vec<f64> = individuals.iter().map(|i| i.size as f64).collect();
    let fitness: Vec<f64> = individuals.iter().map(|i| i.fitness).collect();
    spearman(&sizes, &fitness)
}

/// One CSV row, columns as in [`CSV_COLUMNS`].
pub(crate) fn stats_row(g: &GenerationStats) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        g.generation,
        g.best_trained,
        g.best_initial,
        g.mean_trained,
        g.sd_trained,
        g.mean_initial,
        g.sd_initial,
        g.mean_size,
        g.sd_size,
        g.best_size,
        g.largest_size,
        g.mean_active_frac,
        g.best_active_frac,
        g.largest_active_frac,
        g.invalid_count
    )
}

pub(crate) fn parse_stats_row(row: &str, line_no: usize) -> Result<GenerationStats> {
    let fields: Vec<&str> = row.split(',').map(str::trim).collect();
    if fields.len() != CSV_COLUMNS.len() {
        return Err(Error::parse(
            line_no,
            format!("expected {} fields, got {}", CSV_COLUMNS.len(), fields.len()),
        ));
    }
    let f = |k: usize| -> Result<f64> {
        fields[k]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad number in column {}", CSV_COLUMNS[k])))
    };
    let u = |k: usize| -> Result<usize> {
        fields[k]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad integer in column {}", CSV_COLUMNS[k])))
    };
    Ok(GenerationStats {
        generation: u(0)?,
        best_trained: f(1)?,
        best_initial: f(2)?,
        mean_trained: f(3)?,
        sd_trained: f(4)?,
        mean_initial: f(5)?,
        sd_initial: f(6)?,
        mean_size: f(7)?,
        sd_size: f(8)?,
        best_size: u(9)?,
        largest_size: u(10)?,
        mean_active_frac: f(11)?,
        best_active_frac: f(12)?,
        largest_active_frac: f(13)?,
        invalid_count: u(14)?,
    })
}

/// CSV text: a `# config_hash=` comment, the header, then one row per entry.
pub fn run_csv(stats: &[GenerationStats], config_hash: &str) -> String {
    let mut s = format!("# config_hash={config_hash}\n{}\n", CSV_COLUMNS.join(","));
    for g in stats {
        let _ = writeln!(s, "{}", stats_row(g));
    }
    s
}

pub fn export_run_csv(stats: &[GenerationStats], config_hash: &str, path: &Path) -> Result<()> {
    std::fs::write(path, run_csv(stats, config_hash)).map_err(|e| Error::io(path, e))
}

/// Parses [`run_csv`] output; returns the embedded config hash, if any.
pub fn parse_run_csv(text: &str) -> Result<(Option<String>, Vec<GenerationStats>)> {
    let mut hash = None;
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(h) = rest.trim().strip_prefix("config_hash=") {
                hash = Some(h.to_string());
            }
            continue;
        }
        if !header_seen {
            if line.split(',').ne(CSV_COLUMNS) {
                return Err(Error::parse(i + 1, "unexpected run CSV header"));
            }
            header_seen = true;
            continue;
        }
        rows.push(parse_stats_row(line, i + 1)?);
    }
    if !header_seen {
        return Err(Error::parse(1, "missing run CSV header"));
    }
    Ok((hash, rows))
}
