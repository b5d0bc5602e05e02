//! Generational loop: variation, parallel training, filtering, truncation
//! selection.

pub mod checkpoint;
pub mod variation;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{generation_stats, GenerationStats};
use crate::error::{Error, Result};
use crate::lattice::{build_lattice_index, decode_with, random_genome, Genome, LatticeDims, LatticeIndex};
use crate::learning::{train, LearnConfig, TrainResult};
use crate::rng::{stream, Purpose};
use crate::simulator::contact::FrictionMode;
use crate::simulator::SimConfig;
use crate::terrain::Terrain;

pub use variation::{
    align_and_cross_geometry, align_masks, combine_aligned, crossover_springs, flip_bits, mutate_geometry,
    mutate_springs, random_zero, CrossoverMethod, MaskingFractions,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub crossover_enabled: bool,
    pub crossover_prob: f64,
    pub crossover_method: CrossoverMethod,
    pub distinct_zero_frac: f64,
    pub joint_zero_frac: f64,
    /// Largest allowed change in loss between consecutive learning
    /// iterations, in meters.
    pub loss_delta_threshold: f64,
    /// Set from the run-level seed, not read from the config table.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            pop_size: 32,
            generations: 30,
            crossover_enabled: false,
            crossover_prob: 0.8,
            crossover_method: CrossoverMethod::Distinct,
            distinct_zero_frac: 0.35,
            joint_zero_frac: 0.25,
            loss_delta_threshold: 1.0,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 {
            return Err(Error::Config(format!("pop_size must be >= 2, got {}", self.pop_size)));
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("distinct_zero_frac", self.distinct_zero_frac),
            ("joint_zero_frac", self.joint_zero_frac),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.loss_delta_threshold > 0.0) {
            return Err(Error::Config("loss_delta_threshold must be positive".into()));
        }
        Ok(())
    }

    fn fractions(&self) -> MaskingFractions {
        MaskingFractions {
            distinct: self.distinct_zero_frac,
            joint: self.joint_zero_frac,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    /// Unique within a run, assigned in slot order.
    pub id: u64,
    pub birth_generation: usize,
    pub genome: Genome,
    /// Best displacement over training; NaN when invalid.
    pub fitness: f64,
    /// Displacement at the first learning iteration.
    pub initial_performance: f64,
    pub valid: bool,
    /// Spring count of the expressed body.
    pub size: usize,
    pub active_fraction: f64,
    /// Dropped when restored from a checkpoint.
    pub train_result: Option<TrainResult>,
}

/// Everything an evaluation needs besides the genome.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub index: LatticeIndex,
    pub terrain: Terrain,
    pub sim: SimConfig,
    pub learn: LearnConfig,
    pub mode: FrictionMode,
}

impl EvalContext {
    pub fn new(dims: LatticeDims, terrain: Terrain, sim: SimConfig, learn: LearnConfig, mode: FrictionMode) -> Self {
        Self {
            index: build_lattice_index(dims),
            terrain,
            sim,
            learn,
            mode,
        }
    }

    pub fn dims(&self) -> LatticeDims {
        self.index.dims()
    }
}

/// True when every loss is finite and no consecutive pair differs by more
/// than `threshold`.
pub fn validity_filter(losses: &[f64], threshold: f64) -> bool {
    losses.iter().all(|l| l.is_finite()) && losses.windows(2).all(|w| (w[1] - w[0]).abs() <= threshold)
}

/// Decodes, trains and filters one genome.
pub fn evaluate(
    genome: Genome,
    ctx: &EvalContext,
    config: &EvolutionConfig,
    id: u64,
    generation: usize,
    slot: usize,
) -> Result<Individual> {
    let morph = decode_with(&genome, &ctx.index, ctx.sim.length_scale)?;
    let mut rng = stream(config.seed, Purpose::Training, generation as u64, slot as u64);
    let result = train(&morph, &ctx.terrain, &ctx.sim, &ctx.learn, ctx.mode, &mut rng)?;
    let valid = result.valid && validity_filter(&result.losses, config.loss_delta_threshold);
    Ok(Individual {
        id,
        birth_generation: generation,
        genome,
        fitness: if valid { result.fitness } else { f64::NAN },
        initial_performance: result.initial_performance,
        valid,
        size: morph.spring_count(),
        active_fraction: morph.active_fraction(),
        train_result: Some(result),
    })
}

fn selection_key(ind: &Individual) -> f64 {
    if ind.valid && !ind.fitness.is_nan() {
        ind.fitness
    } else {
        f64::NEG_INFINITY
    }
}

/// Keeps the `pop_size` fittest valid individuals, ordered best first. Ties
/// go to the older individual, then the lower id.
pub fn select(mut pool: Vec<Individual>, pop_size: usize) -> Vec<Individual> {
    pool.retain(|i| i.valid && !i.fitness.is_nan());
    pool.sort_by(|a, b| {
        selection_key(b)
            .total_cmp(&selection_key(a))
            .then(a.birth_generation.cmp(&b.birth_generation))
            .then(a.id.cmp(&b.id))
    });
    pool.truncate(pop_size);
    pool
}

/// Offspring genomes for one generation, one per progenitor slot.
///
/// Slots are visited in population order. With crossover enabled and at
/// least two slots left, a slot pairs with a uniformly drawn other
/// progenitor with probability `crossover_prob`; the pair's two children
/// (each then mutated) fill this slot and the next. Otherwise, or when
/// crossover cannot produce a non-empty child, the slot gets a mutant.
pub fn vary<R: Rng + ?Sized>(
    progenitors: &[Individual],
    config: &EvolutionConfig,
    index: &LatticeIndex,
    rng: &mut R,
) -> Vec<Genome> {
    let n = progenitors.len();
    let p_flip = index.dims().flip_probability();
    let mutate = |g: &Genome, rng: &mut R| Genome {
        dims: g.dims,
        geometry: mutate_geometry(&g.geometry, index, rng),
        springs: mutate_springs(&g.springs, p_flip, rng),
    };
    let mut offspring = Vec::with_capacity(n);
    while offspring.len() < n {
        let slot = offspring.len();
        let parent = &progenitors[slot].genome;
        if config.crossover_enabled && n - slot >= 2 && rng.random_bool(config.crossover_prob) {
            let partner = &progenitors[variation::partner_index(n, slot, rng)].genome;
            let geometry = align_and_cross_geometry(
                &parent.geometry,
                &partner.geometry,
                index,
                rng,
                config.crossover_method,
                config.fractions(),
            );
            if let Some((g1, g2)) = geometry {
                let (s1, s2) = crossover_springs(&parent.springs, &partner.springs, rng);
                for (geometry, springs) in [(g1, s1), (g2, s2)] {
                    let child = Genome {
                        dims: parent.dims,
                        geometry,
                        springs,
                    };
                    offspring.push(mutate(&child, rng));
                }
                continue;
            }
        }
        offspring.push(mutate(parent, rng));
    }
    offspring
}

/// State of a run after a completed generation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub generation: usize,
    pub next_id: u64,
    /// Designs trained so far, including invalid ones.
    pub evaluated: usize,
    /// Survivors, best first.
    pub population: Vec<Individual>,
    /// Statistics for generations `0..=generation`.
    pub history: Vec<GenerationStats>,
}

impl RunLog {
    pub fn best(&self) -> Option<&Individual> {
        self.population.first()
    }

    pub fn invalid_total(&self) -> usize {
        self.history.iter().map(|s| s.invalid_count).sum()
    }
}

fn evaluate_cohort(
    genomes: Vec<Genome>,
    ctx: &EvalContext,
    config: &EvolutionConfig,
    first_id: u64,
    generation: usize,
    pool: &rayon::ThreadPool,
) -> Result<Vec<Individual>> {
    pool.install(|| {
        genomes
            .into_par_iter()
            .enumerate()
            .map(|(slot, g)| evaluate(g, ctx, config, first_id + slot as u64, generation, slot))
            .collect()
    })
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn finish_generation(
    log: &mut RunLog,
    pool_members: Vec<Individual>,
    cohort_size: usize,
    invalid: usize,
    generation: usize,
    pop_size: usize,
) -> Result<()> {
    let population = select(pool_members, pop_size);
    if population.is_empty() {
        return Err(Error::Extinct { generation });
    }
    log.generation = generation;
    log.next_id += cohort_size as u64;
    log.evaluated += cohort_size;
    log.history.push(generation_stats(&population, generation, invalid));
    log.population = population;
    Ok(())
}

/// Trains the random initial cohort (generation 0).
pub fn initialize(config: &EvolutionConfig, ctx: &EvalContext, workers: usize) -> Result<RunLog> {
    config.validate()?;
    let pool = thread_pool(workers)?;
    let genomes: Vec<Genome> = (0..config.pop_size)
        .map(|slot| random_genome(&mut stream(config.seed, Purpose::InitialGenome, 0, slot as u64), ctx.dims()))
        .collect();
    let cohort = evaluate_cohort(genomes, ctx, config, 0, 0, &pool)?;
    let invalid = cohort.iter().filter(|i| !i.valid).count();
    let mut log = RunLog {
        generation: 0,
        next_id: 0,
        evaluated: 0,
        population: Vec::new(),
        history: Vec::new(),
    };
    finish_generation(&mut log, cohort, config.pop_size, invalid, 0, config.pop_size)?;
    Ok(log)
}

/// Runs one generation on top of `log`.
pub fn step(log: &mut RunLog, config: &EvolutionConfig, ctx: &EvalContext, pool: &rayon::ThreadPool) -> Result<()> {
    let generation = log.generation + 1;
    let mut rng = stream(config.seed, Purpose::Variation, generation as u64, 0);
    let genomes = vary(&log.population, config, &ctx.index, &mut rng);
    let count = genomes.len();
    let offspring = evaluate_cohort(genomes, ctx, config, log.next_id, generation, pool)?;
    let invalid = offspring.iter().filter(|i| !i.valid).count();
    let mut members = std::mem::take(&mut log.population);
    members.extend(offspring);
    finish_generation(log, members, count, invalid, generation, config.pop_size)
}

/// Continues `log` up to `config.generations`, calling `on_generation` after
/// every completed generation.
pub fn resume(
    mut log: RunLog,
    config: &EvolutionConfig,
    ctx: &EvalContext,
    workers: usize,
    mut on_generation: impl FnMut(&RunLog) -> Result<()>,
) -> Result<RunLog> {
    config.validate()?;
    let pool = thread_pool(workers)?;
    while log.generation < config.generations {
        step(&mut log, config, ctx, &pool)?;
        on_generation(&log)?;
    }
    Ok(log)
}

/// Full run from a random initial cohort. `on_generation` also sees
/// generation 0.
pub fn evolve(
    config: &EvolutionConfig,
    ctx: &EvalContext,
    workers: usize,
    mut on_generation: impl FnMut(&RunLog) -> Result<()>,
) -> Result<RunLog> {
    let log = initialize(config, ctx, workers)?;
    on_generation(&log)?;
    resume(log, config, ctx, workers, on_generation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::expressed_geometry;

    fn quick_ctx(a: usize, b: usize) -> EvalContext {
        let sim = SimConfig {
            steps: 200,
            ..SimConfig::default()
        };
        let learn = LearnConfig {
            iterations: 4,
            ..LearnConfig::default()
        };
        EvalContext::new(LatticeDims::new(a, b).unwrap(), Terrain::flat(), sim, learn, FrictionMode::NoSlip)
    }

    fn fake(id: u64, birth: usize, fitness: f64, valid: bool) -> Individual {
        let dims = LatticeDims::new(2, 1).unwrap();
        Individual {
            id,
            birth_generation: birth,
            genome: random_genome(&mut stream(id, Purpose::InitialGenome, 0, 0), dims),
            fitness,
            initial_performance: 0.0,
            valid,
            size: 3,
            active_fraction: 1.0,
            train_result: None,
        }
    }

    #[test]
    fn filter_examples() {
        assert!(validity_filter(&[0.0, 0.0, 0.0], 1.0));
        assert!(!validity_filter(&[0.0, f64::NAN, 0.0], 1.0));
        assert!(!validity_filter(&[0.0, f64::INFINITY], 1.0));
        assert!(!validity_filter(&[0.0, -0.1, -5.0], 1.0));
        assert!(validity_filter(&[0.0, -0.1, -1.0], 1.0));
    }

    #[test]
    fn selection_examples() {
        // progenitors 0..4 all beat the offspring
        let pool: Vec<Individual> = (0..4)
            .map(|i| fake(i, 0, 1.0 + i as f64, true))
            .chain((4..8).map(|i| fake(i, 1, 0.1 * i as f64, true)))
            .collect();
        let ids: Vec<u64> = select(pool, 4).iter().map(|i| i.id).collect();
        assert_eq!(ids, vec![3, 2, 1, 0]);

        let fitness = [0.5, 0.1, 0.9, 0.3, 0.8, 0.2, 0.7, 0.4];
        let pool: Vec<Individual> = fitness
            .iter()
            .enumerate()
            .map(|(i, &f)| fake(i as u64, i / 4, f, true))
            .collect();
        let ids: Vec<u64> = select(pool, 4).iter().map(|i| i.id).collect();
        assert_eq!(ids, vec![2, 4, 6, 0]);

        // ties: older first, then lower id; invalid never kept
        let pool = vec![
            fake(5, 1, 0.5, true),
            fake(3, 0, 0.5, true),
            fake(1, 1, 0.5, true),
            fake(0, 0, f64::NAN, false),
            fake(9, 0, 2.0, false),
        ];
        let ids: Vec<u64> = select(pool, 10).iter().map(|i| i.id).collect();
        assert_eq!(ids, vec![3, 1, 5]);
    }

    #[test]
    fn config_validation() {
        assert!(EvolutionConfig::default().validate().is_ok());
        let bad = EvolutionConfig {
            pop_size: 1,
            ..EvolutionConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EvolutionConfig {
            crossover_prob: 1.5,
            ..EvolutionConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mutation_only_offspring_change_shape() {
        let ctx = quick_ctx(8, 5);
        let config = EvolutionConfig::default();
        let parents: Vec<Individual> = (0..20)
            .map(|i| {
                let mut f = fake(i, 0, 0.0, true);
                f.genome = random_genome(&mut stream(i, Purpose::InitialGenome, 0, 0), ctx.dims());
                f
            })
            .collect();
        let kids = vary(&parents, &config, &ctx.index, &mut stream(0, Purpose::Variation, 1, 0));
        assert_eq!(kids.len(), parents.len());
        for (p, k) in parents.iter().zip(&kids) {
            assert_ne!(
                expressed_geometry(&p.genome.geometry, &ctx.index),
                expressed_geometry(&k.geometry, &ctx.index)
            );
            assert!(decode_with(k, &ctx.index, 1.0).is_ok());
        }
    }

    #[test]
    fn crossover_fills_every_slot() {
        let ctx = quick_ctx(8, 5);
        let config = EvolutionConfig {
            crossover_enabled: true,
            crossover_prob: 1.0,
            ..EvolutionConfig::default()
        };
        for n in [2, 3, 7] {
            let parents: Vec<Individual> = (0..n as u64)
                .map(|i| {
                    let mut f = fake(i, 0, 0.0, true);
                    f.genome = random_genome(&mut stream(i, Purpose::InitialGenome, 0, 0), ctx.dims());
                    f
                })
                .collect();
            let kids = vary(&parents, &config, &ctx.index, &mut stream(1, Purpose::Variation, 1, 0));
            assert_eq!(kids.len(), n);
            assert!(kids.iter().all(|k| decode_with(k, &ctx.index, 1.0).is_ok()));
        }
    }

    #[test]
    fn small_run_is_deterministic_and_counts_designs() {
        let ctx = quick_ctx(4, 2);
        let config = EvolutionConfig {
            pop_size: 8,
            generations: 3,
            crossover_enabled: true,
            seed: 11,
            ..EvolutionConfig::default()
        };
        let mut seen = Vec::new();
        let a = evolve(&config, &ctx, 1, |log| {
            seen.push(log.generation);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        let b = evolve(&config, &ctx, 3, |_| Ok(())).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.evaluated, config.pop_size * (config.generations + 1));
        assert_eq!(a.population.len(), config.pop_size);
        assert!(a.population.iter().all(|i| i.valid));
        for w in a.history.windows(2) {
            assert!(w[1].best_trained >= w[0].best_trained);
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let ctx = quick_ctx(4, 2);
        let config = EvolutionConfig {
            pop_size: 6,
            generations: 3,
            seed: 5,
            ..EvolutionConfig::default()
        };
        let full = evolve(&config, &ctx, 2, |_| Ok(())).unwrap();
        let partial = EvolutionConfig {
            generations: 1,
            ..config.clone()
        };
        let mid = evolve(&partial, &ctx, 2, |_| Ok(())).unwrap();
        let text = checkpoint::to_text(&mid, "h", config.seed);
        let restored = checkpoint::from_text(&text, Some("h")).unwrap();
        let resumed = resume(restored, &config, &ctx, 1, |_| Ok(())).unwrap();
        assert_eq!(resumed.history, full.history);
        assert_eq!(resumed.evaluated, full.evaluated);
    }
}
