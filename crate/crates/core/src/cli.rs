//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{export_run_csv, parse_run_csv, size_fitness_correlation};
use crate::config::RunConfig;
use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::evolution::{checkpoint, evolve, resume, RunLog};
use crate::lattice::{decode_with, Genome};
use crate::learning::train;
use crate::rng::{stream, Purpose};
use crate::simulator::{rollout_from, trajectory_csv, Scene, SimState};
use crate::terrain::{generate_rugged, RuggedRanges};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_UNSTABLE: i32 = 2;
pub const EXIT_IO: i32 = 3;

const CHECKPOINT_PREFIX: &str = "checkpoint_";
const DEFAULT_OUT: &str = "diffbots-out";

#[derive(Debug, Parser)]
#[command(name = "diffbots", version, about = "Evolve and train soft lattice robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the evolutionary search.
    Evolve(EvolveArgs),
    /// Train a controller for one genome.
    Train(TrainArgs),
    /// Roll out a genome with given controller parameters.
    Simulate(SimulateArgs),
    /// Generate a rugged terrain file.
    Terrain(TerrainArgs),
    /// Summarise a run CSV or a checkpoint.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::load(path),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Args)]
struct EvolveArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Output directory (overrides the environment and the config).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, short)]
    workers: Option<usize>,
    /// Checkpoint file, or a run directory to resume from its latest
    /// checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write a checkpoint every N generations (the last is always written).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    checkpoint_every: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Genome record file.
    #[arg(long, short)]
    genome: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, short)]
    genome: PathBuf,
    /// Controller parameter file written by `train`.
    #[arg(long, short)]
    params: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    /// Trajectory CSV path.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Also record every mass position.
    #[arg(long)]
    masses: bool,
}

#[derive(Debug, Args)]
struct TerrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, allow_negative_numbers = true)]
    slope_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    slope_max: Option<f64>,
    #[arg(long)]
    length_min: Option<f64>,
    #[arg(long)]
    length_max: Option<f64>,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Run CSV, checkpoint file or run directory.
    path: PathBuf,
}

/// Maps an error to its process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::UnstableRollout { .. } | Error::Extinct { .. } => EXIT_UNSTABLE,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Evolve(a) => cmd_evolve(a),
        Command::Train(a) => cmd_train(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Terrain(a) => cmd_terrain(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Reads a genome record, skipping `#` comments and blank lines.
pub fn read_genome(path: &Path) -> Result<Genome> {
    let text = read_file(path)?;
    let (no, line) = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .find(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| Error::parse(1, format!("{}: no genome record", path.display())))?;
    line.parse().map_err(|e| match e {
        Error::Parse { msg, .. } => Error::parse(no, format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn checkpoint_name(generation: usize) -> String {
    format!("{CHECKPOINT_PREFIX}{generation:04}.txt")
}

/// Highest-generation checkpoint in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<PathBuf> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(g) = name
            .to_str()
            .and_then(|n| n.strip_prefix(CHECKPOINT_PREFIX))
            .and_then(|n| n.strip_suffix(".txt"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| g > *b) {
            best = Some((g, entry.path()));
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| {
        Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no checkpoint in directory"),
        )
    })
}

fn write_run_outputs(out: &Path, log: &RunLog, hash: &str) -> Result<()> {
    // generation 0 is the random cohort; rows cover the evolved generations
    let rows = log.history.get(1..).unwrap_or(&[]);
    export_run_csv(rows, hash, &out.join("run.csv"))?;
    if let Some(best) = log.best() {
        let text = format!(
            "# config_hash={hash}\n# generation={} id={} fitness={}\n{}\n",
            log.generation, best.id, best.fitness, best.genome
        );
        write_file(&out.join("best_genome.txt"), &text)?;
    }
    Ok(())
}

fn cmd_evolve(args: EvolveArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if let Some(w) = args.workers {
        config.workers = w;
    }
    config.validate()?;
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => config.resolve_out_dir(Path::new(DEFAULT_OUT)),
    };
    create_dir(&out)?;
    let hash = config.hash();
    write_file(&out.join("config.toml"), &format!("# config_hash={hash}\n{}", config.to_toml()))?;

    let evo = config.evolution_config();
    let ctx = config.eval_context()?;
    let every = args.checkpoint_every as usize;
    let last = evo.generations;
    let mut on_generation = |log: &RunLog| -> Result<()> {
        let best = log.best().map_or(f64::NAN, |b| b.fitness);
        eprintln!(
            "generation {:>4}  best {:.4}  invalid {}",
            log.generation,
            best,
            log.history.last().map_or(0, |s| s.invalid_count)
        );
        if log.generation % every == 0 || log.generation >= last {
            checkpoint::write(&out.join(checkpoint_name(log.generation)), log, &hash, evo.seed)?;
        }
        write_run_outputs(&out, log, &hash)
    };

    let log = match &args.resume {
        Some(path) => {
            let file = if path.is_dir() { latest_checkpoint(path)? } else { path.clone() };
            let start = checkpoint::read(&file, Some(&hash))?;
            eprintln!("resuming from {} (generation {})", file.display(), start.generation);
            resume(start, &evo, &ctx, config.workers, &mut on_generation)?
        }
        None => evolve(&evo, &ctx, config.workers, &mut on_generation)?,
    };
    write_run_outputs(&out, &log, &hash)?;
    println!(
        "evaluated {} designs over {} generations; best fitness {}; output in {}",
        log.evaluated,
        log.generation,
        log.best().map_or(f64::NAN, |b| b.fitness),
        out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = args.config.load()?;
    let genome = read_genome(&args.genome)?;
    let ctx = config.eval_context()?;
    if genome.dims != ctx.dims() {
        return Err(Error::ShapeMismatch(format!(
            "genome is {}x{}, config lattice is {}x{}",
            genome.dims.a,
            genome.dims.b,
            ctx.dims().a,
            ctx.dims().b
        )));
    }
    let morph = decode_with(&genome, &ctx.index, config.sim.length_scale)?;
    let mut rng = stream(config.seed, Purpose::Training, 0, 0);
    let result = train(&morph, &ctx.terrain, &ctx.sim, &ctx.learn, ctx.mode, &mut rng)?;

    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => config.resolve_out_dir(Path::new(DEFAULT_OUT)),
    };
    create_dir(&out)?;
    let hash = config.hash();
    let header = format!(
        "config_hash={hash}\nfitness={}\ninitial_performance={}\nbest_iteration={}\nvalid={}",
        result.fitness, result.initial_performance, result.best_iteration, result.valid
    );
    write_file(&out.join("train_log.csv"), &result.log_csv(Some(&header)))?;
    write_file(
        &out.join("params.txt"),
        &result.best_params.to_text(Some(&format!("config_hash={hash}\ngenome={genome}"))),
    )?;
    println!("fitness {} (initial {})", result.fitness, result.initial_performance);
    if !result.valid {
        return Err(Error::UnstableRollout {
            step: result.losses.len(),
        });
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let config = args.config.load()?;
    let genome = read_genome(&args.genome)?;
    let params = ControllerParams::from_text(&read_file(&args.params)?)?;
    let terrain = config.build_terrain()?;
    let index = crate::lattice::build_lattice_index(genome.dims);
    let morph = decode_with(&genome, &index, config.sim.length_scale)?;
    let scene = Scene {
        morphology: &morph,
        params: &params,
        terrain: &terrain,
        config: &config.sim,
        mode: config.friction,
    };
    let initial = SimState::initial(&morph, &terrain);
    let result = rollout_from(&scene, initial, args.masses)?;
    let header = format!("config_hash={}\nloss={}", config.hash(), result.loss);
    let csv = trajectory_csv(&result, Some(&header));
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    if result.unstable {
        return Err(Error::UnstableRollout {
            step: result.com_trace.len().saturating_sub(1),
        });
    }
    eprintln!("loss {} displacement {}", result.loss, result.displacement());
    Ok(())
}

fn cmd_terrain(args: TerrainArgs) -> Result<()> {
    let d = RuggedRanges::default();
    let ranges = RuggedRanges {
        slope: (args.slope_min.unwrap_or(d.slope.0), args.slope_max.unwrap_or(d.slope.1)),
        length: (args.length_min.unwrap_or(d.length.0), args.length_max.unwrap_or(d.length.1)),
    };
    let mut rng = stream(args.seed, Purpose::Terrain, 0, 0);
    let terrain = generate_rugged(&mut rng, ranges)?;
    let header = format!(
        "seed={} slope=[{}, {}] length=[{}, {}]",
        args.seed, ranges.slope.0, ranges.slope.1, ranges.length.0, ranges.length.1
    );
    let text = terrain.to_text(Some(&header));
    match &args.out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let path = if args.path.is_dir() {
        let csv = args.path.join("run.csv");
        if csv.exists() {
            csv
        } else {
            latest_checkpoint(&args.path)?
        }
    } else {
        args.path.clone()
    };
    let text = read_file(&path)?;
    let mut report = String::new();
    if text.starts_with("# diffbots checkpoint") {
        let (header, log) = checkpoint::parse(&text)?;
        let _ = writeln!(report, "checkpoint generation {} (config {})", log.generation, header.config_hash);
        let _ = writeln!(report, "population {}  evaluated {}", log.population.len(), log.evaluated);
        if let Some(s) = log.history.last() {
            let _ = writeln!(
                report,
                "best {:.4} (initial {:.4})  mean {:.4} +- {:.4}  size {:.1} +- {:.1}",
                s.best_trained, s.best_initial, s.mean_trained, s.sd_trained, s.mean_size, s.sd_size
            );
        }
        match size_fitness_correlation(&log.population) {
            Ok(rho) => {
                let _ = writeln!(report, "size-fitness spearman {rho:.4}");
            }
            Err(e) => {
                let _ = writeln!(report, "size-fitness spearman unavailable: {e}");
            }
        }
    } else {
        let (hash, rows) = parse_run_csv(&text)?;
        let _ = writeln!(
            report,
            "{} generations (config {})",
            rows.len(),
            hash.as_deref().unwrap_or("unknown")
        );
        let _ = writeln!(report, "generation,best_trained,best_initial,mean_trained,mean_size,invalid");
        for r in &rows {
            let _ = writeln!(
                report,
                "{},{:.4},{:.4},{:.4},{:.1},{}",
                r.generation, r.best_trained, r.best_initial, r.mean_trained, r.mean_size, r.invalid_count
            );
        }
        let invalid: usize = rows.iter().map(|r| r.invalid_count).sum();
        let _ = writeln!(report, "total invalid {invalid}");
    }
    print!("{report}");
    Ok(())
}
