//! Python bindings for the diffbots core.

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use diffbots::analysis;
use diffbots::config::RunConfig;
use diffbots::controller::ControllerParams;
use diffbots::evolution::evolve as run_evolution;
use diffbots::lattice::{self, LatticeDims};
use diffbots::learning;
use diffbots::rng::{stream, Purpose};
use diffbots::simulator::{rollout_from, Scene, SimState};
use diffbots::terrain::{generate_rugged, RuggedRanges};
use diffbots::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::UnstableRollout { .. } | Error::Extinct { .. } | Error::Io { .. } => {
            PyRuntimeError::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn load_config(toml: Option<&str>) -> PyResult<RunConfig> {
    RunConfig::from_toml(toml.unwrap_or("")).map_err(to_py)
}

/// Mass and spring counts of the full `a` x `b` lattice.
#[pyfunction]
fn lattice_counts(a: usize, b: usize) -> PyResult<(usize, usize)> {
    let dims = LatticeDims::new(a, b).map_err(to_py)?;
    let index = lattice::build_lattice_index(dims);
    Ok((index.mass_count(), index.spring_count()))
}

/// A body plan: geometry mask plus spring activity bits.
#[pyclass(frozen)]
struct Genome {
    inner: lattice::Genome,
}

#[pymethods]
impl Genome {
    /// Parses a record `a b <geometry hex> <springs hex>`.
    #[new]
    fn new(record: &str) -> PyResult<Self> {
        Ok(Self {
            inner: record.trim().parse().map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn random(a: usize, b: usize, seed: u64) -> PyResult<Self> {
        let dims = LatticeDims::new(a, b).map_err(to_py)?;
        let mut rng = stream(seed, Purpose::InitialGenome, 0, 0);
        Ok(Self {
            inner: lattice::random_genome(&mut rng, dims),
        })
    }

    #[getter]
    fn dims(&self) -> (usize, usize) {
        (self.inner.dims.a, self.inner.dims.b)
    }

    /// `(row, col)` of every cell in the expressed body.
    fn expressed_cells(&self) -> Vec<(usize, usize)> {
        let index = lattice::build_lattice_index(self.inner.dims);
        lattice::expressed_geometry(&self.inner.geometry, &index).cells().collect()
    }

    #[pyo3(signature = (length_scale = None))]
    fn morphology(&self, length_scale: Option<f64>) -> PyResult<Morphology> {
        let index = lattice::build_lattice_index(self.inner.dims);
        let scale = length_scale.unwrap_or(diffbots::simulator::SimConfig::default().length_scale);
        Ok(Morphology {
            inner: lattice::decode_with(&self.inner, &index, scale).map_err(to_py)?,
        })
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Genome('{}')", self.inner)
    }

    fn __eq__(&self, other: &Genome) -> bool {
        self.inner == other.inner
    }
}

/// Decoded body: masses and springs.
#[pyclass(frozen)]
struct Morphology {
    inner: lattice::Morphology,
}

#[pymethods]
impl Morphology {
    #[getter]
    fn mass_count(&self) -> usize {
        self.inner.mass_count()
    }

    #[getter]
    fn spring_count(&self) -> usize {
        self.inner.spring_count()
    }

    #[getter]
    fn active_count(&self) -> usize {
        self.inner.active_count()
    }

    #[getter]
    fn active_fraction(&self) -> f64 {
        self.inner.active_fraction()
    }

    #[getter]
    fn positions(&self) -> Vec<(f64, f64)> {
        self.inner.positions.iter().map(|p| (p[0], p[1])).collect()
    }

    /// `(a, b, rest_length, active)` per spring.
    #[getter]
    fn springs(&self) -> Vec<(usize, usize, f64, bool)> {
        self.inner.springs.iter().map(|s| (s.a, s.b, s.rest_length, s.active)).collect()
    }
}

/// Outcome of controller training.
#[pyclass(frozen, get_all)]
struct TrainResult {
    losses: Vec<f64>,
    learning_rates: Vec<f64>,
    fitness: f64,
    initial_performance: f64,
    best_iteration: usize,
    valid: bool,
    /// Best parameters in the text format accepted by `simulate`.
    params: String,
}

/// Trains a controller for `genome` under the TOML `config`.
#[pyfunction]
#[pyo3(signature = (genome, config = None, seed = None))]
fn train(py: Python<'_>, genome: &Genome, config: Option<&str>, seed: Option<u64>) -> PyResult<TrainResult> {
    let config = load_config(config)?;
    let genome = genome.inner.clone();
    let result = py
        .detach(move || {
            let index = lattice::build_lattice_index(genome.dims);
            let morph = lattice::decode_with(&genome, &index, config.sim.length_scale)?;
            let terrain = config.build_terrain()?;
            let mut rng = stream(seed.unwrap_or(config.seed), Purpose::Training, 0, 0);
            learning::train(&morph, &terrain, &config.sim, &config.learning, config.friction, &mut rng)
        })
        .map_err(to_py)?;
    Ok(TrainResult {
        params: result.best_params.to_text(None),
        losses: result.losses,
        learning_rates: result.lrs,
        fitness: result.fitness,
        initial_performance: result.initial_performance,
        best_iteration: result.best_iteration,
        valid: result.valid,
    })
}

/// Rolls out `genome` with controller `params` (text form). Returns the
/// loss and the centre-of-mass trace.
#[pyfunction]
#[pyo3(signature = (genome, params, config = None))]
fn simulate(py: Python<'_>, genome: &Genome, params: &str, config: Option<&str>) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let config = load_config(config)?;
    let params = ControllerParams::from_text(params).map_err(to_py)?;
    let genome = genome.inner.clone();
    let result = py
        .detach(move || {
            let index = lattice::build_lattice_index(genome.dims);
            let morph = lattice::decode_with(&genome, &index, config.sim.length_scale)?;
            let terrain = config.build_terrain()?;
            let scene = Scene {
                morphology: &morph,
                params: &params,
                terrain: &terrain,
                config: &config.sim,
                mode: config.friction,
            };
            rollout_from(&scene, SimState::initial(&morph, &terrain), false)
        })
        .map_err(to_py)?;
    let trace = result.com_trace.iter().map(|c| (c[0], c[1])).collect();
    Ok((result.loss, trace))
}

fn stats_dict(s: &analysis::GenerationStats) -> HashMap<&'static str, f64> {
    HashMap::from([
        ("generation", s.generation as f64),
        ("best_trained", s.best_trained),
        ("best_initial", s.best_initial),
        ("mean_trained", s.mean_trained),
        ("sd_trained", s.sd_trained),
        ("mean_initial", s.mean_initial),
        ("sd_initial", s.sd_initial),
        ("mean_size", s.mean_size),
        ("sd_size", s.sd_size),
        ("best_size", s.best_size as f64),
        ("largest_size", s.largest_size as f64),
        ("mean_active_frac", s.mean_active_frac),
        ("best_active_frac", s.best_active_frac),
        ("largest_active_frac", s.largest_active_frac),
        ("invalid_count", s.invalid_count as f64),
    ])
}

/// Runs the evolutionary search. Returns per-generation statistics
/// (generation 0 first) and the best genome.
#[pyfunction]
#[pyo3(signature = (config = None, workers = 1))]
fn evolve(
    py: Python<'_>,
    config: Option<&str>,
    workers: usize,
) -> PyResult<(Vec<HashMap<&'static str, f64>>, Option<Genome>)> {
    let config = load_config(config)?;
    let log = py
        .detach(move || {
            let ctx = config.eval_context()?;
            run_evolution(&config.evolution_config(), &ctx, workers.max(1), |_| Ok(()))
        })
        .map_err(to_py)?;
    let stats = log.history.iter().map(stats_dict).collect();
    let best = log.best().map(|b| Genome {
        inner: b.genome.clone(),
    });
    Ok((stats, best))
}

/// Hex SHA-256 of a TOML config, ignoring workers and output directory.
#[pyfunction]
fn config_hash(config: &str) -> PyResult<String> {
    Ok(load_config(Some(config))?.hash())
}

/// Spearman rank correlation with average ranks for ties.
#[pyfunction]
fn spearman(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    analysis::spearman(&xs, &ys).map_err(to_py)
}

/// Rugged terrain in the segment file format.
#[pyfunction]
#[pyo3(signature = (seed, slope = None, length = None))]
fn rugged_terrain(seed: u64, slope: Option<(f64, f64)>, length: Option<(f64, f64)>) -> PyResult<String> {
    let d = RuggedRanges::default();
    let ranges = RuggedRanges {
        slope: slope.unwrap_or(d.slope),
        length: length.unwrap_or(d.length),
    };
    let terrain = generate_rugged(&mut stream(seed, Purpose::Terrain, 0, 0), ranges).map_err(to_py)?;
    Ok(terrain.to_text(None))
}

#[pymodule]
fn pydiffbots(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Genome>()?;
    m.add_class::<Morphology>()?;
    m.add_class::<TrainResult>()?;
    m.add_function(wrap_pyfunction!(lattice_counts, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(rugged_terrain, m)?)?;
    Ok(())
}
