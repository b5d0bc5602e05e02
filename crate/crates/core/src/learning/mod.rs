//! Gradient-descent training of a robot's controller.

mod bptt;

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use bptt::{gradient_from, objective_gradient, TerminalObjective};

use crate::controller::{init_params, ControllerParams, GradientVector};
use crate::error::{Error, Result};
use crate::lattice::Morphology;
use crate::simulator::{FrictionMode, Scene, SimConfig, SimState};
use crate::terrain::Terrain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub iterations: usize,
    /// Numerator of the normalised step size.
    pub lr_scale: f64,
    pub eps: f64,
    /// Upper bound on the step size.
    pub max_lr: f64,
    /// Scale of the initial weight distribution.
    pub init_gain: f64,
    /// Steps between saved states in the reverse pass; 0 keeps all.
    pub checkpoint_every: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            iterations: 35,
            lr_scale: 0.1,
            eps: 1e-6,
            max_lr: 10.0,
            init_gain: 0.2,
            checkpoint_every: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("learning: {msg}")));
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if !(self.lr_scale > 0.0 && self.lr_scale.is_finite()) {
            return bad("lr_scale must be positive");
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad("eps must be >= 0");
        }
        if !(self.max_lr > 0.0) {
            return bad("max_lr must be positive");
        }
        if !(self.init_gain >= 0.0 && self.init_gain.is_finite()) {
            return bad("init_gain must be >= 0");
        }
        Ok(())
    }
}

/// Loss and gradient of a rollout from the resting initial state, keeping
/// the full trajectory in memory.
pub fn gradient(
    morphology: &Morphology,
    params: &ControllerParams,
    terrain: &Terrain,
    config: &SimConfig,
    mode: FrictionMode,
) -> Result<(f64, GradientVector)> {
    let scene = Scene {
        morphology,
        params,
        terrain,
        config,
        mode,
    };
    gradient_from(&scene, &SimState::initial(morphology, terrain), 0)
}

/// `c / (||g|| + eps)`, uncapped.
pub fn learning_rate(grads: &GradientVector, c: f64, eps: f64) -> f64 {
    c / (grads.norm() + eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// One loss per completed iteration. An invalid run ends with the
    /// offending non-finite value.
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// Best displacement over the finite losses.
    pub fitness: f64,
    pub initial_performance: f64,
    pub best_params: ControllerParams,
    pub best_iteration: usize,
    pub valid: bool,
}

impl TrainResult {
    /// CSV with columns `iteration,loss,lr,grad_norm`.
    pub fn log_csv(&self, header: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = header {
            for line in h.lines() {
                let _ = writeln!(s, "# {line}");
            }
        }
        s.push_str("iteration,loss,lr,grad_norm\n");
        for (i, loss) in self.losses.iter().enumerate() {
            let lr = self.lrs.get(i).copied().unwrap_or(f64::NAN);
            let g = self.grad_norms.get(i).copied().unwrap_or(f64::NAN);
            let _ = writeln!(s, "{i},{loss},{lr},{g}");
        }
        s
    }
}

/// Trains freshly initialised parameters drawn from `rng`.
pub fn train<R: Rng + ?Sized>(
    morphology: &Morphology,
    terrain: &Terrain,
    sim: &SimConfig,
    learn: &LearnConfig,
    mode: FrictionMode,
    rng: &mut R,
) -> Result<TrainResult> {
    let params = init_params(rng, morphology.sensor_count(), morphology.active_count(), learn.init_gain);
    train_from(morphology, params, terrain, sim, learn, mode)
}

/// Runs `learn.iterations` normalised gradient steps starting at `params`.
pub fn train_from(
    morphology: &Morphology,
    mut params: ControllerParams,
    terrain: &Terrain,
    sim: &SimConfig,
    learn: &LearnConfig,
    mode: FrictionMode,
) -> Result<TrainResult> {
    let initial = SimState::initial(morphology, terrain);
    let mut result = TrainResult {
        losses: Vec::with_capacity(learn.iterations),
        lrs: Vec::with_capacity(learn.iterations),
        grad_norms: Vec::with_capacity(learn.iterations),
        fitness: f64::NEG_INFINITY,
        initial_performance: f64::NAN,
        best_params: params.clone(),
        best_iteration: 0,
        valid: true,
    };
    for it in 0..learn.iterations {
        let scene = Scene {
            morphology,
            params: &params,
            terrain,
            config: sim,
            mode,
        };
        let (loss, grad) = match gradient_from(&scene, &initial, learn.checkpoint_every) {
            Ok(v) => v,
            Err(Error::UnstableRollout { .. }) => (f64::NAN, params.zeros_like()),
            Err(e) => return Err(e),
        };
        result.losses.push(loss);
        if it == 0 {
            result.initial_performance = -loss;
        }
        if !loss.is_finite() || !grad.is_finite() {
            result.valid = false;
            break;
        }
        if -loss > result.fitness {
            result.fitness = -loss;
            result.best_params.clone_from(&params);
            result.best_iteration = it;
        }
        let lr = learning_rate(&grad, learn.lr_scale, learn.eps).min(learn.max_lr);
        result.lrs.push(lr);
        result.grad_norms.push(grad.norm());
        params.add_scaled(&grad, -lr);
    }
    if result.fitness == f64::NEG_INFINITY {
        result.fitness = f64::NAN;
    }
    Ok(result)
}
