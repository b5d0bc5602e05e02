//! Hookean spring-mass dynamics with semi-implicit Euler integration.

pub mod contact;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use contact::{resolve_contact_flat, resolve_contact_rugged, ContactRecord, FrictionMode};

use crate::controller::{centroid, sense_into, ControllerParams, CpgBank};
use crate::error::{Error, Result};
use crate::lattice::Morphology;
use crate::terrain::Terrain;

/// Springs shorter than this produce no force and flag the rollout unstable.
pub const DEGENERATE_LENGTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub steps: usize,
    pub stiffness: f64,
    /// Downward acceleration.
    pub gravity: f64,
    /// Velocity decay rate per second.
    pub damping: f64,
    /// Active springs vary their rest length by up to this fraction.
    pub act_amplitude: f64,
    pub mass: f64,
    /// Simulation length of one lattice unit (a triangle side is two units).
    pub length_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.004,
            steps: 1000,
            stiffness: 10_000.0,
            gravity: 9.8,
            damping: 15.0,
            act_amplitude: 0.1,
            mass: 1.0,
            length_scale: 0.05,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("sim: {msg}")));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if !(self.stiffness > 0.0 && self.stiffness.is_finite()) {
            return bad("stiffness must be positive");
        }
        if !(0.0..1.0).contains(&self.act_amplitude) {
            return bad("act_amplitude must be in [0, 1)");
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad("mass must be positive");
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return bad("length_scale must be positive");
        }
        if !(self.gravity.is_finite() && self.damping.is_finite() && self.damping >= 0.0) {
            return bad("gravity and damping must be finite, damping >= 0");
        }
        Ok(())
    }

    pub fn decay(&self) -> f64 {
        (-self.dt * self.damping).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub step: usize,
}

impl SimState {
    /// The morphology at rest, lifted so that no mass starts below the
    /// terrain.
    pub fn initial(morphology: &Morphology, terrain: &Terrain) -> Self {
        let lift = morphology
            .positions
            .iter()
            .map(|p| terrain.height(p[0]) - p[1])
            .fold(0.0, f64::max);
        Self {
            positions: morphology.positions.iter().map(|p| [p[0], p[1] + lift]).collect(),
            velocities: vec![[0.0; 2]; morphology.mass_count()],
            step: 0,
        }
    }

    pub fn center_of_mass(&self) -> [f64; 2] {
        centroid(&self.positions)
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .chain(&self.velocities)
            .all(|p| p[0].is_finite() && p[1].is_finite())
    }

    pub fn kinetic_energy(&self, mass: f64) -> f64 {
        0.5 * mass * self.velocities.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum::<f64>()
    }

    /// Gravitational plus elastic (passive rest lengths) potential energy.
    pub fn potential_energy(&self, morphology: &Morphology, config: &SimConfig) -> f64 {
        let gravity: f64 = self.positions.iter().map(|p| config.mass * config.gravity * p[1]).sum();
        let elastic: f64 = morphology
            .springs
            .iter()
            .map(|s| {
                let (p, q) = (self.positions[s.a], self.positions[s.b]);
                let stretch = (q[0] - p[0]).hypot(q[1] - p[1]) - s.rest_length;
                0.5 * config.stiffness * stretch * stretch
            })
            .sum();
        gravity + elastic
    }
}

/// Per-mass forces; `degenerate` is set when a spring collapsed to a point.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringForces {
    pub forces: Vec<[f64; 2]>,
    pub degenerate: bool,
}

/// Hooke forces with actuated rest lengths `L0 * (1 + amplitude * a)`.
/// `actuations` holds one value per active spring in controller order.
pub fn spring_forces(
    positions: &[[f64; 2]],
    morphology: &Morphology,
    actuations: &[f64],
    config: &SimConfig,
) -> SpringForces {
    let mut forces = vec![[0.0; 2]; positions.len()];
    let degenerate = accumulate_spring_forces(positions, morphology, actuations, config, &mut forces);
    SpringForces { forces, degenerate }
}

fn accumulate_spring_forces(
    positions: &[[f64; 2]],
    morphology: &Morphology,
    actuations: &[f64],
    config: &SimConfig,
    forces: &mut [[f64; 2]],
) -> bool {
    debug_assert_eq!(actuations.len(), morphology.active_count());
    forces.fill([0.0; 2]);
    let mut degenerate = false;
    let mut next_active = 0;
    for s in &morphology.springs {
        let target = if s.active {
            let a = actuations[next_active];
            next_active += 1;
            s.rest_length * (1.0 + config.act_amplitude * a)
        } else {
            s.rest_length
        };
        let (p, q) = (positions[s.a], positions[s.b]);
        let d = [q[0] - p[0], q[1] - p[1]];
        let len = d[0].hypot(d[1]);
        if len < DEGENERATE_LENGTH {
            degenerate = true;
            continue;
        }
        let f = config.stiffness * (len - target) / len;
        forces[s.a][0] += f * d[0];
        forces[s.a][1] += f * d[1];
        forces[s.b][0] -= f * d[0];
        forces[s.b][1] -= f * d[1];
    }
    degenerate
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: SimState,
    pub contacts: Vec<ContactRecord>,
    /// False when a spring degenerated or a value became non-finite.
    pub stable: bool,
}

/// One semi-implicit Euler step with exponential damping, followed by
/// per-mass ground contact.
pub fn integrate_step(
    state: &SimState,
    morphology: &Morphology,
    actuations: &[f64],
    terrain: &Terrain,
    config: &SimConfig,
    mode: FrictionMode,
) -> StepOutput {
    let forces = spring_forces(&state.positions, morphology, actuations, config);
    let mut next = SimState {
        positions: vec![[0.0; 2]; state.positions.len()],
        velocities: vec![[0.0; 2]; state.positions.len()],
        step: state.step + 1,
    };
    let mut contacts = vec![ContactRecord::Free; state.positions.len()];
    let decay = config.decay();
    for i in 0..state.positions.len() {
        let v = pre_contact_velocity(state.velocities[i], forces.forces[i], config, decay);
        let (p, v, c) = contact::resolve(state.positions[i], v, terrain, config.dt, mode);
        next.positions[i] = p;
        next.velocities[i] = v;
        contacts[i] = c;
    }
    let stable = !forces.degenerate && next.is_finite();
    StepOutput {
        state: next,
        contacts,
        stable,
    }
}

#[inline]
pub(crate) fn pre_contact_velocity(v: [f64; 2], f: [f64; 2], config: &SimConfig, decay: f64) -> [f64; 2] {
    [
        (v[0] + config.dt * f[0] / config.mass) * decay,
        (v[1] + config.dt * (f[1] / config.mass - config.gravity)) * decay,
    ]
}

/// Everything a rollout needs besides its state.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub morphology: &'a Morphology,
    pub params: &'a ControllerParams,
    pub terrain: &'a Terrain,
    pub config: &'a SimConfig,
    pub mode: FrictionMode,
}

impl<'a> Scene<'a> {
    pub fn check_shapes(&self) -> Result<()> {
        let m = self.morphology;
        if m.mass_count() == 0 {
            return Err(Error::EmptyMorphology);
        }
        if self.params.n_in != m.sensor_count() || self.params.n_out != m.active_count() {
            return Err(Error::ShapeMismatch(format!(
                "controller is {}->{} but the robot needs {}->{}",
                self.params.n_in,
                self.params.n_out,
                m.sensor_count(),
                m.active_count()
            )));
        }
        Ok(())
    }
}

/// Reusable buffers for [`advance`].
#[derive(Debug, Clone, Default)]
pub(crate) struct Workspace {
    pub sensors: Vec<f64>,
    pub hidden: Vec<f64>,
    pub act: Vec<f64>,
    pub forces: Vec<[f64; 2]>,
    pub v_pre: Vec<[f64; 2]>,
    pub contacts: Vec<ContactRecord>,
}

impl Workspace {
    pub fn new(scene: &Scene<'_>) -> Self {
        let n = scene.morphology.mass_count();
        Self {
            sensors: Vec::with_capacity(scene.params.n_in),
            hidden: vec![0.0; scene.params.n_hidden],
            act: vec![0.0; scene.params.n_out],
            forces: vec![[0.0; 2]; n],
            v_pre: vec![[0.0; 2]; n],
            contacts: vec![ContactRecord::Free; n],
        }
    }
}

/// Sense, act and integrate one step from `state` into `next`. Leaves the
/// intermediate values of the step in `ws`. Returns false when unstable.
pub(crate) fn advance(
    scene: &Scene<'_>,
    initial_positions: &[[f64; 2]],
    state: &SimState,
    next: &mut SimState,
    ws: &mut Workspace,
) -> bool {
    let bank = CpgBank::default();
    sense_into(
        &bank,
        state.step,
        &state.positions,
        &state.velocities,
        initial_positions,
        &mut ws.sensors,
    );
    scene.params.hidden_into(&ws.sensors, &mut ws.hidden);
    scene.params.output_into(&ws.hidden, &mut ws.act);
    let degenerate = accumulate_spring_forces(
        &state.positions,
        scene.morphology,
        &ws.act,
        scene.config,
        &mut ws.forces,
    );
    let decay = scene.config.decay();
    let mut finite = true;
    for i in 0..state.positions.len() {
        let v = pre_contact_velocity(state.velocities[i], ws.forces[i], scene.config, decay);
        ws.v_pre[i] = v;
        let (p, v, c) = contact::resolve(state.positions[i], v, scene.terrain, scene.config.dt, scene.mode);
        next.positions[i] = p;
        next.velocities[i] = v;
        ws.contacts[i] = c;
        finite &= p[0].is_finite() && p[1].is_finite() && v[0].is_finite() && v[1].is_finite();
    }
    next.step = state.step + 1;
    finite && !degenerate
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Negated net +x centre-of-mass displacement; NaN when unstable.
    pub loss: f64,
    /// Centre of mass at every step, including step 0.
    pub com_trace: Vec<[f64; 2]>,
    /// Every mass position at every step, when requested.
    pub mass_trace: Option<Vec<Vec<[f64; 2]>>>,
    pub final_state: SimState,
    pub unstable: bool,
    /// Per-step contact signature, one byte per mass.
    pub contact_signature: Vec<u8>,
}

impl RolloutResult {
    pub fn displacement(&self) -> f64 {
        -self.loss
    }
}

pub fn rollout(
    morphology: &Morphology,
    params: &ControllerParams,
    terrain: &Terrain,
    config: &SimConfig,
    mode: FrictionMode,
) -> Result<RolloutResult> {
    let scene = Scene {
        morphology,
        params,
        terrain,
        config,
        mode,
    };
    rollout_from(&scene, SimState::initial(morphology, terrain), false)
}

/// Runs `config.steps` steps from `initial`. Stops at the first unstable
/// step with `loss = NaN`.
pub fn rollout_from(scene: &Scene<'_>, initial: SimState, record_masses: bool) -> Result<RolloutResult> {
    scene.check_shapes()?;
    let steps = scene.config.steps;
    let initial_positions = initial.positions.clone();
    let com0 = initial.center_of_mass();
    let mut com_trace = Vec::with_capacity(steps + 1);
    com_trace.push(com0);
    let mut mass_trace = record_masses.then(|| vec![initial.positions.clone()]);
    let mut signature = Vec::with_capacity(steps * initial.positions.len());
    let mut ws = Workspace::new(scene);
    let mut state = initial;
    let mut next = state.clone();
    let mut unstable = false;
    for _ in 0..steps {
        let stable = advance(scene, &initial_positions, &state, &mut next, &mut ws);
        std::mem::swap(&mut state, &mut next);
        com_trace.push(state.center_of_mass());
        if let Some(trace) = mass_trace.as_mut() {
            trace.push(state.positions.clone());
        }
        signature.extend(ws.contacts.iter().map(ContactRecord::signature));
        if !stable {
            unstable = true;
            break;
        }
    }
    let loss = if unstable {
        f64::NAN
    } else {
        -(state.center_of_mass()[0] - com0[0])
    };
    Ok(RolloutResult {
        loss,
        com_trace,
        mass_trace,
        final_state: state,
        unstable,
        contact_signature: signature,
    })
}

/// Trajectory CSV: `step,com_x,com_y` plus `x<i>,y<i>` per mass when the
/// rollout recorded mass positions.
pub fn trajectory_csv(result: &RolloutResult, header: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(h) = header {
        for line in h.lines() {
            let _ = writeln!(s, "# {line}");
        }
    }
    s.push_str("step,com_x,com_y");
    if let Some(trace) = &result.mass_trace {
        for i in 0..trace.first().map_or(0, Vec::len) {
            let _ = write!(s, ",x{i},y{i}");
        }
    }
    s.push('\n');
    for (step, com) in result.com_trace.iter().enumerate() {
        let _ = write!(s, "{step},{},{}", com[0], com[1]);
        if let Some(trace) = &result.mass_trace {
            for p in &trace[step] {
                let _ = write!(s, ",{},{}", p[0], p[1]);
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{init_params, ControllerParams};
    use crate::lattice::{decode_with, build_lattice_index, random_genome, GeometryMask, Genome, LatticeDims, Spring, SpringVector};
    use crate::rng::{stream, Purpose};
    use crate::terrain::{generate_rugged, RuggedRanges};

    fn two_mass(rest: f64, active: bool) -> Morphology {
        Morphology {
            positions: vec![[0.0, 0.0], [1.0, 0.0]],
            springs: vec![Spring {
                a: 0,
                b: 1,
                rest_length: rest,
                active,
            }],
            lattice_masses: vec![0, 1],
            lattice_springs: vec![0],
            active_springs: if active { vec![0] } else { vec![] },
        }
    }

    fn robot(a: usize, b: usize, seed: u64) -> Morphology {
        let dims = LatticeDims::new(a, b).unwrap();
        let g = random_genome(&mut stream(seed, Purpose::InitialGenome, 0, 0), dims);
        decode_with(&g, &build_lattice_index(dims), SimConfig::default().length_scale).unwrap()
    }

    #[test]
    fn rest_length_gives_zero_force() {
        let m = robot(6, 4, 1);
        let f = spring_forces(&m.positions, &m, &vec![0.0; m.active_count()], &SimConfig::default());
        assert!(!f.degenerate);
        assert!(f.forces.iter().all(|v| v[0].abs() < 1e-9 && v[1].abs() < 1e-9));
    }

    #[test]
    fn stretched_spring_obeys_hooke() {
        let cfg = SimConfig::default();
        let m = two_mass(0.8, false);
        let f = spring_forces(&m.positions, &m, &[], &cfg);
        let want = cfg.stiffness * 0.2;
        assert!((f.forces[0][0] - want).abs() < 1e-9);
        assert!((f.forces[1][0] + want).abs() < 1e-9);
        assert_eq!(f.forces[0][1], 0.0);
    }

    #[test]
    fn expanding_actuation_pushes_apart() {
        let cfg = SimConfig::default();
        let m = two_mass(1.0, true);
        let f = spring_forces(&m.positions, &m, &[1.0], &cfg);
        let want = cfg.stiffness * 0.1 * 1.0;
        assert!((f.forces[0][0] + want).abs() < 1e-9, "{:?}", f.forces);
        assert!((f.forces[1][0] - want).abs() < 1e-9);
    }

    #[test]
    fn degenerate_spring_flags() {
        let mut m = two_mass(1.0, false);
        m.positions[1] = [0.0, 0.0];
        let f = spring_forces(&m.positions, &m, &[], &SimConfig::default());
        assert!(f.degenerate);
        assert_eq!(f.forces, vec![[0.0; 2]; 2]);
    }

    #[test]
    fn idle_without_gravity() {
        let cfg = SimConfig {
            gravity: 0.0,
            ..SimConfig::default()
        };
        let m = Morphology {
            springs: vec![],
            lattice_springs: vec![],
            active_springs: vec![],
            ..two_mass(1.0, false)
        };
        let mut state = SimState::initial(&m, &Terrain::flat());
        state.positions = vec![[0.0, 1.0], [1.0, 2.0]];
        let out = integrate_step(&state, &m, &[], &Terrain::flat(), &cfg, FrictionMode::NoSlip);
        assert_eq!(out.state.positions, state.positions);
        assert_eq!(out.state.velocities, state.velocities);
        assert_eq!(out.state.step, 1);
    }

    #[test]
    fn free_fall_velocity_law() {
        let cfg = SimConfig {
            damping: 0.0,
            ..SimConfig::default()
        };
        let m = Morphology {
            positions: vec![[0.0, 100.0]],
            springs: vec![],
            lattice_masses: vec![0],
            lattice_springs: vec![],
            active_springs: vec![],
        };
        let mut state = SimState {
            positions: m.positions.clone(),
            velocities: vec![[0.0; 2]],
            step: 0,
        };
        for n in 1..=100 {
            state = integrate_step(&state, &m, &[], &Terrain::flat(), &cfg, FrictionMode::NoSlip).state;
            let want = -cfg.gravity * cfg.dt * n as f64;
            assert!((state.velocities[0][1] - want).abs() < 1e-12);
        }
    }

    /// Random mask mirrored about the vertical axis. With odd `a` the cell
    /// parities are mirror symmetric as well.
    fn mirrored_robot(a: usize, b: usize, seed: u64) -> Option<Morphology> {
        let dims = LatticeDims::new(a, b).unwrap();
        let index = build_lattice_index(dims);
        let g = random_genome(&mut stream(seed, Purpose::InitialGenome, 0, 0), dims);
        let mut mask = g.geometry.clone();
        for (r, c) in g.geometry.cells() {
            mask.set(r, a - 1 - c, true);
        }
        let g = Genome::new(dims, mask, SpringVector::ones(index.spring_count())).unwrap();
        let m = decode_with(&g, &index, 0.05).unwrap();
        let width = m.positions.iter().map(|p| p[0]).fold(0.0, f64::max);
        let symmetric = m.positions.iter().all(|p| {
            m.positions
                .iter()
                .any(|q| (q[0] - (width - p[0])).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9)
        });
        symmetric.then_some(m)
    }

    #[test]
    fn zero_controller_settles() {
        let cfg = SimConfig::default();
        let mut tested = 0;
        for seed in 0..40 {
            let Some(m) = mirrored_robot(9, 5, seed) else { continue };
            let p = ControllerParams::zeros(m.sensor_count(), m.active_count());
            let r = rollout(&m, &p, &Terrain::flat(), &cfg, FrictionMode::NoSlip).unwrap();
            assert!(!r.unstable);
            assert!(r.loss.abs() < 1e-3, "seed {seed} loss {}", r.loss);
            tested += 1;
        }
        assert!(tested >= 5, "only {tested} symmetric robots");
    }

    #[test]
    fn loss_is_negated_com_displacement_and_deterministic() {
        let cfg = SimConfig::default();
        let m = robot(6, 4, 3);
        let p = init_params(&mut stream(1, Purpose::Training, 0, 0), m.sensor_count(), m.active_count(), 1.0);
        let r1 = rollout(&m, &p, &Terrain::flat(), &cfg, FrictionMode::NoSlip).unwrap();
        let r2 = rollout(&m, &p, &Terrain::flat(), &cfg, FrictionMode::NoSlip).unwrap();
        assert_eq!(r1, r2);
        let com = &r1.com_trace;
        assert_eq!(com.len(), cfg.steps + 1);
        assert_eq!(r1.loss, -(com[cfg.steps][0] - com[0][0]));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = robot(4, 2, 1);
        let p = ControllerParams::zeros(m.sensor_count() + 1, m.active_count());
        assert!(matches!(
            rollout(&m, &p, &Terrain::flat(), &SimConfig::default(), FrictionMode::NoSlip),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn passive_full_robot_has_no_outputs() {
        let dims = LatticeDims::new(4, 2).unwrap();
        let index = build_lattice_index(dims);
        let g = Genome::new(dims, GeometryMask::full(dims), SpringVector::zeros(index.spring_count())).unwrap();
        let m = decode_with(&g, &index, 0.05).unwrap();
        let p = ControllerParams::zeros(m.sensor_count(), 0);
        let r = rollout(&m, &p, &Terrain::flat(), &SimConfig::default(), FrictionMode::NoSlip).unwrap();
        assert!(!r.unstable);
    }

    #[test]
    fn initial_state_sits_on_rugged_ground() {
        let t = generate_rugged(&mut stream(2, Purpose::Terrain, 0, 0), RuggedRanges::default()).unwrap();
        let m = robot(8, 5, 2);
        let s = SimState::initial(&m, &t);
        let clearance = s
            .positions
            .iter()
            .map(|p| p[1] - t.height(p[0]))
            .fold(f64::INFINITY, f64::min);
        assert!(clearance.abs() < 1e-12);
    }

    #[test]
    fn energy_does_not_grow_without_actuation() {
        let cfg = SimConfig::default();
        for seed in 0..4 {
            let m = robot(6, 4, seed);
            let p = ControllerParams::zeros(m.sensor_count(), m.active_count());
            let scene = Scene {
                morphology: &m,
                params: &p,
                terrain: &Terrain::flat(),
                config: &cfg,
                mode: FrictionMode::NoSlip,
            };
            // dropped from a height with a squeezed pose
            let mut init = SimState::initial(&m, &Terrain::flat());
            let com = init.center_of_mass();
            for q in init.positions.iter_mut() {
                q[0] = com[0] + 0.97 * (q[0] - com[0]);
                q[1] += 0.2;
            }
            let e0 = init.kinetic_energy(cfg.mass) + init.potential_energy(&m, &cfg);
            let r = rollout_from(&scene, init, false).unwrap();
            let fin = &r.final_state;
            let e1 = fin.kinetic_energy(cfg.mass) + fin.potential_energy(&m, &cfg);
            assert!(e1 <= e0 * 1.01, "seed {seed}: {e1} > {e0}");
        }
    }

    #[test]
    fn trajectory_csv_rows() {
        let cfg = SimConfig {
            steps: 20,
            ..SimConfig::default()
        };
        let m = robot(4, 2, 1);
        let p = ControllerParams::zeros(m.sensor_count(), m.active_count());
        let scene = Scene {
            morphology: &m,
            params: &p,
            terrain: &Terrain::flat(),
            config: &cfg,
            mode: FrictionMode::NoSlip,
        };
        let r = rollout_from(&scene, SimState::initial(&m, &Terrain::flat()), true).unwrap();
        let csv = trajectory_csv(&r, Some("config_hash=1"));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2 + cfg.steps + 1);
        assert_eq!(lines[1].split(',').count(), 3 + 2 * m.mass_count());
    }
}
