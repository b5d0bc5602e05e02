//! Reverse-mode differentiation of a rollout with respect to the controller
//! parameters. Contact branches are frozen as taken in the forward pass.
//!
//! The forward pass keeps one state every `interval` steps. The backward
//! pass replays each segment from its saved state, recording the step
//! intermediates on a tape, then walks the tape in reverse.

use crate::controller::{ControllerParams, GradientVector};
use crate::error::{Error, Result};
use crate::simulator::contact::{self, ContactRecord};
use crate::simulator::{advance, Scene, SimState, Workspace};

/// Step intermediates for one segment.
struct Tape {
    n_mass: usize,
    n_in: usize,
    n_hidden: usize,
    n_out: usize,
    len: usize,
    positions: Vec<[f64; 2]>,
    sensors: Vec<f64>,
    hidden: Vec<f64>,
    act: Vec<f64>,
    v_pre: Vec<[f64; 2]>,
    contacts: Vec<ContactRecord>,
}

impl Tape {
    fn new(scene: &Scene<'_>, capacity: usize) -> Self {
        let n_mass = scene.morphology.mass_count();
        let p = scene.params;
        Self {
            n_mass,
            n_in: p.n_in,
            n_hidden: p.n_hidden,
            n_out: p.n_out,
            len: 0,
            positions: Vec::with_capacity(capacity * n_mass),
            sensors: Vec::with_capacity(capacity * p.n_in),
            hidden: Vec::with_capacity(capacity * p.n_hidden),
            act: Vec::with_capacity(capacity * p.n_out),
            v_pre: Vec::with_capacity(capacity * n_mass),
            contacts: Vec::with_capacity(capacity * n_mass),
        }
    }

    fn clear(&mut self) {
        self.len = 0;
        self.positions.clear();
        self.sensors.clear();
        self.hidden.clear();
        self.act.clear();
        self.v_pre.clear();
        self.contacts.clear();
    }

    /// Records the step that just ran from `state`.
    fn push(&mut self, state: &SimState, ws: &Workspace) {
        self.positions.extend_from_slice(&state.positions);
        self.sensors.extend_from_slice(&ws.sensors);
        self.hidden.extend_from_slice(&ws.hidden);
        self.act.extend_from_slice(&ws.act);
        self.v_pre.extend_from_slice(&ws.v_pre);
        self.contacts.extend_from_slice(&ws.contacts);
        self.len += 1;
    }

    fn positions(&self, j: usize) -> &[[f64; 2]] {
        &self.positions[j * self.n_mass..(j + 1) * self.n_mass]
    }
    fn sensors(&self, j: usize) -> &[f64] {
        &self.sensors[j * self.n_in..(j + 1) * self.n_in]
    }
    fn hidden(&self, j: usize) -> &[f64] {
        &self.hidden[j * self.n_hidden..(j + 1) * self.n_hidden]
    }
    fn act(&self, j: usize) -> &[f64] {
        &self.act[j * self.n_out..(j + 1) * self.n_out]
    }
    fn v_pre(&self, j: usize) -> &[[f64; 2]] {
        &self.v_pre[j * self.n_mass..(j + 1) * self.n_mass]
    }
    fn contacts(&self, j: usize) -> &[ContactRecord] {
        &self.contacts[j * self.n_mass..(j + 1) * self.n_mass]
    }
}

/// Adjoint buffers reused across steps.
struct Adjoint {
    p: Vec<[f64; 2]>,
    v: Vec<[f64; 2]>,
    force: Vec<[f64; 2]>,
    act: Vec<f64>,
    hidden: Vec<f64>,
    sensors: Vec<f64>,
}

/// A linear function of the final state: `sum_i w_i . p_i + u_i . v_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalObjective {
    pub position_weights: Vec<[f64; 2]>,
    pub velocity_weights: Vec<[f64; 2]>,
}

impl TerminalObjective {
    /// Minus the mean x position; differs from the rollout loss by a
    /// constant.
    pub fn negative_com_x(n_mass: usize) -> Self {
        Self {
            position_weights: vec![[-1.0 / n_mass as f64, 0.0]; n_mass],
            velocity_weights: vec![[0.0; 2]; n_mass],
        }
    }

    pub fn evaluate(&self, state: &SimState) -> f64 {
        let dot = |w: &[[f64; 2]], x: &[[f64; 2]]| w.iter().zip(x).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum::<f64>();
        dot(&self.position_weights, &state.positions) + dot(&self.velocity_weights, &state.velocities)
    }
}

/// Loss and parameter gradient of a rollout from `initial`.
///
/// `checkpoint_every = 0` keeps the whole trajectory in memory; any other
/// value keeps one state per that many steps and recomputes the rest.
pub fn gradient_from(
    scene: &Scene<'_>,
    initial: &SimState,
    checkpoint_every: usize,
) -> Result<(f64, GradientVector)> {
    let objective = TerminalObjective::negative_com_x(scene.morphology.mass_count());
    let (final_state, grad) = objective_gradient(scene, initial, checkpoint_every, &objective)?;
    let loss = -(final_state.center_of_mass()[0] - initial.center_of_mass()[0]);
    Ok((loss, grad))
}

/// Final state and gradient of `objective` with respect to the parameters.
pub fn objective_gradient(
    scene: &Scene<'_>,
    initial: &SimState,
    checkpoint_every: usize,
    objective: &TerminalObjective,
) -> Result<(SimState, GradientVector)> {
    scene.check_shapes()?;
    let n = scene.morphology.mass_count();
    if objective.position_weights.len() != n || objective.velocity_weights.len() != n {
        return Err(Error::LengthMismatch(objective.position_weights.len(), n));
    }
    let steps = scene.config.steps;
    let interval = match checkpoint_every {
        0 => steps,
        c => c.min(steps),
    };
    let initial_positions = &initial.positions;

    let mut ws = Workspace::new(scene);
    let mut tape = Tape::new(scene, interval);
    let mut checkpoints = Vec::with_capacity(steps.div_ceil(interval));
    let mut state = initial.clone();
    let mut next = state.clone();
    for t in 0..steps {
        if t % interval == 0 {
            checkpoints.push(state.clone());
            tape.clear();
        }
        let stable = advance(scene, initial_positions, &state, &mut next, &mut ws);
        tape.push(&state, &ws);
        std::mem::swap(&mut state, &mut next);
        if !stable {
            return Err(Error::UnstableRollout { step: t + 1 });
        }
    }
    let final_state = state.clone();

    let mut adj = Adjoint {
        p: objective.position_weights.clone(),
        v: objective.velocity_weights.clone(),
        force: vec![[0.0; 2]; n],
        act: vec![0.0; scene.params.n_out],
        hidden: vec![0.0; scene.params.n_hidden],
        sensors: vec![0.0; scene.params.n_in],
    };
    let mut grad = scene.params.zeros_like();

    // the tape already holds the last segment
    for (k, checkpoint) in checkpoints.iter().enumerate().rev() {
        if k + 1 < checkpoints.len() {
            tape.clear();
            state.clone_from(checkpoint);
            let end = ((k + 1) * interval).min(steps);
            for _ in k * interval..end {
                advance(scene, initial_positions, &state, &mut next, &mut ws);
                tape.push(&state, &ws);
                std::mem::swap(&mut state, &mut next);
            }
        }
        for j in (0..tape.len).rev() {
            step_backward(scene, &tape, j, &mut adj, &mut grad);
        }
    }
    Ok((final_state, grad))
}

/// Maps the adjoint of the state after step `j` to the adjoint of the state
/// before it, accumulating parameter gradients.
fn step_backward(scene: &Scene<'_>, tape: &Tape, j: usize, adj: &mut Adjoint, grad: &mut GradientVector) {
    let config = scene.config;
    let morph = scene.morphology;
    let params = scene.params;
    let n = tape.n_mass;
    let positions = tape.positions(j);
    let v_pre = tape.v_pre(j);
    let contacts = tape.contacts(j);
    let decay = config.decay();

    // contact and integration
    for i in 0..n {
        let (pb, vb) = contact::backward(&contacts[i], v_pre[i], config.dt, adj.p[i], adj.v[i]);
        adj.p[i] = pb;
        adj.v[i] = [vb[0] * decay, vb[1] * decay];
        let s = decay * config.dt / config.mass;
        adj.force[i] = [vb[0] * s, vb[1] * s];
    }

    // springs
    let act = tape.act(j);
    adj.act.fill(0.0);
    let mut next_active = 0;
    for s in &morph.springs {
        let (p, q) = (positions[s.a], positions[s.b]);
        let d = [q[0] - p[0], q[1] - p[1]];
        let len = d[0].hypot(d[1]);
        let (target, slot) = if s.active {
            let k = next_active;
            next_active += 1;
            (s.rest_length * (1.0 + config.act_amplitude * act[k]), Some(k))
        } else {
            (s.rest_length, None)
        };
        // forces: +f*d on a, -f*d on b, with f = k (len - target) / len
        let g = [adj.force[s.a][0] - adj.force[s.b][0], adj.force[s.a][1] - adj.force[s.b][1]];
        let gd = g[0] * d[0] + g[1] * d[1];
        let f = config.stiffness * (len - target) / len;
        let df = config.stiffness * target / (len * len * len) * gd;
        let d_bar = [f * g[0] + df * d[0], f * g[1] + df * d[1]];
        adj.p[s.a][0] -= d_bar[0];
        adj.p[s.a][1] -= d_bar[1];
        adj.p[s.b][0] += d_bar[0];
        adj.p[s.b][1] += d_bar[1];
        if let Some(k) = slot {
            let target_bar = -config.stiffness / len * gd;
            adj.act[k] += target_bar * s.rest_length * config.act_amplitude;
        }
    }

    // network
    let hidden = tape.hidden(j);
    let sensors = tape.sensors(j);
    mlp_backward(params, sensors, hidden, act, adj, grad);

    // sensors: skip the CPG channels, which do not depend on the state
    let base = crate::controller::CPG_COUNT;
    let mut com_bar = [0.0; 2];
    for i in 0..n {
        let s = &adj.sensors[base + 4 * i..base + 4 * i + 4];
        adj.v[i][0] += s[0];
        adj.v[i][1] += s[1];
        adj.p[i][0] += s[2];
        adj.p[i][1] += s[3];
        com_bar[0] -= s[2];
        com_bar[1] -= s[3];
    }
    let inv = 1.0 / n as f64;
    for p in adj.p.iter_mut() {
        p[0] += com_bar[0] * inv;
        p[1] += com_bar[1] * inv;
    }
}

fn mlp_backward(
    params: &ControllerParams,
    sensors: &[f64],
    hidden: &[f64],
    out: &[f64],
    adj: &mut Adjoint,
    grad: &mut GradientVector,
) {
    let (n_in, n_hidden) = (params.n_in, params.n_hidden);
    adj.hidden.fill(0.0);
    for (o, (&y, &y_bar)) in out.iter().zip(&adj.act).enumerate() {
        let z_bar = y_bar * (1.0 - y * y);
        if z_bar == 0.0 {
            continue;
        }
        grad.b2[o] += z_bar;
        let w_row = &params.w2[o * n_hidden..(o + 1) * n_hidden];
        let g_row = &mut grad.w2[o * n_hidden..(o + 1) * n_hidden];
        for h in 0..n_hidden {
            g_row[h] += z_bar * hidden[h];
            adj.hidden[h] += z_bar * w_row[h];
        }
    }
    adj.sensors.fill(0.0);
    for h in 0..n_hidden {
        let z_bar = adj.hidden[h] * (1.0 - hidden[h] * hidden[h]);
        if z_bar == 0.0 {
            continue;
        }
        grad.b1[h] += z_bar;
        let w_row = &params.w1[h * n_in..(h + 1) * n_in];
        let g_row = &mut grad.w1[h * n_in..(h + 1) * n_in];
        for i in 0..n_in {
            g_row[i] += z_bar * sensors[i];
            adj.sensors[i] += z_bar * w_row[i];
        }
    }
}
