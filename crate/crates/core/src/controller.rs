//! Proprioceptive MLP controller driven by a bank of phase-shifted sines.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const CPG_COUNT: usize = 10;
pub const HIDDEN_UNITS: usize = 32;
/// Angular frequency per time step; one period is 25 steps.
pub const CPG_OMEGA: f64 = 0.08 * PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpgBank {
    pub omega: f64,
}

impl Default for CpgBank {
    fn default() -> Self {
        Self { omega: CPG_OMEGA }
    }
}

impl CpgBank {
    pub fn phase(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / CPG_COUNT as f64
    }

    pub fn signals(&self, step: usize) -> [f64; CPG_COUNT] {
        std::array::from_fn(|i| (self.omega * step as f64 + self.phase(i)).sin())
    }
}

pub fn cpg_signals(bank: &CpgBank, step: usize) -> [f64; CPG_COUNT] {
    bank.signals(step)
}

/// Writes the controller input vector into `out`.
///
/// Layout: the CPG values, then per mass `[vx, vy, dx, dy]` where `d` is the
/// mass offset from the centre of mass minus the same offset in the initial
/// pose.
pub fn sense_into(
    bank: &CpgBank,
    step: usize,
    positions: &[[f64; 2]],
    velocities: &[[f64; 2]],
    initial_positions: &[[f64; 2]],
    out: &mut Vec<f64>,
) {
    let n = positions.len();
    out.clear();
    out.extend_from_slice(&bank.signals(step));
    let com = centroid(positions);
    let com0 = centroid(initial_positions);
    for i in 0..n {
        out.push(velocities[i][0]);
        out.push(velocities[i][1]);
        out.push((positions[i][0] - com[0]) - (initial_positions[i][0] - com0[0]));
        out.push((positions[i][1] - com[1]) - (initial_positions[i][1] - com0[1]));
    }
}

pub fn sense(
    bank: &CpgBank,
    step: usize,
    positions: &[[f64; 2]],
    velocities: &[[f64; 2]],
    initial_positions: &[[f64; 2]],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(CPG_COUNT + 4 * positions.len());
    sense_into(bank, step, positions, velocities, initial_positions, &mut out);
    out
}

pub fn centroid(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    [sx / n, sy / n]
}

/// Weights and biases of the `n_in -> 32 -> n_out` tanh network.
///
/// Matrices are row-major: `w1[h * n_in + i]`, `w2[o * hidden + h]`. The
/// same shape doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub type GradientVector = ControllerParams;

impl ControllerParams {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self::zeros_with_hidden(n_in, HIDDEN_UNITS, n_out)
    }

    pub fn zeros_with_hidden(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_hidden,
            n_out,
            w1: vec![0.0; n_hidden * n_in],
            b1: vec![0.0; n_hidden],
            w2: vec![0.0; n_out * n_hidden],
            b2: vec![0.0; n_out],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros_with_hidden(self.n_in, self.n_hidden, self.n_out)
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(w1, b1, w2, b2)` concatenated.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn from_flat(n_in: usize, n_out: usize, values: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(n_in, n_out);
        if values.len() != p.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter values for a {n_in}->{}->{n_out} network (needs {})",
                values.len(),
                HIDDEN_UNITS,
                p.len()
            )));
        }
        let mut it = values.iter().copied();
        for slot in p.slices_mut() {
            for x in slot.iter_mut() {
                *x = it.next().unwrap();
            }
        }
        Ok(p)
    }

    fn slices_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (x, y) in self.values_mut().zip(other.values()) {
            *x += scale * y;
        }
    }

    /// Hidden pre-activation pass: writes `tanh(w1 s + b1)` into `hidden`.
    pub fn hidden_into(&self, sensors: &[f64], hidden: &mut [f64]) {
        debug_assert_eq!(sensors.len(), self.n_in);
        for (h, out) in hidden.iter_mut().enumerate() {
            let row = &self.w1[h * self.n_in..(h + 1) * self.n_in];
            let z: f64 = row.iter().zip(sensors).map(|(w, s)| w * s).sum::<f64>() + self.b1[h];
            *out = z.tanh();
        }
    }

    pub fn output_into(&self, hidden: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.w2[o * self.n_hidden..(o + 1) * self.n_hidden];
            let z: f64 = row.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>() + self.b2[o];
            *y = z.tanh();
        }
    }

    /// Serialises as text: an optional comment header, the two dimensions,
    /// then one value per line in `(w1, b1, w2, b2)` order.
    pub fn to_text(&self, header: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = header {
            for line in h.lines() {
                let _ = writeln!(s, "# {line}");
            }
        }
        let _ = writeln!(s, "{} {}", self.n_in, self.n_out);
        for v in self.values() {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (ln, dims) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "params file is empty"))?;
        let dims: Vec<usize> = dims
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| Error::parse(ln, "bad dimension")))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::parse(ln, "expected `n_in n_out`"));
        }
        let values = lines
            .map(|(ln, l)| l.parse::<f64>().map_err(|_| Error::parse(ln, format!("bad value {l:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_flat(dims[0], dims[1], &values)
    }
}

/// `tanh(w2 · tanh(w1 · s + b1) + b2)`
pub fn forward(params: &ControllerParams, sensors: &[f64]) -> Vec<f64> {
    let mut hidden = vec![0.0; params.n_hidden];
    let mut out = vec![0.0; params.n_out];
    params.hidden_into(sensors, &mut hidden);
    params.output_into(&hidden, &mut out);
    out
}

/// Scaled Xavier-normal weights, zero biases.
pub fn init_params<R: Rng + ?Sized>(rng: &mut R, n_in: usize, n_out: usize, gain: f64) -> ControllerParams {
    let mut p = ControllerParams::zeros(n_in, n_out);
    fill_xavier(rng, &mut p.w1, n_in, HIDDEN_UNITS, gain);
    fill_xavier(rng, &mut p.w2, HIDDEN_UNITS, n_out, gain);
    p
}

pub fn xavier_std(fan_in: usize, fan_out: usize, gain: f64) -> f64 {
    gain * (2.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_xavier<R: Rng + ?Sized>(rng: &mut R, w: &mut [f64], fan_in: usize, fan_out: usize, gain: f64) {
    let std = xavier_std(fan_in, fan_out, gain);
    if std == 0.0 || w.is_empty() {
        w.fill(0.0);
        return;
    }
    let normal = Normal::new(0.0, std).expect("finite positive std");
    for x in w.iter_mut() {
        *x = normal.sample(rng);
    }
}
