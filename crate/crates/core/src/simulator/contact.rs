//! Time-of-impact ground contact with two friction rules.
//!
//! A mass whose proposed end-of-step position lies on or below the ground
//! line under it (while not moving away from that line) is advanced only to
//! the time of impact. The no-slip rule then zeroes its velocity. The rugged
//! rule removes the inward normal velocity and reduces the tangential speed
//! by `min(|v_n|, |v_t|)`, and the mass slides for the rest of the step. A
//! final projection keeps the mass on or above the terrain, including a mass
//! that moves away from the line under it yet still ends below the ground
//! just past a convex corner.
//!
//! Every resolution returns a [`ContactRecord`] holding the branch taken, so
//! the reverse pass can differentiate through the same discrete decisions.

use serde::{Deserialize, Serialize};

use crate::terrain::{GroundLine, Terrain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrictionMode {
    NoSlip,
    Rugged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContactRecord {
    Free,
    /// Free motion, then a vertical lift onto a ground line of this slope.
    Lifted(f64),
    Contact(ContactBranch),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactBranch {
    mode: FrictionMode,
    normal: [f64; 2],
    tangent: [f64; 2],
    dn: f64,
    vn: f64,
    toi: f64,
    /// `toi = -dn / vn` (as opposed to a clamped constant).
    toi_active: bool,
    /// `sign(v_t)` when sliding, 0 when friction stops the tangent motion.
    slide_sign: f64,
    v_out: [f64; 2],
    /// Slope of the ground line used when the final projection fired.
    projected_slope: Option<f64>,
}

impl ContactRecord {
    pub fn is_contact(&self) -> bool {
        !matches!(self, ContactRecord::Free)
    }

    /// Compact branch signature, used to check that two rollouts took the
    /// same discrete path.
    pub fn signature(&self) -> u8 {
        match self {
            ContactRecord::Free => 0,
            ContactRecord::Lifted(_) => 16,
            ContactRecord::Contact(c) => {
                1 | (c.toi_active as u8) << 1
                    | ((c.slide_sign != 0.0) as u8) << 2
                    | (c.projected_slope.is_some() as u8) << 3
            }
        }
    }
}

const PROJECTION_TOLERANCE: f64 = 1e-12;

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Resolves one mass for one step. `p` is the start-of-step position and `v`
/// the velocity after force integration.
pub fn resolve(
    p: [f64; 2],
    v: [f64; 2],
    terrain: &Terrain,
    dt: f64,
    mode: FrictionMode,
) -> ([f64; 2], [f64; 2], ContactRecord) {
    let proposed = [p[0] + dt * v[0], p[1] + dt * v[1]];
    let line = terrain.line_at(proposed[0]);
    let normal = line.normal();
    let vn = dot(normal, v);
    if line.distance(proposed) > 0.0 {
        return (proposed, v, ContactRecord::Free);
    }
    if vn > 0.0 {
        let ground = terrain.line_at(proposed[0]);
        let h = ground.height(proposed[0]);
        if proposed[1] < h - PROJECTION_TOLERANCE {
            return ([proposed[0], h], v, ContactRecord::Lifted(ground.slope));
        }
        return (proposed, v, ContactRecord::Free);
    }

    let tangent = line.tangent();
    let dn = line.distance(p);
    let (toi, toi_active) = if vn < 0.0 && dn > 0.0 {
        let t = -dn / vn;
        if t <= dt {
            (t, true)
        } else {
            (dt, false)
        }
    } else {
        (0.0, false)
    };
    let p1 = [p[0] + toi * v[0], p[1] + toi * v[1]];

    let (mut p2, v_out, slide_sign) = match mode {
        FrictionMode::NoSlip => (p1, [0.0, 0.0], 0.0),
        FrictionMode::Rugged => {
            let vt = dot(tangent, v);
            let friction = vn.abs().min(vt.abs());
            let (vt_new, sign) = if vt.abs() <= vn.abs() {
                (0.0, 0.0)
            } else {
                (vt - friction * vt.signum(), vt.signum())
            };
            let v_out = [vt_new * tangent[0], vt_new * tangent[1]];
            let rest = dt - toi;
            ([p1[0] + rest * v_out[0], p1[1] + rest * v_out[1]], v_out, sign)
        }
    };

    let ground = terrain.line_at(p2[0]);
    let h = ground.height(p2[0]);
    // sliding along the contact line lands on it up to rounding; only a
    // real overshoot (into a steeper neighbouring segment) is projected
    let projected_slope = if p2[1] < h - PROJECTION_TOLERANCE {
        p2[1] = h;
        Some(ground.slope)
    } else {
        None
    };

    let branch = ContactBranch {
        mode,
        normal,
        tangent,
        dn,
        vn,
        toi,
        toi_active,
        slide_sign,
        v_out,
        projected_slope,
    };
    (p2, v_out, ContactRecord::Contact(branch))
}

/// Vector-Jacobian product of [`resolve`]: maps adjoints of the outputs
/// `(p_out, v_out)` to adjoints of the inputs `(p, v)`.
pub fn backward(
    record: &ContactRecord,
    v: [f64; 2],
    dt: f64,
    p_out_bar: [f64; 2],
    v_out_bar: [f64; 2],
) -> ([f64; 2], [f64; 2]) {
    let c = match record {
        ContactRecord::Free => {
            return (
                p_out_bar,
                [v_out_bar[0] + dt * p_out_bar[0], v_out_bar[1] + dt * p_out_bar[1]],
            );
        }
        ContactRecord::Lifted(slope) => {
            let x_bar = p_out_bar[0] + slope * p_out_bar[1];
            return ([x_bar, 0.0], [v_out_bar[0] + dt * x_bar, v_out_bar[1]]);
        }
        ContactRecord::Contact(c) => c,
    };

    let mut p2_bar = p_out_bar;
    if let Some(slope) = c.projected_slope {
        p2_bar = [p2_bar[0] + slope * p2_bar[1], 0.0];
    }

    let p1_bar = p2_bar;
    let mut toi_bar = 0.0;
    let mut vn_bar = 0.0;
    let mut vt_bar = 0.0;
    if c.mode == FrictionMode::Rugged {
        let rest = dt - c.toi;
        let v2_bar = [v_out_bar[0] + rest * p2_bar[0], v_out_bar[1] + rest * p2_bar[1]];
        toi_bar -= dot(p2_bar, c.v_out);
        let vt_new_bar = dot(v2_bar, c.tangent);
        if c.slide_sign != 0.0 {
            vt_bar = vt_new_bar;
            vn_bar = vt_new_bar * c.slide_sign;
        }
    }

    let mut p_bar = p1_bar;
    let mut v_bar = [c.toi * p1_bar[0], c.toi * p1_bar[1]];
    toi_bar += dot(p1_bar, v);

    if c.toi_active {
        let dn_bar = -toi_bar / c.vn;
        vn_bar += toi_bar * c.dn / (c.vn * c.vn);
        p_bar[0] += dn_bar * c.normal[0];
        p_bar[1] += dn_bar * c.normal[1];
    }
    v_bar[0] += vn_bar * c.normal[0] + vt_bar * c.tangent[0];
    v_bar[1] += vn_bar * c.normal[1] + vt_bar * c.tangent[1];
    (p_bar, v_bar)
}

/// No-slip contact against flat ground at `y = 0`.
pub fn resolve_contact_flat(position: [f64; 2], velocity: [f64; 2], dt: f64) -> ([f64; 2], [f64; 2]) {
    let (p, v, _) = resolve(position, velocity, &Terrain::flat(), dt, FrictionMode::NoSlip);
    (p, v)
}

/// Min-velocity friction contact against the given terrain.
pub fn resolve_contact_rugged(
    position: [f64; 2],
    velocity: [f64; 2],
    terrain: &Terrain,
    dt: f64,
) -> ([f64; 2], [f64; 2]) {
    let (p, v, _) = resolve(position, velocity, terrain, dt, FrictionMode::Rugged);
    (p, v)
}

/// Contact against a single line, mainly for tests of the local rule.
pub fn resolve_against_line(
    p: [f64; 2],
    v: [f64; 2],
    line: GroundLine,
    dt: f64,
    mode: FrictionMode,
) -> ([f64; 2], [f64; 2]) {
    let terrain = Terrain::from_segments(vec![crate::terrain::Segment {
        start_x: line.x0 - 1e6,
        start_y: line.height(line.x0 - 1e6),
        slope: line.slope,
        length_x: 2e6,
    }])
    .expect("valid line segment");
    let (p, v, _) = resolve(p, v, &terrain, dt, mode);
    (p, v)
}
