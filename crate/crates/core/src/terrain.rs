//! Ground models: a flat line, or stitched piecewise-linear segments.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};

/// Generated rugged terrain stops once it spans at least this many meters.
pub const RUGGED_SPAN: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_x: f64,
    pub start_y: f64,
    pub slope: f64,
    pub length_x: f64,
}

impl Segment {
    pub fn end_x(&self) -> f64 {
        self.start_x + self.length_x
    }

    pub fn end_y(&self) -> f64 {
        self.start_y + self.slope * self.length_x
    }

    pub fn height_at(&self, x: f64) -> f64 {
        self.start_y + self.slope * (x - self.start_x)
    }
}

/// A straight ground line `y = y0 + slope * (x - x0)` with its upward unit
/// normal, used by the contact model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundLine {
    pub x0: f64,
    pub y0: f64,
    pub slope: f64,
}

impl GroundLine {
    pub const FLAT: GroundLine = GroundLine {
        x0: 0.0,
        y0: 0.0,
        slope: 0.0,
    };

    pub fn height(&self, x: f64) -> f64 {
        self.y0 + self.slope * (x - self.x0)
    }

    pub fn normal(&self) -> [f64; 2] {
        let inv = 1.0 / (1.0 + self.slope * self.slope).sqrt();
        [-self.slope * inv, inv]
    }

    /// Unit tangent pointing towards +x.
    pub fn tangent(&self) -> [f64; 2] {
        let inv = 1.0 / (1.0 + self.slope * self.slope).sqrt();
        [inv, self.slope * inv]
    }

    /// Signed distance of a point above the line, along the normal.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let n = self.normal();
        n[0] * (p[0] - self.x0) + n[1] * (p[1] - self.y0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerrainKind {
    Flat,
    Rugged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    segments: Vec<Segment>,
}

impl Terrain {
    pub fn flat() -> Self {
        Self {
            segments: Vec::new(),
        }
    }

    /// Builds a terrain from contiguous segments (each starts where the
    /// previous one ends).
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        for (i, s) in segments.iter().enumerate() {
            if !(s.length_x > 0.0) || ![s.start_x, s.start_y, s.slope, s.length_x].iter().all(|v| v.is_finite()) {
                return Err(Error::parse(i + 1, "segment needs finite values and positive length"));
            }
        }
        for (i, pair) in segments.windows(2).enumerate() {
            let (prev, next) = (pair[0], pair[1]);
            let tol = 1e-9 * (1.0 + prev.end_x().abs() + prev.end_y().abs());
            if (next.start_x - prev.end_x()).abs() > tol || (next.start_y - prev.end_y()).abs() > tol {
                return Err(Error::parse(i + 2, "segment does not start where the previous one ends"));
            }
        }
        Ok(Self { segments })
    }

    pub fn kind(&self) -> TerrainKind {
        if self.segments.is_empty() {
            TerrainKind::Flat
        } else {
            TerrainKind::Rugged
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn span(&self) -> f64 {
        match (self.segments.first(), self.segments.last()) {
            (Some(first), Some(last)) => last.end_x() - first.start_x,
            _ => 0.0,
        }
    }

    /// The ground line in effect at `x`. Beyond either end of the span the
    /// ground continues flat at the boundary height.
    pub fn line_at(&self, x: f64) -> GroundLine {
        let (first, last) = match (self.segments.first(), self.segments.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return GroundLine::FLAT,
        };
        if x < first.start_x {
            return GroundLine {
                x0: first.start_x,
                y0: first.start_y,
                slope: 0.0,
            };
        }
        if x >= last.end_x() {
            return GroundLine {
                x0: last.end_x(),
                y0: last.end_y(),
                slope: 0.0,
            };
        }
        // last segment whose start is <= x
        let i = self.segments.partition_point(|s| s.start_x <= x) - 1;
        let s = &self.segments[i];
        GroundLine {
            x0: s.start_x,
            y0: s.start_y,
            slope: s.slope,
        }
    }

    pub fn height(&self, x: f64) -> f64 {
        self.line_at(x).height(x)
    }

    pub fn height_and_normal(&self, x: f64) -> (f64, [f64; 2]) {
        let line = self.line_at(x);
        (line.height(x), line.normal())
    }

    /// One segment per line: `start_x start_y slope length_x`. A terrain
    /// with no segments is flat.
    pub fn to_text(&self, header: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = header {
            for line in h.lines() {
                let _ = writeln!(s, "# {line}");
            }
        }
        for seg in &self.segments {
            let _ = writeln!(s, "{} {} {} {}", seg.start_x, seg.start_y, seg.slope, seg.length_x);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| Error::parse(i + 1, format!("bad number {v:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != 4 {
                return Err(Error::parse(i + 1, "expected `start_x start_y slope length_x`"));
            }
            segments.push(Segment {
                start_x: vals[0],
                start_y: vals[1],
                slope: vals[2],
                length_x: vals[3],
            });
        }
        Terrain::from_segments(segments)
    }
}

pub fn flat() -> Terrain {
    Terrain::flat()
}

/// Inclusive `[min, max]` sampling ranges for rugged generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuggedRanges {
    pub slope: (f64, f64),
    pub length: (f64, f64),
}

impl Default for RuggedRanges {
    fn default() -> Self {
        Self {
            slope: (-0.3, 0.3),
            length: (0.1, 0.3),
        }
    }
}

impl RuggedRanges {
    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = self.slope;
        let (l0, l1) = self.length;
        if !(s0.is_finite() && s1.is_finite() && s0 <= s1) {
            return Err(Error::Config(format!("invalid slope range [{s0}, {s1}]")));
        }
        if !(l0.is_finite() && l1.is_finite() && l0 > 0.0 && l0 <= l1) {
            return Err(Error::Config(format!("invalid length range [{l0}, {l1}]")));
        }
        Ok(())
    }
}

/// Appends uniformly sampled segments from `(0, 0)` until the span reaches
/// [`RUGGED_SPAN`].
pub fn generate_rugged<R: Rng + ?Sized>(rng: &mut R, ranges: RuggedRanges) -> Result<Terrain> {
    ranges.validate()?;
    let mut segments: Vec<Segment> = Vec::new();
    let (mut x, mut y) = (0.0, 0.0);
    while x < RUGGED_SPAN {
        let slope = rng.random_range(ranges.slope.0..=ranges.slope.1);
        let length_x = rng.random_range(ranges.length.0..=ranges.length.1);
        let seg = Segment {
            start_x: x,
            start_y: y,
            slope,
            length_x,
        };
        x = seg.end_x();
        y = seg.end_y();
        segments.push(seg);
    }
    Ok(Terrain { segments })
}
