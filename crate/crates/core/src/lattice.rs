//! Triangular lattice enumeration and genome decoding.
//!
//! Cells are addressed `(row, col)` with row 0 at the bottom. Cell `(r, c)`
//! spans horizontal lattice coordinates `c..=c+2` between mass rows `r` and
//! `r + 1`; it points up when `r + c` is even and down otherwise. Masses sit
//! at integer `(row, x)` grid points with `x ≡ row (mod 2)`, so neighbouring
//! masses are exactly 2 length units apart.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeDims {
    /// Triangles across the width.
    pub a: usize,
    /// Rows of triangles.
    pub b: usize,
}

impl LatticeDims {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == 0 || b == 0 {
            return Err(Error::InvalidDims { a, b });
        }
        Ok(Self { a, b })
    }

    pub fn cell_count(&self) -> usize {
        self.a * self.b
    }

    /// Per-bit flip probability for mutation, `1 / (a * b)`.
    pub fn flip_probability(&self) -> f64 {
        1.0 / self.cell_count() as f64
    }
}

/// Presence bit per lattice cell, row-major with row 0 at the bottom.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GeometryMask {
    dims: LatticeDims,
    bits: Vec<bool>,
}

impl GeometryMask {
    pub fn empty(dims: LatticeDims) -> Self {
        Self {
            dims,
            bits: vec![false; dims.cell_count()],
        }
    }

    pub fn full(dims: LatticeDims) -> Self {
        Self {
            dims,
            bits: vec![true; dims.cell_count()],
        }
    }

    pub fn from_bits(dims: LatticeDims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.cell_count() {
            return Err(Error::ShapeMismatch(format!(
                "geometry mask has {} bits, lattice {}x{} needs {}",
                bits.len(),
                dims.a,
                dims.b,
                dims.cell_count()
            )));
        }
        Ok(Self { dims, bits })
    }

    /// Builds a mask from the given `(row, col)` cells.
    pub fn from_cells(dims: LatticeDims, cells: &[(usize, usize)]) -> Self {
        let mut mask = Self::empty(dims);
        for &(r, c) in cells {
            mask.set(r, c, true);
        }
        mask
    }

    pub fn dims(&self) -> LatticeDims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.dims.a + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.dims.a + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let a = self.dims.a;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / a, i % a))
    }

    pub fn is_subset_of(&self, other: &GeometryMask) -> bool {
        self.bits
            .iter()
            .zip(&other.bits)
            .all(|(&mine, &theirs)| !mine || theirs)
    }

    pub fn union(&self, other: &GeometryMask) -> GeometryMask {
        debug_assert_eq!(self.dims, other.dims);
        GeometryMask {
            dims: self.dims,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&x, &y)| x || y)
                .collect(),
        }
    }

    /// Inclusive `(row_min, row_max, col_min, col_max)`, or `None` when empty.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bbox: Option<BoundingBox> = None;
        for (r, c) in self.cells() {
            let b = bbox.get_or_insert(BoundingBox {
                row_min: r,
                row_max: r,
                col_min: c,
                col_max: c,
            });
            b.row_min = b.row_min.min(r);
            b.row_max = b.row_max.max(r);
            b.col_min = b.col_min.min(c);
            b.col_max = b.col_max.max(c);
        }
        bbox
    }

    /// Translates every set cell by `(d_row, d_col)`; cells leaving the
    /// lattice are dropped.
    pub fn shifted(&self, d_row: isize, d_col: isize) -> GeometryMask {
        let mut out = GeometryMask::empty(self.dims);
        for (r, c) in self.cells() {
            let nr = r as isize + d_row;
            let nc = c as isize + d_col;
            if nr >= 0 && nc >= 0 && (nr as usize) < self.dims.b && (nc as usize) < self.dims.a {
                out.set(nr as usize, nc as usize, true);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }
}

/// Activity bit for every possible spring on the lattice.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpringVector {
    bits: Vec<bool>,
}

impl SpringVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn ones(len: usize) -> Self {
        Self {
            bits: vec![true; len],
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Genome {
    pub dims: LatticeDims,
    pub geometry: GeometryMask,
    pub springs: SpringVector,
}

impl Genome {
    pub fn new(dims: LatticeDims, geometry: GeometryMask, springs: SpringVector) -> Result<Self> {
        if geometry.dims() != dims {
            return Err(Error::ShapeMismatch(
                "geometry mask dims differ from genome dims".into(),
            ));
        }
        let expected = spring_count(dims);
        if springs.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "spring vector has {} bits, lattice {}x{} has {} springs",
                springs.len(),
                dims.a,
                dims.b,
                expected
            )));
        }
        Ok(Self {
            dims,
            geometry,
            springs,
        })
    }
}

/// Record form: `a b <geometry hex> <springs hex>`.
impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.dims.a,
            self.dims.b,
            bits_to_hex(self.geometry.bits()),
            bits_to_hex(self.springs.bits())
        )
    }
}

impl FromStr for Genome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                1,
                format!("genome record needs 4 fields, found {}", fields.len()),
            ));
        }
        let a: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(1, format!("bad lattice width {:?}", fields[0])))?;
        let b: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(1, format!("bad lattice height {:?}", fields[1])))?;
        let dims = LatticeDims::new(a, b)?;
        let geometry = GeometryMask::from_bits(dims, hex_to_bits(fields[2], dims.cell_count())?)?;
        let springs = SpringVector::new(hex_to_bits(fields[3], spring_count(dims))?);
        Genome::new(dims, geometry, springs)
    }
}

/// Packs bits MSB-first into hex nibbles, zero-padding the final nibble.
pub fn bits_to_hex(bits: &[bool]) -> String {
    bits.chunks(4)
        .map(|chunk| {
            let mut nibble = 0u32;
            for (i, &bit) in chunk.iter().enumerate() {
                if bit {
                    nibble |= 1 << (3 - i);
                }
            }
            char::from_digit(nibble, 16).unwrap()
        })
        .collect()
}

pub fn hex_to_bits(hex: &str, len: usize) -> Result<Vec<bool>> {
    let expected = len.div_ceil(4);
    if hex.len() != expected {
        return Err(Error::parse(
            1,
            format!("hex field has {} digits, expected {}", hex.len(), expected),
        ));
    }
    let mut bits = Vec::with_capacity(expected * 4);
    for ch in hex.chars() {
        let nibble = ch
            .to_digit(16)
            .ok_or_else(|| Error::parse(1, format!("invalid hex digit {ch:?}")))?;
        for i in 0..4 {
            bits.push(nibble & (1 << (3 - i)) != 0);
        }
    }
    if bits[len..].iter().any(|&b| b) {
        return Err(Error::parse(1, "non-zero padding bits in hex field"));
    }
    bits.truncate(len);
    Ok(bits)
}

/// Deterministic enumeration of every mass, spring and cell on a lattice.
#[derive(Debug, Clone)]
pub struct LatticeIndex {
    dims: LatticeDims,
    /// `(row, x)` grid coordinates, sorted; position in this list is the mass id.
    mass_grid: Vec<(usize, usize)>,
    mass_positions: Vec<[f64; 2]>,
    /// `(lo, hi)` mass ids with `lo < hi`, sorted; position is the spring id.
    spring_endpoints: Vec<(usize, usize)>,
    cell_vertices: Vec<[usize; 3]>,
    cell_edges: Vec<[usize; 3]>,
}

fn cell_grid_vertices(row: usize, col: usize) -> [(usize, usize); 3] {
    if (row + col) % 2 == 0 {
        [(row, col), (row, col + 2), (row + 1, col + 1)]
    } else {
        [(row + 1, col), (row + 1, col + 2), (row, col + 1)]
    }
}

pub fn build_lattice_index(dims: LatticeDims) -> LatticeIndex {
    let mut grid_points = BTreeSet::new();
    for r in 0..dims.b {
        for c in 0..dims.a {
            grid_points.extend(cell_grid_vertices(r, c));
        }
    }
    let mass_grid: Vec<(usize, usize)> = grid_points.into_iter().collect();
    let mass_id: BTreeMap<(usize, usize), usize> = mass_grid
        .iter()
        .enumerate()
        .map(|(id, &g)| (g, id))
        .collect();
    let mass_positions = mass_grid
        .iter()
        .map(|&(row, x)| [x as f64, row as f64 * SQRT_3])
        .collect();

    let mut cell_vertices = Vec::with_capacity(dims.cell_count());
    let mut edge_set = BTreeSet::new();
    for r in 0..dims.b {
        for c in 0..dims.a {
            let v = cell_grid_vertices(r, c).map(|g| mass_id[&g]);
            for (i, j) in [(0, 1), (1, 2), (0, 2)] {
                edge_set.insert((v[i].min(v[j]), v[i].max(v[j])));
            }
            cell_vertices.push(v);
        }
    }
    let spring_endpoints: Vec<(usize, usize)> = edge_set.into_iter().collect();
    let spring_id: BTreeMap<(usize, usize), usize> = spring_endpoints
        .iter()
        .enumerate()
        .map(|(id, &e)| (e, id))
        .collect();
    let cell_edges = cell_vertices
        .iter()
        .map(|v| {
            [(0, 1), (1, 2), (0, 2)].map(|(i, j)| spring_id[&(v[i].min(v[j]), v[i].max(v[j]))])
        })
        .collect();

    LatticeIndex {
        dims,
        mass_grid,
        mass_positions,
        spring_endpoints,
        cell_vertices,
        cell_edges,
    }
}

/// Number of possible springs on the lattice (`S`).
pub fn spring_count(dims: LatticeDims) -> usize {
    build_lattice_index(dims).spring_count()
}

impl LatticeIndex {
    pub fn dims(&self) -> LatticeDims {
        self.dims
    }

    pub fn mass_count(&self) -> usize {
        self.mass_grid.len()
    }

    pub fn spring_count(&self) -> usize {
        self.spring_endpoints.len()
    }

    /// `(row, x)` grid coordinate of each mass.
    pub fn mass_grid(&self) -> &[(usize, usize)] {
        &self.mass_grid
    }

    /// Mass positions in lattice units (triangle side length 2).
    pub fn mass_positions(&self) -> &[[f64; 2]] {
        &self.mass_positions
    }

    pub fn spring_endpoints(&self) -> &[(usize, usize)] {
        &self.spring_endpoints
    }

    pub fn cell_vertices(&self, row: usize, col: usize) -> [usize; 3] {
        self.cell_vertices[row * self.dims.a + col]
    }

    pub fn cell_edges(&self, row: usize, col: usize) -> [usize; 3] {
        self.cell_edges[row * self.dims.a + col]
    }

    pub fn is_up(row: usize, col: usize) -> bool {
        (row + col) % 2 == 0
    }

    /// Connected neighbours of a cell: left/right share a slanted edge, and
    /// the cell directly above/below in the same column shares either the
    /// horizontal edge or the apex vertex on the vertical axis.
    pub fn neighbors(&self, row: usize, col: usize) -> impl Iterator<Item = (usize, usize)> {
        let (a, b) = (self.dims.a, self.dims.b);
        let mut out = [None; 4];
        if col > 0 {
            out[0] = Some((row, col - 1));
        }
        if col + 1 < a {
            out[1] = Some((row, col + 1));
        }
        if row > 0 {
            out[2] = Some((row - 1, col));
        }
        if row + 1 < b {
            out[3] = Some((row + 1, col));
        }
        out.into_iter().flatten()
    }
}

/// Sets every cell whose three edges already belong to set cells.
///
/// Filling never introduces new edges, so a single pass reaches the fixed
/// point and the operation is idempotent.
pub fn fill_implied_cells(mask: &GeometryMask, index: &LatticeIndex) -> GeometryMask {
    let dims = index.dims();
    let mut edge_present = vec![false; index.spring_count()];
    for (r, c) in mask.cells() {
        for e in index.cell_edges(r, c) {
            edge_present[e] = true;
        }
    }
    let mut out = mask.clone();
    for r in 0..dims.b {
        for c in 0..dims.a {
            if !out.get(r, c) && index.cell_edges(r, c).iter().all(|&e| edge_present[e]) {
                out.set(r, c, true);
            }
        }
    }
    out
}

/// Largest connected component; ties go to the component containing the
/// smallest `(row, col)` cell.
pub fn largest_connected_component(mask: &GeometryMask, index: &LatticeIndex) -> GeometryMask {
    let dims = index.dims();
    let mut label = vec![usize::MAX; dims.cell_count()];
    let mut best: Vec<(usize, usize)> = Vec::new();
    let mut queue = VecDeque::new();
    for (start_r, start_c) in mask.cells() {
        if label[start_r * dims.a + start_c] != usize::MAX {
            continue;
        }
        let id = start_r * dims.a + start_c;
        let mut component = Vec::new();
        label[id] = id;
        queue.push_back((start_r, start_c));
        while let Some((r, c)) = queue.pop_front() {
            component.push((r, c));
            for (nr, nc) in index.neighbors(r, c) {
                let n = nr * dims.a + nc;
                if mask.get(nr, nc) && label[n] == usize::MAX {
                    label[n] = id;
                    queue.push_back((nr, nc));
                }
            }
        }
        if component.len() > best.len() {
            best = component;
        }
    }
    GeometryMask::from_cells(dims, &best)
}

/// The expressed geometry: implied cells filled, then the largest component.
pub fn expressed_geometry(mask: &GeometryMask, index: &LatticeIndex) -> GeometryMask {
    largest_connected_component(&fill_implied_cells(mask, index), index)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest_length: f64,
    pub active: bool,
}

/// A decoded robot ready for simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Morphology {
    /// Initial mass positions in simulation units.
    pub positions: Vec<[f64; 2]>,
    pub springs: Vec<Spring>,
    /// Lattice mass id of each simulated mass.
    pub lattice_masses: Vec<usize>,
    /// Lattice spring id of each simulated spring.
    pub lattice_springs: Vec<usize>,
    /// Indices into `springs` of the active springs, in controller output order.
    pub active_springs: Vec<usize>,
}

impl Morphology {
    pub fn mass_count(&self) -> usize {
        self.positions.len()
    }

    pub fn spring_count(&self) -> usize {
        self.springs.len()
    }

    pub fn active_count(&self) -> usize {
        self.active_springs.len()
    }

    pub fn active_fraction(&self) -> f64 {
        if self.springs.is_empty() {
            0.0
        } else {
            self.active_count() as f64 / self.spring_count() as f64
        }
    }

    /// Controller input width, `10 + 4 * masses`.
    pub fn sensor_count(&self) -> usize {
        crate::controller::CPG_COUNT + 4 * self.mass_count()
    }
}

/// Decodes in lattice units (triangle side length 2).
pub fn decode(genome: &Genome) -> Result<Morphology> {
    decode_with(genome, &build_lattice_index(genome.dims), 1.0)
}

/// Decodes and scales lattice units by `length_scale` simulation units.
pub fn decode_with(genome: &Genome, index: &LatticeIndex, length_scale: f64) -> Result<Morphology> {
    if index.dims() != genome.dims {
        return Err(Error::ShapeMismatch("lattice index dims differ from genome".into()));
    }
    let expressed = expressed_geometry(&genome.geometry, index);
    if expressed.is_empty() {
        return Err(Error::EmptyMorphology);
    }

    let mut mass_set = BTreeSet::new();
    let mut spring_set = BTreeSet::new();
    for (r, c) in expressed.cells() {
        mass_set.extend(index.cell_vertices(r, c));
        spring_set.extend(index.cell_edges(r, c));
    }
    let lattice_masses: Vec<usize> = mass_set.into_iter().collect();
    let lattice_springs: Vec<usize> = spring_set.into_iter().collect();
    let local: BTreeMap<usize, usize> = lattice_masses
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, i))
        .collect();

    let raw: Vec<[f64; 2]> = lattice_masses
        .iter()
        .map(|&m| index.mass_positions()[m])
        .collect();
    let min_x = raw.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let min_y = raw.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let positions: Vec<[f64; 2]> = raw
        .iter()
        .map(|p| [(p[0] - min_x) * length_scale, (p[1] - min_y) * length_scale])
        .collect();

    let mut springs = Vec::with_capacity(lattice_springs.len());
    let mut active_springs = Vec::new();
    for (k, &s) in lattice_springs.iter().enumerate() {
        let (ga, gb) = index.spring_endpoints()[s];
        let (a, b) = (local[&ga], local[&gb]);
        let dx = positions[b][0] - positions[a][0];
        let dy = positions[b][1] - positions[a][1];
        let active = genome.springs.get(s);
        if active {
            active_springs.push(k);
        }
        springs.push(Spring {
            a,
            b,
            rest_length: dx.hypot(dy),
            active,
        });
    }

    Ok(Morphology {
        positions,
        springs,
        lattice_masses,
        lattice_springs,
        active_springs,
    })
}

pub const INITIAL_BIT_PROBABILITY: f64 = 0.5;

fn bernoulli_bits<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<bool> {
    loop {
        let bits: Vec<bool> = (0..len)
            .map(|_| rng.random_bool(INITIAL_BIT_PROBABILITY))
            .collect();
        if bits.iter().any(|&b| b) {
            return bits;
        }
    }
}

/// Uniformly random genome; all-zero geometry or spring bits are resampled.
pub fn random_genome<R: Rng + ?Sized>(rng: &mut R, dims: LatticeDims) -> Genome {
    let geometry = GeometryMask {
        dims,
        bits: bernoulli_bits(rng, dims.cell_count()),
    };
    let springs = SpringVector::new(bernoulli_bits(rng, spring_count(dims)));
    Genome {
        dims,
        geometry,
        springs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn dims(a: usize, b: usize) -> LatticeDims {
        LatticeDims::new(a, b).unwrap()
    }

    /// Independent enumeration: every grid point with `x ≡ row (mod 2)`
    /// inside the lattice span, connected when exactly 2 units apart.
    fn brute_force_counts(a: usize, b: usize) -> (usize, usize) {
        let mut points = Vec::new();
        for row in 0..=b {
            for x in 0..=a + 1 {
                if x % 2 == row % 2 {
                    points.push([x as f64, row as f64 * SQRT_3]);
                }
            }
        }
        let mut springs = 0;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let d = (points[i][0] - points[j][0]).hypot(points[i][1] - points[j][1]);
                if (d - 2.0).abs() < 1e-9 {
                    springs += 1;
                }
            }
        }
        (points.len(), springs)
    }

    #[test]
    fn paper_lattice_counts() {
        let index = build_lattice_index(dims(22, 13));
        assert_eq!(index.mass_count(), 168);
        assert_eq!(index.spring_count(), 453);
    }

    #[test]
    fn small_lattices() {
        let i = build_lattice_index(dims(2, 1));
        assert_eq!((i.mass_count(), i.spring_count()), (4, 5));
        let i = build_lattice_index(dims(2, 2));
        assert_eq!((i.mass_count(), i.spring_count()), (6, 9));
    }

    #[test]
    fn closed_forms_match_brute_force_for_even_widths() {
        for a in (2..=24).step_by(2) {
            for b in 1..=14 {
                let index = build_lattice_index(dims(a, b));
                let masses = (b + 1) * (a / 2 + 1);
                let springs = (b + 1) * (a / 2) + b * (a + 1);
                assert_eq!(index.mass_count(), masses, "masses a={a} b={b}");
                assert_eq!(index.spring_count(), springs, "springs a={a} b={b}");
                assert_eq!(brute_force_counts(a, b), (masses, springs), "oracle a={a} b={b}");
            }
        }
    }

    #[test]
    fn odd_widths_match_brute_force() {
        for a in (1..=13).step_by(2) {
            for b in 1..=8 {
                let index = build_lattice_index(dims(a, b));
                assert_eq!(
                    (index.mass_count(), index.spring_count()),
                    brute_force_counts(a, b),
                    "a={a} b={b}"
                );
                // mass rows alternate between ceil(a/2)+1 and floor(a/2)+1
                for row in 0..=b {
                    let n = index.mass_grid().iter().filter(|g| g.0 == row).count();
                    let want = if row % 2 == 0 { a.div_ceil(2) + 1 } else { a / 2 + 1 };
                    assert_eq!(n, want, "row {row} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn springs_have_length_two_and_cells_three_edges() {
        let index = build_lattice_index(dims(6, 4));
        for &(i, j) in index.spring_endpoints() {
            assert_ne!(i, j);
            let (p, q) = (index.mass_positions()[i], index.mass_positions()[j]);
            assert!(((p[0] - q[0]).hypot(p[1] - q[1]) - 2.0).abs() < 1e-12);
        }
        for r in 0..4 {
            for c in 0..6 {
                let e = index.cell_edges(r, c);
                assert!(e[0] != e[1] && e[1] != e[2] && e[0] != e[2]);
            }
        }
    }

    #[test]
    fn fill_trivial_masks_unchanged() {
        let d = dims(4, 2);
        let index = build_lattice_index(d);
        let full = GeometryMask::full(d);
        assert_eq!(fill_implied_cells(&full, &index), full);
        let empty = GeometryMask::empty(d);
        assert_eq!(fill_implied_cells(&empty, &index), empty);
    }

    #[test]
    fn fill_sets_enclosed_up_triangle() {
        let d = dims(4, 2);
        let index = build_lattice_index(d);
        assert!(LatticeIndex::is_up(1, 1));
        // The three edge-sharing neighbours of up-cell (1,1).
        let mask = GeometryMask::from_cells(d, &[(1, 0), (1, 2), (0, 1)]);
        let target = index.cell_edges(1, 1);
        let present: BTreeSet<usize> = mask
            .cells()
            .flat_map(|(r, c)| index.cell_edges(r, c))
            .collect();
        assert!(target.iter().all(|e| present.contains(e)));

        let filled = fill_implied_cells(&mask, &index);
        assert!(filled.get(1, 1));
        assert_eq!(filled.count(), 4);
        assert_eq!(fill_implied_cells(&filled, &index), filled);
    }

    #[test]
    fn lcc_single_and_pair() {
        let d = dims(4, 2);
        let index = build_lattice_index(d);
        let single = GeometryMask::from_cells(d, &[(1, 2)]);
        assert_eq!(largest_connected_component(&single, &index), single);

        let mask = GeometryMask::from_cells(d, &[(0, 0), (0, 1), (1, 3)]);
        let lcc = largest_connected_component(&mask, &index);
        assert_eq!(lcc, GeometryMask::from_cells(d, &[(0, 0), (0, 1)]));
    }

    #[test]
    fn lcc_tie_prefers_smallest_anchor() {
        let d = dims(6, 3);
        let index = build_lattice_index(d);
        let mask = GeometryMask::from_cells(d, &[(2, 4), (2, 5), (0, 0), (0, 1)]);
        let lcc = largest_connected_component(&mask, &index);
        assert_eq!(lcc, GeometryMask::from_cells(d, &[(0, 0), (0, 1)]));
    }

    #[test]
    fn vertical_vertex_sharing_connects() {
        let d = dims(4, 2);
        let index = build_lattice_index(d);
        // up (0,0) and down (1,0) share only the apex vertex
        assert!(LatticeIndex::is_up(0, 0));
        let shared: Vec<usize> = index
            .cell_vertices(0, 0)
            .into_iter()
            .filter(|v| index.cell_vertices(1, 0).contains(v))
            .collect();
        assert_eq!(shared.len(), 1);
        let mask = GeometryMask::from_cells(d, &[(0, 0), (1, 0)]);
        assert_eq!(largest_connected_component(&mask, &index), mask);
    }

    #[test]
    fn decode_full_small_lattice() {
        let d = dims(2, 1);
        let g = Genome::new(d, GeometryMask::full(d), SpringVector::ones(5)).unwrap();
        let m = decode(&g).unwrap();
        assert_eq!(m.mass_count(), 4);
        assert_eq!(m.spring_count(), 5);
        assert_eq!(m.active_count(), 5);
        assert!(m.springs.iter().all(|s| (s.rest_length - 2.0).abs() < 1e-12));
        let min_x = m.positions.iter().map(|p| p[0]).fold(f64::MAX, f64::min);
        let min_y = m.positions.iter().map(|p| p[1]).fold(f64::MAX, f64::min);
        assert_eq!((min_x, min_y), (0.0, 0.0));

        let passive = Genome::new(d, GeometryMask::full(d), SpringVector::zeros(5)).unwrap();
        let m = decode(&passive).unwrap();
        assert_eq!((m.spring_count(), m.active_count()), (5, 0));
    }

    #[test]
    fn decode_keeps_only_largest_component() {
        let d = dims(4, 2);
        let index = build_lattice_index(d);
        let mask = GeometryMask::from_cells(d, &[(0, 0), (0, 1), (0, 2), (1, 0)]);
        // (1,0) touches (0,0) in the same column, so take a genuinely split mask
        let mask2 = GeometryMask::from_cells(d, &[(0, 0), (0, 1), (0, 2), (1, 3)]);
        assert_eq!(largest_connected_component(&mask, &index).count(), 4);

        let g = Genome::new(d, mask2, SpringVector::ones(index.spring_count())).unwrap();
        let m = decode(&g).unwrap();
        let component = GeometryMask::from_cells(d, &[(0, 0), (0, 1), (0, 2)]);
        let mut want_springs: BTreeSet<usize> = BTreeSet::new();
        let mut want_masses: BTreeSet<usize> = BTreeSet::new();
        for (r, c) in component.cells() {
            want_springs.extend(index.cell_edges(r, c));
            want_masses.extend(index.cell_vertices(r, c));
        }
        assert_eq!(m.lattice_springs, want_springs.into_iter().collect::<Vec<_>>());
        assert_eq!(m.lattice_masses, want_masses.into_iter().collect::<Vec<_>>());
        assert_eq!(m.spring_count(), 7);
        assert_eq!(m.mass_count(), 5);
    }

    #[test]
    fn decode_empty_is_error() {
        let d = dims(2, 1);
        let g = Genome::new(d, GeometryMask::empty(d), SpringVector::ones(5)).unwrap();
        assert!(matches!(decode(&g), Err(Error::EmptyMorphology)));
    }

    #[test]
    fn decode_idempotent_on_expressed_mask() {
        let d = dims(8, 5);
        let index = build_lattice_index(d);
        let mut rng = stream(3, Purpose::InitialGenome, 0, 0);
        for _ in 0..20 {
            let g = random_genome(&mut rng, d);
            let m1 = decode(&g).unwrap();
            let canon = Genome {
                geometry: expressed_geometry(&g.geometry, &index),
                ..g.clone()
            };
            assert_eq!(decode(&canon).unwrap(), m1);
        }
    }

    #[test]
    fn random_genome_reproducible_and_non_empty() {
        let d = dims(22, 13);
        let g1 = random_genome(&mut stream(1, Purpose::InitialGenome, 0, 0), d);
        let g2 = random_genome(&mut stream(1, Purpose::InitialGenome, 0, 0), d);
        assert_eq!(g1, g2);
        assert!(!g1.geometry.is_empty() && !g1.springs.is_empty());
        assert_eq!(g1.springs.len(), 453);
    }

    #[test]
    fn random_genome_bit_fraction() {
        let d = dims(22, 13);
        let mut rng = stream(11, Purpose::InitialGenome, 0, 0);
        let n = 10_000;
        let set: usize = (0..n).map(|_| random_genome(&mut rng, d).geometry.count()).sum();
        let frac = set as f64 / (n * d.cell_count()) as f64;
        assert!((0.49..=0.51).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn initial_spring_count_comparable_to_reported_cohort() {
        let d = dims(22, 13);
        let index = build_lattice_index(d);
        let mut rng = stream(5, Purpose::InitialGenome, 0, 0);
        let n = 500;
        let total: usize = (0..n)
            .map(|_| {
                let g = random_genome(&mut rng, d);
                decode_with(&g, &index, 1.0).unwrap().spring_count()
            })
            .sum();
        let mean = total as f64 / n as f64;
        assert!((176.15 * 0.6..=176.15 * 1.4).contains(&mean), "mean springs {mean}");
    }

    #[test]
    fn genome_record_round_trip() {
        let d = dims(7, 4);
        let g = random_genome(&mut stream(9, Purpose::InitialGenome, 0, 0), d);
        let text = g.to_string();
        assert_eq!(text.parse::<Genome>().unwrap(), g);
    }

    #[test]
    fn genome_record_rejects_bad_input() {
        assert!("2 1 f".parse::<Genome>().is_err());
        assert!("2 1 f0 f8".parse::<Genome>().is_err()); // geometry needs 1 digit
        assert!("2 1 c f8".parse::<Genome>().is_ok());
        assert!("2 1 c f9".parse::<Genome>().is_err()); // padding bit set
        assert!("0 1 c f8".parse::<Genome>().is_err());
    }

    #[test]
    fn hex_packing_is_msb_first() {
        assert_eq!(bits_to_hex(&[true, false, false, false, true]), "88");
        assert_eq!(hex_to_bits("88", 5).unwrap(), vec![true, false, false, false, true]);
    }
}
