//! Mutation and crossover of genomes.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::{expressed_geometry, GeometryMask, LatticeIndex, SpringVector};

/// Bound on redraws once the doubling sequence is exhausted, and on
/// all-zero spring redraws.
const MAX_MUTATION_ATTEMPTS: usize = 1000;
/// Fresh draws allowed when a crossover child comes out empty.
const MAX_CROSSOVER_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossoverMethod {
    /// Zero cells of each aligned parent, then union.
    Distinct,
    /// Union the aligned parents, then zero cells.
    Joint,
}

/// Flips each bit independently with probability `p`; returns the number of
/// flips.
pub fn flip_bits<R: Rng + ?Sized>(bits: &mut [bool], p: f64, rng: &mut R) -> usize {
    let mut flips = 0;
    for b in bits.iter_mut() {
        if rng.random_bool(p) {
            *b = !*b;
            flips += 1;
        }
    }
    flips
}

/// Mutates a geometry mask until its expressed shape differs from the
/// parent's. Each failed attempt doubles the flip probability, starting at
/// `1/(a*b)` and capped at 1.
///
/// Flipping every bit is deterministic, so after one attempt at the cap
/// further attempts use probability 1/2. If no change is found within
/// `MAX_MUTATION_ATTEMPTS` of those (only possible on degenerate lattices)
/// the parent is returned unchanged. The result is always non-empty.
pub fn mutate_geometry<R: Rng + ?Sized>(mask: &GeometryMask, index: &LatticeIndex, rng: &mut R) -> GeometryMask {
    let parent = expressed_geometry(mask, index);
    let attempt = |p: f64, rng: &mut R| {
        let mut child = mask.clone();
        flip_bits(child.bits_mut(), p, rng);
        (!child.is_empty() && expressed_geometry(&child, index) != parent).then_some(child)
    };
    let mut p = mask.dims().flip_probability();
    loop {
        if let Some(child) = attempt(p, rng) {
            return child;
        }
        if p >= 1.0 {
            break;
        }
        p = (2.0 * p).min(1.0);
    }
    (0..MAX_MUTATION_ATTEMPTS)
        .find_map(|_| attempt(0.5, rng))
        .unwrap_or_else(|| mask.clone())
}

/// One pass of independent flips at `1/(a*b)`, redrawn while all-zero. No
/// change is required. Returns the parent if every draw within
/// `MAX_MUTATION_ATTEMPTS` comes out all-zero (flip probability near 1).
pub fn mutate_springs<R: Rng + ?Sized>(springs: &SpringVector, p: f64, rng: &mut R) -> SpringVector {
    (0..MAX_MUTATION_ATTEMPTS)
        .find_map(|_| {
            let mut child = springs.clone();
            flip_bits(child.bits_mut(), p, rng);
            (!child.is_empty()).then_some(child)
        })
        .unwrap_or_else(|| springs.clone())
}

/// Two children, each taking every bit from either parent with equal
/// probability. Redrawn while all-zero.
pub fn crossover_springs<R: Rng + ?Sized>(a: &SpringVector, b: &SpringVector, rng: &mut R) -> (SpringVector, SpringVector) {
    assert_eq!(a.len(), b.len(), "spring vectors from different lattices");
    let child = |rng: &mut R| loop {
        let bits = a
            .bits()
            .iter()
            .zip(b.bits())
            .map(|(&x, &y)| if rng.random_bool(0.5) { x } else { y })
            .collect();
        let v = SpringVector::new(bits);
        if !v.is_empty() {
            return v;
        }
    };
    let first = child(rng);
    let second = child(rng);
    (first, second)
}

/// Zeroes each set cell independently with probability `frac`.
pub fn random_zero<R: Rng + ?Sized>(mask: &GeometryMask, frac: f64, rng: &mut R) -> GeometryMask {
    let mut out = mask.clone();
    for b in out.bits_mut().iter_mut().filter(|b| **b) {
        if rng.random_bool(frac) {
            *b = false;
        }
    }
    out
}

/// Expressed shapes of both parents, shifted so the narrower one lies within
/// the wider one's columns and the shorter one within the taller one's rows.
/// Offsets are uniform over all positions that fit.
pub fn align_masks<R: Rng + ?Sized>(
    a: &GeometryMask,
    b: &GeometryMask,
    index: &LatticeIndex,
    rng: &mut R,
) -> Option<(GeometryMask, GeometryMask)> {
    let mut ea = expressed_geometry(a, index);
    let mut eb = expressed_geometry(b, index);
    let (ba, bb) = (ea.bounding_box()?, eb.bounding_box()?);

    // horizontal: the narrower mask moves (b on ties)
    let (lo, hi) = if bb.width() <= ba.width() {
        (ba.col_min as isize - bb.col_min as isize, ba.col_max as isize - bb.col_max as isize)
    } else {
        (bb.col_min as isize - ba.col_min as isize, bb.col_max as isize - ba.col_max as isize)
    };
    let d_col = rng.random_range(lo as i64..=hi as i64) as isize;
    if bb.width() <= ba.width() {
        eb = eb.shifted(0, d_col);
    } else {
        ea = ea.shifted(0, d_col);
    }

    let (lo, hi) = if bb.height() <= ba.height() {
        (ba.row_min as isize - bb.row_min as isize, ba.row_max as isize - bb.row_max as isize)
    } else {
        (bb.row_min as isize - ba.row_min as isize, bb.row_max as isize - ba.row_max as isize)
    };
    let d_row = rng.random_range(lo as i64..=hi as i64) as isize;
    if bb.height() <= ba.height() {
        eb = eb.shifted(d_row, 0);
    } else {
        ea = ea.shifted(d_row, 0);
    }
    Some((ea, eb))
}

/// Zero-fraction settings for geometry crossover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskingFractions {
    pub distinct: f64,
    pub joint: f64,
}

impl Default for MaskingFractions {
    fn default() -> Self {
        Self {
            distinct: 0.35,
            joint: 0.25,
        }
    }
}

/// Combines two aligned masks and returns the expressed result.
pub fn combine_aligned<R: Rng + ?Sized>(
    a: &GeometryMask,
    b: &GeometryMask,
    method: CrossoverMethod,
    fractions: MaskingFractions,
    index: &LatticeIndex,
    rng: &mut R,
) -> GeometryMask {
    let merged = match method {
        CrossoverMethod::Distinct => {
            let za = random_zero(a, fractions.distinct, rng);
            let zb = random_zero(b, fractions.distinct, rng);
            za.union(&zb)
        }
        CrossoverMethod::Joint => random_zero(&a.union(b), fractions.joint, rng),
    };
    expressed_geometry(&merged, index)
}

/// Two geometry children, each from a fresh alignment and masking. `None`
/// when a child stays empty after repeated draws.
pub fn align_and_cross_geometry<R: Rng + ?Sized>(
    a: &GeometryMask,
    b: &GeometryMask,
    index: &LatticeIndex,
    rng: &mut R,
    method: CrossoverMethod,
    fractions: MaskingFractions,
) -> Option<(GeometryMask, GeometryMask)> {
    let child = |rng: &mut R| {
        for _ in 0..MAX_CROSSOVER_ATTEMPTS {
            let (sa, sb) = align_masks(a, b, index, rng)?;
            let c = combine_aligned(&sa, &sb, method, fractions, index, rng);
            if !c.is_empty() {
                return Some(c);
            }
        }
        None
    };
    let first = child(rng)?;
    let second = child(rng)?;
    Some((first, second))
}

/// Uniformly chosen index in `0..n` other than `exclude`.
pub(crate) fn partner_index<R: Rng + ?Sized>(n: usize, exclude: usize, rng: &mut R) -> usize {
    debug_assert!(n >= 2);
    let others: Vec<usize> = (0..n).filter(|&j| j != exclude).collect();
    *others.choose(rng).expect("at least two progenitors")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice_index, fill_implied_cells, largest_connected_component, LatticeDims};
    use crate::rng::{stream, Purpose};

    fn index(a: usize, b: usize) -> LatticeIndex {
        build_lattice_index(LatticeDims::new(a, b).unwrap())
    }

    #[test]
    fn mutation_changes_expressed_geometry() {
        let idx = index(8, 5);
        let dims = idx.dims();
        let mut rng = stream(1, Purpose::Variation, 0, 0);
        for _ in 0..200 {
            let g = crate::lattice::random_genome(&mut rng, dims);
            let child = mutate_geometry(&g.geometry, &idx, &mut rng);
            assert!(!child.is_empty());
            assert_ne!(expressed_geometry(&child, &idx), expressed_geometry(&g.geometry, &idx));
        }
    }

    #[test]
    fn mutation_terminates_on_full_and_single_cell_lattices() {
        let idx = index(2, 1);
        let mut rng = stream(2, Purpose::Variation, 0, 0);
        let full = GeometryMask::full(idx.dims());
        let child = mutate_geometry(&full, &idx, &mut rng);
        assert_ne!(expressed_geometry(&child, &idx), full);

        let tiny = index(1, 1);
        let only = GeometryMask::full(tiny.dims());
        assert_eq!(mutate_geometry(&only, &tiny, &mut rng), only);
    }

    #[test]
    fn mutation_detects_change_through_lcc() {
        // parent: one cell; a flip that only adds a far, disconnected cell
        // leaves a tie that the component rule resolves
        let idx = index(6, 2);
        let dims = idx.dims();
        let parent = GeometryMask::from_cells(dims, &[(1, 5)]);
        let far = GeometryMask::from_cells(dims, &[(1, 5), (0, 0)]);
        let oracle = largest_connected_component(&fill_implied_cells(&far, &idx), &idx);
        assert_eq!(oracle, GeometryMask::from_cells(dims, &[(0, 0)]));
        assert_ne!(expressed_geometry(&far, &idx), expressed_geometry(&parent, &idx));
        let mut rng = stream(3, Purpose::Variation, 0, 0);
        let child = mutate_geometry(&parent, &idx, &mut rng);
        assert_ne!(expressed_geometry(&child, &idx), expressed_geometry(&parent, &idx));
    }

    #[test]
    fn spring_mutation_keeps_non_empty_and_is_reproducible() {
        let ones = SpringVector::ones(69);
        let a = mutate_springs(&ones, 1.0 / 40.0, &mut stream(4, Purpose::Variation, 0, 0));
        let b = mutate_springs(&ones, 1.0 / 40.0, &mut stream(4, Purpose::Variation, 0, 0));
        assert_eq!(a, b);
        assert!(!a.is_empty());
        let one = SpringVector::new(vec![true]);
        assert_eq!(mutate_springs(&one, 1.0, &mut stream(4, Purpose::Variation, 0, 0)), one);
        for s in 0..50 {
            assert!(!mutate_springs(&one, 0.5, &mut stream(s, Purpose::Variation, 0, 0)).is_empty());
        }
    }

    #[test]
    fn spring_mutation_mean_flips() {
        let mut rng = stream(5, Purpose::Variation, 0, 0);
        let trials = 20_000;
        let p = 1.0 / (22.0 * 13.0);
        let total: usize = (0..trials).map(|_| flip_bits(&mut vec![true; 453], p, &mut rng)).sum();
        let mean = total as f64 / trials as f64;
        let want = 453.0 * p;
        assert!((mean - want).abs() < 0.03 * want, "{mean} vs {want}");
    }

    #[test]
    fn spring_crossover_rules() {
        let mut rng = stream(6, Purpose::Variation, 0, 0);
        let a = SpringVector::new(vec![true, false, true, true, false, true]);
        assert_eq!(crossover_springs(&a, &a, &mut rng), (a.clone(), a.clone()));

        let n = 100_000;
        let a = SpringVector::new((0..n).map(|i| i % 3 != 0).collect());
        let b = SpringVector::new((0..n).map(|i| i % 2 == 0).collect());
        let (c, d) = crossover_springs(&a, &b, &mut rng);
        let mut differ = 0;
        let mut from_a = 0;
        for i in 0..n {
            if a.get(i) == b.get(i) {
                assert_eq!(c.get(i), a.get(i));
                assert_eq!(d.get(i), a.get(i));
            } else {
                differ += 1;
                from_a += (c.get(i) == a.get(i)) as usize;
            }
        }
        let frac = from_a as f64 / differ as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn zero_fractions_collapse_to_parent_shape() {
        let idx = index(8, 5);
        let dims = idx.dims();
        let zero = MaskingFractions {
            distinct: 0.0,
            joint: 0.0,
        };
        let mut rng = stream(7, Purpose::Variation, 0, 0);
        for _ in 0..50 {
            let g = crate::lattice::random_genome(&mut rng, dims);
            let lcc = expressed_geometry(&g.geometry, &idx);
            for method in [CrossoverMethod::Distinct, CrossoverMethod::Joint] {
                let (c1, c2) = align_and_cross_geometry(&g.geometry, &g.geometry, &idx, &mut rng, method, zero).unwrap();
                assert_eq!(c1, lcc);
                assert_eq!(c2, lcc);
            }
        }
    }

    #[test]
    fn distinct_with_one_parent_erased_stays_inside_the_other() {
        let idx = index(8, 5);
        let dims = idx.dims();
        let mut rng = stream(8, Purpose::Variation, 0, 0);
        for _ in 0..50 {
            let a = crate::lattice::random_genome(&mut rng, dims).geometry;
            let b = crate::lattice::random_genome(&mut rng, dims).geometry;
            let (sa, sb) = align_masks(&a, &b, &idx, &mut rng).unwrap();
            let za = random_zero(&sa, 1.0, &mut rng);
            assert!(za.is_empty());
            let child = expressed_geometry(&za.union(&sb), &idx);
            assert!(child.is_subset_of(&fill_implied_cells(&sb, &idx)));
        }
    }

    #[test]
    fn disjoint_parents_give_union_lcc() {
        // two halves of a 4x2 lattice, already spanning the same box
        let idx = index(4, 2);
        let dims = idx.dims();
        let left = GeometryMask::from_cells(dims, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let right = GeometryMask::from_cells(dims, &[(0, 2), (0, 3), (1, 2), (1, 3)]);
        let zero = MaskingFractions {
            distinct: 0.0,
            joint: 0.0,
        };
        let union = left.union(&right);
        let oracle = largest_connected_component(&fill_implied_cells(&union, &idx), &idx);
        assert_eq!(oracle, GeometryMask::full(dims));
        let mut rng = stream(9, Purpose::Variation, 0, 0);
        for method in [CrossoverMethod::Distinct, CrossoverMethod::Joint] {
            assert_eq!(combine_aligned(&left, &right, method, zero, &idx, &mut rng), oracle);
        }
    }

    #[test]
    fn alignment_fits_narrower_inside_wider() {
        let idx = index(8, 5);
        let dims = idx.dims();
        let mut rng = stream(10, Purpose::Variation, 0, 0);
        for _ in 0..200 {
            let a = crate::lattice::random_genome(&mut rng, dims).geometry;
            let b = crate::lattice::random_genome(&mut rng, dims).geometry;
            let (ea, eb) = (expressed_geometry(&a, &idx), expressed_geometry(&b, &idx));
            let (sa, sb) = align_masks(&a, &b, &idx, &mut rng).unwrap();
            assert_eq!(sa.count(), ea.count());
            assert_eq!(sb.count(), eb.count());
            let (ba, bb) = (sa.bounding_box().unwrap(), sb.bounding_box().unwrap());
            let (wide, narrow) = if bb.width() <= ba.width() { (ba, bb) } else { (bb, ba) };
            assert!(narrow.col_min >= wide.col_min && narrow.col_max <= wide.col_max);
            let (tall, short) = if bb.height() <= ba.height() { (ba, bb) } else { (bb, ba) };
            assert!(short.row_min >= tall.row_min && short.row_max <= tall.row_max);
        }
    }

    #[test]
    fn masking_fraction_monte_carlo() {
        let dims = LatticeDims::new(100, 100).unwrap();
        let mut rng = stream(11, Purpose::Variation, 0, 0);
        let full = GeometryMask::full(dims);
        for frac in [0.35, 0.25] {
            let zeroed = full.count() - random_zero(&full, frac, &mut rng).count();
            let got = zeroed as f64 / full.count() as f64;
            assert!((got - frac).abs() < 0.01, "{got} vs {frac}");
        }
    }
}
