//! Full neighbor lists with a skin shell, built through a cell list.

use crate::error::{Error, Result};
use crate::model::{minimum_image, AtomSystem, Vec3};

/// CSR-packed full neighbor list. Segment `i` is `neighbors[offsets[i]..offsets[i + 1]]`,
/// sorted by ascending atom index.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    skin: f64,
    build_cutoff: f64,
    reference_positions: Vec<Vec3>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn skin(&self) -> f64 {
        self.skin
    }

    /// cutoff + skin
    pub fn build_cutoff(&self) -> f64 {
        self.build_cutoff
    }

    pub fn reference_positions(&self) -> &[Vec3] {
        &self.reference_positions
    }

    /// Total number of stored (ordered) pairs.
    pub fn pair_count(&self) -> usize {
        self.neighbors.len()
    }

    /// True iff some atom moved more than skin/2 since the build.
    pub fn needs_rebuild(&self, system: &AtomSystem) -> bool {
        needs_rebuild(self, system)
    }
}

/// Per-axis cell layout covering the box (or the atoms' bounding range on
/// open axes).
struct CellGrid {
    dims: [usize; 3],
    origin: [f64; 3],
    edge: [f64; 3],
    periodic: [bool; 3],
}

impl CellGrid {
    fn new(system: &AtomSystem, range: f64) -> Self {
        let b = system.sim_box();
        let lengths = b.lengths();
        let periodic = b.is_periodic();
        let mut dims = [1usize; 3];
        let mut origin = [0.0; 3];
        let mut edge = [1.0; 3];
        for axis in 0..3 {
            let (lo, span) = if periodic[axis] {
                (0.0, lengths[axis])
            } else {
                let (lo, hi) = system
                    .positions
                    .iter()
                    .map(|p| p.to_array()[axis])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                        (lo.min(x), hi.max(x))
                    });
                if lo.is_finite() {
                    (lo, (hi - lo).max(range))
                } else {
                    (0.0, range)
                }
            };
            let n = if range > 0.0 {
                ((span / range).floor() as usize).max(1)
            } else {
                1
            };
            // Bounded so that degenerate tiny ranges do not allocate absurd grids.
            let n = n.min(1024);
            dims[axis] = n;
            origin[axis] = lo;
            edge[axis] = span / n as f64;
        }
        CellGrid {
            dims,
            origin,
            edge,
            periodic,
        }
    }

    fn cell_of(&self, p: Vec3) -> [usize; 3] {
        let a = p.to_array();
        let mut c = [0usize; 3];
        for axis in 0..3 {
            let f = ((a[axis] - self.origin[axis]) / self.edge[axis]).floor();
            c[axis] = if f <= 0.0 {
                0
            } else {
                (f as usize).min(self.dims[axis] - 1)
            };
        }
        c
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Distinct cells in the 3×3×3 neighborhood of `c`.
    fn stencil(&self, c: [usize; 3], out: &mut Vec<usize>) {
        out.clear();
        let mut per_axis: [Vec<usize>; 3] = Default::default();
        for axis in 0..3 {
            let n = self.dims[axis] as isize;
            for off in -1isize..=1 {
                let v = c[axis] as isize + off;
                let v = if self.periodic[axis] {
                    v.rem_euclid(n)
                } else if v < 0 || v >= n {
                    continue;
                } else {
                    v
                } as usize;
                if !per_axis[axis].contains(&v) {
                    per_axis[axis].push(v);
                }
            }
        }
        for &z in &per_axis[2] {
            for &y in &per_axis[1] {
                for &x in &per_axis[0] {
                    out.push(self.flat([x, y, z]));
                }
            }
        }
    }
}

/// Builds a full neighbor list holding every pair within `cutoff + skin`.
pub fn build_neighbor_list(system: &AtomSystem, cutoff: f64, skin: f64) -> Result<NeighborList> {
    if !(cutoff.is_finite() && cutoff > 0.0) {
        return Err(Error::config(format!("cutoff must be positive, got {cutoff}")));
    }
    if !(skin.is_finite() && skin >= 0.0) {
        return Err(Error::config(format!("skin must be >= 0, got {skin}")));
    }
    let range = cutoff + skin;
    system.sim_box().check_range(range)?;

    let n = system.len();
    let grid = CellGrid::new(system, range);
    let mut heads = vec![0usize; grid.count() + 1];
    let cell_of: Vec<usize> = system
        .positions
        .iter()
        .map(|&p| grid.flat(grid.cell_of(p)))
        .collect();
    for &c in &cell_of {
        heads[c + 1] += 1;
    }
    for c in 0..grid.count() {
        heads[c + 1] += heads[c];
    }
    let mut fill = heads.clone();
    let mut binned = vec![0usize; n];
    for (i, &c) in cell_of.iter().enumerate() {
        binned[fill[c]] = i;
        fill[c] += 1;
    }

    let range_sq = range * range;
    let sim_box = system.sim_box();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    let mut stencil = Vec::with_capacity(27);
    offsets.push(0);
    for i in 0..n {
        let xi = system.positions[i];
        grid.stencil(grid.cell_of(xi), &mut stencil);
        let start = neighbors.len();
        for &cell in &stencil {
            for &j in &binned[heads[cell]..heads[cell + 1]] {
                if j == i {
                    continue;
                }
                let d = minimum_image(system.positions[j] - xi, sim_box);
                if d.norm2() <= range_sq {
                    neighbors.push(j);
                }
            }
        }
        neighbors[start..].sort_unstable();
        offsets.push(neighbors.len());
    }

    Ok(NeighborList {
        offsets,
        neighbors,
        skin,
        build_cutoff: range,
        reference_positions: system.positions.clone(),
    })
}

/// True iff any atom's displacement from its build-time position exceeds skin/2.
pub fn needs_rebuild(list: &NeighborList, system: &AtomSystem) -> bool {
    let half = 0.5 * list.skin;
    let limit = half * half;
    system
        .positions
        .iter()
        .zip(&list.reference_positions)
        .any(|(&p, &r)| minimum_image(p - r, system.sim_box()).norm2() > limit)
}

/// Keeps the neighbors of `i` currently within `r_cut_max`, in list order.
pub fn filter_segment(
    list: &NeighborList,
    i: usize,
    system: &AtomSystem,
    r_cut_max: f64,
) -> Vec<usize> {
    let mut out = Vec::new();
    filter_segment_into(list, i, system, r_cut_max, &mut out);
    out
}

pub(crate) fn filter_segment_into(
    list: &NeighborList,
    i: usize,
    system: &AtomSystem,
    r_cut_max: f64,
    out: &mut Vec<usize>,
) {
    let cut_sq = r_cut_max * r_cut_max;
    let xi = system.positions[i];
    let sim_box = system.sim_box();
    out.extend(
        list.segment(i)
            .iter()
            .copied()
            .filter(|&j| minimum_image(system.positions[j] - xi, sim_box).norm2() <= cut_sq),
    );
}

/// Packed output of the filter component: one filtered segment per atom.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilteredList {
    pub offsets: Vec<usize>,
    pub neighbors: Vec<usize>,
}

impl FilteredList {
    pub fn segment(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Filters every segment of `list` at `r_cut_max`.
    pub fn filter(list: &NeighborList, system: &AtomSystem, r_cut_max: f64) -> Self {
        let mut offsets = Vec::with_capacity(list.len() + 1);
        let mut neighbors = Vec::with_capacity(list.pair_count());
        offsets.push(0);
        for i in 0..list.len() {
            filter_segment_into(list, i, system, r_cut_max, &mut neighbors);
            offsets.push(neighbors.len());
        }
        FilteredList { offsets, neighbors }
    }

    /// The raw extended list, without filtering.
    pub fn unfiltered(list: &NeighborList) -> Self {
        FilteredList {
            offsets: list.offsets.clone(),
            neighbors: list.neighbors.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SimulationBox;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(l: f64, pts: &[Vec3]) -> AtomSystem {
        AtomSystem::new(
            SimulationBox::periodic([l; 3]).unwrap(),
            pts.to_vec(),
            vec![0; pts.len()],
            vec![28.0],
        )
        .unwrap()
    }

    fn random_system(n: usize, l: f64, seed: u64) -> AtomSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random_range(0.0..l), rng.random_range(0.0..l), rng.random_range(0.0..l)))
            .collect();
        system(l, &pts)
    }

    fn brute_force(sys: &AtomSystem, range: f64) -> Vec<Vec<usize>> {
        let n = sys.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .filter(|&j| {
                        let d = sys.positions[j] - sys.positions[i];
                        // explicit image search, independent of minimum_image
                        let l = sys.sim_box().lengths();
                        let mut best = f64::INFINITY;
                        for a in -1..=1 {
                            for b in -1..=1 {
                                for c in -1..=1 {
                                    let s = Vec3::new(
                                        d.x + a as f64 * l[0],
                                        d.y + b as f64 * l[1],
                                        d.z + c as f64 * l[2],
                                    );
                                    best = best.min(s.norm2());
                                }
                            }
                        }
                        best <= range * range
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_pair_inside_and_outside() {
        let sys = system(20.0, &[Vec3::new(1.0, 1.0, 1.0), Vec3::new(3.0, 1.0, 1.0)]);
        let nl = build_neighbor_list(&sys, 3.0, 0.3).unwrap();
        assert_eq!(nl.segment(0), &[1]);
        assert_eq!(nl.segment(1), &[0]);

        let sys = system(20.0, &[Vec3::new(1.0, 1.0, 1.0), Vec3::new(4.5, 1.0, 1.0)]);
        let nl = build_neighbor_list(&sys, 3.0, 0.3).unwrap();
        assert!(nl.segment(0).is_empty());
        assert!(nl.segment(1).is_empty());
    }

    #[test]
    fn pair_across_boundary() {
        let sys = system(20.0, &[Vec3::new(0.5, 1.0, 1.0), Vec3::new(19.0, 1.0, 1.0)]);
        let nl = build_neighbor_list(&sys, 3.0, 0.3).unwrap();
        assert_eq!(nl.segment(0), &[1]);
    }

    #[test]
    fn random_box_matches_brute_force() {
        for seed in 0..5 {
            let sys = random_system(64, 9.0, seed);
            let nl = build_neighbor_list(&sys, 3.2, 1.0).unwrap();
            let bf = brute_force(&sys, 4.2);
            for i in 0..sys.len() {
                assert_eq!(nl.segment(i), bf[i].as_slice(), "atom {i} seed {seed}");
            }
        }
    }

    #[test]
    fn oversized_range_is_rejected() {
        let sys = random_system(8, 8.0, 1);
        assert!(matches!(build_neighbor_list(&sys, 3.5, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn open_axes_are_binned_by_extent() {
        let b = SimulationBox::new([10.0; 3], [false; 3]).unwrap();
        let pts = vec![Vec3::new(-5.0, 0.0, 0.0), Vec3::new(-3.0, 0.0, 0.0), Vec3::new(30.0, 0.0, 0.0)];
        let sys = AtomSystem::new(b, pts, vec![0; 3], vec![1.0]).unwrap();
        let nl = build_neighbor_list(&sys, 3.0, 0.0).unwrap();
        assert_eq!(nl.segment(0), &[1]);
        assert!(nl.segment(2).is_empty());
    }

    #[test]
    fn rebuild_threshold() {
        let mut sys = system(20.0, &[Vec3::new(1.0, 1.0, 1.0), Vec3::new(3.0, 1.0, 1.0)]);
        let nl = build_neighbor_list(&sys, 3.0, 0.5).unwrap();
        assert!(!needs_rebuild(&nl, &sys));
        // exactly skin/2 (representable) stays valid
        sys.positions[0].x = 1.25;
        assert!(!needs_rebuild(&nl, &sys));
        sys.positions[0].x = 1.0 + 0.5 * 0.51;
        assert!(needs_rebuild(&nl, &sys));
        // displacement measured through the boundary
        sys.positions[0].x = 1.0;
        sys.positions[1].x = 3.0;
        let mut wrapped = sys.clone();
        wrapped.positions[0].x = 19.9;
        assert!(needs_rebuild(&nl, &wrapped));
    }

    #[test]
    fn filter_examples() {
        let sys = system(
            20.0,
            &[
                Vec3::new(5.0, 5.0, 5.0),
                Vec3::new(7.0, 5.0, 5.0),
                Vec3::new(5.0, 8.5, 5.0),
                Vec3::new(5.0, 5.0, 7.5),
            ],
        );
        let nl = build_neighbor_list(&sys, 3.2, 1.0).unwrap();
        assert_eq!(nl.segment(0), &[1, 2, 3]);
        assert_eq!(filter_segment(&nl, 0, &sys, 4.2), vec![1, 2, 3]);
        assert!(filter_segment(&nl, 0, &sys, 1.5).is_empty());
        assert_eq!(filter_segment(&nl, 0, &sys, 3.2), vec![1, 3]);
    }

    #[test]
    fn filter_matches_scalar_rescan() {
        let sys = random_system(64, 9.0, 11);
        let nl = build_neighbor_list(&sys, 3.2, 1.0).unwrap();
        for i in 0..sys.len() {
            let mut expected = Vec::new();
            for &j in nl.segment(i) {
                let d = sys.delta(i, j);
                if d.norm() <= 3.2 {
                    expected.push(j);
                }
            }
            assert_eq!(filter_segment(&nl, i, &sys, 3.2), expected);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn filtered_skin_list_equals_direct_build(seed in 0u64..10_000, skin in 0.0..1.5f64) {
            let sys = random_system(48, 9.5, seed);
            let wide = build_neighbor_list(&sys, 3.0, skin).unwrap();
            let tight = build_neighbor_list(&sys, 3.0, 0.0).unwrap();
            let filtered = FilteredList::filter(&wide, &sys, 3.0);
            for i in 0..sys.len() {
                prop_assert_eq!(filtered.segment(i), tight.segment(i));
            }
        }

        #[test]
        fn list_is_symmetric_and_deterministic(seed in 0u64..10_000) {
            let sys = random_system(40, 9.0, seed);
            let a = build_neighbor_list(&sys, 3.2, 0.8).unwrap();
            let b = build_neighbor_list(&sys, 3.2, 0.8).unwrap();
            prop_assert_eq!(&a, &b);
            for i in 0..sys.len() {
                let seg = a.segment(i);
                prop_assert!(!seg.contains(&i));
                prop_assert!(seg.windows(2).all(|w| w[0] < w[1]));
                for &j in seg {
                    prop_assert!(a.segment(j).contains(&i));
                }
            }
        }
    }
}
