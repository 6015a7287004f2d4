//! Lane-width-oblivious vector layer.
//!
//! Kernels are written once against [`VectorBackend`] and never name a lane
//! count. A backend supplies a real vector, an index vector and a mask type,
//! plus four building blocks:
//!
//! 1. vector-wide conditionals ([`VectorBackend::vall`], [`VectorBackend::vany`]),
//! 2. masked reductions into a uniform location ([`VectorBackend::reduce_add`]),
//! 3. conflict-safe scatter accumulation ([`VectorBackend::scatter_add`]),
//! 4. adjacent gathers of contiguous parameter rows ([`VectorBackend::adjacent_gather`]).
//!
//! [`SoftBackend`] implements all of this over plain arrays for any width.
//! A hardware backend implements the same traits (overriding whichever
//! building blocks it can do better) and must pass [`conformance::check_backend`].
//!
//! The per-lane cursor machinery used to skip non-contributing iterations of
//! the innermost loop lives here too ([`LaneCursorSet`], [`fast_forward`]).

use std::fmt::{Debug, Display};
use std::marker::PhantomData;
use std::ops::{Add, AddAssign, BitAnd, BitOr, Div, Mul, MulAssign, Neg, Not, Sub, SubAssign};

use num_traits::{Float, FloatConst, Zero};

/// Scalar element type of a vector backend.
pub trait Real:
    Float + FloatConst + AddAssign + SubAssign + MulAssign + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    #[inline]
    fn convert<T: Real>(self) -> T {
        T::from_f64(self.to_f64())
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

pub trait MaskVector:
    Copy + Debug + PartialEq + Send + Sync + BitAnd<Output = Self> + BitOr<Output = Self> + Not<Output = Self>
{
    const WIDTH: usize;
    fn splat(b: bool) -> Self;
    fn from_fn(f: impl FnMut(usize) -> bool) -> Self;
    fn lane(&self, l: usize) -> bool;

    fn count(&self) -> usize {
        (0..Self::WIDTH).filter(|&l| self.lane(l)).count()
    }
}

pub trait IndexVector: Copy + Debug + Send + Sync {
    fn splat(i: usize) -> Self;
    fn from_fn(f: impl FnMut(usize) -> usize) -> Self;
    fn lane(&self, l: usize) -> usize;
}

pub trait RealVector<R: Real>:
    Copy
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    type Mask: MaskVector;

    fn splat(x: R) -> Self;
    fn from_fn(f: impl FnMut(usize) -> R) -> Self;
    fn lane(&self, l: usize) -> R;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powf(self, e: Self) -> Self;
    fn abs(self) -> Self;
    fn min(self, o: Self) -> Self;
    fn max(self, o: Self) -> Self;

    fn lt(self, o: Self) -> Self::Mask;
    fn le(self, o: Self) -> Self::Mask;
    fn gt(self, o: Self) -> Self::Mask;
    fn ge(self, o: Self) -> Self::Mask;
    fn eq_mask(self, o: Self) -> Self::Mask;

    /// `m ? a : b` per lane.
    fn select(m: Self::Mask, a: Self, b: Self) -> Self;

    #[inline]
    fn zero_unless(self, m: Self::Mask) -> Self {
        Self::select(m, self, Self::splat(R::zero()))
    }

    fn is_finite(self) -> Self::Mask;
}

/// A vector back-end: the lane width is a property of the back-end, not of
/// the algorithm.
pub trait VectorBackend: Copy + Default + Debug + Send + Sync + 'static {
    /// Compute precision.
    type Real: Real;
    /// Accumulation precision of reductions and scatters.
    type Acc: Real;
    type Mask: MaskVector;
    type RV: RealVector<Self::Real, Mask = Self::Mask>;
    type IV: IndexVector;

    const WIDTH: usize;

    fn name() -> String {
        format!("{}x{}->{}", Self::Real::NAME, Self::WIDTH, Self::Acc::NAME)
    }

    /// True iff every lane is set.
    #[inline]
    fn vall(m: Self::Mask) -> bool {
        (0..Self::WIDTH).all(|l| m.lane(l))
    }

    /// True iff at least one lane is set.
    #[inline]
    fn vany(m: Self::Mask) -> bool {
        (0..Self::WIDTH).any(|l| m.lane(l))
    }

    /// Sum over set lanes in ascending lane order, in accumulation precision.
    #[inline]
    fn reduce_add(v: Self::RV, m: Self::Mask) -> Self::Acc {
        let mut acc = Self::Acc::zero();
        for l in 0..Self::WIDTH {
            if m.lane(l) {
                acc += v.lane(l).convert::<Self::Acc>();
            }
        }
        acc
    }

    /// `target[idx[l]] += v[l]` for set lanes, serialized in ascending lane
    /// order so colliding indices accumulate every contribution.
    #[inline]
    fn scatter_add(target: &mut [Self::Acc], idx: Self::IV, v: Self::RV, m: Self::Mask) {
        for l in 0..Self::WIDTH {
            if m.lane(l) {
                let i = idx.lane(l);
                debug_assert!(i < target.len(), "scatter index {i} out of bounds {}", target.len());
                target[i] += v.lane(l).convert::<Self::Acc>();
            }
        }
    }

    /// Loads row `rows[l]` (each `F` contiguous fields) for every lane and
    /// transposes, so output vector `f` holds field `f` of each lane's row.
    #[inline]
    fn adjacent_gather<const F: usize>(table: &[Self::Real], rows: Self::IV) -> [Self::RV; F] {
        let mut block = [[Self::Real::zero(); F]; 16];
        let mut out = [Self::RV::splat(Self::Real::zero()); F];
        // Process lanes in blocks of 16 rows: contiguous row loads, then an
        // in-register style transpose.
        let mut base = 0;
        while base < Self::WIDTH {
            let n = (Self::WIDTH - base).min(16);
            for (b, row) in block.iter_mut().enumerate().take(n) {
                let r = rows.lane(base + b);
                debug_assert!((r + 1) * F <= table.len(), "gather row {r} out of bounds");
                row.copy_from_slice(&table[r * F..(r + 1) * F]);
            }
            for (f, slot) in out.iter_mut().enumerate() {
                let prev = *slot;
                *slot = Self::RV::from_fn(|l| {
                    if l >= base && l < base + n {
                        block[l - base][f]
                    } else {
                        prev.lane(l)
                    }
                });
            }
            base += n;
        }
        out
    }
}

/// Plain array of `W` lanes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lanes<T, const W: usize>(pub [T; W]);

/// Per-lane boolean mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaneMask<const W: usize>(pub [bool; W]);

impl<const W: usize> BitAnd for LaneMask<W> {
    type Output = Self;
    #[inline]
    fn bitand(self, o: Self) -> Self {
        LaneMask(std::array::from_fn(|l| self.0[l] & o.0[l]))
    }
}

impl<const W: usize> BitOr for LaneMask<W> {
    type Output = Self;
    #[inline]
    fn bitor(self, o: Self) -> Self {
        LaneMask(std::array::from_fn(|l| self.0[l] | o.0[l]))
    }
}

impl<const W: usize> Not for LaneMask<W> {
    type Output = Self;
    #[inline]
    fn not(self) -> Self {
        LaneMask(std::array::from_fn(|l| !self.0[l]))
    }
}

impl<const W: usize> MaskVector for LaneMask<W> {
    const WIDTH: usize = W;
    #[inline]
    fn splat(b: bool) -> Self {
        LaneMask([b; W])
    }
    #[inline]
    fn from_fn(f: impl FnMut(usize) -> bool) -> Self {
        LaneMask(std::array::from_fn(f))
    }
    #[inline]
    fn lane(&self, l: usize) -> bool {
        self.0[l]
    }
}

impl<const W: usize> IndexVector for Lanes<usize, W> {
    #[inline]
    fn splat(i: usize) -> Self {
        Lanes([i; W])
    }
    #[inline]
    fn from_fn(f: impl FnMut(usize) -> usize) -> Self {
        Lanes(std::array::from_fn(f))
    }
    #[inline]
    fn lane(&self, l: usize) -> usize {
        self.0[l]
    }
}

macro_rules! lanewise_binop {
    ($tr:ident, $method:ident, $op:tt) => {
        impl<R: Real, const W: usize> $tr for Lanes<R, W> {
            type Output = Self;
            #[inline]
            fn $method(self, o: Self) -> Self {
                Lanes(std::array::from_fn(|l| self.0[l] $op o.0[l]))
            }
        }
    };
}

lanewise_binop!(Add, add, +);
lanewise_binop!(Sub, sub, -);
lanewise_binop!(Mul, mul, *);
lanewise_binop!(Div, div, /);

impl<R: Real, const W: usize> Neg for Lanes<R, W> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Lanes(std::array::from_fn(|l| -self.0[l]))
    }
}

macro_rules! lanewise_unary {
    ($($name:ident),*) => {
        $(
            #[inline]
            fn $name(self) -> Self {
                Lanes(std::array::from_fn(|l| self.0[l].$name()))
            }
        )*
    };
}

macro_rules! lanewise_cmp {
    ($($name:ident => $op:tt),*) => {
        $(
            #[inline]
            fn $name(self, o: Self) -> LaneMask<W> {
                LaneMask(std::array::from_fn(|l| self.0[l] $op o.0[l]))
            }
        )*
    };
}

impl<R: Real, const W: usize> RealVector<R> for Lanes<R, W> {
    type Mask = LaneMask<W>;

    #[inline]
    fn splat(x: R) -> Self {
        Lanes([x; W])
    }
    #[inline]
    fn from_fn(f: impl FnMut(usize) -> R) -> Self {
        Lanes(std::array::from_fn(f))
    }
    #[inline]
    fn lane(&self, l: usize) -> R {
        self.0[l]
    }

    lanewise_unary!(sqrt, exp, sin, cos, abs);

    #[inline]
    fn powf(self, e: Self) -> Self {
        Lanes(std::array::from_fn(|l| self.0[l].powf(e.0[l])))
    }
    #[inline]
    fn min(self, o: Self) -> Self {
        Lanes(std::array::from_fn(|l| self.0[l].min(o.0[l])))
    }
    #[inline]
    fn max(self, o: Self) -> Self {
        Lanes(std::array::from_fn(|l| self.0[l].max(o.0[l])))
    }

    lanewise_cmp!(lt => <, le => <=, gt => >, ge => >=, eq_mask => ==);

    #[inline]
    fn select(m: LaneMask<W>, a: Self, b: Self) -> Self {
        Lanes(std::array::from_fn(|l| if m.0[l] { a.0[l] } else { b.0[l] }))
    }

    #[inline]
    fn is_finite(self) -> LaneMask<W> {
        LaneMask(std::array::from_fn(|l| self.0[l].is_finite()))
    }
}

/// Portable software back-end: `W` lanes computing in `R`, accumulating in `A`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SoftBackend<R, A, const W: usize>(PhantomData<(R, A)>);

impl<R: Real, A: Real, const W: usize> VectorBackend for SoftBackend<R, A, W> {
    type Real = R;
    type Acc = A;
    type Mask = LaneMask<W>;
    type RV = Lanes<R, W>;
    type IV = Lanes<usize, W>;
    const WIDTH: usize = W;
}

/// Double-precision back-end of width `W`.
pub type DoubleBackend<const W: usize> = SoftBackend<f64, f64, W>;
/// Single-precision back-end of width `W`.
pub type SingleBackend<const W: usize> = SoftBackend<f32, f32, W>;
/// Single-precision compute with double-precision accumulation.
pub type MixedBackend<const W: usize> = SoftBackend<f32, f64, W>;

/// Iteration state of one lane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaneState {
    /// The predicate holds at the cursor; waiting for the kernel to fire.
    Ready,
    /// Still scanning for the next position where the predicate holds.
    Searching,
    /// The cursor reached the end of the lane's segment.
    Exhausted,
}

/// Independent per-lane cursors over per-lane segments `[begin, end)`.
#[derive(Clone, Debug)]
pub struct LaneCursorSet {
    begin: Vec<usize>,
    cursor: Vec<usize>,
    end: Vec<usize>,
    state: Vec<LaneState>,
}

impl LaneCursorSet {
    /// `width` lanes, all exhausted.
    pub fn new(width: usize) -> Self {
        LaneCursorSet {
            begin: vec![0; width],
            cursor: vec![0; width],
            end: vec![0; width],
            state: vec![LaneState::Exhausted; width],
        }
    }

    pub fn from_bounds(bounds: &[(usize, usize)]) -> Self {
        let mut c = Self::new(bounds.len());
        for (l, &(b, e)) in bounds.iter().enumerate() {
            c.reset_lane(l, b, e);
        }
        c
    }

    pub fn width(&self) -> usize {
        self.cursor.len()
    }

    pub fn reset_lane(&mut self, lane: usize, begin: usize, end: usize) {
        assert!(begin <= end, "lane {lane}: begin {begin} > end {end}");
        self.begin[lane] = begin;
        self.cursor[lane] = begin;
        self.end[lane] = end;
        self.state[lane] = if begin == end {
            LaneState::Exhausted
        } else {
            LaneState::Searching
        };
    }

    pub fn exhaust_lane(&mut self, lane: usize) {
        self.reset_lane(lane, 0, 0);
    }

    pub fn cursor(&self, lane: usize) -> usize {
        self.cursor[lane]
    }

    pub fn state(&self, lane: usize) -> LaneState {
        self.state[lane]
    }

    pub fn bounds(&self, lane: usize) -> (usize, usize) {
        (self.begin[lane], self.end[lane])
    }

    pub fn all_exhausted(&self) -> bool {
        self.state.iter().all(|&s| s == LaneState::Exhausted)
    }

    /// Sum of segment lengths, an upper bound on total cursor advancement.
    pub fn total_span(&self) -> usize {
        self.begin.iter().zip(&self.end).map(|(b, e)| e - b).sum()
    }
}

/// Advances every searching lane until its predicate holds (ready) or its
/// segment ends (exhausted). Returns the ready mask; the kernel fires on it
/// and then calls [`advance_ready`].
///
/// `pred(lane, position)` decides whether the lane can compute at `position`.
pub fn fast_forward<M: MaskVector>(
    cursors: &mut LaneCursorSet,
    mut pred: impl FnMut(usize, usize) -> bool,
) -> M {
    debug_assert_eq!(cursors.width(), M::WIDTH);
    for l in 0..cursors.width() {
        while cursors.state[l] == LaneState::Searching {
            if cursors.cursor[l] == cursors.end[l] {
                cursors.state[l] = LaneState::Exhausted;
            } else if pred(l, cursors.cursor[l]) {
                cursors.state[l] = LaneState::Ready;
            } else {
                cursors.cursor[l] += 1;
            }
        }
    }
    M::from_fn(|l| cursors.state[l] == LaneState::Ready)
}

/// Steps every lane in `mask` past its current position.
pub fn advance_ready<M: MaskVector>(cursors: &mut LaneCursorSet, mask: M) {
    for l in 0..cursors.width() {
        if mask.lane(l) {
            debug_assert_eq!(cursors.state[l], LaneState::Ready);
            cursors.cursor[l] += 1;
            cursors.state[l] = if cursors.cursor[l] == cursors.end[l] {
                LaneState::Exhausted
            } else {
                LaneState::Searching
            };
        }
    }
}

/// When the kernel fires during a ragged multi-lane traversal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FiringStrategy {
    /// Fast-forward each lane; fire once every live lane is ready.
    AllReady,
    /// Lock-step traversal; fire whenever at least one lane is ready.
    AnyReady,
}

/// Drives a full traversal of `cursors`, calling `on_fire(mask, positions)`
/// for every kernel invocation. Returns the number of invocations.
pub fn drive_lanes<M: MaskVector>(
    cursors: &mut LaneCursorSet,
    strategy: FiringStrategy,
    mut pred: impl FnMut(usize, usize) -> bool,
    mut on_fire: impl FnMut(M, &[usize]),
) -> usize {
    let mut fired = 0;
    match strategy {
        FiringStrategy::AllReady => loop {
            let mask: M = fast_forward(cursors, &mut pred);
            if !(0..M::WIDTH).any(|l| mask.lane(l)) {
                return fired;
            }
            on_fire(mask, &cursors.cursor);
            fired += 1;
            advance_ready(cursors, mask);
        },
        FiringStrategy::AnyReady => loop {
            if cursors.all_exhausted() {
                return fired;
            }
            let mask = M::from_fn(|l| {
                cursors.state[l] != LaneState::Exhausted && pred(l, cursors.cursor[l])
            });
            if (0..M::WIDTH).any(|l| mask.lane(l)) {
                on_fire(mask, &cursors.cursor);
                fired += 1;
            }
            for l in 0..cursors.width() {
                if cursors.state[l] != LaneState::Exhausted {
                    cursors.cursor[l] += 1;
                    if cursors.cursor[l] == cursors.end[l] {
                        cursors.state[l] = LaneState::Exhausted;
                    }
                }
            }
        },
    }
}

/// Randomized conformance suite every back-end must pass. Each building block
/// is compared against a plain scalar loop over the lanes.
pub mod conformance {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask<B: VectorBackend>(rng: &mut ChaCha8Rng) -> B::Mask {
        let density: f64 = rng.random();
        B::Mask::from_fn(|_| rng.random_bool(density))
    }

    fn random_vec<B: VectorBackend>(rng: &mut ChaCha8Rng) -> B::RV {
        B::RV::from_fn(|_| B::Real::from_f64(rng.random_range(-100.0..100.0)))
    }

    fn same<T: Real>(a: T, b: T) -> bool {
        a == b || (a.is_nan() && b.is_nan())
    }

    /// Conditionals, reductions, scatters and adjacent gathers.
    pub fn check_building_blocks<B: VectorBackend>(cases: usize, seed: u64) -> Result<(), String> {
        let w = B::WIDTH;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for case in 0..cases {
            let m = random_mask::<B>(&mut rng);
            let all = (0..w).all(|l| m.lane(l));
            let any = (0..w).any(|l| m.lane(l));
            if B::vall(m) != all || B::vany(m) != any {
                return Err(format!("{}: vall/vany mismatch on case {case}", B::name()));
            }

            let v = random_vec::<B>(&mut rng);
            let mut expected = B::Acc::zero();
            for l in 0..w {
                if m.lane(l) {
                    expected += v.lane(l).convert::<B::Acc>();
                }
            }
            let got = B::reduce_add(v, m);
            if !same(got, expected) {
                return Err(format!(
                    "{}: reduce_add case {case}: {got} != {expected}",
                    B::name()
                ));
            }

            // small targets force frequent index collisions
            let len = rng.random_range(1..=w.max(2) * 2);
            let mut target: Vec<B::Acc> = (0..len)
                .map(|_| B::Acc::from_f64(rng.random_range(-10.0..10.0)))
                .collect();
            let mut oracle = target.clone();
            let idx = B::IV::from_fn(|_| rng.random_range(0..len));
            B::scatter_add(&mut target, idx, v, m);
            for l in 0..w {
                if m.lane(l) {
                    oracle[idx.lane(l)] += v.lane(l).convert::<B::Acc>();
                }
            }
            if target.iter().zip(&oracle).any(|(a, b)| !same(*a, *b)) {
                return Err(format!("{}: scatter_add case {case} diverged", B::name()));
            }

            const F: usize = 5;
            let rows = rng.random_range(1..40usize);
            let table: Vec<B::Real> = (0..rows * F)
                .map(|_| B::Real::from_f64(rng.random_range(-5.0..5.0)))
                .collect();
            let ridx = B::IV::from_fn(|_| rng.random_range(0..rows));
            let got: [B::RV; F] = B::adjacent_gather(&table, ridx);
            for (f, vf) in got.iter().enumerate() {
                for l in 0..w {
                    if !same(vf.lane(l), table[ridx.lane(l) * F + f]) {
                        return Err(format!(
                            "{}: adjacent_gather case {case} field {f} lane {l}",
                            B::name()
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Lane-wise arithmetic against the scalar operation at the same precision.
    pub fn check_lanewise<B: VectorBackend>(cases: usize, seed: u64) -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for case in 0..cases {
            let a = random_vec::<B>(&mut rng);
            let b = random_vec::<B>(&mut rng);
            let small = B::RV::from_fn(|_| B::Real::from_f64(rng.random_range(-3.0..3.0)));
            let pos = B::RV::from_fn(|_| B::Real::from_f64(rng.random_range(0.0..50.0)));
            let m = random_mask::<B>(&mut rng);
            for l in 0..B::WIDTH {
                let (x, y, s, p) = (a.lane(l), b.lane(l), small.lane(l), pos.lane(l));
                let checks = [
                    ("add", (a + b).lane(l), x + y),
                    ("sub", (a - b).lane(l), x - y),
                    ("mul", (a * b).lane(l), x * y),
                    ("div", (a / b).lane(l), x / y),
                    ("neg", (-a).lane(l), -x),
                    ("sqrt", pos.sqrt().lane(l), p.sqrt()),
                    ("exp", small.exp().lane(l), s.exp()),
                    ("sin", a.sin().lane(l), x.sin()),
                    ("cos", a.cos().lane(l), x.cos()),
                    ("powf", pos.powf(small).lane(l), p.powf(s)),
                    ("abs", a.abs().lane(l), x.abs()),
                    ("select", B::RV::select(m, a, b).lane(l), if m.lane(l) { x } else { y }),
                ];
                for (name, got, want) in checks {
                    if !same(got, want) {
                        return Err(format!(
                            "{}: {name} case {case} lane {l}: {got} != {want}",
                            B::name()
                        ));
                    }
                }
                if a.lt(b).lane(l) != (x < y) || a.le(b).lane(l) != (x <= y) {
                    return Err(format!("{}: comparison case {case} lane {l}", B::name()));
                }
            }
        }
        Ok(())
    }

    pub fn check_backend<B: VectorBackend>(cases: usize, seed: u64) -> Result<(), String> {
        check_building_blocks::<B>(cases, seed)?;
        check_lanewise::<B>(cases / 10 + 1, seed ^ 0x9e37_79b9)
    }
}
