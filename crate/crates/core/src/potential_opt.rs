//! Vectorized Tersoff kernels and the filter/compute pipeline.
//!
//! The filter stage drops skin atoms from every neighbor segment and builds
//! a [`PairQueue`] of the ordered pairs inside their per-type cutoff. The
//! compute stage consumes it with one of three schemes:
//!
//! * **V1** maps the `j` neighbors of one atom `i` onto lanes. The `k` loop
//!   walks `i`'s segment with `k` uniform across lanes.
//! * **V2** fuses the `i` and `j` loops: each lane owns one queued pair and
//!   runs its own `k` traversal with [`fast_forward`].
//! * **V3** is V2 instantiated at width 1.
//!
//! Every kernel caches the ζ derivatives of the first `k_max` contributing
//! `k` per pair and recomputes the rest in a fallback pass.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use num_traits::{Float, FloatConst};

use crate::error::{Error, Result};
use crate::model::{wrap_component, AtomSystem, ParamTable, PrecisionMode, Vec3};
use crate::neighbor::{FilteredList, NeighborList};
use crate::potential_ref::{compute_opt_scalar_range, compute_ref, EnergyForces};
use crate::simd::{
    advance_ready, fast_forward, IndexVector, LaneCursorSet, MaskVector, Real, RealVector,
    SoftBackend, VectorBackend,
};

/// Force-evaluation scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Resolved from width and precision by [`select_scheme`].
    Auto,
    Ref,
    ScalarOpt,
    V1,
    V2,
    V3,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Auto => "auto",
            Scheme::Ref => "ref",
            Scheme::ScalarOpt => "scalar-opt",
            Scheme::V1 => "v1",
            Scheme::V2 => "v2",
            Scheme::V3 => "v3",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Scheme::Auto),
            "ref" => Ok(Scheme::Ref),
            "scalar-opt" | "scalar" | "opt" => Ok(Scheme::ScalarOpt),
            "v1" => Ok(Scheme::V1),
            "v2" => Ok(Scheme::V2),
            "v3" => Ok(Scheme::V3),
            other => Err(Error::config(format!(
                "unknown scheme `{other}` (expected auto, ref, scalar-opt, v1, v2 or v3)"
            ))),
        }
    }
}

/// Lane widths with a compiled back-end.
pub const SUPPORTED_WIDTHS: [usize; 5] = [1, 2, 4, 8, 16];

/// Default scheme for a back-end width: V1 for short vectors, V2 for wide
/// ones, V3 when there is a single lane.
pub fn select_scheme(width: usize, precision: PrecisionMode) -> Scheme {
    if precision == PrecisionMode::Ref {
        Scheme::Ref
    } else if width <= 1 {
        Scheme::V3
    } else if width <= 4 {
        Scheme::V1
    } else {
        Scheme::V2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForceOptions {
    pub scheme: Scheme,
    pub precision: PrecisionMode,
    pub width: usize,
    pub k_max: usize,
    pub workers: usize,
    /// Drop skin atoms before the kernels run. Off only for testing.
    pub filter: bool,
}

impl Default for ForceOptions {
    fn default() -> Self {
        ForceOptions {
            scheme: Scheme::Auto,
            precision: PrecisionMode::OptD,
            width: 4,
            k_max: 16,
            workers: 1,
            filter: true,
        }
    }
}

impl ForceOptions {
    /// Concrete scheme, precision and width that [`compute_forces`] will use.
    ///
    /// The reference and scalar schemes are double precision only and report
    /// width 1; V3 always runs at width 1.
    pub fn resolve(&self) -> Result<ForceOptions> {
        if self.workers == 0 {
            return Err(Error::config("workers must be >= 1"));
        }
        let mut o = self.clone();
        if o.scheme == Scheme::Auto {
            o.scheme = select_scheme(o.width, o.precision);
        }
        match o.scheme {
            Scheme::Ref => {
                if o.precision.computes_in_single() {
                    return Err(Error::config(format!(
                        "scheme ref is double precision only, got precision {}",
                        o.precision
                    )));
                }
                o.precision = PrecisionMode::Ref;
                o.width = 1;
            }
            _ if o.precision == PrecisionMode::Ref => {
                return Err(Error::config(format!(
                    "precision ref requires scheme ref, got {}",
                    o.scheme
                )));
            }
            Scheme::ScalarOpt => {
                if o.precision != PrecisionMode::OptD {
                    return Err(Error::config(format!(
                        "scheme scalar-opt is double precision only, got precision {}",
                        o.precision
                    )));
                }
                o.width = 1;
            }
            Scheme::V3 => o.width = 1,
            _ => {
                if !SUPPORTED_WIDTHS.contains(&o.width) {
                    return Err(Error::config(format!(
                        "unsupported width {} (supported: {SUPPORTED_WIDTHS:?})",
                        o.width
                    )));
                }
            }
        }
        Ok(o)
    }
}

/// Ordered pairs inside their per-type cutoff, ascending `i` then neighbor order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairQueue {
    pub i_idx: Vec<usize>,
    pub j_idx: Vec<usize>,
    pub deltas: Vec<Vec3>,
    pub r: Vec<f64>,
    /// Pairs of atom `i` occupy `atom_offsets[i]..atom_offsets[i + 1]`.
    pub atom_offsets: Vec<usize>,
}

impl PairQueue {
    pub fn len(&self) -> usize {
        self.i_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i_idx.is_empty()
    }
}

/// Filters `list` and queues the pairs [`compute_ref`] would process.
pub fn build_pair_queue(system: &AtomSystem, list: &NeighborList, params: &ParamTable) -> PairQueue {
    let filtered = FilteredList::filter(list, system, params.r_cut_max());
    queue_from_filtered(system, &filtered, params)
}

fn queue_from_filtered(system: &AtomSystem, list: &FilteredList, params: &ParamTable) -> PairQueue {
    let species = system.species();
    let n = system.len();
    let mut q = PairQueue {
        atom_offsets: Vec::with_capacity(n + 1),
        ..Default::default()
    };
    q.atom_offsets.push(0);
    for i in 0..n {
        for &j in list.segment(i) {
            let d = system.delta(i, j);
            let r2 = d.norm2();
            if r2 <= params.entry(species[i], species[j], species[j]).cutoff_sq() {
                q.i_idx.push(i);
                q.j_idx.push(j);
                q.deltas.push(d);
                q.r.push(r2.sqrt());
            }
        }
        q.atom_offsets.push(q.i_idx.len());
    }
    q
}

/// Energy and forces with the configured scheme, precision and width.
pub fn compute_forces(
    system: &AtomSystem,
    list: &NeighborList,
    params: &ParamTable,
    opts: &ForceOptions,
) -> Result<EnergyForces> {
    let o = opts.resolve()?;
    match o.scheme {
        Scheme::Ref => compute_ref(system, list, params),
        Scheme::ScalarOpt => scalar_opt_parallel(system, list, params, o.k_max, o.workers),
        Scheme::V1 | Scheme::V2 | Scheme::V3 => {
            let filtered = if o.filter {
                FilteredList::filter(list, system, params.r_cut_max())
            } else {
                FilteredList::unfiltered(list)
            };
            let queue = queue_from_filtered(system, &filtered, params);
            let job = Job {
                system,
                params,
                list: &filtered,
                queue: &queue,
                scheme: o.scheme,
                k_max: o.k_max,
                workers: o.workers,
            };
            match o.precision {
                PrecisionMode::OptD => dispatch_width::<f64, f64>(&job, o.width),
                PrecisionMode::OptS => dispatch_width::<f32, f32>(&job, o.width),
                PrecisionMode::OptM => dispatch_width::<f32, f64>(&job, o.width),
                PrecisionMode::Ref => unreachable!("rejected by resolve"),
            }
        }
        Scheme::Auto => unreachable!("resolved above"),
    }
}

struct Job<'a> {
    system: &'a AtomSystem,
    params: &'a ParamTable,
    list: &'a FilteredList,
    queue: &'a PairQueue,
    scheme: Scheme,
    k_max: usize,
    workers: usize,
}

fn dispatch_width<R: Real, A: Real>(job: &Job<'_>, width: usize) -> Result<EnergyForces> {
    match width {
        1 => run_vector::<SoftBackend<R, A, 1>>(job),
        2 => run_vector::<SoftBackend<R, A, 2>>(job),
        4 => run_vector::<SoftBackend<R, A, 4>>(job),
        8 => run_vector::<SoftBackend<R, A, 8>>(job),
        16 => run_vector::<SoftBackend<R, A, 16>>(job),
        w => Err(Error::config(format!("unsupported width {w}"))),
    }
}

/// Contiguous, near-equal blocks of `0..len`.
fn split_blocks(len: usize, workers: usize) -> Vec<Range<usize>> {
    let parts = workers.clamp(1, len.max(1));
    let base = len / parts;
    let extra = len % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let size = base + usize::from(p < extra);
        out.push(start..start + size);
        start += size;
    }
    out
}

/// Runs `f` on each block, on scoped threads when there is more than one.
/// Results come back in block order.
fn run_blocks<P: Send>(
    blocks: Vec<Range<usize>>,
    f: impl Fn(Range<usize>) -> Result<P> + Sync,
) -> Result<Vec<P>> {
    if blocks.len() == 1 {
        return Ok(vec![f(blocks[0].clone())?]);
    }
    let results: Vec<Result<P>> = std::thread::scope(|s| {
        let handles: Vec<_> = blocks
            .into_iter()
            .map(|b| {
                let f = &f;
                s.spawn(move || f(b))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    });
    results.into_iter().collect()
}

fn scalar_opt_parallel(
    system: &AtomSystem,
    list: &NeighborList,
    params: &ParamTable,
    k_max: usize,
    workers: usize,
) -> Result<EnergyForces> {
    let n = system.len();
    let parts = run_blocks(split_blocks(n, workers), |atoms| {
        let mut out = EnergyForces::zeros(n);
        compute_opt_scalar_range(system, list, params, k_max, atoms, &mut out)?;
        Ok(out)
    })?;
    let mut total = EnergyForces::zeros(n);
    for p in parts {
        total.energy += p.energy;
        for (t, f) in total.forces.iter_mut().zip(&p.forces) {
            *t += *f;
        }
    }
    Ok(total)
}

/// One worker's private energy and force buffers.
struct Partial<A> {
    energy: A,
    f: [Vec<A>; 3],
}

impl<A: Real> Partial<A> {
    fn new(n: usize) -> Self {
        Partial {
            energy: A::zero(),
            f: [vec![A::zero(); n], vec![A::zero(); n], vec![A::zero(); n]],
        }
    }
}

fn run_vector<B: VectorBackend>(job: &Job<'_>) -> Result<EnergyForces> {
    let ctx = Ctx::<B::Real>::new(job);
    let n = job.system.len();
    let parts = match job.scheme {
        Scheme::V1 => run_blocks(split_blocks(n, job.workers), |atoms| {
            let mut p = Partial::new(n);
            v1_atoms::<B>(&ctx, job.k_max, atoms, &mut p)?;
            Ok(p)
        })?,
        Scheme::V2 => run_blocks(split_blocks(job.queue.len(), job.workers), |pairs| {
            let mut p = Partial::new(n);
            v2_pairs::<B>(&ctx, job.k_max, pairs, &mut p)?;
            Ok(p)
        })?,
        Scheme::V3 => run_blocks(split_blocks(job.queue.len(), job.workers), |pairs| {
            let mut p = Partial::new(n);
            v2_pairs::<SoftBackend<B::Real, B::Acc, 1>>(&ctx, job.k_max, pairs, &mut p)?;
            Ok(p)
        })?,
        s => unreachable!("{s} is not a vector scheme"),
    };
    let mut total = EnergyForces::zeros(n);
    for p in parts {
        total.energy += p.energy.to_f64();
        for (i, t) in total.forces.iter_mut().enumerate() {
            *t += Vec3::new(p.f[0][i].to_f64(), p.f[1][i].to_f64(), p.f[2][i].to_f64());
        }
    }
    Ok(total)
}

const ROW: usize = 8;

/// Kernel inputs converted to the compute precision.
struct Ctx<'a, R: Real> {
    pos: [Vec<R>; 3],
    lengths: [R; 3],
    periodic: [bool; 3],
    species: &'a [usize],
    ns: usize,
    /// `[R, D, λ1, A, λ2, B, β, η]` per (si, sj) pair type.
    pair_rows: Vec<R>,
    /// `[R, D, λ3, m, γ, c², d², h]` per (si, sj, sk) triplet.
    trip_rows: Vec<R>,
    trip_cutsq: Vec<R>,
    list: &'a FilteredList,
    queue: &'a PairQueue,
}

impl<'a, R: Real> Ctx<'a, R> {
    fn new(job: &Job<'a>) -> Self {
        let sys = job.system;
        let params = job.params;
        let ns = params.species_count();
        let conv = R::from_f64;
        let pos = [
            sys.positions.iter().map(|p| conv(p.x)).collect(),
            sys.positions.iter().map(|p| conv(p.y)).collect(),
            sys.positions.iter().map(|p| conv(p.z)).collect(),
        ];
        let l = sys.sim_box().lengths();
        let mut pair_rows = Vec::with_capacity(ns * ns * ROW);
        for si in 0..ns {
            for sj in 0..ns {
                let e = params.entry(si, sj, sj);
                pair_rows.extend(
                    [
                        e.cutoff_r,
                        e.cutoff_d,
                        e.lambda1,
                        e.repulsive_a,
                        e.lambda2,
                        e.attractive_b,
                        e.beta,
                        e.eta,
                    ]
                    .map(conv),
                );
            }
        }
        let mut trip_rows = Vec::with_capacity(ns * ns * ns * ROW);
        let mut trip_cutsq = Vec::with_capacity(ns * ns * ns);
        for e in params.entries() {
            trip_rows.extend(
                [
                    e.cutoff_r,
                    e.cutoff_d,
                    e.lambda3,
                    e.m as f64,
                    e.gamma,
                    e.c * e.c,
                    e.d * e.d,
                    e.h,
                ]
                .map(conv),
            );
            let cut = conv(e.cutoff_r) + conv(e.cutoff_d);
            trip_cutsq.push(cut * cut);
        }
        Ctx {
            pos,
            lengths: l.map(conv),
            periodic: sys.sim_box().is_periodic(),
            species: sys.species(),
            ns,
            pair_rows,
            trip_rows,
            trip_cutsq,
            list: job.list,
            queue: job.queue,
        }
    }

    #[inline]
    fn delta_axis(&self, axis: usize, i: usize, k: usize) -> R {
        let d = self.pos[axis][k] - self.pos[axis][i];
        if self.periodic[axis] {
            wrap_component(d, self.lengths[axis])
        } else {
            d
        }
    }

    #[inline]
    fn r2(&self, i: usize, k: usize) -> R {
        let dx = self.delta_axis(0, i, k);
        let dy = self.delta_axis(1, i, k);
        let dz = self.delta_axis(2, i, k);
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    fn pair_row(&self, i: usize, j: usize) -> usize {
        self.species[i] * self.ns + self.species[j]
    }

    #[inline]
    fn trip_row(&self, i: usize, j: usize, k: usize) -> usize {
        (self.species[i] * self.ns + self.species[j]) * self.ns + self.species[k]
    }

    /// Whether `k` contributes to ζ(i, j).
    #[inline]
    fn k_contributes(&self, i: usize, j: usize, k: usize) -> bool {
        k != j && self.r2(i, k) <= self.trip_cutsq[self.trip_row(i, j, k)]
    }

    /// Per-lane displacement `x_k - x_i`; masked-off lanes get zero.
    #[inline]
    fn delta_vec<B: VectorBackend<Real = R>>(&self, i: B::IV, k: B::IV, m: B::Mask) -> [B::RV; 3] {
        std::array::from_fn(|axis| {
            B::RV::from_fn(|l| {
                if m.lane(l) {
                    self.delta_axis(axis, i.lane(l), k.lane(l))
                } else {
                    R::zero()
                }
            })
        })
    }
}

#[inline(always)]
fn c<B: VectorBackend>(x: f64) -> B::RV {
    B::RV::splat(B::Real::from_f64(x))
}

#[inline(always)]
fn dot<B: VectorBackend>(a: &[B::RV; 3], b: &[B::RV; 3]) -> B::RV {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline(always)]
fn scale3<B: VectorBackend>(a: &[B::RV; 3], s: B::RV) -> [B::RV; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Squared norm with masked-off lanes set to 1 so downstream divisions stay finite.
#[inline(always)]
fn sanitized_norm<B: VectorBackend>(d: &[B::RV; 3], m: B::Mask) -> B::RV {
    B::RV::select(m, dot::<B>(d, d), c::<B>(1.0)).sqrt()
}

struct PairParams<V> {
    big_r: V,
    big_d: V,
    lambda1: V,
    a: V,
    lambda2: V,
    b: V,
    beta: V,
    eta: V,
}

impl<V: Copy> PairParams<V> {
    fn from_rows([big_r, big_d, lambda1, a, lambda2, b, beta, eta]: [V; ROW]) -> Self {
        PairParams { big_r, big_d, lambda1, a, lambda2, b, beta, eta }
    }
}

struct TripParams<V> {
    big_r: V,
    big_d: V,
    lambda3: V,
    m: V,
    gamma: V,
    c2: V,
    d2: V,
    h: V,
}

impl<V: Copy> TripParams<V> {
    fn from_rows([big_r, big_d, lambda3, m, gamma, c2, d2, h]: [V; ROW]) -> Self {
        TripParams { big_r, big_d, lambda3, m, gamma, c2, d2, h }
    }
}

#[inline(always)]
fn cutoff_vec<B: VectorBackend>(r: B::RV, big_r: B::RV, big_d: B::RV) -> (B::RV, B::RV) {
    let zero = c::<B>(0.0);
    let one = c::<B>(1.0);
    let inner = r.le(big_r - big_d);
    let outer = r.ge(big_r + big_d);
    let window = !(inner | outer);
    if !B::vany(window) {
        return (B::RV::select(inner, one, zero), zero);
    }
    let half = c::<B>(0.5);
    let scale = B::RV::splat(B::Real::PI()) / (c::<B>(2.0) * big_d);
    let arg = scale * (r - big_r);
    let fc = half - half * arg.sin();
    let dfc = -half * scale * arg.cos();
    (
        B::RV::select(inner, one, B::RV::select(outer, zero, fc)),
        dfc.zero_unless(window),
    )
}

#[inline(always)]
fn angle_vec<B: VectorBackend>(cos: B::RV, p: &TripParams<B::RV>) -> (B::RV, B::RV) {
    let u = p.h - cos;
    let denom = p.d2 + u * u;
    let g = p.gamma * (c::<B>(1.0) + p.c2 / p.d2 - p.c2 / denom);
    let dg = c::<B>(-2.0) * p.gamma * p.c2 * u / (denom * denom);
    (g, dg)
}

#[inline(always)]
fn exp_factor_vec<B: VectorBackend>(delta_r: B::RV, p: &TripParams<B::RV>) -> (B::RV, B::RV) {
    let t = p.lambda3 * delta_r;
    let cubic = p.m.eq_mask(c::<B>(3.0));
    let ex = B::RV::select(cubic, t * t * t, t).exp();
    let dex = B::RV::select(cubic, ex * c::<B>(3.0) * p.lambda3 * t * t, ex * p.lambda3);
    (ex, dex)
}

#[inline(always)]
fn clamp_cos<B: VectorBackend>(x: B::RV) -> B::RV {
    x.max(c::<B>(-1.0)).min(c::<B>(1.0))
}

/// ζ term value only.
#[inline(always)]
fn zeta_value_vec<B: VectorBackend>(
    d_ij: &[B::RV; 3],
    r_ij: B::RV,
    d_ik: &[B::RV; 3],
    r_ik: B::RV,
    p: &TripParams<B::RV>,
) -> B::RV {
    let cos = clamp_cos::<B>(dot::<B>(d_ij, d_ik) / (r_ij * r_ik));
    let (fc, _) = cutoff_vec::<B>(r_ik, p.big_r, p.big_d);
    let (g, _) = angle_vec::<B>(cos, p);
    let (ex, _) = exp_factor_vec::<B>(r_ij - r_ik, p);
    fc * g * ex
}

struct ZetaVec<V> {
    zeta: V,
    grad_j: [V; 3],
    grad_k: [V; 3],
}

/// ζ term with its gradients with respect to `x_j` and `x_k`.
#[inline(always)]
fn zeta_full_vec<B: VectorBackend>(
    d_ij: &[B::RV; 3],
    r_ij: B::RV,
    d_ik: &[B::RV; 3],
    r_ik: B::RV,
    p: &TripParams<B::RV>,
) -> ZetaVec<B::RV> {
    let one = c::<B>(1.0);
    let within = r_ik.lt(p.big_r + p.big_d);
    let inv_ij = one / r_ij;
    let inv_ik = one / r_ik;
    let raw_cos = dot::<B>(d_ij, d_ik) / (r_ij * r_ik);
    let cos = clamp_cos::<B>(raw_cos);
    let (fc, dfc) = cutoff_vec::<B>(r_ik, p.big_r, p.big_d);
    let (g, dg) = angle_vec::<B>(cos, p);
    let (ex, dex) = exp_factor_vec::<B>(r_ij - r_ik, p);

    let u_ij = scale3::<B>(d_ij, inv_ij);
    let u_ik = scale3::<B>(d_ik, inv_ik);
    let fc_g = fc * g;
    let ang = fc * dg * ex;
    let rad_j = fc_g * dex;
    let rad_k = dfc * g * ex - fc_g * dex;
    let zero = c::<B>(0.0);
    let mut grad_j = [zero; 3];
    let mut grad_k = [zero; 3];
    for a in 0..3 {
        let dcos_dj = (u_ik[a] - u_ij[a] * raw_cos) * inv_ij;
        let dcos_dk = (u_ij[a] - u_ik[a] * raw_cos) * inv_ik;
        grad_j[a] = (dcos_dj * ang + u_ij[a] * rad_j).zero_unless(within);
        grad_k[a] = (u_ik[a] * rad_k + dcos_dk * ang).zero_unless(within);
    }
    ZetaVec {
        zeta: (fc_g * ex).zero_unless(within),
        grad_j,
        grad_k,
    }
}

/// Pair energy, radial force scale `dV/dr / r` and `dV/dζ`.
#[inline(always)]
fn pair_vec<B: VectorBackend>(
    r: B::RV,
    zeta: B::RV,
    p: &PairParams<B::RV>,
) -> (B::RV, B::RV, B::RV) {
    let half = c::<B>(0.5);
    let one = c::<B>(1.0);
    let (fc, dfc) = cutoff_vec::<B>(r, p.big_r, p.big_d);
    let fr = p.a * (-p.lambda1 * r).exp();
    let fa = -p.b * (-p.lambda2 * r).exp();
    let dfr = -p.lambda1 * fr;
    let dfa = -p.lambda2 * fa;

    let positive = zeta.gt(c::<B>(0.0));
    let pw = (p.beta * zeta).powf(p.eta);
    let b = B::RV::select(positive, (one + pw).powf(c::<B>(-0.5) / p.eta), one);
    let db = (-half * b * pw / (zeta * (one + pw))).zero_unless(positive);

    let v = half * fc * (fr + b * fa);
    let dv_dr = half * (dfc * (fr + b * fa) + fc * (dfr + b * dfa));
    let dzeta = half * fc * fa * db;
    (v, dv_dr / r, dzeta)
}

fn check_lanes<B: VectorBackend>(
    v: B::RV,
    active: B::Mask,
    iv: B::IV,
    jv: B::IV,
    stage: &'static str,
) -> Result<()> {
    let bad = active & !v.is_finite();
    if B::vany(bad) {
        let l = (0..B::WIDTH).find(|&l| bad.lane(l)).unwrap_or(0);
        return Err(Error::NonFinite {
            i: iv.lane(l),
            j: jv.lane(l),
            stage,
        });
    }
    Ok(())
}

/// Shared ζ-to-force tail: energy, pair forces, and the per-pair `dV/dζ`.
struct PairResult<V> {
    fpair: [V; 3],
    dzeta: V,
}

fn finish_pair<B: VectorBackend>(
    zeta: B::RV,
    r_ij: B::RV,
    d_ij: &[B::RV; 3],
    pp: &PairParams<B::RV>,
    active: B::Mask,
    iv: B::IV,
    jv: B::IV,
    energy: &mut B::Acc,
) -> Result<PairResult<B::RV>> {
    check_lanes::<B>(zeta, active, iv, jv, "zeta")?;
    let (v, f_scale, dzeta) = pair_vec::<B>(r_ij, zeta, pp);
    check_lanes::<B>(v, active, iv, jv, "pair energy")?;
    check_lanes::<B>(f_scale, active, iv, jv, "pair force")?;
    check_lanes::<B>(dzeta, active, iv, jv, "bond-order derivative")?;
    *energy += B::reduce_add(v, active);
    Ok(PairResult {
        fpair: scale3::<B>(d_ij, f_scale),
        dzeta: dzeta.zero_unless(active),
    })
}

/// A cached k-gradient: its k index (per lane or uniform), the lanes it
/// belongs to, and `∂ζ/∂x_k`.
struct Slot<K, M, V> {
    k: K,
    mask: M,
    grad_k: [V; 3],
}

/// V1 over the atoms `atoms` (as `i`).
fn v1_atoms<B: VectorBackend>(
    ctx: &Ctx<'_, B::Real>,
    k_max: usize,
    atoms: Range<usize>,
    out: &mut Partial<B::Acc>,
) -> Result<()> {
    let w = B::WIDTH;
    let q = ctx.queue;
    let zero = c::<B>(0.0);
    let mut slots: Vec<Slot<usize, B::Mask, B::RV>> = Vec::new();
    let mut counts = vec![0usize; w];
    let mut k_delta: Vec<[B::Real; 3]> = Vec::new();
    let mut k_r2: Vec<B::Real> = Vec::new();

    for i in atoms {
        let seg = ctx.list.segment(i);
        k_delta.clear();
        k_r2.clear();
        for &k in seg {
            let d = [0, 1, 2].map(|a| ctx.delta_axis(a, i, k));
            k_delta.push(d);
            k_r2.push(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        }

        let (qa, qb) = (q.atom_offsets[i], q.atom_offsets[i + 1]);
        let mut start = qa;
        while start < qb {
            let n = (qb - start).min(w);
            let active = B::Mask::from_fn(|l| l < n);
            let iv = B::IV::splat(i);
            let jv = B::IV::from_fn(|l| if l < n { q.j_idx[start + l] } else { i });
            let d_ij = ctx.delta_vec::<B>(iv, jv, active);
            let r_ij = sanitized_norm::<B>(&d_ij, active);
            let pp = PairParams::from_rows(B::adjacent_gather::<ROW>(
                &ctx.pair_rows,
                B::IV::from_fn(|l| ctx.pair_row(i, jv.lane(l))),
            ));

            // the mask of lanes for which the k at segment position `pos` contributes
            let lanes_for = |pos: usize, k: usize| {
                let r2 = k_r2[pos];
                B::Mask::from_fn(|l| {
                    l < n && k != jv.lane(l) && r2 <= ctx.trip_cutsq[ctx.trip_row(i, jv.lane(l), k)]
                })
            };
            let k_vectors = |pos: usize, k: usize| {
                let d = k_delta[pos].map(B::RV::splat);
                let r = B::RV::splat(k_r2[pos].sqrt());
                let tp = TripParams::from_rows(B::adjacent_gather::<ROW>(
                    &ctx.trip_rows,
                    B::IV::from_fn(|l| ctx.trip_row(i, jv.lane(l), k)),
                ));
                (d, r, tp)
            };

            let mut zeta = zero;
            let mut dz_i = [zero; 3];
            let mut dz_j = [zero; 3];
            let mut overflow = false;
            slots.clear();
            counts.iter_mut().for_each(|c| *c = 0);
            for (pos, &k) in seg.iter().enumerate() {
                let m = lanes_for(pos, k);
                if !B::vany(m) {
                    continue;
                }
                let cached = B::Mask::from_fn(|l| m.lane(l) && counts[l] < k_max);
                for (l, c) in counts.iter_mut().enumerate() {
                    *c += usize::from(m.lane(l));
                }
                overflow |= B::vany(m & !cached);
                let (d_ik, r_ik, tp) = k_vectors(pos, k);
                if B::vany(cached) {
                    let t = zeta_full_vec::<B>(&d_ij, r_ij, &d_ik, r_ik, &tp);
                    zeta = zeta + t.zeta.zero_unless(m);
                    for a in 0..3 {
                        let gj = t.grad_j[a].zero_unless(cached);
                        let gk = t.grad_k[a].zero_unless(cached);
                        dz_j[a] = dz_j[a] + gj;
                        dz_i[a] = dz_i[a] - (gj + gk);
                    }
                    slots.push(Slot {
                        k,
                        mask: cached,
                        grad_k: t.grad_k,
                    });
                } else {
                    let z = zeta_value_vec::<B>(&d_ij, r_ij, &d_ik, r_ik, &tp);
                    zeta = zeta + z.zero_unless(m);
                }
            }

            let res = finish_pair::<B>(zeta, r_ij, &d_ij, &pp, active, iv, jv, &mut out.energy)?;
            let dzeta = res.dzeta;
            for a in 0..3 {
                out.f[a][i] += B::reduce_add(res.fpair[a] - dz_i[a] * dzeta, active);
                B::scatter_add(&mut out.f[a], jv, -(res.fpair[a] + dz_j[a] * dzeta), active);
            }
            for s in &slots {
                for a in 0..3 {
                    out.f[a][s.k] += B::reduce_add(-(s.grad_k[a] * dzeta), s.mask);
                }
            }

            if overflow {
                counts.iter_mut().for_each(|c| *c = 0);
                for (pos, &k) in seg.iter().enumerate() {
                    let m = lanes_for(pos, k);
                    if !B::vany(m) {
                        continue;
                    }
                    let late = B::Mask::from_fn(|l| m.lane(l) && counts[l] >= k_max);
                    for (l, c) in counts.iter_mut().enumerate() {
                        *c += usize::from(m.lane(l));
                    }
                    if !B::vany(late) {
                        continue;
                    }
                    let (d_ik, r_ik, tp) = k_vectors(pos, k);
                    let t = zeta_full_vec::<B>(&d_ij, r_ij, &d_ik, r_ik, &tp);
                    for a in 0..3 {
                        let gj = t.grad_j[a] * dzeta;
                        let gk = t.grad_k[a] * dzeta;
                        out.f[a][i] += B::reduce_add(gj + gk, late);
                        B::scatter_add(&mut out.f[a], jv, -gj, late);
                        out.f[a][k] += B::reduce_add(-gk, late);
                    }
                }
            }
            start += n;
        }
    }
    Ok(())
}

/// V2 over the queued pairs `pairs`, one pair per lane.
fn v2_pairs<B: VectorBackend>(
    ctx: &Ctx<'_, B::Real>,
    k_max: usize,
    pairs: Range<usize>,
    out: &mut Partial<B::Acc>,
) -> Result<()> {
    let w = B::WIDTH;
    let q = ctx.queue;
    let list = ctx.list;
    let zero = c::<B>(0.0);
    let mut cursors = LaneCursorSet::new(w);
    let mut slots: Vec<Slot<B::IV, B::Mask, B::RV>> = Vec::new();
    let mut resume: Vec<Option<usize>> = vec![None; w];

    let mut start = pairs.start;
    while start < pairs.end {
        let n = (pairs.end - start).min(w);
        let active = B::Mask::from_fn(|l| l < n);
        let iv = B::IV::from_fn(|l| if l < n { q.i_idx[start + l] } else { 0 });
        let jv = B::IV::from_fn(|l| if l < n { q.j_idx[start + l] } else { 0 });
        let d_ij = ctx.delta_vec::<B>(iv, jv, active);
        let r_ij = sanitized_norm::<B>(&d_ij, active);
        let pp = PairParams::from_rows(B::adjacent_gather::<ROW>(
            &ctx.pair_rows,
            B::IV::from_fn(|l| ctx.pair_row(iv.lane(l), jv.lane(l))),
        ));

        let ready = |l: usize, pos: usize| ctx.k_contributes(iv.lane(l), jv.lane(l), list.neighbors[pos]);
        let fire_vectors = |cursors: &LaneCursorSet, m: B::Mask| {
            let kv = B::IV::from_fn(|l| if m.lane(l) { list.neighbors[cursors.cursor(l)] } else { 0 });
            let d_ik = ctx.delta_vec::<B>(iv, kv, m);
            let r_ik = sanitized_norm::<B>(&d_ik, m);
            let tp = TripParams::from_rows(B::adjacent_gather::<ROW>(
                &ctx.trip_rows,
                B::IV::from_fn(|l| ctx.trip_row(iv.lane(l), jv.lane(l), kv.lane(l))),
            ));
            (kv, d_ik, r_ik, tp)
        };

        for l in 0..w {
            if l < n {
                let i = iv.lane(l);
                cursors.reset_lane(l, list.offsets[i], list.offsets[i + 1]);
            } else {
                cursors.exhaust_lane(l);
            }
            resume[l] = None;
        }

        let mut zeta = zero;
        let mut dz_i = [zero; 3];
        let mut dz_j = [zero; 3];
        let mut overflow = false;
        let mut fire = 0;
        slots.clear();
        loop {
            let m: B::Mask = fast_forward(&mut cursors, ready);
            if !B::vany(m) {
                break;
            }
            let (kv, d_ik, r_ik, tp) = fire_vectors(&cursors, m);
            if fire < k_max {
                let t = zeta_full_vec::<B>(&d_ij, r_ij, &d_ik, r_ik, &tp);
                zeta = zeta + t.zeta.zero_unless(m);
                for a in 0..3 {
                    let gj = t.grad_j[a].zero_unless(m);
                    let gk = t.grad_k[a].zero_unless(m);
                    dz_j[a] = dz_j[a] + gj;
                    dz_i[a] = dz_i[a] - (gj + gk);
                }
                slots.push(Slot {
                    k: kv,
                    mask: m,
                    grad_k: t.grad_k,
                });
            } else {
                if fire == k_max {
                    // every live lane fires together, so this is each lane's first overflow
                    for (l, r) in resume.iter_mut().enumerate() {
                        if m.lane(l) {
                            *r = Some(cursors.cursor(l));
                        }
                    }
                    overflow = true;
                }
                let z = zeta_value_vec::<B>(&d_ij, r_ij, &d_ik, r_ik, &tp);
                zeta = zeta + z.zero_unless(m);
            }
            advance_ready(&mut cursors, m);
            fire += 1;
        }

        let res = finish_pair::<B>(zeta, r_ij, &d_ij, &pp, active, iv, jv, &mut out.energy)?;
        let dzeta = res.dzeta;
        for a in 0..3 {
            B::scatter_add(&mut out.f[a], iv, res.fpair[a] - dz_i[a] * dzeta, active);
            B::scatter_add(&mut out.f[a], jv, -(res.fpair[a] + dz_j[a] * dzeta), active);
        }
        for s in &slots {
            for a in 0..3 {
                B::scatter_add(&mut out.f[a], s.k, -(s.grad_k[a] * dzeta), s.mask);
            }
        }

        if overflow {
            for (l, r) in resume.iter().enumerate() {
                match *r {
                    Some(pos) => {
                        let i = iv.lane(l);
                        cursors.reset_lane(l, pos, list.offsets[i + 1]);
                    }
                    None => cursors.exhaust_lane(l),
                }
            }
            loop {
                let m: B::Mask = fast_forward(&mut cursors, ready);
                if !B::vany(m) {
                    break;
                }
                let (kv, d_ik, r_ik, tp) = fire_vectors(&cursors, m);
                let t = zeta_full_vec::<B>(&d_ij, r_ij, &d_ik, r_ik, &tp);
                for a in 0..3 {
                    let gj = t.grad_j[a] * dzeta;
                    let gk = t.grad_k[a] * dzeta;
                    B::scatter_add(&mut out.f[a], iv, gj + gk, m);
                    B::scatter_add(&mut out.f[a], jv, -gj, m);
                    B::scatter_add(&mut out.f[a], kv, -gk, m);
                }
                advance_ready(&mut cursors, m);
            }
        }
        start += n;
    }
    Ok(())
}
