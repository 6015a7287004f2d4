//! Scalar double-precision Tersoff kernels.
//!
//! Functional forms:
//!
//! * cutoff `f_C(r)`: 1 below `R-D`, `1/2 - 1/2 sin(π(r-R)/(2D))` in the
//!   transition window, 0 from `R+D` on;
//! * repulsion `f_R = A exp(-λ1 r)`, attraction `f_A = -B exp(-λ2 r)`;
//! * angular term `g = γ (1 + c²/d² - c²/(d² + (h - cosθ)²))`;
//! * three-body term `ζ(i,j,k) = f_C(r_ik) g(cosθ_ijk) exp((λ3 (r_ij - r_ik))^m)`;
//! * bond order `b = (1 + (βζ)^η)^(-1/(2η))`;
//! * pair energy `V = ½ f_C(r_ij) [f_R + b f_A]` per ordered pair.
//!
//! The ½ per ordered pair makes the full-list double count reproduce the
//! conventional total energy, so standard parameter files keep their meaning.
//!
//! [`compute_ref`] is the literal triple loop; [`compute_opt_scalar`] caches
//! the ζ derivatives of up to `k_max` neighbors per pair and falls back to
//! recomputation beyond that.

use std::f64::consts::PI;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::{AtomSystem, ParamTable, TersoffEntry, Vec3};
use crate::neighbor::NeighborList;

/// Total potential energy and per-atom forces.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyForces {
    pub energy: f64,
    pub forces: Vec<Vec3>,
}

impl EnergyForces {
    pub fn zeros(n: usize) -> Self {
        EnergyForces {
            energy: 0.0,
            forces: vec![Vec3::ZERO; n],
        }
    }

    /// Sum of all forces, ideally zero.
    pub fn net_force(&self) -> Vec3 {
        let mut s = Vec3::ZERO;
        for f in &self.forces {
            s += *f;
        }
        s
    }

    /// Largest component-wise absolute force difference.
    pub fn max_force_diff(&self, other: &EnergyForces) -> f64 {
        self.forces
            .iter()
            .zip(&other.forces)
            .map(|(a, b)| (*a - *b).max_abs())
            .fold(0.0, f64::max)
    }

    pub fn relative_energy_diff(&self, other: &EnergyForces) -> f64 {
        relative_diff(self.energy, other.energy)
    }
}

pub(crate) fn relative_diff(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

/// Cutoff function and its radial derivative.
#[inline]
pub fn cutoff_fc(r: f64, entry: &TersoffEntry) -> (f64, f64) {
    let (big_r, big_d) = (entry.cutoff_r, entry.cutoff_d);
    if r <= big_r - big_d {
        return (1.0, 0.0);
    }
    if r >= big_r + big_d {
        return (0.0, 0.0);
    }
    let scale = PI / (2.0 * big_d);
    let arg = scale * (r - big_r);
    (0.5 - 0.5 * arg.sin(), -0.5 * scale * arg.cos())
}

/// `(f_R, f_R', f_A, f_A')`.
#[inline]
pub fn pair_terms(r: f64, entry: &TersoffEntry) -> (f64, f64, f64, f64) {
    let fr = entry.repulsive_a * (-entry.lambda1 * r).exp();
    let fa = -entry.attractive_b * (-entry.lambda2 * r).exp();
    (fr, -entry.lambda1 * fr, fa, -entry.lambda2 * fa)
}

/// Angular function and its derivative with respect to cosθ.
#[inline]
pub fn angle_g(cos_theta: f64, entry: &TersoffEntry) -> (f64, f64) {
    let c2 = entry.c * entry.c;
    let d2 = entry.d * entry.d;
    let u = entry.h - cos_theta;
    let denom = d2 + u * u;
    let value = entry.gamma * (1.0 + c2 / d2 - c2 / denom);
    let deriv = -2.0 * entry.gamma * c2 * u / (denom * denom);
    (value, deriv)
}

/// Bond order `b(ζ)` and `db/dζ`; the derivative is defined as 0 at ζ = 0.
#[inline]
pub fn bond_order(zeta: f64, entry: &TersoffEntry) -> (f64, f64) {
    if zeta <= 0.0 {
        return (1.0, 0.0);
    }
    let pw = (entry.beta * zeta).powf(entry.eta);
    let b = (1.0 + pw).powf(-0.5 / entry.eta);
    let db = -0.5 * b * pw / (zeta * (1.0 + pw));
    (b, db)
}

/// `exp((λ3 Δ)^m)` and its derivative with respect to `Δ = r_ij - r_ik`.
#[inline]
fn exp_factor(delta_r: f64, entry: &TersoffEntry) -> (f64, f64) {
    let t = entry.lambda3 * delta_r;
    if entry.m == 3 {
        let ex = (t * t * t).exp();
        (ex, ex * 3.0 * entry.lambda3 * t * t)
    } else {
        let ex = t.exp();
        (ex, ex * entry.lambda3)
    }
}

/// Value and position gradients of one three-body term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZetaTerm {
    pub zeta: f64,
    pub grad_i: Vec3,
    pub grad_j: Vec3,
    pub grad_k: Vec3,
}

/// ζ(i,j,k) from the two displacements `d_ij = x_j - x_i`, `d_ik = x_k - x_i`.
#[inline]
pub fn zeta_value(d_ij: Vec3, d_ik: Vec3, entry: &TersoffEntry) -> f64 {
    let r_ij = d_ij.norm();
    let r_ik = d_ik.norm();
    let cos = (d_ij.dot(d_ik) / (r_ij * r_ik)).clamp(-1.0, 1.0);
    let (fc, _) = cutoff_fc(r_ik, entry);
    let (g, _) = angle_g(cos, entry);
    let (ex, _) = exp_factor(r_ij - r_ik, entry);
    fc * g * ex
}

/// ζ(i,j,k) and its analytic gradients, from displacements.
pub fn zeta_from_deltas(d_ij: Vec3, d_ik: Vec3, entry: &TersoffEntry) -> ZetaTerm {
    let r_ij = d_ij.norm();
    let r_ik = d_ik.norm();
    if r_ik >= entry.cutoff() {
        return ZetaTerm {
            zeta: 0.0,
            grad_i: Vec3::ZERO,
            grad_j: Vec3::ZERO,
            grad_k: Vec3::ZERO,
        };
    }
    let inv_ij = 1.0 / r_ij;
    let inv_ik = 1.0 / r_ik;
    let raw_cos = d_ij.dot(d_ik) / (r_ij * r_ik);
    let cos = raw_cos.clamp(-1.0, 1.0);
    let (fc, dfc) = cutoff_fc(r_ik, entry);
    let (g, dg) = angle_g(cos, entry);
    let (ex, dex) = exp_factor(r_ij - r_ik, entry);

    let u_ij = d_ij * inv_ij;
    let u_ik = d_ik * inv_ik;
    let dcos_dj = (u_ik - u_ij * raw_cos) * inv_ij;
    let dcos_dk = (u_ij - u_ik * raw_cos) * inv_ik;

    let fc_g = fc * g;
    let grad_j = dcos_dj * (fc * dg * ex) + u_ij * (fc_g * dex);
    let grad_k = u_ik * (dfc * g * ex - fc_g * dex) + dcos_dk * (fc * dg * ex);
    ZetaTerm {
        zeta: fc_g * ex,
        grad_i: -(grad_j + grad_k),
        grad_j,
        grad_k,
    }
}

/// ζ(i,j,k) with gradients, from absolute positions (no periodic wrapping).
pub fn zeta_term(ri: Vec3, rj: Vec3, rk: Vec3, entry: &TersoffEntry) -> ZetaTerm {
    zeta_from_deltas(rj - ri, rk - ri, entry)
}

/// Per-pair cache of ζ and its derivatives, holding at most `k_max` k-gradients.
#[derive(Clone, Debug, Default)]
pub struct ZetaAccumulator {
    pub zeta: f64,
    pub dzeta_di: Vec3,
    pub dzeta_dj: Vec3,
    pub k_indices: Vec<usize>,
    pub dzeta_dk: Vec<Vec3>,
    pub overflowed: bool,
    k_max: usize,
    resume_at: usize,
}

impl ZetaAccumulator {
    pub fn new(k_max: usize) -> Self {
        ZetaAccumulator {
            k_max,
            k_indices: Vec::with_capacity(k_max),
            dzeta_dk: Vec::with_capacity(k_max),
            ..Default::default()
        }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn reset(&mut self) {
        self.zeta = 0.0;
        self.dzeta_di = Vec3::ZERO;
        self.dzeta_dj = Vec3::ZERO;
        self.k_indices.clear();
        self.dzeta_dk.clear();
        self.overflowed = false;
        self.resume_at = 0;
    }

    pub fn is_full(&self) -> bool {
        self.k_indices.len() >= self.k_max
    }

    /// Records a full term; caller ensures the cache is not full.
    pub fn push(&mut self, k: usize, term: &ZetaTerm) {
        debug_assert!(!self.is_full());
        self.zeta += term.zeta;
        self.dzeta_di += term.grad_i;
        self.dzeta_dj += term.grad_j;
        self.k_indices.push(k);
        self.dzeta_dk.push(term.grad_k);
    }

    /// Records a value-only term past the cache limit. `position` is the
    /// segment position of the term, kept so the force pass can resume there.
    pub fn push_overflow(&mut self, position: usize, zeta: f64) {
        if !self.overflowed {
            self.overflowed = true;
            self.resume_at = position;
        }
        self.zeta += zeta;
    }

    /// First segment position handled by the fallback path.
    pub fn resume_at(&self) -> usize {
        self.resume_at
    }
}

#[inline]
fn check_finite(v: f64, i: usize, j: usize, stage: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { i, j, stage })
    }
}

/// Reference energy and forces: the literal triple loop over the extended list.
pub fn compute_ref(
    system: &AtomSystem,
    list: &NeighborList,
    params: &ParamTable,
) -> Result<EnergyForces> {
    compute_ref_traced(system, list, params, |_, _| {})
}

/// [`compute_ref`], reporting every ordered pair that passes its cutoff.
pub fn compute_ref_traced(
    system: &AtomSystem,
    list: &NeighborList,
    params: &ParamTable,
    mut on_pair: impl FnMut(usize, usize),
) -> Result<EnergyForces> {
    let n = system.len();
    let species = system.species();
    let mut out = EnergyForces::zeros(n);
    for i in 0..n {
        let si = species[i];
        let seg = list.segment(i);
        for &j in seg {
            let sj = species[j];
            let e_ij = params.entry(si, sj, sj);
            let d_ij = system.delta(i, j);
            let r2 = d_ij.norm2();
            if r2 > e_ij.cutoff_sq() {
                continue;
            }
            on_pair(i, j);
            let r_ij = r2.sqrt();

            let mut zeta = 0.0;
            for &k in seg {
                if k == j {
                    continue;
                }
                let e_ijk = params.entry(si, sj, species[k]);
                let d_ik = system.delta(i, k);
                if d_ik.norm2() > e_ijk.cutoff_sq() {
                    continue;
                }
                zeta += zeta_value(d_ij, d_ik, e_ijk);
            }
            check_finite(zeta, i, j, "zeta")?;

            let (fc, dfc) = cutoff_fc(r_ij, e_ij);
            let (fr, dfr, fa, dfa) = pair_terms(r_ij, e_ij);
            let (b, db) = bond_order(zeta, e_ij);
            let v = 0.5 * fc * (fr + b * fa);
            let dv_dr = 0.5 * (dfc * (fr + b * fa) + fc * (dfr + b * dfa));
            let dzeta = 0.5 * fc * fa * db;
            check_finite(v, i, j, "pair energy")?;
            let f_scale = dv_dr / r_ij;
            check_finite(f_scale, i, j, "pair force")?;
            check_finite(dzeta, i, j, "bond-order derivative")?;

            out.energy += v;
            let fpair = d_ij * f_scale;
            out.forces[i] += fpair;
            out.forces[j] -= fpair;

            for &k in seg {
                if k == j {
                    continue;
                }
                let e_ijk = params.entry(si, sj, species[k]);
                let d_ik = system.delta(i, k);
                if d_ik.norm2() > e_ijk.cutoff_sq() {
                    continue;
                }
                let t = zeta_from_deltas(d_ij, d_ik, e_ijk);
                out.forces[i] -= t.grad_i * dzeta;
                out.forces[j] -= t.grad_j * dzeta;
                out.forces[k] -= t.grad_k * dzeta;
            }
        }
    }
    Ok(out)
}

/// Energy and forces with precomputed ζ derivatives, capped at `k_max` cached k's per pair.
pub fn compute_opt_scalar(
    system: &AtomSystem,
    list: &NeighborList,
    params: &ParamTable,
    k_max: usize,
) -> Result<EnergyForces> {
    let mut out = EnergyForces::zeros(system.len());
    compute_opt_scalar_range(system, list, params, k_max, 0..system.len(), &mut out)?;
    Ok(out)
}

/// Accumulates the contribution of atoms `atoms` (as the `i` of each pair) into `out`.
pub(crate) fn compute_opt_scalar_range(
    system: &AtomSystem,
    list: &NeighborList,
    params: &ParamTable,
    k_max: usize,
    atoms: Range<usize>,
    out: &mut EnergyForces,
) -> Result<()> {
    let species = system.species();
    let mut acc = ZetaAccumulator::new(k_max);
    let mut deltas: Vec<(Vec3, f64)> = Vec::new();
    for i in atoms {
        let si = species[i];
        let seg = list.segment(i);
        deltas.clear();
        deltas.extend(seg.iter().map(|&k| {
            let d = system.delta(i, k);
            (d, d.norm2())
        }));

        for (pj, &j) in seg.iter().enumerate() {
            let sj = species[j];
            let e_ij = params.entry(si, sj, sj);
            let (d_ij, r2) = deltas[pj];
            if r2 > e_ij.cutoff_sq() {
                continue;
            }
            let r_ij = r2.sqrt();

            acc.reset();
            for (pk, &k) in seg.iter().enumerate() {
                if k == j {
                    continue;
                }
                let e_ijk = params.entry(si, sj, species[k]);
                let (d_ik, rk2) = deltas[pk];
                if rk2 > e_ijk.cutoff_sq() {
                    continue;
                }
                if acc.is_full() {
                    acc.push_overflow(pk, zeta_value(d_ij, d_ik, e_ijk));
                } else {
                    acc.push(k, &zeta_from_deltas(d_ij, d_ik, e_ijk));
                }
            }
            check_finite(acc.zeta, i, j, "zeta")?;

            let (fc, dfc) = cutoff_fc(r_ij, e_ij);
            let (fr, dfr, fa, dfa) = pair_terms(r_ij, e_ij);
            let (b, db) = bond_order(acc.zeta, e_ij);
            let v = 0.5 * fc * (fr + b * fa);
            let dv_dr = 0.5 * (dfc * (fr + b * fa) + fc * (dfr + b * dfa));
            let dzeta = 0.5 * fc * fa * db;
            check_finite(v, i, j, "pair energy")?;
            let f_scale = dv_dr / r_ij;
            check_finite(f_scale, i, j, "pair force")?;
            check_finite(dzeta, i, j, "bond-order derivative")?;

            out.energy += v;
            let fpair = d_ij * f_scale;
            out.forces[i] += fpair;
            out.forces[j] -= fpair;

            if !acc.k_indices.is_empty() {
                out.forces[i] -= acc.dzeta_di * dzeta;
                out.forces[j] -= acc.dzeta_dj * dzeta;
                for (&k, &g) in acc.k_indices.iter().zip(&acc.dzeta_dk) {
                    out.forces[k] -= g * dzeta;
                }
            }
            if acc.overflowed {
                for (pk, &k) in seg.iter().enumerate().skip(acc.resume_at()) {
                    if k == j {
                        continue;
                    }
                    let e_ijk = params.entry(si, sj, species[k]);
                    let (d_ik, rk2) = deltas[pk];
                    if rk2 > e_ijk.cutoff_sq() {
                        continue;
                    }
                    let t = zeta_from_deltas(d_ij, d_ik, e_ijk);
                    out.forces[i] -= t.grad_i * dzeta;
                    out.forces[j] -= t.grad_j * dzeta;
                    out.forces[k] -= t.grad_k * dzeta;
                }
            }
        }
    }
    Ok(())
}

/// Central-difference forces `-(E(x+h) - E(x-h)) / 2h` from [`compute_ref`] energies.
///
/// Positions are displaced without re-wrapping, so `list` stays valid as long
/// as `step` is below half the skin.
pub fn fd_force_oracle(
    system: &AtomSystem,
    list: &NeighborList,
    params: &ParamTable,
    step: f64,
) -> Result<Vec<Vec3>> {
    if !(step > 0.0) {
        return Err(Error::config(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut work = system.clone();
    let mut forces = vec![Vec3::ZERO; system.len()];
    for i in 0..system.len() {
        let mut f = [0.0; 3];
        for (axis, slot) in f.iter_mut().enumerate() {
            let orig = work.positions[i];
            let mut plus = orig.to_array();
            plus[axis] += step;
            work.positions[i] = Vec3::from_array(plus);
            let e_plus = compute_ref(&work, list, params)?.energy;
            let mut minus = orig.to_array();
            minus[axis] -= step;
            work.positions[i] = Vec3::from_array(minus);
            let e_minus = compute_ref(&work, list, params)?.energy;
            work.positions[i] = orig;
            *slot = -(e_plus - e_minus) / (2.0 * step);
        }
        forces[i] = Vec3::from_array(f);
    }
    Ok(forces)
}

/// `max |a - b|` over all components divided by `max |a|`.
pub fn max_relative_force_error(analytic: &[Vec3], reference: &[Vec3]) -> f64 {
    let scale = analytic.iter().map(|f| f.max_abs()).fold(0.0, f64::max);
    let err = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (*a - *b).max_abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}
