//! Property suite behind `tersoff verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::make_diamond_lattice;
use crate::error::Result;
use crate::model::{AtomSystem, ParamTable, PrecisionMode, SimulationBox, Vec3};
use crate::neighbor::{build_neighbor_list, NeighborList};
use crate::potential_opt::{compute_forces, ForceOptions, Scheme};
use crate::potential_ref::{compute_ref, fd_force_oracle, max_relative_force_error, EnergyForces};
use crate::simd::{conformance, DoubleBackend, MixedBackend, SingleBackend};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-6;
pub const ENERGY_TOLERANCE: f64 = 1e-12;
pub const FORCE_TOLERANCE: f64 = 1e-10;
pub const NEWTON_TOLERANCE: f64 = 1e-10;
pub const PRECISION_GAP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check { name, passed, detail }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub cells: [usize; 3],
    pub a0: f64,
    pub perturb: f64,
    pub skin: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            cells: [2, 2, 2],
            a0: crate::model::SILICON_A0,
            perturb: 0.1,
            skin: 0.5,
            seed: 2024,
            workers: 1,
        }
    }
}

/// Diamond lattice with species assigned round-robin over the table and
/// uniform jitter of `perturb` Å per component.
pub fn perturbed_lattice(params: &ParamTable, cfg: &VerifyConfig) -> Result<(AtomSystem, NeighborList)> {
    let range = params.r_cut_max() + cfg.skin;
    let base = make_diamond_lattice(cfg.cells, cfg.a0, 0, &[1.0], range)?;
    let ns = params.species_count();
    let n = base.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jitter = || rng.random_range(-cfg.perturb..=cfg.perturb);
    let positions: Vec<Vec3> = base
        .positions
        .iter()
        .map(|p| *p + Vec3::new(jitter(), jitter(), jitter()))
        .collect();
    let species = (0..n).map(|i| i % ns).collect();
    let sim_box = SimulationBox::periodic(base.sim_box().lengths())?;
    let sys = AtomSystem::new(sim_box, positions, species, vec![1.0; ns])?;
    let list = build_neighbor_list(&sys, params.r_cut_max(), cfg.skin)?;
    Ok((sys, list))
}

fn compare(a: &EnergyForces, r: &EnergyForces) -> (f64, f64) {
    (a.relative_energy_diff(r), a.max_force_diff(r))
}

/// Runs every property and returns one [`Check`] per property. Errors are
/// input errors or numerical failures in the reference path.
pub fn run_suite(params: &ParamTable, cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let (sys, list) = perturbed_lattice(params, cfg)?;
    let reference = compute_ref(&sys, &list, params)?;
    let opts = |scheme, precision, width, k_max| ForceOptions {
        scheme,
        precision,
        width,
        k_max,
        workers: cfg.workers,
        filter: true,
    };
    let mut checks = Vec::new();

    let fd = fd_force_oracle(&sys, &list, params, FD_STEP)?;
    let err = max_relative_force_error(&reference.forces, &fd);
    checks.push(Check::new(
        "force-gradient",
        err < FD_TOLERANCE,
        format!("{} atoms, h = {FD_STEP} Å, max relative error {err:e} (< {FD_TOLERANCE:e})", sys.len()),
    ));

    let mut worst_net = reference.net_force().max_abs();
    for scheme in [Scheme::ScalarOpt, Scheme::V1, Scheme::V2, Scheme::V3] {
        let ef = compute_forces(&sys, &list, params, &opts(scheme, PrecisionMode::OptD, 8, 16))?;
        worst_net = worst_net.max(ef.net_force().max_abs());
    }
    checks.push(Check::new(
        "newton",
        worst_net < NEWTON_TOLERANCE,
        format!("max |ΣF| component {worst_net:e} eV/Å (< {NEWTON_TOLERANCE:e})"),
    ));

    let (mut worst_e, mut worst_f) = (0.0f64, 0.0f64);
    let mut first_failure = None;
    for scheme in [Scheme::ScalarOpt, Scheme::V1, Scheme::V2] {
        for width in [1, 4, 8, 16] {
            for k_max in [0, 2, 16] {
                let o = opts(scheme, PrecisionMode::OptD, width, k_max);
                let (de, df) = compare(&compute_forces(&sys, &list, params, &o)?, &reference);
                worst_e = worst_e.max(de);
                worst_f = worst_f.max(df);
                if first_failure.is_none() && !(de < ENERGY_TOLERANCE && df < FORCE_TOLERANCE) {
                    first_failure = Some(format!("{scheme}/w{width}/k{k_max}"));
                }
            }
        }
    }
    checks.push(Check::new(
        "scheme-equivalence",
        first_failure.is_none(),
        format!(
            "worst energy rel diff {worst_e:e}, force diff {worst_f:e} eV/Å{}",
            first_failure.map(|f| format!(", first failure {f}")).unwrap_or_default()
        ),
    ));

    let mut kmax_ok = true;
    let mut kmax_worst = 0.0f64;
    for k_max in 0..=12 {
        for (scheme, width) in [(Scheme::V1, 4), (Scheme::V2, 8)] {
            let (de, df) = compare(
                &compute_forces(&sys, &list, params, &opts(scheme, PrecisionMode::OptD, width, k_max))?,
                &reference,
            );
            kmax_ok &= de < ENERGY_TOLERANCE && df < FORCE_TOLERANCE;
            kmax_worst = kmax_worst.max(df);
        }
    }
    checks.push(Check::new(
        "kmax-sweep",
        kmax_ok,
        format!("k_max 0..=12, worst force diff {kmax_worst:e} eV/Å"),
    ));

    let wide = build_neighbor_list(&sys, params.r_cut_max(), cfg.skin.max(1.0).min(max_skin(&sys, params)))?;
    let mut filter_worst = 0.0f64;
    for scheme in [Scheme::V1, Scheme::V2] {
        let mut o = opts(scheme, PrecisionMode::OptD, 8, 16);
        let with = compute_forces(&sys, &wide, params, &o)?;
        o.filter = false;
        let without = compute_forces(&sys, &wide, params, &o)?;
        let (de, df) = compare(&with, &without);
        filter_worst = filter_worst.max(de).max(df / with.forces.iter().map(|f| f.max_abs()).fold(1e-300, f64::max));
    }
    checks.push(Check::new(
        "filter-soundness",
        filter_worst < ENERGY_TOLERANCE,
        format!("max relative change without filtering {filter_worst:e}"),
    ));

    let mut gap = 0.0f64;
    for precision in [PrecisionMode::OptS, PrecisionMode::OptM] {
        for (scheme, width) in [(Scheme::V1, 4), (Scheme::V2, 16)] {
            let ef = compute_forces(&sys, &list, params, &opts(scheme, precision, width, 16))?;
            gap = gap.max(ef.relative_energy_diff(&reference));
        }
    }
    checks.push(Check::new(
        "precision-gap",
        gap < PRECISION_GAP,
        format!("single/mixed energy rel diff {gap:e} (< {PRECISION_GAP:e})"),
    ));

    let conf = [
        conformance::check_backend::<DoubleBackend<1>>(1000, cfg.seed),
        conformance::check_backend::<DoubleBackend<4>>(1000, cfg.seed + 1),
        conformance::check_backend::<DoubleBackend<8>>(1000, cfg.seed + 2),
        conformance::check_backend::<DoubleBackend<16>>(1000, cfg.seed + 3),
        conformance::check_backend::<SingleBackend<16>>(1000, cfg.seed + 4),
        conformance::check_backend::<MixedBackend<8>>(1000, cfg.seed + 5),
    ];
    let failure = conf.iter().find_map(|r| r.as_ref().err().cloned());
    checks.push(Check::new(
        "backend-conformance",
        failure.is_none(),
        failure.unwrap_or_else(|| "widths 1, 4, 8, 16 match scalar oracles".into()),
    ));

    Ok(checks)
}

/// Largest skin the box admits for this cutoff.
fn max_skin(sys: &AtomSystem, params: &ParamTable) -> f64 {
    (0.5 * sys.sim_box().min_periodic_length() - params.r_cut_max()).max(0.0)
}
