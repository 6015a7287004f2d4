//! Acceptance suite: one PASS/FAIL line per criterion. Criterion 8 is
//! reported but never fails the run.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tersoff_md::engine::{make_diamond_lattice, run, RunConfig, RunReport, Scheme};
use tersoff_md::model::{ParamTable, PrecisionMode, SILICON_A0, SILICON_MASS};
use tersoff_md::neighbor::build_neighbor_list;
use tersoff_md::potential_opt::{compute_forces, ForceOptions};
use tersoff_md::potential_ref::{compute_ref, fd_force_oracle, max_relative_force_error};
use tersoff_md::simd::{
    conformance, drive_lanes, DoubleBackend, FiringStrategy, LaneCursorSet, LaneMask, VectorBackend,
};
use tersoff_md::verify::{perturbed_lattice, VerifyConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn trajectory(scheme: Scheme, precision: PrecisionMode, width: Option<usize>) -> RunReport {
    let params = ParamTable::silicon();
    let cfg = RunConfig {
        steps: 10_000,
        dt: 0.001,
        scheme,
        precision,
        backend_width: width,
        temperature: Some(300.0),
        seed: 4242,
        ..Default::default()
    };
    let sys = make_diamond_lattice([4; 3], SILICON_A0, 0, &[SILICON_MASS], 0.0).unwrap();
    run(sys, &params, &cfg).expect("trajectory")
}

fn criterion_1(reference: &RunReport, single: &RunReport) -> Outcome {
    const TOL: f64 = 2e-5;
    let worst = reference
        .samples
        .iter()
        .zip(&single.samples)
        .map(|(r, s)| ((s.pe_ev - r.pe_ev) / r.pe_ev).abs())
        .fold(0.0, f64::max);
    outcome(
        worst < TOL && reference.samples.len() == single.samples.len(),
        format!(
            "512 atoms, 10000 steps, {} samples: max PE rel deviation single vs ref {worst:e} (< {TOL:e})",
            reference.samples.len()
        ),
    )
}

fn criterion_2() -> Outcome {
    const E_TOL: f64 = 1e-12;
    const F_TOL: f64 = 1e-10;
    let params = ParamTable::silicon();
    let (mut worst_e, mut worst_f) = (0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for (cells, seed) in [([2usize; 3], 64u64), ([4; 3], 512)] {
        let vcfg = VerifyConfig { cells, seed, perturb: 0.15, ..Default::default() };
        let (sys, list) = perturbed_lattice(&params, &vcfg).unwrap();
        let r = compute_ref(&sys, &list, &params).unwrap();
        for scheme in [Scheme::ScalarOpt, Scheme::V1, Scheme::V2] {
            for width in [1, 4, 8, 16] {
                for k_max in [0, 2, 16] {
                    let o = ForceOptions { scheme, width, k_max, ..Default::default() };
                    let v = compute_forces(&sys, &list, &params, &o).unwrap();
                    let (de, df) = (v.relative_energy_diff(&r), v.max_force_diff(&r));
                    worst_e = worst_e.max(de);
                    worst_f = worst_f.max(df);
                    if !(de < E_TOL && df < F_TOL) {
                        failures.push(format!("{}atoms/{scheme}/w{width}/k{k_max}", sys.len()));
                    }
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "72 configurations: worst energy rel diff {worst_e:e} (< {E_TOL:e}), force diff {worst_f:e} eV/Å (< {F_TOL:e}){}",
            if failures.is_empty() { String::new() } else { format!(", failing {failures:?}") }
        ),
    )
}

fn criterion_3() -> Outcome {
    const TOL: f64 = 1e-6;
    let params = ParamTable::silicon();
    let vcfg = VerifyConfig { seed: 99, ..Default::default() };
    let (sys, list) = perturbed_lattice(&params, &vcfg).unwrap();
    let analytic = compute_ref(&sys, &list, &params).unwrap();
    let fd = fd_force_oracle(&sys, &list, &params, 1e-5).unwrap();
    let err = max_relative_force_error(&analytic.forces, &fd);
    let opt = compute_forces(&sys, &list, &params, &ForceOptions { scheme: Scheme::V2, width: 8, ..Default::default() })
        .unwrap();
    let err_opt = max_relative_force_error(&opt.forces, &fd);
    outcome(
        err < TOL && err_opt < TOL,
        format!("{} atoms, h = 1e-5 Å: max relative error ref {err:e}, v2 {err_opt:e} (< {TOL:e})", sys.len()),
    )
}

fn criterion_4(runs: &[(&str, &RunReport)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, r) in runs {
        let e0 = r.samples[0].etot_ev;
        let p0 = r.samples[0].momentum;
        let drift = r.samples.iter().map(|s| ((s.etot_ev - e0) / e0).abs()).fold(0.0, f64::max);
        let net = r.samples.iter().map(|s| s.net_force.max_abs()).fold(0.0, f64::max);
        let mom = r.samples.iter().map(|s| (s.momentum - p0).max_abs()).fold(0.0, f64::max);
        ok &= drift < 1e-4 && net < 1e-10 && mom < 1e-8;
        parts.push(format!("{name}: energy drift {drift:e}, max |ΣF| {net:e}, momentum drift {mom:e}"));
    }
    outcome(ok, format!("{} (bounds 1e-4, 1e-10, 1e-8)", parts.join("; ")))
}

fn criterion_5() -> Outcome {
    const TOL: f64 = 1e-12;
    let params = ParamTable::silicon();
    let vcfg = VerifyConfig { cells: [4; 3], seed: 5, perturb: 0.2, ..Default::default() };
    let (sys, _) = perturbed_lattice(&params, &vcfg).unwrap();
    let list = build_neighbor_list(&sys, params.r_cut_max(), 1.0).unwrap();
    let mut worst = 0.0f64;
    for (scheme, width) in [(Scheme::V1, 4), (Scheme::V2, 8), (Scheme::V2, 16), (Scheme::V3, 1)] {
        let mut o = ForceOptions { scheme, width, k_max: 4, ..Default::default() };
        let with = compute_forces(&sys, &list, &params, &o).unwrap();
        o.filter = false;
        let without = compute_forces(&sys, &list, &params, &o).unwrap();
        let scale = with.forces.iter().map(|f| f.max_abs()).fold(0.0, f64::max);
        worst = worst.max(with.relative_energy_diff(&without)).max(with.max_force_diff(&without) / scale);
    }
    outcome(worst < TOL, format!("skin 1.0 Å, 512 atoms: max relative change {worst:e} (< {TOL:e})"))
}

fn criterion_6() -> Outcome {
    const W: usize = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut ok, mut strict, mut total_all, mut total_any) = (true, 0, 0, 0);
    for _ in 0..100 {
        let density: f64 = rng.random_range(0.1..0.9);
        let mut bounds = Vec::new();
        let mut truth = Vec::new();
        let mut start = 0;
        for _ in 0..W {
            let len = rng.random_range(0..24usize);
            bounds.push((start, start + len));
            truth.extend((0..len).map(|_| rng.random_bool(density)));
            start += len;
        }
        let pred = |_: usize, pos: usize| truth[pos];
        let all = drive_lanes::<LaneMask<W>>(&mut LaneCursorSet::from_bounds(&bounds), FiringStrategy::AllReady, pred, |_, _| {});
        let any = drive_lanes::<LaneMask<W>>(&mut LaneCursorSet::from_bounds(&bounds), FiringStrategy::AnyReady, pred, |_, _| {});
        ok &= all <= any;
        strict += usize::from(all < any);
        total_all += all;
        total_any += any;
    }
    outcome(
        ok && strict > 0,
        format!("100 ragged cases at width {W}: all-ready {total_all} vs any-ready {total_any} invocations, strictly fewer in {strict}"),
    )
}

fn criterion_7() -> Outcome {
    const CASES: usize = 10_000;
    let results = [
        (1, conformance::check_building_blocks::<DoubleBackend<1>>(CASES, 71)),
        (4, conformance::check_building_blocks::<DoubleBackend<4>>(CASES, 74)),
        (8, conformance::check_building_blocks::<DoubleBackend<8>>(CASES, 78)),
        (16, conformance::check_building_blocks::<DoubleBackend<16>>(CASES, 716)),
    ];
    let failures: Vec<String> = results
        .iter()
        .filter_map(|(w, r)| r.as_ref().err().map(|e| format!("w{w}: {e}")))
        .collect();
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{CASES} cases per width {{1,4,8,16}} ({}), all exact", <DoubleBackend<16> as VectorBackend>::name())
        } else {
            failures.join("; ")
        },
    )
}

fn criterion_8() -> String {
    let params = ParamTable::silicon();
    let sys = make_diamond_lattice([16; 3], SILICON_A0, 0, &[SILICON_MASS], 0.0).unwrap();
    let steps = 10;
    let mut rows = Vec::new();
    let mut ref_rate = 0.0;
    for (label, scheme, precision, width) in [
        ("ref", Scheme::Ref, PrecisionMode::Ref, 1),
        ("opt-d/v1/w4", Scheme::V1, PrecisionMode::OptD, 4),
        ("opt-d/v2/w8", Scheme::V2, PrecisionMode::OptD, 8),
        ("opt-s/v2/w16", Scheme::V2, PrecisionMode::OptS, 16),
        ("opt-m/v2/w8", Scheme::V2, PrecisionMode::OptM, 8),
    ] {
        let cfg = RunConfig { steps, scheme, precision, backend_width: Some(width), ..Default::default() };
        let r = run(sys.clone(), &params, &cfg).unwrap();
        if label == "ref" {
            ref_rate = r.ns_per_day;
        }
        rows.push(format!("{label} {:.3} ns/day ({:.2}x)", r.ns_per_day, r.ns_per_day / ref_rate));
    }
    format!("{} atoms, {steps} steps: {}", sys.len(), rows.join(", "))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let (reference, single, v2_double) = std::thread::scope(|s| {
        let r = s.spawn(|| trajectory(Scheme::Ref, PrecisionMode::Ref, None));
        let o = s.spawn(|| trajectory(Scheme::V2, PrecisionMode::OptS, Some(16)));
        let d = s.spawn(|| trajectory(Scheme::V2, PrecisionMode::OptD, Some(8)));
        (r.join().unwrap(), o.join().unwrap(), d.join().unwrap())
    });

    let results = [
        ("1 single-vs-reference accuracy", criterion_1(&reference, &single)),
        ("2 scheme equivalence", criterion_2()),
        ("3 force gradient", criterion_3()),
        ("4 conservation", criterion_4(&[("ref", &reference), ("v2/double", &v2_double)])),
        ("5 filter soundness", criterion_5()),
        ("6 fast-forward occupancy", criterion_6()),
        ("7 backend conformance", criterion_7()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("acceptance {name}: {} ({})", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance 8 performance smoke: REPORTED, non-gating ({})", criterion_8());
    println!(
        "acceptance summary: {} of 7 gating criteria passed in {:.1} s",
        7 - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
