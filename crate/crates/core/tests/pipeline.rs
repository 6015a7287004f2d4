use tersoff_md::engine::{make_diamond_lattice, init_velocities, run, Engine, RunConfig, Scheme};
use tersoff_md::model::{ParamTable, PrecisionMode, SILICON_A0, SILICON_MASS};

fn start() -> tersoff_md::model::AtomSystem {
    let mut sys = make_diamond_lattice([3; 3], SILICON_A0, 0, &[SILICON_MASS], 0.0).unwrap();
    init_velocities(&mut sys, 1200.0, 77).unwrap();
    sys
}

fn engine(scheme: Scheme, precision: PrecisionMode, width: Option<usize>, workers: usize) -> Engine {
    let cfg = RunConfig {
        scheme,
        precision,
        backend_width: width,
        workers,
        skin: 0.4,
        temperature: None,
        ..Default::default()
    };
    Engine::new(start(), ParamTable::silicon(), cfg).unwrap()
}

#[test]
fn optimized_trajectories_track_reference() {
    let mut reference = engine(Scheme::Ref, PrecisionMode::Ref, None, 1);
    let mut others = [
        engine(Scheme::V1, PrecisionMode::OptD, Some(4), 1),
        engine(Scheme::V2, PrecisionMode::OptD, Some(8), 2),
        engine(Scheme::V3, PrecisionMode::OptD, None, 3),
        engine(Scheme::ScalarOpt, PrecisionMode::OptD, None, 1),
    ];
    for _ in 0..100 {
        reference.step().unwrap();
        for e in &mut others {
            e.step().unwrap();
        }
    }
    assert!(reference.rebuild_count() > 0, "trajectory should cross a rebuild");
    for e in &others {
        let worst = e
            .system()
            .positions
            .iter()
            .zip(&reference.system().positions)
            .map(|(a, b)| (*a - *b).max_abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "{:?}: position deviation {worst:e}", e.options().scheme);
        let de = ((e.potential_energy() - reference.potential_energy()) / reference.potential_energy()).abs();
        assert!(de < 1e-12, "{:?}: energy deviation {de:e}", e.options().scheme);
    }
}

#[test]
fn report_is_independent_of_worker_count() {
    let params = ParamTable::silicon();
    let base = RunConfig { steps: 50, thermo_every: 10, scheme: Scheme::V2, backend_width: Some(8), ..Default::default() };
    let one = run(start(), &params, &base).unwrap();
    let four = run(start(), &params, &RunConfig { workers: 4, ..base.clone() }).unwrap();
    assert_eq!(one.samples.len(), 6);
    for (a, b) in one.samples.iter().zip(&four.samples) {
        assert_eq!(a.step, b.step);
        assert!(((a.etot_ev - b.etot_ev) / a.etot_ev).abs() < 1e-12);
    }
}

#[test]
fn single_precision_stays_close_over_short_run() {
    let mut reference = engine(Scheme::Ref, PrecisionMode::Ref, None, 1);
    let mut single = engine(Scheme::V2, PrecisionMode::OptS, Some(16), 1);
    let mut mixed = engine(Scheme::V1, PrecisionMode::OptM, Some(8), 1);
    for _ in 0..200 {
        reference.step().unwrap();
        single.step().unwrap();
        mixed.step().unwrap();
    }
    let pe = reference.potential_energy();
    for e in [&single, &mixed] {
        let d = ((e.potential_energy() - pe) / pe).abs();
        assert!(d < 2e-5, "{:?}: {d:e}", e.options().precision);
    }
}
