use std::ffi::{CStr, CString};
use std::ptr;

use tersoff_ffi::*;
use tersoff_md::engine::make_diamond_lattice;
use tersoff_md::model::{ParamTable, SILICON_A0, SILICON_MASS};
use tersoff_md::neighbor::build_neighbor_list;
use tersoff_md::potential_ref::compute_ref;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tersoff_last_error_message()) }.to_string_lossy().into_owned()
}

struct Handles {
    params: *mut TersoffParams,
    system: *mut TersoffSystem,
}

impl Handles {
    fn silicon(cells: usize) -> Self {
        let mut params = ptr::null_mut();
        let mut system = ptr::null_mut();
        unsafe {
            assert_eq!(tersoff_params_silicon(&mut params), TersoffStatus::Ok);
            assert_eq!(
                tersoff_system_diamond(params, cells, cells, cells, SILICON_A0, SILICON_MASS, 0.5, &mut system),
                TersoffStatus::Ok
            );
        }
        Handles { params, system }
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            tersoff_system_free(self.system);
            tersoff_params_free(self.params);
        }
    }
}

#[test]
fn compute_matches_reference_on_perturbed_lattice() {
    let h = Handles::silicon(2);
    let n = unsafe { tersoff_system_len(h.system) };
    assert_eq!(n, 64);

    let mut xyz = vec![0.0; 3 * n];
    unsafe {
        assert_eq!(tersoff_system_get_positions(h.system, xyz.as_mut_ptr(), xyz.len()), TersoffStatus::Ok);
    }
    for (i, v) in xyz.iter_mut().enumerate() {
        *v += 0.05 * ((i * 7919 % 13) as f64 / 13.0 - 0.5);
    }
    unsafe {
        assert_eq!(tersoff_system_set_positions(h.system, xyz.as_ptr(), xyz.len()), TersoffStatus::Ok);
    }

    let params = ParamTable::silicon();
    let mut sys = make_diamond_lattice([2; 3], SILICON_A0, 0, &[SILICON_MASS], 0.0).unwrap();
    for (p, c) in sys.positions.iter_mut().zip(xyz.chunks_exact(3)) {
        *p = tersoff_md::model::Vec3::new(c[0], c[1], c[2]);
    }
    sys.wrap_positions();
    let list = build_neighbor_list(&sys, params.r_cut_max(), 0.0).unwrap();
    let expected = compute_ref(&sys, &list, &params).unwrap();

    for (scheme, precision, width) in [
        (TERSOFF_SCHEME_REF, TERSOFF_PRECISION_REF, 1),
        (TERSOFF_SCHEME_V1, TERSOFF_PRECISION_DOUBLE, 4),
        (TERSOFF_SCHEME_V2, TERSOFF_PRECISION_DOUBLE, 8),
        (TERSOFF_SCHEME_AUTO, TERSOFF_PRECISION_DOUBLE, 0),
    ] {
        let mut o = TersoffOptions { scheme: 0, precision: 0, width: 0, k_max: 0, workers: 0 };
        unsafe { assert_eq!(tersoff_options_default(&mut o), TersoffStatus::Ok) };
        o.scheme = scheme;
        o.precision = precision;
        o.width = width;
        let mut energy = 0.0;
        let mut forces = vec![0.0; 3 * n];
        let status = unsafe { tersoff_compute(h.params, h.system, &o, &mut energy, forces.as_mut_ptr(), forces.len()) };
        assert_eq!(status, TersoffStatus::Ok, "{}", last_error());
        assert!(((energy - expected.energy) / expected.energy).abs() < 1e-12);
        for (c, f) in forces.chunks_exact(3).zip(&expected.forces) {
            let d = (c[0] - f.x).abs().max((c[1] - f.y).abs()).max((c[2] - f.z).abs());
            assert!(d < 1e-10, "scheme {scheme}: force diff {d}");
        }
    }
}

#[test]
fn run_produces_samples_and_csv() {
    let h = Handles::silicon(2);
    let mut cfg = TersoffRunConfig {
        steps: 0,
        dt: 0.0,
        skin: 0.0,
        k_max: 0,
        scheme: 0,
        precision: 0,
        width: 0,
        workers: 0,
        thermo_every: 0,
        seed: 0,
        temperature: 0.0,
    };
    unsafe { assert_eq!(tersoff_run_config_default(&mut cfg), TersoffStatus::Ok) };
    cfg.steps = 20;
    cfg.thermo_every = 5;
    cfg.skin = 0.5;

    let mut report = ptr::null_mut();
    let status = unsafe { tersoff_run(h.params, h.system, &cfg, &mut report) };
    assert_eq!(status, TersoffStatus::Ok, "{}", last_error());
    assert_eq!(last_error(), "");

    unsafe {
        assert_eq!(tersoff_report_sample_count(report), 5);
        assert!(tersoff_report_ns_per_day(report) > 0.0);
        let mut s = TersoffSample::default();
        assert_eq!(tersoff_report_sample(report, 4, &mut s), TersoffStatus::Ok);
        assert_eq!(s.step, 20);
        assert!((s.etot_ev - (s.pe_ev + s.ke_ev)).abs() < 1e-9);
        assert_eq!(tersoff_report_sample(report, 5, &mut s), TersoffStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));

        let csv = tersoff_report_csv(report);
        assert!(!csv.is_null());
        let text = CStr::from_ptr(csv).to_str().unwrap().to_owned();
        tersoff_string_free(csv);
        assert!(text.starts_with("step,"));
        assert!(text.contains("ns_per_day"));
        tersoff_report_free(report);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut params = ptr::null_mut();
    unsafe {
        let bad = CString::new("Si Si Si 3.0 1.0").unwrap();
        assert_eq!(tersoff_params_parse(bad.as_ptr(), &mut params), TersoffStatus::Parse);
        assert!(params.is_null());
        assert!(!last_error().is_empty());

        let missing = CString::new("/nonexistent/Si.tersoff").unwrap();
        assert_eq!(tersoff_params_load(missing.as_ptr(), &mut params), TersoffStatus::Io);

        assert_eq!(tersoff_params_silicon(ptr::null_mut()), TersoffStatus::InvalidArgument);
        assert_eq!(tersoff_params_parse(ptr::null(), &mut params), TersoffStatus::InvalidArgument);
        assert!(last_error().contains("null"));
        assert!(tersoff_params_cutoff(ptr::null()).is_nan());
        assert_eq!(tersoff_system_len(ptr::null()), 0);
        assert!(tersoff_report_csv(ptr::null()).is_null());
        tersoff_params_free(ptr::null_mut());
        tersoff_system_free(ptr::null_mut());
        tersoff_report_free(ptr::null_mut());
        tersoff_string_free(ptr::null_mut());
    }

    let h = Handles::silicon(2);
    unsafe {
        assert!((tersoff_params_cutoff(h.params) - 3.2).abs() < 1e-12);

        let mut tiny = ptr::null_mut();
        let status = tersoff_system_diamond(h.params, 1, 1, 1, SILICON_A0, SILICON_MASS, 1.0, &mut tiny);
        assert_eq!(status, TersoffStatus::Config);
        assert!(tiny.is_null());

        let mut o = TersoffOptions { scheme: 99, precision: 1, width: 4, k_max: 16, workers: 1 };
        let mut e = 0.0;
        let mut f = vec![0.0; 3 * 64];
        assert_eq!(
            tersoff_compute(h.params, h.system, &o, &mut e, f.as_mut_ptr(), f.len()),
            TersoffStatus::InvalidArgument
        );
        o.scheme = TERSOFF_SCHEME_V1;
        o.precision = TERSOFF_PRECISION_REF;
        assert_eq!(tersoff_compute(h.params, h.system, &o, &mut e, f.as_mut_ptr(), f.len()), TersoffStatus::Config);
        o.precision = TERSOFF_PRECISION_DOUBLE;
        assert_eq!(tersoff_compute(h.params, h.system, &o, &mut e, f.as_mut_ptr(), 3), TersoffStatus::InvalidArgument);

        let bad = [f64::NAN; 3 * 64];
        assert_eq!(tersoff_system_set_positions(h.system, bad.as_ptr(), bad.len()), TersoffStatus::InvalidArgument);

        let coincident = [1.0; 3 * 64];
        assert_eq!(tersoff_system_set_positions(h.system, coincident.as_ptr(), coincident.len()), TersoffStatus::Ok);
        o.scheme = TERSOFF_SCHEME_AUTO;
        assert_eq!(
            tersoff_compute(h.params, h.system, &o, &mut e, f.as_mut_ptr(), f.len()),
            TersoffStatus::Numerical
        );
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tersoff.h")).unwrap();
    for name in [
        "tersoff_last_error_message",
        "tersoff_params_silicon",
        "tersoff_params_load",
        "tersoff_params_parse",
        "tersoff_params_free",
        "tersoff_system_diamond",
        "tersoff_compute",
        "tersoff_run",
        "tersoff_report_csv",
        "tersoff_string_free",
        "TERSOFF_STATUS_PANIC",
        "TERSOFF_SCHEME_V2",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
