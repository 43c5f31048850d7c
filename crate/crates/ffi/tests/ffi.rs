use std::ffi::{CStr, CString};
use std::ptr;

use sepm_ffi::*;

fn last_error() -> String {
    let p = sepm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn profile_and_magnetics() {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { sepm_profile_default(&mut p) }, SepmStatus::Ok);
    assert!(sepm_last_error().is_null());
    let mut e = 0.0;
    assert_eq!(
        unsafe { sepm_pulse_energy(p, 48.0, 1e-3, &mut e) },
        SepmStatus::Ok
    );
    assert!((e - 0.6).abs() < 1e-5);
    let (mut h, mut b) = (0.0, 0.0);
    assert_eq!(
        unsafe { sepm_solve_flux(p, 0.0, 1, &mut h, &mut b) },
        SepmStatus::Ok
    );
    assert!(b > 0.0);
    let mut f = 0.0;
    assert_eq!(unsafe { sepm_gap_force(p, 0.0, h, &mut f) }, SepmStatus::Ok);
    assert!(f > 0.0);
    assert_eq!(
        unsafe { sepm_solve_flux(p, 0.0, 3, &mut h, &mut b) },
        SepmStatus::InvalidArgument
    );
    assert!(last_error().contains("polarity"));
    assert_eq!(
        unsafe { sepm_pulse_energy(p, -1.0, 1e-3, &mut e) },
        SepmStatus::Magnetics
    );
    unsafe { sepm_profile_free(p) };
}

#[test]
fn null_and_bad_inputs() {
    assert_eq!(
        unsafe { sepm_profile_default(ptr::null_mut()) },
        SepmStatus::NullPointer
    );
    let mut p = ptr::null_mut();
    let name = CString::new("no-such-profile").unwrap();
    assert_eq!(
        unsafe { sepm_profile_load(name.as_ptr(), &mut p) },
        SepmStatus::Profile
    );
    assert!(p.is_null());
    let mut e = 0.0;
    assert_eq!(
        unsafe { sepm_pulse_energy(ptr::null(), 48.0, 1e-3, &mut e) },
        SepmStatus::NullPointer
    );
    unsafe { sepm_profile_free(ptr::null_mut()) };
    unsafe { sepm_topology_free(ptr::null_mut()) };
}

#[test]
fn decoder_round_trip() {
    let spec = CString::new("tree:3").unwrap();
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { sepm_topology_build(spec.as_ptr(), &mut t) },
        SepmStatus::Ok
    );
    let mut n = 0usize;
    assert_eq!(
        unsafe { sepm_topology_valve_count(t, &mut n) },
        SepmStatus::Ok
    );
    assert_eq!(n, 7);
    for a in 0..8u32 {
        let mut states = [9i8; 7];
        assert_eq!(
            unsafe { sepm_decode_address(t, a, states.as_mut_ptr(), n) },
            SepmStatus::Ok
        );
        assert_eq!(states.iter().filter(|&&s| s == 0).count(), 4);
        let mut pairs = 0usize;
        assert_eq!(
            unsafe { sepm_route_count(t, states.as_ptr(), n, &mut pairs) },
            SepmStatus::Ok
        );
        assert_eq!(pairs, 1);
        for y in 0..8u32 {
            let out = CString::new(format!("Y{y}")).unwrap();
            let mut hit = false;
            assert_eq!(
                unsafe { sepm_output_reachable(t, states.as_ptr(), n, out.as_ptr(), &mut hit) },
                SepmStatus::Ok
            );
            assert_eq!(hit, y == a);
        }
    }
    let mut states = [0i8; 7];
    assert_eq!(
        unsafe { sepm_decode_address(t, 8, states.as_mut_ptr(), n) },
        SepmStatus::Routing
    );
    assert!(last_error().contains("out of range"));
    assert_eq!(
        unsafe { sepm_decode_address(t, 0, states.as_mut_ptr(), 3) },
        SepmStatus::InvalidArgument
    );
    unsafe { sepm_topology_free(t) };
}

#[test]
fn scenario_run_reports_energy() {
    let dir = tempfile::tempdir().unwrap();
    let name = CString::new("fig6_six_port").unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let (mut pulses, mut energy) = (0u64, 0.0);
    let status =
        unsafe { sepm_run_scenario(name.as_ptr(), out.as_ptr(), 0, &mut pulses, &mut energy) };
    assert_eq!(status, SepmStatus::Ok);
    assert!(pulses > 0);
    assert!((energy / pulses as f64 - 0.6).abs() < 1e-5);
    assert!(dir.path().join("trace.csv").exists());
    let bad = CString::new("nope").unwrap();
    assert_eq!(
        unsafe { sepm_run_scenario(bad.as_ptr(), ptr::null(), 0, &mut pulses, &mut energy) },
        SepmStatus::Scenario
    );
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sepm.h")).unwrap();
    for f in [
        "sepm_last_error",
        "sepm_profile_default",
        "sepm_profile_load",
        "sepm_profile_free",
        "sepm_pulse_energy",
        "sepm_solve_flux",
        "sepm_gap_force",
        "sepm_topology_build",
        "sepm_topology_free",
        "sepm_topology_valve_count",
        "sepm_decode_address",
        "sepm_route_count",
        "sepm_output_reachable",
        "sepm_run_scenario",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f}");
    }
    assert!(header.contains("typedef struct SepmProfile SepmProfile;"));
}

/// Compile and run a C program against the header and the static library.
#[test]
fn c_program_links() {
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libsepm_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists()
        || std::process::Command::new(&cc)
            .arg("--version")
            .output()
            .is_err()
    {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("0.6000 7 1 "), "{text}");
}
