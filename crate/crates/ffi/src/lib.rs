//! C ABI over `sepm-core`.
//!
//! Every function returns a [`SepmStatus`]; results go through out-pointers.
//! On failure `sepm_last_error()` returns a message for the calling thread.
//! Profiles and topologies are opaque handles released with their `_free`
//! function. Valve states cross the boundary as `int8_t`: `1`, `-1`, and `0`
//! for don't-care.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sepm_core::magnetics;
use sepm_core::profile::Profile;
use sepm_core::routing::{self, Cell, DontCarePolicy, StateVector, Topology, TopologySpec};
use sepm_core::scenario::{run_scenario, RunOptions, Scenario};
use sepm_core::{Error, Sign};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SepmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Scenario = 3,
    Profile = 4,
    Magnetics = 5,
    Valve = 6,
    Pneumatics = 7,
    Routing = 8,
    Sequencer = 9,
    Registry = 10,
    Calibration = 11,
    Io = 12,
    Panic = 99,
}

/// Opaque parameter profile.
pub struct SepmProfile(Profile);

/// Opaque routing topology.
pub struct SepmTopology(Topology);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SepmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            3 => SepmStatus::Scenario,
            4 => SepmStatus::Profile,
            5 => SepmStatus::Magnetics,
            6 => SepmStatus::Valve,
            7 => SepmStatus::Pneumatics,
            8 => SepmStatus::Routing,
            9 => SepmStatus::Sequencer,
            10 => SepmStatus::Registry,
            11 => SepmStatus::Calibration,
            12 => SepmStatus::Io,
            _ => SepmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(SepmStatus::InvalidArgument, message.into())
}

fn null(what: &str) -> Failure {
    Failure(SepmStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SepmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SepmStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SepmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn states_arg(
    states: *const i8,
    len: usize,
    topology: &Topology,
) -> Result<StateVector, Failure> {
    if states.is_null() {
        return Err(null("states"));
    }
    if len != topology.valve_count() {
        return Err(invalid(format!(
            "{len} states for {} valves",
            topology.valve_count()
        )));
    }
    std::slice::from_raw_parts(states, len)
        .iter()
        .map(|&v| Cell::from_i8(v).ok_or_else(|| invalid(format!("state {v} is not 1, -1 or 0"))))
        .collect::<Result<_, _>>()
        .map(StateVector)
}

fn sign_arg(v: i8) -> Result<Sign, Failure> {
    Sign::from_i64(v.into()).ok_or_else(|| invalid(format!("polarity {v} is not 1 or -1")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn sepm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// The bundled calibrated profile.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sepm_profile_default(out: *mut *mut SepmProfile) -> SepmStatus {
    guard(|| {
        let slot = unsafe { self::out(out, "out") }?;
        *slot = Box::into_raw(Box::new(SepmProfile(Profile::calibrated_default())));
        Ok(())
    })
}

/// Load a profile from a bundled name or a TOML file path.
///
/// # Safety
/// `reference` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sepm_profile_load(
    reference: *const c_char,
    out: *mut *mut SepmProfile,
) -> SepmStatus {
    guard(|| {
        let reference = unsafe { str_arg(reference, "reference") }?;
        let slot = unsafe { self::out(out, "out") }?;
        let profile =
            Profile::resolve(Some(reference), None).map_err(|e| Failure::from(Error::from(e)))?;
        *slot = Box::into_raw(Box::new(SepmProfile(profile)));
        Ok(())
    })
}

/// # Safety
/// `profile` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sepm_profile_free(profile: *mut SepmProfile) {
    if !profile.is_null() {
        drop(unsafe { Box::from_raw(profile) });
    }
}

/// Energy of one drive pulse into the profile's coil (J).
///
/// # Safety
/// `profile` must be a live handle; `energy` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sepm_pulse_energy(
    profile: *const SepmProfile,
    voltage: f64,
    duration: f64,
    energy: *mut f64,
) -> SepmStatus {
    guard(|| {
        let p = unsafe { handle(profile, "profile") }?;
        let slot = unsafe { out(energy, "energy") }?;
        magnetics::Pulse::new(voltage, duration, Sign::Pos)
            .map_err(|e| Failure::from(Error::from(e)))?;
        *slot = magnetics::pulse_energy(voltage, duration, &p.0.magnet);
        Ok(())
    })
}

/// Operating point of the magnetic circuit at coil current `current` (A) with
/// the switchable magnet on branch `polarity` (1 or -1).
///
/// # Safety
/// `profile` must be a live handle; out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn sepm_solve_flux(
    profile: *const SepmProfile,
    current: f64,
    polarity: i8,
    h_m: *mut f64,
    b_g: *mut f64,
) -> SepmStatus {
    guard(|| {
        let p = unsafe { handle(profile, "profile") }?;
        let (h_slot, b_slot) = unsafe { (out(h_m, "h_m")?, out(b_g, "b_g")?) };
        let s =
            magnetics::solve_flux_balance(&p.0.geometry, &p.0.magnet, current, sign_arg(polarity)?)
                .map_err(|e| Failure::from(Error::from(e)))?;
        *h_slot = s.h_m;
        *b_slot = s.b_g;
        Ok(())
    })
}

/// Attractive force across the working gap (N) at the given operating point.
///
/// # Safety
/// `profile` must be a live handle; `force` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sepm_gap_force(
    profile: *const SepmProfile,
    current: f64,
    h_m: f64,
    force: *mut f64,
) -> SepmStatus {
    guard(|| {
        let p = unsafe { handle(profile, "profile") }?;
        let slot = unsafe { out(force, "force") }?;
        *slot = magnetics::gap_force(&p.0.geometry, &p.0.magnet, current, h_m);
        Ok(())
    })
}

/// Build a topology from a spec string: `binary`, `tree:K`, `six-port`,
/// `dual-tree`, `mix-decoder[:K]`.
///
/// # Safety
/// `spec` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sepm_topology_build(
    spec: *const c_char,
    out: *mut *mut SepmTopology,
) -> SepmStatus {
    guard(|| {
        let spec = unsafe { str_arg(spec, "spec") }?;
        let slot = unsafe { self::out(out, "out") }?;
        let topology = spec
            .parse::<TopologySpec>()
            .and_then(|s| s.build())
            .map_err(|e| Failure::from(Error::from(e)))?;
        *slot = Box::into_raw(Box::new(SepmTopology(topology)));
        Ok(())
    })
}

/// # Safety
/// `topology` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sepm_topology_free(topology: *mut SepmTopology) {
    if !topology.is_null() {
        drop(unsafe { Box::from_raw(topology) });
    }
}

/// # Safety
/// `topology` must be a live handle; `count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sepm_topology_valve_count(
    topology: *const SepmTopology,
    count: *mut usize,
) -> SepmStatus {
    guard(|| {
        let t = unsafe { handle(topology, "topology") }?;
        *unsafe { out(count, "count") }? = t.0.valve_count();
        Ok(())
    })
}

/// Valve states selecting output `address` of a decoder; writes `len` entries.
///
/// # Safety
/// `topology` must be a live handle; `states` must hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn sepm_decode_address(
    topology: *const SepmTopology,
    address: u32,
    states: *mut i8,
    len: usize,
) -> SepmStatus {
    guard(|| {
        let t = unsafe { handle(topology, "topology") }?;
        if states.is_null() {
            return Err(null("states"));
        }
        if len != t.0.valve_count() {
            return Err(invalid(format!(
                "buffer of {len} for {} valves",
                t.0.valve_count()
            )));
        }
        let v =
            routing::decode_address(&t.0, address).map_err(|e| Failure::from(Error::from(e)))?;
        let buf = unsafe { std::slice::from_raw_parts_mut(states, len) };
        for (slot, cell) in buf.iter_mut().zip(&v.0) {
            *slot = cell.as_i8();
        }
        Ok(())
    })
}

/// Number of connected input-output pairs under `states`; don't-care entries
/// must not change the outcome.
///
/// # Safety
/// `topology` must be a live handle; `states` must hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn sepm_route_count(
    topology: *const SepmTopology,
    states: *const i8,
    len: usize,
    pairs: *mut usize,
) -> SepmStatus {
    guard(|| {
        let t = unsafe { handle(topology, "topology") }?;
        let v = unsafe { states_arg(states, len, &t.0) }?;
        let slot = unsafe { out(pairs, "pairs") }?;
        let p = routing::active_paths(&t.0, &v, DontCarePolicy::Expand)
            .map_err(|e| Failure::from(Error::from(e)))?;
        *slot = p.pairs.len();
        Ok(())
    })
}

/// Whether any input reaches output port `output` under `states`.
///
/// # Safety
/// `topology` must be a live handle; `states` must hold `len` entries;
/// `output` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sepm_output_reachable(
    topology: *const SepmTopology,
    states: *const i8,
    len: usize,
    output: *const c_char,
    reachable: *mut bool,
) -> SepmStatus {
    guard(|| {
        let t = unsafe { handle(topology, "topology") }?;
        let v = unsafe { states_arg(states, len, &t.0) }?;
        let output = unsafe { str_arg(output, "output") }?;
        let slot = unsafe { out(reachable, "reachable") }?;
        if !t.0.sinks().any(|n| n.id == output) {
            return Err(invalid(format!("`{output}` is not an output")));
        }
        let p = routing::active_paths(&t.0, &v, DontCarePolicy::Expand)
            .map_err(|e| Failure::from(Error::from(e)))?;
        *slot = p.reached().contains(output);
        Ok(())
    })
}

/// Run a scenario (file path or bundled name). With a non-null `out_dir` the
/// trace, report, schedule and registry are written there.
///
/// # Safety
/// `scenario` must be a NUL-terminated string; `out_dir` null or
/// NUL-terminated; out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn sepm_run_scenario(
    scenario: *const c_char,
    out_dir: *const c_char,
    seed: u64,
    pulses: *mut u64,
    energy: *mut f64,
) -> SepmStatus {
    guard(|| {
        let reference = unsafe { str_arg(scenario, "scenario") }?;
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(unsafe { str_arg(out_dir, "out_dir") }?))
        };
        let (p_slot, e_slot) = unsafe { (out(pulses, "pulses")?, out(energy, "energy")?) };
        let (s, base) = Scenario::locate(reference).map_err(|e| Failure::from(Error::from(e)))?;
        let outcome = run_scenario(
            &s,
            base.as_deref(),
            &RunOptions {
                seed,
                ..RunOptions::default()
            },
        )?;
        if let Some(dir) = dir {
            outcome.write(&dir)?;
        }
        let report = outcome.report.as_ref().expect("executed");
        *p_slot = report.ledger.total_pulses;
        *e_slot = report.ledger.total_energy;
        if let Some(f) = report.failures.first() {
            return Err(Failure(
                SepmStatus::Valve,
                format!("step {}: {}", f.step, f.message),
            ));
        }
        Ok(())
    })
}
