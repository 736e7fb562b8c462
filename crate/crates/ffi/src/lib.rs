//! C ABI for the energy model, the exact placement solver and the simulator.
//!
//! Objects cross the boundary as opaque handles created by `em_*_new` or
//! `em_*_run` functions and released with the matching `em_*_free`. Every
//! fallible call returns an [`EmStatus`]; on failure the message can be read
//! with [`em_last_error_message`]. Strings returned by the library are owned
//! by the caller and released with [`em_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use edgemesh::model::{step_battery, EnergyState, LoadState};
use edgemesh::planner::{self, PlacementPlan, PlanError, PlanInstance};
use edgemesh::sim::{self, MetricsRecord, Scenario, SimError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad UTF-8, malformed JSON or an out-of-range value.
    InvalidArgument = 2,
    ScenarioInvalid = 3,
    PlanInfeasible = 4,
    /// The instance is beyond the exact solver's size guard.
    PlanTooLarge = 5,
    Io = 6,
    Panic = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: EmStatus, msg: impl Into<String>) -> EmStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> EmStatus) -> EmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(EmStatus::Panic, "internal panic"),
    }
}

fn plan_status(e: &PlanError) -> EmStatus {
    match e {
        PlanError::Infeasible(_) => EmStatus::PlanInfeasible,
        PlanError::SizeExceeded { .. } => EmStatus::PlanTooLarge,
        _ => EmStatus::InvalidArgument,
    }
}

fn sim_status(e: &SimError) -> EmStatus {
    match e {
        SimError::ScenarioInvalid(_) => EmStatus::ScenarioInvalid,
        _ => EmStatus::Io,
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, EmStatus> {
    if s.is_null() {
        return Err(fail(EmStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(EmStatus::InvalidArgument, "argument is not valid UTF-8"))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Last error message on this thread, or NULL. Release with [`em_string_free`].
#[no_mangle]
pub extern "C" fn em_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |m| m.clone().into_raw()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, released once.
#[no_mangle]
pub unsafe extern "C" fn em_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version; static, do not free.
#[no_mangle]
pub extern "C" fn em_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A node battery following the timeslot energy model.
pub struct EmBattery {
    state: EnergyState,
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn em_battery_new(
    charge: f64,
    capacity: f64,
    phi: f64,
    varphi: f64,
    out: *mut *mut EmBattery,
) -> EmStatus {
    guard(|| {
        if out.is_null() {
            return fail(EmStatus::NullPointer, "out is null");
        }
        match EnergyState::new(charge, capacity, phi, varphi) {
            Ok(state) => {
                *out = Box::into_raw(Box::new(EmBattery { state }));
                EmStatus::Ok
            }
            Err(e) => fail(EmStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Advances one slot with `solar` harvest while hosting `hosted`
/// microservices, `local` of which originate here. Writes whether the node
/// was active in the slot to `out_active` when it is not NULL.
///
/// # Safety
/// `battery` must come from [`em_battery_new`]; `out_active` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn em_battery_step(
    battery: *mut EmBattery,
    solar: f64,
    hosted: u32,
    local: u32,
    out_active: *mut u8,
) -> EmStatus {
    guard(|| {
        let Some(b) = battery.as_mut() else {
            return fail(EmStatus::NullPointer, "battery is null");
        };
        if !(solar >= 0.0) {
            return fail(EmStatus::InvalidArgument, format!("solar input must be non-negative, got {solar}"));
        }
        let load = match LoadState::new(hosted, local) {
            Ok(l) => l,
            Err(e) => return fail(EmStatus::InvalidArgument, e.to_string()),
        };
        let consumption = match b.state.consumption(load) {
            Ok(c) => c,
            Err(e) => return fail(EmStatus::InvalidArgument, e.to_string()),
        };
        let (next, active) = step_battery(&b.state, solar, consumption);
        b.state = next;
        if !out_active.is_null() {
            *out_active = active;
        }
        EmStatus::Ok
    })
}

/// # Safety
/// `battery` must come from [`em_battery_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn em_battery_charge(battery: *const EmBattery, out: *mut f64) -> EmStatus {
    match (battery.as_ref(), out.is_null()) {
        (Some(b), false) => {
            *out = b.state.battery_charge;
            EmStatus::Ok
        }
        _ => fail(EmStatus::NullPointer, "battery or out is null"),
    }
}

/// # Safety
/// `battery` must come from [`em_battery_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn em_battery_pct(battery: *const EmBattery, out: *mut f64) -> EmStatus {
    match (battery.as_ref(), out.is_null()) {
        (Some(b), false) => {
            *out = b.state.battery_pct();
            EmStatus::Ok
        }
        _ => fail(EmStatus::NullPointer, "battery or out is null"),
    }
}

/// # Safety
/// `battery` must be NULL or come from [`em_battery_new`], released once.
#[no_mangle]
pub unsafe extern "C" fn em_battery_free(battery: *mut EmBattery) {
    if !battery.is_null() {
        drop(Box::from_raw(battery));
    }
}

/// An optimal placement plan.
pub struct EmPlan {
    plan: PlacementPlan,
}

/// Solves a placement instance given as JSON.
///
/// # Safety
/// `instance_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn em_plan_solve_json(instance_json: *const c_char, out: *mut *mut EmPlan) -> EmStatus {
    guard(|| {
        if out.is_null() {
            return fail(EmStatus::NullPointer, "out is null");
        }
        let text = match read_str(instance_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let result = PlanInstance::from_json(text).and_then(|i| planner::solve_exact(&i));
        match result {
            Ok(plan) => {
                *out = Box::into_raw(Box::new(EmPlan { plan }));
                EmStatus::Ok
            }
            Err(e) => fail(plan_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `plan` must come from [`em_plan_solve_json`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn em_plan_objective(plan: *const EmPlan, out: *mut u64) -> EmStatus {
    match (plan.as_ref(), out.is_null()) {
        (Some(p), false) => {
            *out = p.plan.objective as u64;
            EmStatus::Ok
        }
        _ => fail(EmStatus::NullPointer, "plan or out is null"),
    }
}

/// The plan as JSON. Release with [`em_string_free`].
///
/// # Safety
/// `plan` must come from [`em_plan_solve_json`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn em_plan_to_json(plan: *const EmPlan, out: *mut *mut c_char) -> EmStatus {
    match (plan.as_ref(), out.is_null()) {
        (Some(p), false) => {
            *out = into_c_string(serde_json::to_string(&p.plan).expect("plan serializes"));
            EmStatus::Ok
        }
        _ => fail(EmStatus::NullPointer, "plan or out is null"),
    }
}

/// # Safety
/// `plan` must be NULL or come from [`em_plan_solve_json`], released once.
#[no_mangle]
pub unsafe extern "C" fn em_plan_free(plan: *mut EmPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// The metrics of one simulation run.
pub struct EmSimResult {
    record: MetricsRecord,
}

/// The bundled three-node case-study scenario as JSON. Release with
/// [`em_string_free`].
#[no_mangle]
pub extern "C" fn em_case_study_json() -> *mut c_char {
    into_c_string(sim::CASE_STUDY_JSON.to_string())
}

/// Runs a scenario given as JSON. When `override_seed` is nonzero, `seed`
/// replaces the scenario's seed.
///
/// # Safety
/// `scenario_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn em_sim_run_json(
    scenario_json: *const c_char,
    override_seed: u8,
    seed: u64,
    out: *mut *mut EmSimResult,
) -> EmStatus {
    guard(|| {
        if out.is_null() {
            return fail(EmStatus::NullPointer, "out is null");
        }
        let text = match read_str(scenario_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let mut scenario = match Scenario::from_json(text) {
            Ok(s) => s,
            Err(e) => return fail(sim_status(&e), e.to_string()),
        };
        if override_seed != 0 {
            scenario.seed = seed;
        }
        match sim::run_scenario(&scenario) {
            Ok(record) => {
                *out = Box::into_raw(Box::new(EmSimResult { record }));
                EmStatus::Ok
            }
            Err(e) => fail(sim_status(&e), e.to_string()),
        }
    })
}

/// Smallest operative time over all nodes.
///
/// # Safety
/// `result` must come from [`em_sim_run_json`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn em_sim_objective(result: *const EmSimResult, out: *mut u64) -> EmStatus {
    match (result.as_ref(), out.is_null()) {
        (Some(r), false) => {
            *out = r.record.objective() as u64;
            EmStatus::Ok
        }
        _ => fail(EmStatus::NullPointer, "result or out is null"),
    }
}

/// Per-slot metrics as CSV. Release with [`em_string_free`].
///
/// # Safety
/// `result` must come from [`em_sim_run_json`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn em_sim_metrics_csv(result: *const EmSimResult, out: *mut *mut c_char) -> EmStatus {
    guard(|| {
        let (Some(r), false) = (result.as_ref(), out.is_null()) else {
            return fail(EmStatus::NullPointer, "result or out is null");
        };
        let mut buf = Vec::new();
        if let Err(e) = sim::write_metrics_csv(&r.record, &mut buf) {
            return fail(EmStatus::Io, e.to_string());
        }
        *out = into_c_string(String::from_utf8(buf).expect("csv output is UTF-8"));
        EmStatus::Ok
    })
}

/// Writes metrics.csv, events.csv, summary.json and timeseries.svg into `dir`.
///
/// # Safety
/// `result` must come from [`em_sim_run_json`]; `dir` must be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn em_sim_export(result: *const EmSimResult, dir: *const c_char) -> EmStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(EmStatus::NullPointer, "result is null");
        };
        let dir = match read_str(dir) {
            Ok(d) => d,
            Err(s) => return s,
        };
        match sim::export_results(&r.record, Path::new(dir)) {
            Ok(_) => EmStatus::Ok,
            Err(e) => fail(sim_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `result` must be NULL or come from [`em_sim_run_json`], released once.
#[no_mangle]
pub unsafe extern "C" fn em_sim_free(result: *mut EmSimResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
