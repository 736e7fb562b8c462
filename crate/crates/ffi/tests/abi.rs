use std::ffi::{CStr, CString};
use std::ptr;

use edgemesh_ffi::*;

fn last_error() -> String {
    let raw = em_last_error_message();
    assert!(!raw.is_null());
    let s = unsafe { CStr::from_ptr(raw) }.to_string_lossy().into_owned();
    unsafe { em_string_free(raw) };
    s
}

fn take_string(raw: *mut std::ffi::c_char) -> String {
    assert!(!raw.is_null());
    let s = unsafe { CStr::from_ptr(raw) }.to_string_lossy().into_owned();
    unsafe { em_string_free(raw) };
    s
}

#[test]
fn battery_follows_the_energy_model() {
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(em_battery_new(10.0, 10.0, 2.0, 1.0, &mut b), EmStatus::Ok);
        let mut active = 9u8;
        // draws phi for the local one plus phi + varphi for the offloaded one
        assert_eq!(em_battery_step(b, 0.0, 2, 1, &mut active), EmStatus::Ok);
        let mut charge = 0.0;
        em_battery_charge(b, &mut charge);
        assert_eq!((active, charge), (1, 5.0));

        // 5 + 1 harvested cannot cover 2 + 3 + 3 = 8: inactive, keeps the harvest
        assert_eq!(em_battery_step(b, 1.0, 3, 1, &mut active), EmStatus::Ok);
        em_battery_charge(b, &mut charge);
        assert_eq!((active, charge), (0, 6.0));

        assert_eq!(em_battery_step(b, 100.0, 0, 0, ptr::null_mut()), EmStatus::Ok);
        let mut pct = 0.0;
        em_battery_pct(b, &mut pct);
        assert_eq!(pct, 100.0);
        em_battery_free(b);
    }
}

#[test]
fn invalid_arguments_report_a_message() {
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(em_battery_new(11.0, 10.0, 1.0, 1.0, &mut b), EmStatus::InvalidArgument);
        assert!(b.is_null());
        assert!(last_error().contains("outside"));
        assert_eq!(em_battery_new(1.0, 10.0, 1.0, 1.0, ptr::null_mut()), EmStatus::NullPointer);

        em_battery_new(5.0, 10.0, 1.0, 1.0, &mut b);
        assert_eq!(em_battery_step(b, 0.0, 1, 2, ptr::null_mut()), EmStatus::InvalidArgument);
        assert_eq!(em_battery_step(b, -1.0, 0, 0, ptr::null_mut()), EmStatus::InvalidArgument);
        assert_eq!(em_battery_step(ptr::null_mut(), 0.0, 0, 0, ptr::null_mut()), EmStatus::NullPointer);
        em_battery_free(b);
        em_battery_free(ptr::null_mut());
        em_string_free(ptr::null_mut());
    }
}

#[test]
fn plans_solve_through_json() {
    let instance = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/small_instance.json")).unwrap();
    let instance = CString::new(instance).unwrap();
    let mut plan = ptr::null_mut();
    unsafe {
        assert_eq!(em_plan_solve_json(instance.as_ptr(), &mut plan), EmStatus::Ok);
        let mut objective = 0;
        em_plan_objective(plan, &mut objective);
        assert_eq!(objective, 3);
        let mut json = ptr::null_mut();
        assert_eq!(em_plan_to_json(plan, &mut json), EmStatus::Ok);
        let value: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
        assert_eq!(value["objective"], 3);
        em_plan_free(plan);
    }

    let node = r#"{"id":"a","capacity":10,"initial_charge":5,"phi":1,"varphi":0,"solar":[0]}"#;
    let infeasible = CString::new(format!(r#"{{"nodes":[{node}],"T":1,"m":2}}"#)).unwrap();
    let too_big = CString::new(format!(r#"{{"nodes":[{}],"T":1,"m":1}}"#, [node; 9].join(","))).unwrap();
    let garbage = CString::new("{").unwrap();
    unsafe {
        assert_eq!(em_plan_solve_json(infeasible.as_ptr(), &mut plan), EmStatus::PlanInfeasible);
        assert_eq!(em_plan_solve_json(too_big.as_ptr(), &mut plan), EmStatus::PlanTooLarge);
        assert_eq!(em_plan_solve_json(garbage.as_ptr(), &mut plan), EmStatus::InvalidArgument);
        assert_eq!(em_plan_solve_json(ptr::null(), &mut plan), EmStatus::NullPointer);
    }
}

#[test]
fn simulation_runs_and_exports() {
    let scenario = em_case_study_json();
    let mut result = ptr::null_mut();
    let mut other = ptr::null_mut();
    unsafe {
        assert_eq!(em_sim_run_json(scenario, 0, 0, &mut result), EmStatus::Ok);
        assert_eq!(em_sim_run_json(scenario, 1, 7, &mut other), EmStatus::Ok);
        em_string_free(scenario);
        let mut objective = 0;
        em_sim_objective(result, &mut objective);
        assert!(objective > 0);

        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        em_sim_metrics_csv(result, &mut a);
        em_sim_metrics_csv(other, &mut b);
        let (a, b) = (take_string(a), take_string(b));
        assert!(a.starts_with("slot,node_id,battery_pct,cpu_pct,workloads,generated,processed,mean_proc_ms\n"));
        // the case study is seeded with 7 already
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
        assert_eq!(em_sim_export(result, path.as_ptr()), EmStatus::Ok);
        assert_eq!(std::fs::read_dir(dir.path().join("out")).unwrap().count(), 4);
        em_sim_free(result);
        em_sim_free(other);
    }

    let bad = CString::new(r#"{"name":"x"}"#).unwrap();
    unsafe {
        assert_eq!(em_sim_run_json(bad.as_ptr(), 0, 0, &mut result), EmStatus::ScenarioInvalid);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(em_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
