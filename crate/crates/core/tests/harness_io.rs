use std::fs;

use stap_core::harness::{
    self, apply_overrides, parse_spec, Algorithm, CalibrationSpec, ExperimentSpec, GridFactors,
    RunManifest, RunStatus,
};
use stap_core::scene::RadarConfig;
use stap_core::solver::SolverParams;

fn tiny(dir: &std::path::Path) -> ExperimentSpec {
    ExperimentSpec {
        radar: RadarConfig::desk_scale().with_dimensions(4, 4),
        grid: GridFactors { rho_s: 2.0, rho_d: 2.0 },
        solver: SolverParams {
            beta: 5e-4,
            max_iter: 40,
            ..SolverParams::default()
        },
        num_trials: 6,
        allow_few_trials: true,
        calibration: CalibrationSpec {
            pfa: 0.25,
            num_trials: 8,
        },
        snr_grid: vec![0.0, 20.0],
        pfa_grid: vec![0.25, 1.0],
        output_dir: dir.to_path_buf(),
        ..ExperimentSpec::desk()
    }
}

#[test]
fn presets_round_trip_through_json() {
    for name in ExperimentSpec::PRESETS {
        let spec = ExperimentSpec::preset(name).unwrap();
        spec.validate().unwrap();
        let json = serde_json::to_string_pretty(&spec).unwrap();
        let back = parse_spec(&json).unwrap();
        assert_eq!(back, spec, "{name}");
        assert_eq!(back.hash(), spec.hash());
    }
}

#[test]
fn shipped_preset_files_match_builtins() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    for name in ExperimentSpec::PRESETS {
        let spec = harness::load_spec(&root.join(format!("{name}.json"))).unwrap();
        assert_eq!(spec, ExperimentSpec::preset(name).unwrap(), "{name}");
    }
}

#[test]
fn missing_field_is_named() {
    let mut value = serde_json::to_value(ExperimentSpec::desk()).unwrap();
    value["solver"].as_object_mut().unwrap().remove("rho");
    let err = parse_spec(&value.to_string()).unwrap_err().to_string();
    assert!(err.contains("rho"), "{err}");

    let mut value = serde_json::to_value(ExperimentSpec::desk()).unwrap();
    value.as_object_mut().unwrap().remove("num_trials");
    let err = parse_spec(&value.to_string()).unwrap_err().to_string();
    assert!(err.contains("num_trials"), "{err}");
}

#[test]
fn unknown_field_is_rejected() {
    let mut value = serde_json::to_value(ExperimentSpec::desk()).unwrap();
    value["solver"]["betta"] = serde_json::json!(0.1);
    assert!(parse_spec(&value.to_string()).is_err());
}

#[test]
fn overrides_follow_dotted_paths() {
    let base = ExperimentSpec::desk();
    let spec = apply_overrides(
        &base,
        &[
            "solver.beta=0.1".into(),
            "targets.0.normalized_doppler=0.2".into(),
            "algorithms=[\"adm\"]".into(),
        ],
    )
    .unwrap();
    assert_eq!(spec.solver.beta, 0.1);
    assert_eq!(spec.targets[0].normalized_doppler, 0.2);
    assert_eq!(spec.algorithms, vec![Algorithm::Adm]);
    assert_ne!(spec.hash(), base.hash());

    for bad in ["solver.betta=1", "targets.5.snr_db=1", "solver.beta", "radar.num_elements=\"x\""] {
        assert!(apply_overrides(&base, &[bad.into()]).is_err(), "{bad}");
    }
}

#[test]
fn hash_ignores_output_dir() {
    let a = ExperimentSpec::desk();
    let mut b = a.clone();
    b.output_dir = "elsewhere".into();
    assert_eq!(a.hash(), b.hash());
    b.base_seed += 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn profile_outputs_are_reproducible() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let f1 = harness::run_profile_experiment(&tiny(d1.path())).unwrap();
    let f2 = harness::run_profile_experiment(&tiny(d2.path())).unwrap();
    assert_eq!(f1.len(), f2.len());
    for (a, b) in f1.iter().zip(&f2) {
        assert_eq!(a.file_name(), b.file_name());
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{}", a.display());
    }
    let header = fs::read_to_string(d1.path().join("profile_case1_adm.csv")).unwrap();
    assert!(header.starts_with("f_d,f_s,magnitude\n"));
}

#[test]
fn pd_curve_outputs_are_reproducible_and_seeded() {
    let (d1, d2, d3) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    let s1 = tiny(d1.path());
    let (curve, files) = harness::run_pd_vs_snr(&s1, &s1.snr_grid).unwrap();
    harness::run_pd_vs_snr(&tiny(d2.path()), &s1.snr_grid).unwrap();
    let mut s3 = tiny(d3.path());
    s3.base_seed += 1;
    harness::run_pd_vs_snr(&s3, &s1.snr_grid).unwrap();

    let read = |d: &std::path::Path| fs::read_to_string(d.join("pd_curve.csv")).unwrap();
    assert_eq!(read(d1.path()), read(d2.path()));
    assert_eq!(
        fs::read(d1.path().join("trials.json")).unwrap(),
        fs::read(d2.path().join("trials.json")).unwrap()
    );
    let t3 = fs::read(d3.path().join("trials.json")).unwrap();
    assert_ne!(fs::read(d1.path().join("trials.json")).unwrap(), t3);

    assert!(read(d1.path()).starts_with("snr_db,case,algorithm,pd,ci_lo,ci_hi,trials\n"));
    assert_eq!(files.len(), 3);
    let expected = s1.snr_grid.len() * s1.error_cases.len() * s1.algorithms.len();
    assert_eq!(curve.points.len(), expected);
    for p in &curve.points {
        assert_eq!(p.trials, s1.num_trials);
        assert!(p.ci_lo <= p.pd && p.pd <= p.ci_hi);
    }
    let records = harness::load_records(&d1.path().join("trials.json")).unwrap();
    assert_eq!(records, curve.records);
}

#[test]
fn pd_curve_refuses_few_trials() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny(dir.path());
    spec.allow_few_trials = false;
    assert!(harness::run_pd_vs_snr(&spec, &spec.snr_grid).is_err());
}

#[test]
fn roc_ends_at_certain_detection() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny(dir.path());
    let (curves, _) = harness::run_roc(&spec, &spec.pfa_grid).unwrap();
    let text = fs::read_to_string(dir.path().join("roc.csv")).unwrap();
    assert!(text.starts_with("pfa,pd,doppler,algorithm\n"));
    for p in curves.points.iter().filter(|p| p.pfa == 1.0) {
        assert_eq!(p.pd, 1.0);
    }
}

#[test]
fn manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny(dir.path());
    let mut m = RunManifest::new("profile", &spec);
    m.write(dir.path()).unwrap();
    assert_eq!(RunManifest::load(dir.path()).unwrap().status, RunStatus::Running);
    m.finish(dir.path(), &[dir.path().join("a.csv")]);
    m.write(dir.path()).unwrap();
    let back = RunManifest::load(dir.path()).unwrap();
    assert_eq!(back.status, RunStatus::Complete);
    assert_eq!(back.outputs, vec!["a.csv".to_string()]);
    assert_eq!(back.spec, spec);
    assert_eq!(back.spec_hash, spec.hash());
}
