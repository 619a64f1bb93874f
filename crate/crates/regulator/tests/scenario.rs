use std::fs;

use nalgebra::DMatrix;
use regulator::closed_loop::closed_loop_matrices;
use regulator::internal_model::build_internal_model;
use regulator::plant::{random_stable_plant, PlantRealization};
use regulator::scenario::*;
use regulator::Error;

fn single_tone() -> ScenarioConfig {
    ScenarioConfig::from_toml(SINGLE_TONE).unwrap()
}

fn config_path(err: Result<ScenarioConfig, Error>) -> String {
    match err {
        Err(Error::Config { path, .. }) => path,
        other => panic!("expected a config error, got {other:?}"),
    }
}

fn failing(diags: &[Diagnostic]) -> Vec<&str> {
    diags.iter().filter(|d| !d.pass).map(|d| d.name.as_str()).collect()
}

#[test]
fn builtins_parse_and_round_trip() {
    for name in BUILTINS {
        let cfg = ScenarioConfig::load(name).unwrap();
        assert_eq!(cfg.name, name);
        let again = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }
    assert!(builtin("nope").is_none());
    assert_eq!(config_path(ScenarioConfig::load("/no/such/scenario.toml")), "/no/such/scenario.toml");
}

#[test]
fn validation_reports_field_paths() {
    let base = SINGLE_TONE.to_string();
    let cases = [
        ("dt = 0.01", "dt = 0.0", "simulation.dt"),
        ("horizon = 60.0", "horizon = -1.0", "simulation.horizon"),
        ("h = 0.05", "h = 0.015", "scheduler.h"),
        ("guess_rad_per_time = [1.5]", "guess_rad_per_time = [1.5, 2.5]", "estimator.guess_rad_per_time"),
        ("gamma = 0.05", "gamma = 0.05\nk0_factor = 1.25\nk0 = 2.0\nnoise_std = 0.0", ""),
        ("y_sin = [[1.0]]", "y_sin = [[1.0, 2.0]]", "signal"),
    ];
    for (from, to, path) in cases {
        let text = base.replace(from, to);
        assert_ne!(text, base, "{from}");
        let r = ScenarioConfig::from_toml(&text);
        if path.is_empty() {
            assert!(r.is_ok(), "{to}: {r:?}");
        } else {
            assert_eq!(config_path(r), path, "{to}");
        }
    }
    let unknown = format!("{base}\n[observer]\nstate_weight = 1.0\nbogus = 2\n");
    assert!(matches!(ScenarioConfig::from_toml(&unknown), Err(Error::Config { .. })));
    let h_zero = base.replace("h = 0.05", "h = 0.0");
    assert_eq!(config_path(ScenarioConfig::from_toml(&h_zero)), "scheduler.h");
    let with_opt = format!("{base}\n[optimizer]\nalpha = 1.0\nbeta = 1.0\ndelta_r_m = 0.0025\ndelta_t = 5e-4\n");
    assert_eq!(config_path(ScenarioConfig::from_toml(&with_opt)), "optimizer");
}

#[test]
fn overrides_apply() {
    let mut cfg = single_tone();
    cfg.apply(&Overrides {
        seed: Some(99),
        grid: None,
        duration_scale: Some(0.5),
    })
    .unwrap();
    assert_eq!(cfg.simulation.seed, 99);
    assert_eq!(cfg.simulation.horizon, 30.0);
    let err = single_tone().apply(&Overrides {
        grid: Some(4),
        ..Default::default()
    });
    assert!(matches!(err, Err(Error::Config { path, .. }) if path == "plant.elements_per_side"));
    let err = single_tone().apply(&Overrides {
        duration_scale: Some(0.0),
        ..Default::default()
    });
    assert!(err.is_err());

    let mut desk = ScenarioConfig::load("drug_delivery_desk").unwrap();
    desk.apply(&Overrides {
        grid: Some(4),
        ..Default::default()
    })
    .unwrap();
    let (plant, grid) = build_plant(&desk).unwrap();
    assert_eq!(plant.n(), 25);
    assert_eq!(grid.unwrap().elements_per_side, 4);
}

#[test]
fn default_checks_pass() {
    for name in BUILTINS {
        let cfg = ScenarioConfig::load(name).unwrap();
        let diags = check_scenario(&cfg).unwrap();
        assert!(failing(&diags).is_empty(), "{name}: {diags:#?}");
        assert!(diags.iter().any(|d| d.name == "Q_e similarity"));
    }
}

#[test]
fn duplicate_guesses_flag_the_internal_model() {
    let text = SINGLE_TONE
        .replace("frequencies_rad_per_time = [2.0]", "frequencies_rad_per_time = [2.0, 3.0]")
        .replace("y_cos = [[0.0]]", "y_cos = [[0.0], [0.0]]")
        .replace("y_sin = [[1.0]]", "y_sin = [[1.0], [0.5]]")
        .replace("guess_rad_per_time = [1.5]", "guess_rad_per_time = [1.5, 1.5]")
        .replace("prior_bound_rad_per_time = [3.0]", "prior_bound_rad_per_time = [3.0, 4.0]");
    let cfg = ScenarioConfig::from_toml(&text).unwrap();
    let diags = check_scenario(&cfg).unwrap();
    let im = diags.iter().find(|d| d.name.starts_with("internal model")).unwrap();
    assert!(!im.pass);
    assert!(im.detail.contains("degenerate"));
}

fn bundle_config(dir: &std::path::Path, plant: &PlantRealization, guess: f64) -> ScenarioConfig {
    let path = dir.join("plant.txt");
    fs::write(&path, plant.to_bundle()).unwrap();
    let text = SINGLE_TONE
        .replace(
            "kind = \"random\"\nstates = 4\ninputs = 1\noutputs = 1",
            &format!("kind = \"bundle\"\npath = \"{}\"", path.display()),
        )
        .replace("guess_rad_per_time = [1.5]", &format!("guess_rad_per_time = [{guess:?}]"));
    ScenarioConfig::from_toml(&text).unwrap()
}

#[test]
fn transmission_zero_at_a_guess_fails_check() {
    let dir = tempfile::tempdir().unwrap();
    // (s² + 4)/((s + 1)(s + 2)(s + 3)) blocks the tone at 2.
    let notch = PlantRealization::new(
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -6.0, -11.0, -6.0]),
        DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
        DMatrix::zeros(3, 0),
        DMatrix::from_row_slice(1, 3, &[4.0, 0.0, 1.0]),
        DMatrix::zeros(1, 1),
    )
    .unwrap();
    let diags = check_scenario(&bundle_config(dir.path(), &notch, 2.0)).unwrap();
    assert!(failing(&diags).contains(&"no transmission zeros (regulator solvability)"), "{diags:#?}");
    let diags = check_scenario(&bundle_config(dir.path(), &notch, 1.5)).unwrap();
    assert!(!failing(&diags).contains(&"no transmission zeros (regulator solvability)"));

    // D = CA⁻¹B cancels the DC gain, a zero at ω = 0.
    let mut p = random_stable_plant(3, 1, 1, 5).unwrap();
    p.d = &p.c * p.a.clone().try_inverse().unwrap() * &p.b;
    let diags = check_scenario(&bundle_config(dir.path(), &p, 1.5)).unwrap();
    assert!(failing(&diags).contains(&"no transmission zeros (regulator solvability)"));
}

#[test]
fn export_plant_round_trips() {
    for name in BUILTINS {
        let cfg = ScenarioConfig::load(name).unwrap();
        let text = export_plant(&cfg).unwrap();
        let back = PlantRealization::from_bundle(&text).unwrap();
        let p = build_plant(&cfg).unwrap().0;
        assert_eq!((&back.a, &back.b, &back.bd, &back.c, &back.d), (&p.a, &p.b, &p.bd, &p.c, &p.d));
    }
}

#[test]
fn single_tone_run_passes_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(single_tone(), dir.path()).unwrap();
    assert!(out.passed(), "{:#?}", out.diagnostics);
    assert_eq!(out.exit_code(), 0);
    for f in ["trace.csv", "frequencies.csv", "errors.csv", "state_norms.csv", "summary.txt", "manifest.toml", "incidents.log"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.ends_with("overall PASS\n"));

    // Same configuration again, and a replay from the manifest.
    let again = tempfile::tempdir().unwrap();
    run_scenario(single_tone(), again.path()).unwrap();
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    let replay_cfg = ScenarioConfig::from_toml(&manifest).unwrap();
    assert_eq!(replay_cfg, single_tone());
    let replay = tempfile::tempdir().unwrap();
    run_scenario(replay_cfg, replay.path()).unwrap();
    for f in ["trace.csv", "frequencies.csv", "errors.csv", "state_norms.csv", "manifest.toml"] {
        let a = fs::read(dir.path().join(f)).unwrap();
        assert_eq!(a, fs::read(again.path().join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(replay.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_changes_the_run() {
    let mut a = single_tone();
    a.simulation.horizon = 1.0;
    let mut b = a.clone();
    b.simulation.seed = 8;
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let _ = run_scenario(a, da.path()).unwrap();
    let _ = run_scenario(b, db.path()).unwrap();
    let fa = fs::read(da.path().join("trace.csv")).unwrap();
    assert_ne!(fa, fs::read(db.path().join("trace.csv")).unwrap());
}

#[test]
fn closed_loop_operator_converges_to_its_limit() {
    let sc = Scenario::build(single_tone()).unwrap();
    let trace = sc.simulate().unwrap();
    let limit = sc.limit_controller(&trace).unwrap();
    let none = (DMatrix::zeros(sc.plant.n(), 0), DMatrix::zeros(1, 0));
    let a_inf = closed_loop_matrices(&sc.plant, &limit, &none.0, &none.1).a_e;
    let gap = |i: usize| {
        let t = trace.times[i];
        let k = trace.schedule.gain_at(t).unwrap();
        let ctrl = sc.controller.with_block_and_gain(build_internal_model(&trace.omega_hat[i], 1), k);
        (closed_loop_matrices(&sc.plant, &ctrl, &none.0, &none.1).a_e - &a_inf).norm() / a_inf.norm()
    };
    let n = trace.len();
    let samples: Vec<f64> = (1..=8).map(|k| gap(k * (n - 1) / 8 - (k == 8) as usize)).collect();
    assert!(samples[0] > samples[5], "{samples:?}");
    assert!(samples[6] < 1e-4, "{samples:?}");
    assert!((trace.omega_hat[n - 1][0] - 2.0).abs() < 1e-3);
}

#[test]
fn frozen_frequencies_without_estimator() {
    let mut cfg = single_tone();
    cfg.estimator.enabled = false;
    let sc = Scenario::build(cfg).unwrap();
    assert!(sc.estimator.is_none());
    let trace = sc.simulate().unwrap();
    assert!(trace.omega_hat.iter().all(|w| w == &vec![2.0]));
    assert_eq!(trace.schedule.breakpoints.len(), 1);
    let diags = evaluate(&sc, &trace).unwrap();
    assert!(failing(&diags).is_empty(), "{diags:#?}");
    assert!(!diags.iter().any(|d| d.name == "frequency_estimate"));
}

#[test]
fn aborted_run_leaves_diagnostics() {
    let mut cfg = single_tone();
    cfg.simulation.blowup_factor = 1.0 + 1e-9;
    cfg.simulation.initial_state_value = 1.0;
    cfg.simulation.horizon = 2.0;
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(cfg, dir.path()).unwrap();
    assert_eq!(out.exit_code(), 1);
    assert_eq!(failing(&out.diagnostics), vec!["completed"]);
    assert!(dir.path().join("diagnostics.txt").exists());
}

#[test]
fn build_failure_writes_diagnostics_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let text = SINGLE_TONE.replace(
        "kind = \"random\"\nstates = 4\ninputs = 1\noutputs = 1",
        &format!("kind = \"bundle\"\npath = \"{}\"", missing.display()),
    );
    let cfg = ScenarioConfig::from_toml(&text).unwrap();
    assert!(run_scenario(cfg, dir.path()).is_err());
    let msg = fs::read_to_string(dir.path().join("diagnostics.txt")).unwrap();
    assert!(msg.starts_with("run failed: "));
}
