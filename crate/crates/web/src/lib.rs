//! wasm-bindgen bindings for the browser demo in `www/`.

use regulator::closed_loop::SimulationTrace;
use regulator::scenario::{self, check_scenario, evaluate, Overrides, Scenario, ScenarioConfig};
use wasm_bindgen::prelude::*;

/// TOML text of a builtin scenario.
#[wasm_bindgen]
pub fn builtin_scenario(name: &str) -> Option<String> {
    scenario::builtin(name).map(str::to_string)
}

#[wasm_bindgen]
pub fn builtin_names() -> Vec<String> {
    scenario::BUILTINS.iter().map(|s| s.to_string()).collect()
}

fn parse(toml: &str, seed: Option<u64>, duration_scale: Option<f64>) -> Result<ScenarioConfig, String> {
    let mut cfg = ScenarioConfig::from_toml(toml).map_err(|e| e.to_string())?;
    cfg.apply(&Overrides {
        seed,
        grid: None,
        duration_scale,
    })
    .map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Structural checks, one `PASS`/`FAIL` line per diagnostic.
#[wasm_bindgen]
pub fn check(toml: &str) -> Result<String, String> {
    let cfg = parse(toml, None, None)?;
    let diags = check_scenario(&cfg).map_err(|e| e.to_string())?;
    Ok(diags.iter().map(|d| format!("{d}\n")).collect())
}

/// Plant bundle text of the configured plant.
#[wasm_bindgen]
pub fn export_plant(toml: &str) -> Result<String, String> {
    let cfg = parse(toml, None, None)?;
    scenario::export_plant(&cfg).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub struct RunView {
    trace: SimulationTrace,
    report: String,
    passed: bool,
}

#[wasm_bindgen]
impl RunView {
    pub fn times(&self) -> Vec<f64> {
        self.trace.times.clone()
    }

    pub fn channels(&self) -> usize {
        self.trace.omega_hat.first().map_or(0, Vec::len)
    }

    /// Frequency estimate of channel `k` over time.
    pub fn omega_hat(&self, k: usize) -> Vec<f64> {
        self.trace.omega_hat.iter().map(|w| w.get(k).copied().unwrap_or(f64::NAN)).collect()
    }

    pub fn error_norm(&self) -> Vec<f64> {
        self.trace.error_norms()
    }

    pub fn state_norm(&self) -> Vec<f64> {
        self.trace.xnorm.clone()
    }

    pub fn breakpoints(&self) -> usize {
        self.trace.schedule.breakpoints.len()
    }

    pub fn report(&self) -> String {
        self.report.clone()
    }

    pub fn passed(&self) -> bool {
        self.passed
    }
}

/// Simulates the scenario and evaluates the run diagnostics.
#[wasm_bindgen]
pub fn run(toml: &str, seed: Option<u64>, duration_scale: Option<f64>) -> Result<RunView, String> {
    let cfg = parse(toml, seed, duration_scale)?;
    let scenario = Scenario::build(cfg).map_err(|e| e.to_string())?;
    let trace = scenario.simulate().map_err(|e| e.to_string())?;
    let diags = evaluate(&scenario, &trace).map_err(|e| e.to_string())?;
    let mut report: String = diags.iter().map(|d| format!("{d}\n")).collect();
    if let Some(a) = &trace.aborted {
        report.push_str(&format!("aborted at t={}: {}\n", a.t, a.reason));
    }
    Ok(RunView {
        passed: diags.iter().all(|d| d.pass) && trace.aborted.is_none(),
        trace,
        report,
    })
}
