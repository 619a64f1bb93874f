//! Scenario configuration and the experiment pipeline behind the CLI.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::closed_loop::{
    assemble_closed_loop, asymptotic_error_bound_check, closed_loop_matrices, fmt17, internal_model_identity,
    limit_closed_loop_check, qe_similarity_residual, simulate, ClosedLoopRun, FrequencySource, ReferenceSource,
    SimulationConfig, SimulationTrace,
};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, EstimatorDriver, EstimatorState};
use crate::exosystem::{ExoRealization, SignalModel};
use crate::internal_model::{
    assemble_controller, build_internal_model, design_l, internal_model_dimension, ControllerRealization,
};
use crate::numerics::{is_stabilizable, spectrum};
use crate::optimizer::{run_reference, OptimizerConfig, ReferenceOptimizer, ReferenceTrace};
use crate::plant::{assemble_diffusion_plant, random_stable_plant_at, FemGrid, PlantRealization, SourceProfile};
use crate::scheduler::{Scheduler, SchedulerConfig};

pub const DRUG_DELIVERY_DESK: &str = include_str!("../scenarios/drug_delivery_desk.toml");
pub const SINGLE_TONE: &str = include_str!("../scenarios/single_tone.toml");

pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "drug_delivery_desk" => Some(DRUG_DELIVERY_DESK),
        "single_tone" => Some(SINGLE_TONE),
        _ => None,
    }
}

pub const BUILTINS: [&str; 2] = ["drug_delivery_desk", "single_tone"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantSpec,
    pub signal: SignalSpec,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub observer: ObserverSpec,
    pub simulation: SimulationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    Diffusion {
        half_width_m: f64,
        elements_per_side: usize,
        diffusion_m2_per_s: f64,
        /// Physical seconds per unit of scaled time.
        time_scale_s: f64,
        kappa_c0_per_scaled_time: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sources: Option<Vec<SourceProfile>>,
    },
    Random {
        states: usize,
        inputs: usize,
        outputs: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Bundle {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub frequencies_rad_per_time: Vec<f64>,
    pub y0: Vec<f64>,
    pub y_cos: Vec<Vec<f64>>,
    pub y_sin: Vec<Vec<f64>>,
    #[serde(default)]
    pub w0: Vec<f64>,
    #[serde(default)]
    pub w_cos: Vec<Vec<f64>>,
    #[serde(default)]
    pub w_sin: Vec<Vec<f64>>,
}

impl SignalSpec {
    pub fn model(&self) -> Result<SignalModel> {
        let m = SignalModel::reference(
            self.frequencies_rad_per_time.clone(),
            self.y0.clone(),
            self.y_cos.clone(),
            self.y_sin.clone(),
        )?;
        if self.w0.is_empty() && self.w_cos.is_empty() {
            Ok(m)
        } else {
            m.with_disturbance(self.w0.clone(), self.w_cos.clone(), self.w_sin.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSpec {
    /// When false the internal model uses `frozen_rad_per_time`, or the
    /// true signal frequencies if that is absent.
    pub enabled: bool,
    pub guess_rad_per_time: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frozen_rad_per_time: Option<Vec<f64>>,
    /// k₀ is k0_factor times the filter-gain bound at this prior, unless k0 is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_bound_rad_per_time: Option<Vec<f64>>,
    pub k0_factor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    pub time_scale: f64,
    pub amplitude_scale: f64,
    pub substeps: usize,
    pub noise_std: f64,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            enabled: true,
            guess_rad_per_time: Vec::new(),
            frozen_rad_per_time: None,
            prior_bound_rad_per_time: None,
            k0_factor: 1.25,
            k0: None,
            gamma: 0.01,
            b: None,
            time_scale: 1.0,
            amplitude_scale: 1.0,
            substeps: 8,
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverSpec {
    pub state_weight: f64,
    pub output_weight: f64,
}

impl Default for ObserverSpec {
    fn default() -> Self {
        ObserverSpec {
            state_weight: 1.0,
            output_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Every plant state starts at this value; the controller starts at zero.
    #[serde(default)]
    pub initial_state_value: f64,
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default = "default_blowup")]
    pub blowup_factor: f64,
}

fn default_blowup() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSpec {
    pub window_fraction: f64,
    /// Final-window sup over peak, per error component.
    pub component_ratio: f64,
    /// Final-window ‖c − c_ref‖ over its peak.
    pub state_error_ratio: f64,
    pub frequency_tolerance: f64,
    /// No breakpoint allowed in this final fraction of the horizon.
    pub freeze_fraction: f64,
    pub qe_samples: usize,
    pub qe_tolerance: f64,
    pub identity_tolerance: f64,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec {
            window_fraction: 0.1,
            component_ratio: 0.02,
            state_error_ratio: 0.1,
            frequency_tolerance: 1e-2,
            freeze_fraction: 0.5,
            qe_samples: 10,
            qe_tolerance: 1e-10,
            identity_tolerance: 1e-8,
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub duration_scale: Option<f64>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::Config {
            path: "<toml>".into(),
            message: e.message().to_string(),
        })?;
        // A run manifest embeds the resolved configuration under [config].
        let value = match value.get("config") {
            Some(inner) if value.get("manifest_version").is_some() => inner.clone(),
            _ => value,
        };
        let cfg: ScenarioConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config {
            path: "<config>".into(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A builtin name or a path to a TOML file. Relative bundle paths are
    /// resolved against the file's directory.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if !path.exists() {
            if let Some(text) = builtin(spec) {
                return Self::from_toml(text);
            }
            return Err(Error::Config {
                path: spec.to_string(),
                message: format!("no such file and not a builtin ({})", BUILTINS.join(", ")),
            });
        }
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            path: spec.to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let PlantSpec::Bundle { path: bundle } = &mut cfg.plant {
            if bundle.is_relative() {
                if let Some(dir) = path.parent() {
                    *bundle = dir.join(&*bundle);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.simulation.seed = seed;
        }
        if let Some(g) = o.grid {
            match &mut self.plant {
                PlantSpec::Diffusion { elements_per_side, .. } => *elements_per_side = g,
                _ => {
                    return Err(Error::Config {
                        path: "plant.elements_per_side".into(),
                        message: "--grid applies only to diffusion plants".into(),
                    })
                }
            }
        }
        if let Some(s) = o.duration_scale {
            if !(s > 0.0) {
                return Err(Error::Config {
                    path: "simulation.horizon".into(),
                    message: format!("duration scale must be positive, got {s}"),
                });
            }
            self.simulation.horizon *= s;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |path: &str, message: String| Err(Error::Config {
            path: path.to_string(),
            message,
        });
        let sim = &self.simulation;
        if !(sim.dt > 0.0) {
            return cfg_err("simulation.dt", format!("must be positive, got {}", sim.dt));
        }
        if !(sim.horizon > 0.0) {
            return cfg_err("simulation.horizon", format!("must be positive, got {}", sim.horizon));
        }
        let ratio = self.scheduler.h / sim.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return cfg_err(
                "scheduler.h",
                format!("must be a positive multiple of simulation.dt ({} / {})", self.scheduler.h, sim.dt),
            );
        }
        self.scheduler.validate()?;
        if let Err(e) = self.signal.model() {
            return cfg_err("signal", e.to_string());
        }
        let q0 = self.signal.frequencies_rad_per_time.len();
        let est = &self.estimator;
        if est.enabled && est.guess_rad_per_time.len() != q0 {
            return cfg_err(
                "estimator.guess_rad_per_time",
                format!("needs {q0} entries, has {}", est.guess_rad_per_time.len()),
            );
        }
        if let Some(f) = &est.frozen_rad_per_time {
            if f.len() != q0 {
                return cfg_err("estimator.frozen_rad_per_time", format!("needs {q0} entries"));
            }
        }
        if !(self.observer.state_weight > 0.0 && self.observer.output_weight > 0.0) {
            return cfg_err("observer", "weights must be positive".into());
        }
        match &self.plant {
            PlantSpec::Diffusion {
                half_width_m,
                elements_per_side,
                diffusion_m2_per_s,
                time_scale_s,
                ..
            } => {
                if !(*half_width_m > 0.0) || *elements_per_side < 2 {
                    return cfg_err("plant", "need half_width_m > 0 and elements_per_side ≥ 2".into());
                }
                if !(*diffusion_m2_per_s > 0.0 && *time_scale_s > 0.0) {
                    return cfg_err("plant.diffusion_m2_per_s", "diffusion and time scale must be positive".into());
                }
            }
            PlantSpec::Random {
                states,
                inputs,
                outputs,
                ..
            } => {
                if *states == 0 || *inputs == 0 || *outputs == 0 {
                    return cfg_err("plant", "random plant dimensions must be positive".into());
                }
            }
            PlantSpec::Bundle { .. } => {}
        }
        if let Some(o) = &self.optimizer {
            o.validate()?;
            if !matches!(self.plant, PlantSpec::Diffusion { .. }) {
                return cfg_err("optimizer", "the reference optimizer needs a diffusion plant".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

pub fn build_plant(cfg: &ScenarioConfig) -> Result<(PlantRealization, Option<FemGrid>)> {
    match &cfg.plant {
        PlantSpec::Diffusion {
            half_width_m,
            elements_per_side,
            diffusion_m2_per_s,
            time_scale_s,
            kappa_c0_per_scaled_time,
            sources,
        } => {
            let grid = FemGrid::new(*half_width_m, *elements_per_side)?;
            let profiles = sources.clone().unwrap_or_else(|| SourceProfile::default_set(*half_width_m));
            let plant = assemble_diffusion_plant(
                &grid,
                diffusion_m2_per_s * time_scale_s,
                *kappa_c0_per_scaled_time,
                1.0,
                &profiles,
            )?;
            Ok((plant, Some(grid)))
        }
        PlantSpec::Random {
            states,
            inputs,
            outputs,
            seed,
        } => {
            let mut freqs = vec![0.0];
            freqs.extend(&cfg.signal.frequencies_rad_per_time);
            freqs.extend(&cfg.estimator.guess_rad_per_time);
            let plant = random_stable_plant_at(*states, *inputs, *outputs, seed.unwrap_or(cfg.simulation.seed), &freqs)?;
            Ok((plant, None))
        }
        PlantSpec::Bundle { path } => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config {
                path: format!("plant.path ({})", path.display()),
                message: e.to_string(),
            })?;
            Ok((PlantRealization::from_bundle(&text)?, None))
        }
    }
}

/// Everything a run needs, built once from a configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub plant: PlantRealization,
    pub grid: Option<FemGrid>,
    /// The signal whose frequencies are unknown; it is what the estimator sees.
    pub signal: SignalModel,
    pub optimizer: Option<ReferenceOptimizer>,
    pub reference_trace: Option<ReferenceTrace>,
    /// Nominal controller (L fixed; block and gain replaced during a run).
    pub controller: ControllerRealization,
    pub estimator: Option<(EstimatorConfig, EstimatorState)>,
}

impl Scenario {
    pub fn build(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let (plant, grid) = build_plant(&config)?;
        let signal = config.signal.model()?;
        let p = plant.p();
        let (optimizer, reference_trace) = match (&config.optimizer, &grid) {
            (Some(oc), Some(g)) => {
                let opt = ReferenceOptimizer::new(&plant, g, oc.clone())?;
                let c0 = DVector::from_element(plant.n(), config.simulation.initial_state_value);
                let horizon = config.simulation.horizon + config.simulation.dt;
                let trace = run_reference(&opt, g, &signal, c0, horizon)?;
                (Some(opt), Some(trace))
            }
            _ => (None, None),
        };
        if reference_trace.is_none() && signal.p() != p {
            return Err(Error::Config {
                path: "signal".into(),
                message: format!("signal has {} outputs, plant has {p}", signal.p()),
            });
        }
        if reference_trace.is_none() && signal.nd() != plant.nd() {
            return Err(Error::Config {
                path: "signal.w0".into(),
                message: format!("signal has {} disturbance channels, plant has {}", signal.nd(), plant.nd()),
            });
        }
        let l = design_l(&plant, config.observer.state_weight, config.observer.output_weight)?;
        let start = if config.estimator.enabled {
            config.estimator.guess_rad_per_time.clone()
        } else {
            config.estimator.frozen_rad_per_time.clone().unwrap_or(signal.frequencies.clone())
        };
        let im = build_internal_model(&start, p);
        let d0 = im.dim();
        let controller = assemble_controller(
            im,
            &plant,
            l,
            DMatrix::zeros(plant.m(), d0),
            DMatrix::zeros(plant.m(), plant.n()),
        )?;
        let estimator = if config.estimator.enabled {
            let es = &config.estimator;
            let q0 = signal.q0();
            let b = es.b.clone().unwrap_or_else(|| EstimatorConfig::default_b(q0));
            let mut ec = EstimatorConfig::new(q0, b, es.k0.unwrap_or(1.0), es.gamma)?
                .with_scaling(es.time_scale, es.amplitude_scale)?;
            if es.k0.is_none() {
                let prior = es.prior_bound_rad_per_time.clone().unwrap_or_else(|| es.guess_rad_per_time.clone());
                ec = ec.k0_from_prior(&prior, es.k0_factor)?;
            }
            let state = EstimatorState::from_guess(&ec, signal.p(), &es.guess_rad_per_time)?;
            Some((ec, state))
        } else {
            None
        };
        Ok(Scenario {
            config,
            plant,
            grid,
            signal,
            optimizer,
            reference_trace,
            controller,
            estimator,
        })
    }

    pub fn reference(&self) -> &dyn ReferenceSource {
        match &self.reference_trace {
            Some(r) => r,
            None => &self.signal,
        }
    }

    /// The configured frequency source (adaptive or frozen).
    pub fn frequency_source(&self) -> Result<FrequencySource> {
        match &self.estimator {
            Some((ec, st)) => {
                let driver = EstimatorDriver::new(ec.clone(), st.clone(), self.config.estimator.substeps)
                    .with_noise(self.config.estimator.noise_std, self.config.simulation.seed)?;
                Ok(FrequencySource::Adaptive {
                    driver: Box::new(driver),
                    measured: self.signal.clone(),
                })
            }
            None => Ok(FrequencySource::Frozen(self.controller.im.omega_hat.clone())),
        }
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        let s = &self.config.simulation;
        let mut c = SimulationConfig::new(s.dt, s.horizon);
        c.snapshot_stride = s.snapshot_stride;
        c.blowup_factor = s.blowup_factor;
        c.record_estimator = self.estimator.is_some();
        c
    }

    pub fn scheduler(&self) -> Result<Scheduler> {
        Scheduler::new(&self.controller.model, self.config.scheduler.clone())
    }

    /// Runs the closed loop against `plant` (the nominal plant or a perturbation of it).
    pub fn simulate_on(&self, plant: &PlantRealization, frequencies: FrequencySource) -> Result<SimulationTrace> {
        let x0 = DVector::from_element(plant.n(), self.config.simulation.initial_state_value);
        let z0 = DVector::zeros(self.controller.dim());
        simulate(
            ClosedLoopRun {
                plant,
                controller: &self.controller,
                scheduler: self.scheduler()?,
                frequencies,
                reference: self.reference(),
                x0,
                z0,
            },
            &self.simulation_config(),
        )
    }

    pub fn simulate(&self) -> Result<SimulationTrace> {
        self.simulate_on(&self.plant, self.frequency_source()?)
    }

    /// Controller with the frozen final parameters of a trace.
    pub fn limit_controller(&self, trace: &SimulationTrace) -> Result<ControllerRealization> {
        let omega = trace.omega_hat.last().ok_or(Error::Argument("empty trace".into()))?;
        let k = &trace.schedule.current().ok_or(Error::Argument("trace without gains".into()))?.gain;
        Ok(self
            .controller
            .with_block_and_gain(build_internal_model(omega, self.plant.p()), k))
    }

    /// Exosystem with the given frequencies driving all p outputs through
    /// seeded coefficients, used to test the internal-model identity.
    pub fn probe_exosystem(&self, frequencies: &[f64], seed: u64) -> Result<ExoRealization> {
        let p = self.plant.p();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut row = || (0..p).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let y0 = row();
        let y_cos = frequencies.iter().map(|_| row()).collect();
        let y_sin = frequencies.iter().map(|_| row()).collect();
        let mut m = SignalModel::reference(frequencies.to_vec(), y0, y_cos, y_sin)?;
        if self.plant.nd() > 0 {
            let nd = self.plant.nd();
            let mut rowd = || (0..nd).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            let w0 = rowd();
            let w_cos = frequencies.iter().map(|_| rowd()).collect();
            let w_sin = frequencies.iter().map(|_| rowd()).collect();
            m = m.with_disturbance(w0, w_cos, w_sin)?;
        }
        Ok(m.realization())
    }

    /// Q_e residuals relative to ‖A_e(t)‖ at seeded random times of a trace.
    pub fn qe_residuals(&self, trace: &SimulationTrace, samples: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
        let times = Arc::new(trace.times.clone());
        let omegas = Arc::new(trace.omega_hat.clone());
        let p = self.plant.p();
        let provider = {
            let (times, omegas) = (times.clone(), omegas.clone());
            Arc::new(move |t: f64| {
                let i = times.partition_point(|&s| s <= t).saturating_sub(1);
                build_internal_model(&omegas[i], p)
            })
        };
        let ops = assemble_closed_loop(&self.plant, &self.controller, &trace.schedule, provider, None)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let horizon = trace.horizon();
        Ok((0..samples)
            .map(|_| {
                let t = rng.random_range(0.0..=horizon);
                let norm = ops.at(t).a_e.norm();
                (t, qe_similarity_residual(&ops, t) / norm)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Diagnostic {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Diagnostic {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Post-run diagnostics of a completed trace.
pub fn evaluate(scenario: &Scenario, trace: &SimulationTrace) -> Result<Vec<Diagnostic>> {
    let d = &scenario.config.diagnostics;
    let mut out = Vec::new();
    out.push(Diagnostic::new(
        "completed",
        trace.aborted.is_none(),
        match &trace.aborted {
            Some(a) => format!("aborted at t={:.6}: {}", a.t, a.reason),
            None => format!("{} samples to t={:.6}", trace.len(), trace.horizon()),
        },
    ));
    if trace.aborted.is_some() {
        return Ok(out);
    }
    let horizon = trace.horizon();

    if scenario.estimator.is_some() {
        let last = trace.omega_hat.last().cloned().unwrap_or_default();
        let worst = last
            .iter()
            .zip(&scenario.signal.frequencies)
            .map(|(h, w)| ((h - w) / w).abs())
            .fold(0.0, f64::max);
        out.push(Diagnostic::new(
            "frequency_estimate",
            worst <= d.frequency_tolerance,
            format!("omega_hat(T)={last:?}, worst relative error {worst:.3e}"),
        ));
    }

    let peaks = trace.component_peaks(d.window_fraction);
    let worst_ratio = peaks
        .iter()
        .map(|(pk, tail)| if *pk > 0.0 { tail / pk } else { 0.0 })
        .fold(0.0, f64::max);
    out.push(Diagnostic::new(
        "error_decay",
        worst_ratio <= d.component_ratio,
        format!(
            "final-window sup / peak per component: {}",
            peaks
                .iter()
                .map(|(pk, tail)| format!("{:.3e}", if *pk > 0.0 { tail / pk } else { 0.0 }))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    ));

    if !trace.state_error.is_empty() {
        let peak = trace.state_error.iter().cloned().fold(0.0, f64::max);
        let t0 = horizon * (1.0 - d.window_fraction);
        let tail = trace
            .times
            .iter()
            .zip(&trace.state_error)
            .filter(|(t, _)| **t >= t0)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        out.push(Diagnostic::new(
            "state_error",
            tail <= d.state_error_ratio * peak,
            format!("‖c-c_ref‖ peak {peak:.4e}, final window {tail:.4e}"),
        ));
    }

    let bps = &trace.schedule.breakpoints;
    let last_bp = bps.last().map_or(0.0, |b| b.t);
    out.push(Diagnostic::new(
        "gain_freezing",
        last_bp < horizon * (1.0 - d.freeze_fraction),
        format!("{} breakpoint(s), last at t={last_bp:.4}", bps.len()),
    ));

    let limit = scenario.limit_controller(trace)?;
    let report = limit_closed_loop_check(&scenario.plant, &limit)?;
    out.push(Diagnostic::new(
        "limit_closed_loop",
        report.spectral_abscissa < 0.0,
        format!("abscissa {:.6e}", report.spectral_abscissa),
    ));

    let p = scenario.plant.p();
    let mut dims = vec![internal_model_dimension(&limit.im, 0.0)];
    dims.extend(limit.im.omega_hat.iter().map(|w| internal_model_dimension(&limit.im, *w)));
    let exo = scenario.probe_exosystem(&limit.im.omega_hat, scenario.config.simulation.seed)?;
    let ops = closed_loop_matrices(&scenario.plant, &limit, &exo.e_matrix(&scenario.plant.bd), &exo.f_matrix());
    let (identity, _) = internal_model_identity(&ops, &exo)?;
    out.push(Diagnostic::new(
        "internal_model",
        dims.iter().all(|&k| k >= p) && identity <= d.identity_tolerance,
        format!("kernel dimensions {dims:?} (need ≥ {p}), ‖C_eΣ+D_e‖ = {identity:.3e}"),
    ));

    let qe = scenario.qe_residuals(trace, d.qe_samples, scenario.config.simulation.seed)?;
    let worst = qe.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    out.push(Diagnostic::new(
        "qe_similarity",
        worst <= d.qe_tolerance,
        format!("max relative residual {worst:.3e} over {} times", qe.len()),
    ));

    if let Some(r) = &scenario.reference_trace {
        let dyn_r = r.dynamic_residual.iter().cloned().fold(0.0, f64::max);
        let alg_r = r.algebraic_residual.iter().cloned().fold(0.0, f64::max);
        out.push(Diagnostic::new(
            "optimizer_constraints",
            dyn_r <= 1e-8 && alg_r <= 1e-8,
            format!("max dynamic residual {dyn_r:.3e}, max algebraic residual {alg_r:.3e}"),
        ));
    }

    let bound = asymptotic_error_bound_check(trace, d.window_fraction)?;
    let slope = bound.fit.map(|f| f.slope);
    out.push(Diagnostic::new(
        "error_envelope",
        slope.is_none_or(|s| s < 0.0),
        format!(
            "final-window sup ‖e‖ {:.4e}, envelope slope {}",
            bound.sup_final,
            slope.map_or("undefined".to_string(), |s| format!("{s:.4}"))
        ),
    ));
    Ok(out)
}

/// Frequencies, errors and state norms as separate CSVs plus the combined trace.
pub fn trace_csvs(trace: &SimulationTrace) -> BTreeMap<&'static str, String> {
    let mut files = BTreeMap::new();
    files.insert("trace.csv", trace.to_csv());
    let q0 = trace.omega_hat.first().map_or(0, |w| w.len());
    let p = trace.errors.first().map_or(0, |e| e.len());

    let mut freq = String::from("t");
    for k in 1..=q0 {
        let _ = write!(freq, ",omega_hat_{k}");
    }
    freq.push('\n');
    let mut err = String::from("t");
    for i in 1..=p {
        let _ = write!(err, ",e_{i}");
    }
    err.push('\n');
    let mut norms = String::from("t,xnorm");
    if !trace.state_error.is_empty() {
        norms.push_str(",state_error");
    }
    norms.push('\n');
    for j in 0..trace.len() {
        let t = fmt17(trace.times[j]);
        let _ = write!(freq, "{t}");
        for w in &trace.omega_hat[j] {
            let _ = write!(freq, ",{}", fmt17(*w));
        }
        freq.push('\n');
        let _ = write!(err, "{t}");
        for e in trace.errors[j].iter() {
            let _ = write!(err, ",{}", fmt17(*e));
        }
        err.push('\n');
        let _ = write!(norms, "{t},{}", fmt17(trace.xnorm[j]));
        if let Some(s) = trace.state_error.get(j) {
            let _ = write!(norms, ",{}", fmt17(*s));
        }
        norms.push('\n');
    }
    files.insert("frequencies.csv", freq);
    files.insert("errors.csv", err);
    files.insert("state_norms.csv", norms);
    files
}

#[derive(Serialize)]
struct Manifest<'a> {
    manifest_version: u32,
    crate_version: &'static str,
    config_sha256: String,
    seed: u64,
    artifacts: BTreeMap<String, String>,
    config: &'a ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub diagnostics: Vec<Diagnostic>,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.diagnostics.iter().all(|d| d.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

fn write_file(dir: &Path, name: &str, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body)?;
    written.push(path);
    Ok(())
}

/// Builds, simulates, evaluates and writes all artifacts into `out_dir`.
/// Runtime failures leave a diagnostics file and are returned as errors.
pub fn run_scenario(config: ScenarioConfig, out_dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let result = (|| -> Result<(Scenario, SimulationTrace)> {
        let scenario = Scenario::build(config.clone())?;
        let trace = scenario.simulate()?;
        Ok((scenario, trace))
    })();
    let (scenario, trace) = match result {
        Ok(v) => v,
        Err(e) => {
            write_file(out_dir, "diagnostics.txt", &format!("run failed: {e}\n"), &mut written)?;
            return Err(e);
        }
    };
    let diagnostics = evaluate(&scenario, &trace)?;

    let mut artifacts = BTreeMap::new();
    for (name, body) in trace_csvs(&trace) {
        artifacts.insert(name.to_string(), hex::encode(Sha256::digest(body.as_bytes())));
        write_file(out_dir, name, &body, &mut written)?;
    }
    if let Some(r) = &scenario.reference_trace {
        let body = r.to_csv();
        artifacts.insert("reference.csv".into(), hex::encode(Sha256::digest(body.as_bytes())));
        write_file(out_dir, "reference.csv", &body, &mut written)?;
    }
    write_file(out_dir, "incidents.log", &trace.schedule.incident_log(), &mut written)?;

    let mut summary = format!("scenario {}\n", scenario.config.name);
    for d in &diagnostics {
        let _ = writeln!(summary, "{d}");
    }
    let _ = writeln!(
        summary,
        "overall {}",
        if diagnostics.iter().all(|d| d.pass) { "PASS" } else { "FAIL" }
    );
    write_file(out_dir, "summary.txt", &summary, &mut written)?;
    if trace.aborted.is_some() {
        write_file(out_dir, "diagnostics.txt", &summary, &mut written)?;
    }

    let manifest = Manifest {
        manifest_version: 1,
        crate_version: env!("CARGO_PKG_VERSION"),
        config_sha256: scenario.config.hash(),
        seed: scenario.config.simulation.seed,
        artifacts,
        config: &scenario.config,
    };
    let body = toml::to_string(&manifest).expect("manifest serializes");
    write_file(out_dir, "manifest.toml", &body, &mut written)?;
    Ok(RunOutcome {
        diagnostics,
        files: written,
    })
}

/// Structural checks without simulation.
pub fn check_scenario(config: &ScenarioConfig) -> Result<Vec<Diagnostic>> {
    let (plant, _) = build_plant(config)?;
    let signal = config.signal.model()?;
    let p = plant.p();
    let mut out = Vec::new();

    let stab = is_stabilizable(&plant.a, &plant.b)?;
    out.push(Diagnostic::new(
        "stabilizable (A, B)",
        stab.is_none(),
        match stab {
            None => "PBH rank full at every closed right-half-plane eigenvalue".into(),
            Some(z) => format!("uncontrollable mode {z}"),
        },
    ));
    let l = design_l(&plant, config.observer.state_weight, config.observer.output_weight);
    out.push(Diagnostic::new(
        "detectable (A, C)",
        l.is_ok(),
        match &l {
            Ok(l) => format!(
                "A+LC abscissa {:.4e}",
                spectrum(&(&plant.a + l * &plant.c))?.spectral_abscissa
            ),
            Err(e) => e.to_string(),
        },
    ));
    out.push(Diagnostic::new(
        "open-loop spectrum",
        true,
        format!("abscissa of A {:.4e}", spectrum(&plant.a)?.spectral_abscissa),
    ));

    let guesses = if config.estimator.enabled {
        config.estimator.guess_rad_per_time.clone()
    } else {
        config.estimator.frozen_rad_per_time.clone().unwrap_or(signal.frequencies.clone())
    };
    let mut zero_ok = true;
    let mut zero_detail = Vec::new();
    for w in std::iter::once(0.0).chain(guesses.iter().copied()) {
        let margin = plant.rosenbrock_margin(w);
        zero_ok &= plant.no_transmission_zero(w);
        zero_detail.push(format!("ω={w}: {margin:.3e}"));
    }
    out.push(Diagnostic::new(
        "no transmission zeros (regulator solvability)",
        zero_ok,
        format!("Rosenbrock σ_min/σ_max {}", zero_detail.join(", ")),
    ));

    let im = build_internal_model(&guesses, p);
    let mut dims = vec![internal_model_dimension(&im, 0.0)];
    dims.extend(guesses.iter().map(|w| internal_model_dimension(&im, *w)));
    out.push(Diagnostic::new(
        "internal model (p-copy condition)",
        !im.degenerate && dims.iter().all(|&k| k >= p),
        format!(
            "kernel dimensions {dims:?} (need ≥ {p}){}",
            if im.degenerate {
                "; degenerate guesses: (G1, G2) controllability lost"
            } else {
                ""
            }
        ),
    ));

    if let Ok(l) = l {
        let d0 = im.dim();
        let controller = assemble_controller(
            im.clone(),
            &plant,
            l,
            DMatrix::zeros(plant.m(), d0),
            DMatrix::zeros(plant.m(), plant.n()),
        )?;
        let scheduler = Scheduler::new(&plant, config.scheduler.clone());
        match scheduler.and_then(|s| s.design(&im, &plant)) {
            Ok(k) => {
                let ctrl = controller.with_block_and_gain(im.clone(), &k);
                let ops = crate::closed_loop::ClosedLoopOperators::frozen(&plant, &ctrl, None)?;
                let norm = ops.at(0.0).a_e.norm();
                let r = qe_similarity_residual(&ops, 0.0) / norm;
                out.push(Diagnostic::new(
                    "Q_e similarity",
                    r <= config.diagnostics.qe_tolerance,
                    format!("relative residual {r:.3e}"),
                ));
                let ab = limit_closed_loop_check(&plant, &ctrl)?.spectral_abscissa;
                out.push(Diagnostic::new(
                    "initial gain",
                    ab < 0.0,
                    format!("closed-loop abscissa at the guesses {ab:.4e}"),
                ));
            }
            Err(e) => out.push(Diagnostic::new("initial gain", false, e.to_string())),
        }
    }
    Ok(out)
}

/// Plant bundle text for a configuration.
pub fn export_plant(config: &ScenarioConfig) -> Result<String> {
    Ok(build_plant(config)?.0.to_bundle())
}
