//! Closed loop of plant and controller: assembly, simulation and diagnostics.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::EstimatorDriver;
use crate::exosystem::{ExoRealization, SignalModel};
use crate::internal_model::{build_internal_model, ControllerRealization, InternalModelBlock};
use crate::numerics::{block, ode_step, spectrum, to_complex, SpectrumReport};
use crate::plant::PlantRealization;
use crate::scheduler::{GainSchedule, Scheduler};

/// A_e, B_e, C_e, D_e at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMatrices {
    pub a_e: DMatrix<f64>,
    pub b_e: DMatrix<f64>,
    pub c_e: DMatrix<f64>,
    pub d_e: DMatrix<f64>,
}

/// A_e = [[A, BK], [𝒢₂C, 𝒢₁+𝒢₂DK]], B_e = [E; 𝒢₂F], C_e = [C, DK], D_e = F.
pub fn closed_loop_matrices(
    plant: &PlantRealization,
    controller: &ControllerRealization,
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
) -> ClosedLoopMatrices {
    let k = controller.gain();
    let g1 = controller.g1_cal();
    let g2 = controller.g2_cal();
    let bk = &plant.b * &k;
    let g2c = &g2 * &plant.c;
    let dk = &plant.d * &k;
    let lower_right = &g1 + &g2 * &dk;
    let a_e = block(&[&[&plant.a, &bk], &[&g2c, &lower_right]]);
    let g2f = &g2 * f;
    let b_e = block(&[&[e], &[&g2f]]);
    let c_e = block(&[&[&plant.c, &dk]]);
    ClosedLoopMatrices {
        a_e,
        b_e,
        c_e,
        d_e: f.clone(),
    }
}

pub type BlockProvider = Arc<dyn Fn(f64) -> InternalModelBlock + Send + Sync>;

/// Time-dependent closed-loop operators.
#[derive(Clone)]
pub struct ClosedLoopOperators {
    pub plant: PlantRealization,
    pub controller: ControllerRealization,
    pub schedule: GainSchedule,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    blocks: BlockProvider,
}

impl std::fmt::Debug for ClosedLoopOperators {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClosedLoopOperators")
            .field("n", &self.plant.n())
            .field("controller_dim", &self.controller.dim())
            .field("breakpoints", &self.schedule.breakpoints.len())
            .finish()
    }
}

pub fn assemble_closed_loop(
    plant: &PlantRealization,
    controller: &ControllerRealization,
    schedule: &GainSchedule,
    block_provider: BlockProvider,
    exo: Option<&ExoRealization>,
) -> Result<ClosedLoopOperators> {
    let model = &controller.model;
    if (plant.n(), plant.m(), plant.p()) != (model.n(), model.m(), model.p()) {
        return Err(Error::Dimension {
            context: "assemble_closed_loop",
            detail: format!(
                "plant (n, m, p) = ({}, {}, {}) but controller model ({}, {}, {})",
                plant.n(),
                plant.m(),
                plant.p(),
                model.n(),
                model.m(),
                model.p()
            ),
        });
    }
    let (e, f) = match exo {
        Some(x) => {
            if x.y_out.nrows() != plant.p() || x.w_out.nrows() != plant.nd() {
                return Err(Error::Dimension {
                    context: "assemble_closed_loop",
                    detail: format!(
                        "exosystem drives {} outputs and {} disturbances, plant has {} and {}",
                        x.y_out.nrows(),
                        x.w_out.nrows(),
                        plant.p(),
                        plant.nd()
                    ),
                });
            }
            (x.e_matrix(&plant.bd), x.f_matrix())
        }
        None => (DMatrix::zeros(plant.n(), 0), DMatrix::zeros(plant.p(), 0)),
    };
    Ok(ClosedLoopOperators {
        plant: plant.clone(),
        controller: controller.clone(),
        schedule: schedule.clone(),
        e,
        f,
        blocks: block_provider,
    })
}

impl ClosedLoopOperators {
    /// Operators with a constant internal model and the controller's own gain.
    pub fn frozen(plant: &PlantRealization, controller: &ControllerRealization, exo: Option<&ExoRealization>) -> Result<Self> {
        let im = controller.im.clone();
        let mut schedule = GainSchedule::default();
        schedule.breakpoints.push(crate::scheduler::Breakpoint {
            t: 0.0,
            gain: controller.gain(),
            omega_hat: im.omega_hat.clone(),
            abscissa: f64::NAN,
        });
        schedule.finalize();
        assemble_closed_loop(plant, controller, &schedule, Arc::new(move |_| im.clone()), exo)
    }

    /// Controller realization in force at time t. Before the first
    /// breakpoint the first gain is used.
    pub fn controller_at(&self, t: f64) -> ControllerRealization {
        let im = (self.blocks)(t);
        match self.schedule.gain_at(t).or(self.schedule.breakpoints.first().map(|b| &b.gain)) {
            Some(k) => self.controller.with_block_and_gain(im, k),
            None => {
                let k = self.controller.gain();
                self.controller.with_block_and_gain(im, &k)
            }
        }
    }

    pub fn at(&self, t: f64) -> ClosedLoopMatrices {
        closed_loop_matrices(&self.plant, &self.controller_at(t), &self.e, &self.f)
    }

    pub fn dim(&self) -> usize {
        self.plant.n() + self.controller.dim()
    }
}

/// Spectrum of the closed loop with frozen parameters.
pub fn limit_closed_loop_check(plant: &PlantRealization, controller: &ControllerRealization) -> Result<SpectrumReport> {
    let e = DMatrix::zeros(plant.n(), 0);
    let f = DMatrix::zeros(plant.p(), 0);
    spectrum(&closed_loop_matrices(plant, controller, &e, &f).a_e)
}

/// ‖Q_e A_e(t) Q_e⁻¹ − T(t)‖_F for the coordinate change
/// (x, z₀, x̂) ↦ (z₀, x, x̂ − x).
pub fn qe_similarity_residual(ops: &ClosedLoopOperators, t: f64) -> f64 {
    let ctrl = ops.controller_at(t);
    let a_e = closed_loop_matrices(&ops.plant, &ctrl, &ops.e, &ops.f).a_e;
    let (n, d0) = (ops.plant.n(), ctrl.im.dim());
    let i_n = DMatrix::<f64>::identity(n, n);
    let i_d = DMatrix::<f64>::identity(d0, d0);
    let z_nd = DMatrix::<f64>::zeros(n, d0);
    let z_dn = DMatrix::<f64>::zeros(d0, n);
    let z_nn = DMatrix::<f64>::zeros(n, n);
    let neg_i = -&i_n;
    let q = block(&[&[&z_dn, &i_d, &z_dn], &[&i_n, &z_nd, &z_nn], &[&neg_i, &z_nd, &i_n]]);
    let q_inv = block(&[&[&z_nd, &i_n, &z_nn], &[&i_d, &z_dn, &z_dn], &[&z_nd, &i_n, &i_n]]);
    let transformed = &q * a_e * q_inv;

    let p = &ops.plant;
    let (g1, g2) = (&ctrl.im.g1, &ctrl.im.g2);
    let (k1, k2) = (&ctrl.k1, &ctrl.k2);
    let t11 = g1 + g2 * &p.d * k1;
    let t12 = g2 * (&p.c + &p.d * k2);
    let t13 = g2 * &p.d * k2;
    let t21 = &p.b * k1;
    let t22 = &p.a + &p.b * k2;
    let t23 = &p.b * k2;
    let t33 = &p.a + &ctrl.l * &p.c;
    let target = block(&[&[&t11, &t12, &t13], &[&t21, &t22, &t23], &[&z_nd, &z_nn, &t33]]);
    (transformed - target).norm()
}

/// Σ with A_eΣ + B_e = ΣS from resolvent columns on the eigenvectors of S.
pub fn regulator_sigma(ops: &ClosedLoopMatrices, exo: &ExoRealization) -> Result<DMatrix<f64>> {
    let dim = ops.a_e.nrows();
    let q = exo.q();
    let mut sigma = DMatrix::zeros(dim, q);
    let resolvent_apply = |lambda: Complex<f64>, rhs: DVector<Complex<f64>>| -> Result<DVector<Complex<f64>>> {
        let mut m = to_complex(&(-&ops.a_e));
        for i in 0..dim {
            m[(i, i)] += lambda;
        }
        m.lu().solve(&rhs).ok_or(Error::Singular("λI − A_e on the exosystem spectrum"))
    };
    let b_c = to_complex(&ops.b_e);
    let mut phi = DVector::from_element(q, Complex::new(0.0, 0.0));
    phi[0] = Complex::new(1.0, 0.0);
    let col0 = resolvent_apply(Complex::new(0.0, 0.0), &b_c * &phi)?;
    sigma.set_column(0, &col0.map(|z| z.re));
    for k in 0..(q - 1) / 2 {
        let (c, s) = (1 + 2 * k, 2 + 2 * k);
        let w = exo.s[(s, c)];
        let mut phi = DVector::from_element(q, Complex::new(0.0, 0.0));
        phi[c] = Complex::new(1.0, 0.0);
        phi[s] = Complex::new(0.0, -1.0);
        let psi = resolvent_apply(Complex::new(0.0, w), &b_c * &phi)?;
        // Σ(e_c − i e_s) = ψ.
        sigma.set_column(c, &psi.map(|z| z.re));
        sigma.set_column(s, &psi.map(|z| -z.im));
    }
    Ok(sigma)
}

/// ‖C_eΣ + D_e‖ together with the regulator-equation residual ‖A_eΣ + B_e − ΣS‖.
pub fn internal_model_identity(ops: &ClosedLoopMatrices, exo: &ExoRealization) -> Result<(f64, f64)> {
    let sigma = regulator_sigma(ops, exo)?;
    let output = (&ops.c_e * &sigma + &ops.d_e).norm();
    let equation = (&ops.a_e * &sigma + &ops.b_e - &sigma * &exo.s).norm();
    Ok((output, equation))
}

/// Supplies y_ref(t), disturbances and optionally a state reference.
pub trait ReferenceSource {
    fn reference(&self, t: f64) -> DVector<f64>;
    fn disturbance(&self, _t: f64) -> Option<DVector<f64>> {
        None
    }
    fn state_reference(&self, _t: f64) -> Option<DVector<f64>> {
        None
    }
}

impl ReferenceSource for SignalModel {
    fn reference(&self, t: f64) -> DVector<f64> {
        self.eval_reference(t)
    }
    fn disturbance(&self, t: f64) -> Option<DVector<f64>> {
        (self.nd() > 0).then(|| self.eval_disturbance(t))
    }
}

/// Where the internal model gets its frequencies from.
#[derive(Debug, Clone)]
pub enum FrequencySource {
    Frozen(Vec<f64>),
    Adaptive {
        driver: Box<EstimatorDriver>,
        /// Signal seen by the estimator.
        measured: SignalModel,
    },
}

impl FrequencySource {
    fn current(&self) -> Result<Vec<f64>> {
        match self {
            FrequencySource::Frozen(w) => Ok(w.clone()),
            FrequencySource::Adaptive { driver, .. } => Ok(driver.frequencies()?.values),
        }
    }

    fn advance(&mut self, t: f64, dt: f64) -> Result<()> {
        if let FrequencySource::Adaptive { driver, measured } = self {
            driver.advance(measured, t, dt)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Keep a full state snapshot every `snapshot_stride` steps (0: never).
    pub snapshot_stride: usize,
    /// Abort once ‖x_e‖ exceeds blowup_factor·max(‖x_e(0)‖, 1).
    pub blowup_factor: f64,
    /// Record â and η₀ each step.
    pub record_estimator: bool,
}

impl SimulationConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        SimulationConfig {
            dt,
            horizon,
            snapshot_stride: 0,
            blowup_factor: 1e6,
            record_estimator: false,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub t: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    pub omega_hat: Vec<Vec<f64>>,
    pub errors: Vec<DVector<f64>>,
    pub xnorm: Vec<f64>,
    pub gain_epoch: Vec<usize>,
    pub snapshots: Vec<(f64, DVector<f64>)>,
    /// ‖x − x_ref‖ when the reference source provides a state reference.
    pub state_error: Vec<f64>,
    /// Physical coefficient estimates, when recorded.
    pub a_hat: Vec<DVector<f64>>,
    /// Regressor samples η̂₀ per output channel, when recorded.
    pub eta0: Vec<Vec<DVector<f64>>>,
    pub schedule: GainSchedule,
    pub aborted: Option<Abort>,
    pub final_state: DVector<f64>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn error_norms(&self) -> Vec<f64> {
        self.errors.iter().map(|e| e.norm()).collect()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Per-component (peak, sup over the final window).
    pub fn component_peaks(&self, window_fraction: f64) -> Vec<(f64, f64)> {
        let p = self.errors.first().map_or(0, |e| e.len());
        let t0 = self.horizon() * (1.0 - window_fraction);
        (0..p)
            .map(|i| {
                let mut peak = 0.0_f64;
                let mut tail = 0.0_f64;
                for (t, e) in self.times.iter().zip(&self.errors) {
                    peak = peak.max(e[i].abs());
                    if *t >= t0 {
                        tail = tail.max(e[i].abs());
                    }
                }
                (peak, tail)
            })
            .collect()
    }

    /// CSV with columns t, omega_hat_k, e_i, xnorm, gain_epoch.
    pub fn to_csv(&self) -> String {
        let q0 = self.omega_hat.first().map_or(0, |w| w.len());
        let p = self.errors.first().map_or(0, |e| e.len());
        let mut out = String::from("t");
        for k in 1..=q0 {
            let _ = write!(out, ",omega_hat_{k}");
        }
        for i in 1..=p {
            let _ = write!(out, ",e_{i}");
        }
        out.push_str(",xnorm,gain_epoch\n");
        for j in 0..self.times.len() {
            let _ = write!(out, "{}", fmt17(self.times[j]));
            for w in &self.omega_hat[j] {
                let _ = write!(out, ",{}", fmt17(*w));
            }
            for e in self.errors[j].iter() {
                let _ = write!(out, ",{}", fmt17(*e));
            }
            let _ = writeln!(out, ",{},{}", fmt17(self.xnorm[j]), self.gain_epoch[j]);
        }
        out
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Inputs of one closed-loop run.
pub struct ClosedLoopRun<'a> {
    /// The plant being controlled (may differ from the controller's model).
    pub plant: &'a PlantRealization,
    /// Supplies L and the nominal model; its block and gain are replaced.
    pub controller: &'a ControllerRealization,
    pub scheduler: Scheduler,
    pub frequencies: FrequencySource,
    pub reference: &'a dyn ReferenceSource,
    pub x0: DVector<f64>,
    pub z0: DVector<f64>,
}

pub fn simulate(run: ClosedLoopRun<'_>, config: &SimulationConfig) -> Result<SimulationTrace> {
    if !(config.dt > 0.0) || !(config.horizon > 0.0) {
        return Err(Error::Argument(format!(
            "dt and horizon must be positive, got {} and {}",
            config.dt, config.horizon
        )));
    }
    let ClosedLoopRun {
        plant,
        controller,
        mut scheduler,
        mut frequencies,
        reference,
        x0,
        z0,
    } = run;
    let model = &controller.model;
    let (n, p) = (plant.n(), plant.p());
    if x0.len() != n || z0.len() != controller.dim() {
        return Err(Error::Dimension {
            context: "simulate",
            detail: format!(
                "x0 has {} entries (plant {n}), z0 has {} (controller {})",
                x0.len(),
                z0.len(),
                controller.dim()
            ),
        });
    }
    let check_every = ((scheduler.config.h / config.dt).round() as usize).max(1);
    let steps = config.steps();

    let mut omega = frequencies.current()?;
    let mut im = build_internal_model(&omega, p);
    scheduler.step(&im, model, 0.0)?;
    let mut xe = DVector::zeros(n + controller.dim());
    xe.rows_mut(0, n).copy_from(&x0);
    xe.rows_mut(n, controller.dim()).copy_from(&z0);
    let bound = config.blowup_factor * xe.norm().max(1.0);

    let mut trace = SimulationTrace::default();
    let record = |trace: &mut SimulationTrace,
                  t: f64,
                  xe: &DVector<f64>,
                  omega: &[f64],
                  ctrl: &ControllerRealization,
                  schedule: &GainSchedule,
                  freq: &FrequencySource,
                  step: usize| {
        let x = xe.rows(0, n);
        let z = xe.rows(n, xe.len() - n);
        let u = ctrl.gain() * z;
        let e = &plant.c * x + &plant.d * u - reference.reference(t);
        trace.times.push(t);
        trace.omega_hat.push(omega.to_vec());
        trace.errors.push(e);
        trace.xnorm.push(xe.norm());
        trace.gain_epoch.push(schedule.epoch_at(t).unwrap_or(0));
        if let Some(xr) = reference.state_reference(t) {
            trace.state_error.push((x - xr).norm());
        }
        if config.snapshot_stride > 0 && step.is_multiple_of(config.snapshot_stride) {
            trace.snapshots.push((t, xe.clone()));
        }
        if config.record_estimator {
            if let FrequencySource::Adaptive { driver, .. } = freq {
                trace.a_hat.push(driver.config.physical_coefficients(&driver.state.a_hat));
                trace.eta0.push(driver.state.eta0());
            }
        }
    };

    let gain = scheduler.current_gain().expect("initial gain").clone();
    let mut ctrl = controller.with_block_and_gain(im.clone(), &gain);
    record(&mut trace, 0.0, &xe, &omega, &ctrl, &scheduler.schedule, &frequencies, 0);

    for i in 0..steps {
        let t = i as f64 * config.dt;
        let k = ctrl.gain();
        let g1 = ctrl.g1_cal();
        let g2 = ctrl.g2_cal();
        let bk = &plant.b * &k;
        let dk = &plant.d * &k;
        let field = |s: f64, y: &DVector<f64>| -> DVector<f64> {
            let x = y.rows(0, n);
            let z = y.rows(n, y.len() - n);
            let e = &plant.c * x + &dk * z - reference.reference(s);
            let mut dx = &plant.a * x + &bk * z;
            if let Some(w) = reference.disturbance(s) {
                dx += &plant.bd * w;
            }
            let dz = &g1 * z + &g2 * e;
            let mut out = DVector::zeros(y.len());
            out.rows_mut(0, n).copy_from(&dx);
            out.rows_mut(n, y.len() - n).copy_from(&dz);
            out
        };
        let t_next = (i + 1) as f64 * config.dt;
        match ode_step(field, &xe, t, config.dt) {
            Ok(next) => xe = next,
            Err(Error::Divergence { t }) => {
                trace.aborted = Some(Abort {
                    t,
                    reason: "non-finite closed-loop state".into(),
                });
                break;
            }
            Err(e) => return Err(e),
        }

        frequencies.advance(t, config.dt)?;
        omega = frequencies.current()?;
        im = build_internal_model(&omega, p);
        if (i + 1) % check_every == 0 {
            scheduler.step(&im, model, t_next)?;
        }
        let gain = scheduler.current_gain().expect("gain present");
        ctrl = controller.with_block_and_gain(im.clone(), gain);
        record(&mut trace, t_next, &xe, &omega, &ctrl, &scheduler.schedule, &frequencies, i + 1);

        let norm = xe.norm();
        if !(norm <= bound) {
            trace.aborted = Some(Abort {
                t: t_next,
                reason: format!("‖x_e‖ = {norm:.3e} exceeds the blow-up bound {bound:.3e}"),
            });
            break;
        }
    }
    scheduler.schedule.finalize();
    trace.schedule = scheduler.schedule;
    trace.final_state = xe;
    Ok(trace)
}

/// Least-squares line through (t, ln y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn log_linear_fit(times: &[f64], values: &[f64]) -> Option<LogLinearFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t, b + y));
    let (mt, my) = (st / m, sy / m);
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for (t, y) in &pts {
        stt += (t - mt) * (t - mt);
        sty += (t - mt) * (y - my);
        syy += (y - my) * (y - my);
    }
    if stt == 0.0 {
        return None;
    }
    let slope = sty / stt;
    let r_squared = if syy == 0.0 { 1.0 } else { sty * sty / (stt * syy) };
    Some(LogLinearFit {
        slope,
        intercept: my - slope * mt,
        r_squared,
    })
}

/// Upper envelope max_{j ≥ i} y_j.
pub fn upper_envelope(values: &[f64]) -> Vec<f64> {
    let mut env = values.to_vec();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    env
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBound {
    /// sup ‖e(t)‖ over the final window.
    pub sup_final: f64,
    /// Decay fit of the error envelope from its peak on; None for a zero trace.
    pub fit: Option<LogLinearFit>,
}

pub fn asymptotic_error_bound_check(trace: &SimulationTrace, window_fraction: f64) -> Result<ErrorBound> {
    if trace.is_empty() || !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "need a nonempty trace and a window fraction in (0, 1], got {} samples and {window_fraction}",
            trace.len()
        )));
    }
    let norms = trace.error_norms();
    let t_end = trace.horizon();
    let t0 = trace.times[0] + (t_end - trace.times[0]) * (1.0 - window_fraction);
    let window: Vec<f64> = trace
        .times
        .iter()
        .zip(&norms)
        .filter(|(t, _)| **t >= t0)
        .map(|(_, v)| *v)
        .collect();
    if window.is_empty() {
        return Err(Error::Argument("final window holds no samples".into()));
    }
    let sup_final = window.iter().cloned().fold(0.0, f64::max);
    let env = upper_envelope(&norms);
    let peak = (0..norms.len()).fold(0, |best, i| if norms[i] > norms[best] { i } else { best });
    let fit = if env[peak] > 0.0 {
        log_linear_fit(&trace.times[peak..], &env[peak..])
    } else {
        None
    };
    Ok(ErrorBound { sup_final, fit })
}

/// Entrywise relative perturbation X ↦ X ∘ (1 + δU), U uniform on [−1, 1].
pub fn perturb_plant(plant: &PlantRealization, delta: f64, seed: u64) -> PlantRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bump = |m: &DMatrix<f64>| m.map(|v| v * (1.0 + delta * rng.random_range(-1.0..=1.0)));
    let mut out = plant.clone();
    out.a = bump(&plant.a);
    out.b = bump(&plant.b);
    out.c = bump(&plant.c);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub delta: f64,
    pub abscissa: f64,
    pub final_error: f64,
    pub baseline_error: f64,
    pub error_factor: f64,
    pub aborted: bool,
    pub pass: bool,
}

impl std::fmt::Display for PerturbationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "delta={:.1e} abscissa={:.3e} final_error={:.3e} baseline={:.3e} {}",
            self.delta,
            self.abscissa,
            self.final_error,
            self.baseline_error,
            if self.pass { "pass" } else { "fail" }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmokeConfig {
    pub delta: f64,
    pub seed: u64,
    /// Allowed ratio of perturbed to baseline final-window error.
    pub error_factor: f64,
    pub window_fraction: f64,
}

/// Perturbs (A, B, C), checks the frozen limit closed loop against the
/// perturbed plant and reruns tracking through `rerun`. Passes iff the limit
/// loop stays Hurwitz and the final-window error is within the allowed
/// factor of the baseline.
pub fn perturbation_smoke<F>(
    plant: &PlantRealization,
    limit_controller: &ControllerRealization,
    baseline_error: f64,
    config: SmokeConfig,
    rerun: F,
) -> Result<PerturbationReport>
where
    F: FnOnce(&PlantRealization) -> Result<SimulationTrace>,
{
    let SmokeConfig {
        delta,
        seed,
        error_factor,
        window_fraction,
    } = config;
    let perturbed = if delta == 0.0 {
        plant.clone()
    } else {
        perturb_plant(plant, delta, seed)
    };
    let abscissa = limit_closed_loop_check(&perturbed, limit_controller)?.spectral_abscissa;
    let trace = rerun(&perturbed)?;
    let aborted = trace.aborted.is_some();
    let final_error = if aborted {
        f64::INFINITY
    } else {
        asymptotic_error_bound_check(&trace, window_fraction)?.sup_final
    };
    let pass = abscissa < 0.0 && !aborted && final_error <= error_factor * baseline_error;
    Ok(PerturbationReport {
        delta,
        abscissa,
        final_error,
        baseline_error,
        error_factor,
        aborted,
        pass,
    })
}
