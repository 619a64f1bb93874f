//! Online gain selection for the time-varying internal model.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::internal_model::InternalModelBlock;
use crate::numerics::{are_solve_full, block, lqr, spectrum, sylvester_solve};
use crate::plant::PlantRealization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    Riccati,
    Sylvester,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Re-check period h.
    pub h: f64,
    /// Stability-margin shift β₀ ≥ 0 of the Riccati design.
    pub beta0: f64,
    /// Riccati weights Q = riccati_q·I, R = riccati_r·I.
    pub riccati_q: f64,
    pub riccati_r: f64,
    pub mode: GainMode,
    /// Shift added to G₁ in the Sylvester design.
    pub sylvester_shift: f64,
    /// LQR weights Q₀ = sylvester_q0·I, R₀ = sylvester_r0·I for K₁.
    pub sylvester_q0: f64,
    pub sylvester_r0: f64,
    /// LQR weights for the plant stabilizer K₂₁.
    pub k21_q: f64,
    pub k21_r: f64,
    /// A gain is kept while abscissa(A_e0 + B_e0K) < −stability_floor.
    pub stability_floor: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            h: 0.01,
            beta0: 0.0,
            riccati_q: 1.0,
            riccati_r: 1.0,
            mode: GainMode::Riccati,
            sylvester_shift: 10.0,
            sylvester_q0: 100.0,
            sylvester_r0: 1.0,
            k21_q: 1.0,
            k21_r: 1.0,
            stability_floor: 1e-4,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("h", self.h),
            ("riccati_q", self.riccati_q),
            ("riccati_r", self.riccati_r),
            ("sylvester_q0", self.sylvester_q0),
            ("sylvester_r0", self.sylvester_r0),
            ("k21_q", self.k21_q),
            ("k21_r", self.k21_r),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config {
                    path: format!("scheduler.{name}"),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        if !(self.beta0 >= 0.0) || !(self.stability_floor >= 0.0) {
            return Err(Error::Config {
                path: "scheduler".into(),
                message: "beta0 and stability_floor must be nonnegative".into(),
            });
        }
        Ok(())
    }
}

/// A_e0 = [[G₁, G₂C], [0, A]] and B_e0 = [G₂D; B].
pub fn stacked_pair(im: &InternalModelBlock, plant: &PlantRealization) -> (DMatrix<f64>, DMatrix<f64>) {
    let g2c = &im.g2 * &plant.c;
    let zero = DMatrix::zeros(plant.n(), im.dim());
    let a = block(&[&[&im.g1, &g2c], &[&zero, &plant.a]]);
    let g2d = &im.g2 * &plant.d;
    let b = block(&[&[&g2d], &[&plant.b]]);
    (a, b)
}

/// K = −R⁻¹B_e0ᵀΠ from the Riccati equation of (A_e0 + β₀I, B_e0).
pub fn riccati_gain(a_e0: &DMatrix<f64>, b_e0: &DMatrix<f64>, config: &SchedulerConfig) -> Result<DMatrix<f64>> {
    let n = a_e0.nrows();
    let m = b_e0.ncols();
    let shifted = a_e0 + DMatrix::identity(n, n) * config.beta0;
    let sol = are_solve_full(
        &shifted,
        b_e0,
        &(DMatrix::identity(n, n) * config.riccati_q),
        &(DMatrix::identity(m, m) * config.riccati_r),
        None,
    )?;
    Ok(sol.gain)
}

/// Plant stabilizer K₂₁ used by the Sylvester design.
pub fn design_k21(plant: &PlantRealization, config: &SchedulerConfig) -> Result<DMatrix<f64>> {
    let (n, m) = (plant.n(), plant.m());
    lqr(
        &plant.a,
        &plant.b,
        &(DMatrix::identity(n, n) * config.k21_q),
        &(DMatrix::identity(m, m) * config.k21_r),
    )
}

/// K = [K₁, K₂₁ + K₁H] with G₁H = H(A+BK₂₁) + G₂C and K₁ an LQR gain for
/// (G₁ + shift·I, HB).
pub fn sylvester_gain(
    im: &InternalModelBlock,
    plant: &PlantRealization,
    k21: &DMatrix<f64>,
    config: &SchedulerConfig,
) -> Result<DMatrix<f64>> {
    let acl = &plant.a + &plant.b * k21;
    let h = sylvester_solve(&im.g1, &acl, &(&im.g2 * &plant.c)).map_err(|e| match e {
        Error::SpectralOverlap { re, im } => Error::Design(format!(
            "K21 does not separate the spectra: shared eigenvalue {re:.3e}{im:+.3e}i"
        )),
        other => other,
    })?;
    let d0 = im.dim();
    let m = plant.m();
    let shifted = &im.g1 + DMatrix::identity(d0, d0) * config.sylvester_shift;
    let k1 = lqr(
        &shifted,
        &(&h * &plant.b),
        &(DMatrix::identity(d0, d0) * config.sylvester_q0),
        &(DMatrix::identity(m, m) * config.sylvester_r0),
    )?;
    let k2 = k21 + &k1 * &h;
    Ok(block(&[&[&k1, &k2]]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Breakpoint {
    pub t: f64,
    pub gain: DMatrix<f64>,
    pub omega_hat: Vec<f64>,
    /// abscissa(A_e0(t) + B_e0K) when the gain was created.
    pub abscissa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incident {
    pub t: f64,
    pub cause: String,
    pub abscissa: f64,
}

impl fmt::Display for Incident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={:.6} cause=\"{}\" abscissa={:.6e}", self.t, self.cause, self.abscissa)
    }
}

/// Piecewise-constant, right-continuous gain history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GainSchedule {
    pub breakpoints: Vec<Breakpoint>,
    /// Time of the last breakpoint once the run is finished.
    pub frozen_after: Option<f64>,
    pub incidents: Vec<Incident>,
}

impl GainSchedule {
    pub fn epoch_at(&self, t: f64) -> Option<usize> {
        self.breakpoints.iter().rposition(|b| b.t <= t)
    }

    pub fn gain_at(&self, t: f64) -> Option<&DMatrix<f64>> {
        self.epoch_at(t).map(|i| &self.breakpoints[i].gain)
    }

    pub fn current(&self) -> Option<&Breakpoint> {
        self.breakpoints.last()
    }

    pub fn finalize(&mut self) {
        self.frozen_after = self.breakpoints.last().map(|b| b.t);
    }

    pub fn incident_log(&self) -> String {
        self.incidents.iter().map(|i| format!("{i}\n")).collect()
    }
}

/// Owns the schedule and the constant pieces of the selected design.
#[derive(Debug, Clone)]
pub struct Scheduler {
    pub config: SchedulerConfig,
    pub k21: Option<DMatrix<f64>>,
    pub schedule: GainSchedule,
}

impl Scheduler {
    pub fn new(plant: &PlantRealization, config: SchedulerConfig) -> Result<Self> {
        config.validate()?;
        let k21 = match config.mode {
            GainMode::Sylvester => Some(design_k21(plant, &config)?),
            GainMode::Riccati => None,
        };
        Ok(Scheduler {
            config,
            k21,
            schedule: GainSchedule::default(),
        })
    }

    pub fn design(&self, im: &InternalModelBlock, plant: &PlantRealization) -> Result<DMatrix<f64>> {
        match self.config.mode {
            GainMode::Riccati => {
                let (a, b) = stacked_pair(im, plant);
                riccati_gain(&a, &b, &self.config)
            }
            GainMode::Sylvester => sylvester_gain(im, plant, self.k21.as_ref().expect("K21 designed"), &self.config),
        }
    }

    pub fn current_gain(&self) -> Option<&DMatrix<f64>> {
        self.schedule.current().map(|b| &b.gain)
    }

    /// Step-2/3 check at time `t`; returns true when a new gain was adopted.
    pub fn step(&mut self, im: &InternalModelBlock, plant: &PlantRealization, t: f64) -> Result<bool> {
        let (a, b) = stacked_pair(im, plant);
        let current_abscissa = match self.current_gain() {
            Some(k) => spectrum(&(&a + &b * k))?.spectral_abscissa,
            None => f64::INFINITY,
        };
        if current_abscissa < -self.config.stability_floor {
            return Ok(false);
        }
        let have_gain = self.current_gain().is_some();
        if im.degenerate && have_gain {
            self.schedule.incidents.push(Incident {
                t,
                cause: format!("degenerate frequency estimates {:?}; gain held", im.omega_hat),
                abscissa: current_abscissa,
            });
            return Ok(false);
        }
        let outcome = self.design(im, plant).and_then(|k| {
            let ab = spectrum(&(&a + &b * &k))?.spectral_abscissa;
            if ab < 0.0 {
                Ok((k, ab))
            } else {
                Err(Error::Design(format!("designed gain leaves abscissa {ab:.3e}")))
            }
        });
        match outcome {
            Ok((gain, abscissa)) => {
                self.schedule.breakpoints.push(Breakpoint {
                    t,
                    gain,
                    omega_hat: im.omega_hat.clone(),
                    abscissa,
                });
                Ok(true)
            }
            Err(e) if have_gain => {
                self.schedule.incidents.push(Incident {
                    t,
                    cause: format!("gain design failed ({e}); gain held"),
                    abscissa: current_abscissa,
                });
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }
}

/// Functional form of one scheduler check on an existing schedule.
pub fn schedule_step(
    schedule: GainSchedule,
    im: &InternalModelBlock,
    plant: &PlantRealization,
    config: &SchedulerConfig,
    k21: Option<&DMatrix<f64>>,
    t_now: f64,
) -> Result<GainSchedule> {
    let mut s = Scheduler {
        config: config.clone(),
        k21: match (config.mode, k21) {
            (GainMode::Sylvester, Some(k)) => Some(k.clone()),
            (GainMode::Sylvester, None) => Some(design_k21(plant, config)?),
            (GainMode::Riccati, _) => None,
        },
        schedule,
    };
    s.step(im, plant, t_now)?;
    Ok(s.schedule)
}
