//! Adaptive observer for the unknown frequency coefficients of the reference.
//!
//! The observer may run in normalized time τ = ρt and normalized amplitude
//! y/Y. With ρ = Y = 1 it is exactly the classical form; other scalings keep
//! the adaptation rates of all coefficients comparable when the frequencies
//! are large.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exosystem::{coefficients_from_frequencies, frequencies_from_coefficients, FrequencyEstimate, SignalModel};
use crate::numerics::{lyapunov_solve, ode_step, spectrum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub q0: usize,
    /// Coefficients b₀ … b_{2q0−1} of the Hurwitz polynomial p₀.
    pub b: Vec<f64>,
    pub k0: f64,
    pub gamma: f64,
    /// ρ: one unit of observer time equals 1/ρ units of signal time.
    #[serde(default = "one")]
    pub time_scale: f64,
    /// Y: the measurement is divided by this amplitude.
    #[serde(default = "one")]
    pub amplitude_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl EstimatorConfig {
    pub fn new(q0: usize, b: Vec<f64>, k0: f64, gamma: f64) -> Result<Self> {
        let cfg = EstimatorConfig {
            q0,
            b,
            k0,
            gamma,
            time_scale: 1.0,
            amplitude_scale: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_scaling(mut self, time_scale: f64, amplitude_scale: f64) -> Result<Self> {
        self.time_scale = time_scale;
        self.amplitude_scale = amplitude_scale;
        self.validate()?;
        Ok(self)
    }

    /// Coefficients of (λ + 1)^{2q0}, low degree first, without the leading 1.
    pub fn default_b(q0: usize) -> Vec<f64> {
        let n = 2 * q0;
        let mut c = vec![1.0];
        for _ in 0..n {
            let mut next = vec![0.0; c.len() + 1];
            for (i, v) in c.iter().enumerate() {
                next[i] += v;
                next[i + 1] += v;
            }
            c = next;
        }
        c.truncate(n);
        c
    }

    /// Sets k₀ to `factor` times the filter-gain bound at a prior frequency
    /// bound (given in signal time units).
    pub fn k0_from_prior(mut self, prior_frequencies: &[f64], factor: f64) -> Result<Self> {
        let a = self.normalized_coefficients(prior_frequencies)?;
        self.k0 = factor * min_filter_gain(&a, &self)?;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if self.q0 == 0 {
            return bad("q0 must be at least 1");
        }
        if self.b.len() != 2 * self.q0 {
            return bad("b must have 2q0 entries");
        }
        if !(self.k0 > 0.0) || !(self.gamma > 0.0) {
            return bad("k0 and gamma must be positive");
        }
        if !(self.time_scale > 0.0) || !(self.amplitude_scale > 0.0) {
            return bad("scales must be positive");
        }
        if !spectrum(&companion(&self.b))?.is_hurwitz() {
            return bad("p0 with coefficients b is not Hurwitz");
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        2 * self.q0 + 1
    }

    /// Coefficients in observer units for frequencies in signal units.
    pub fn normalized_coefficients(&self, frequencies: &[f64]) -> Result<DVector<f64>> {
        let scaled: Vec<f64> = frequencies.iter().map(|w| w / self.time_scale).collect();
        coefficients_from_frequencies(&scaled)
    }

    /// Converts observer-unit coefficients to signal units.
    pub fn physical_coefficients(&self, a_norm: &DVector<f64>) -> DVector<f64> {
        let q0 = self.q0;
        DVector::from_iterator(
            q0,
            (0..q0).map(|i| a_norm[i] * self.time_scale.powi(2 * (q0 - i) as i32)),
        )
    }
}

/// Companion matrix of λ^{2q0} + b_{2q0−1}λ^{2q0−1} + … + b₀.
pub fn companion(b: &[f64]) -> DMatrix<f64> {
    let n = b.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -b[j];
    }
    a
}

/// Bottom row b̃ (length 2q0+1) for coefficient vector `a`.
pub fn bottom_row(a: &DVector<f64>, config: &EstimatorConfig) -> DVector<f64> {
    let q0 = config.q0;
    let b = &config.b;
    let last = b[2 * q0 - 1];
    let mut bt = DVector::zeros(2 * q0 + 1);
    bt[0] = -b[0] * last;
    for i in 1..=q0 {
        bt[2 * i - 1] = a[i - 1] + b[2 * i - 2] - last * b[2 * i - 1];
    }
    for i in 1..q0 {
        bt[2 * i] = b[2 * i - 1] - last * b[2 * i];
    }
    bt[2 * q0] = last;
    bt
}

pub fn build_s_tilde(a: &DVector<f64>, config: &EstimatorConfig) -> DMatrix<f64> {
    let q0 = config.q0;
    let q = 2 * q0 + 1;
    let mut s = DMatrix::zeros(q, q);
    for i in 0..2 * q0 - 1 {
        s[(i, i + 1)] = 1.0;
    }
    for j in 0..2 * q0 {
        s[(2 * q0 - 1, j)] = -config.b[j];
    }
    s[(2 * q0 - 1, 2 * q0)] = 1.0;
    let bt = bottom_row(a, config);
    for j in 0..q {
        s[(q - 1, j)] = bt[j];
    }
    s
}

pub fn build_s_hat(a_hat: &DVector<f64>, config: &EstimatorConfig) -> DMatrix<f64> {
    build_s_tilde(a_hat, config)
}

/// Lyapunov matrix P₀ with P₀A₀ + A₀ᵀP₀ = −I for the companion of p₀.
pub fn p0_matrix(config: &EstimatorConfig) -> Result<DMatrix<f64>> {
    let n = 2 * config.q0;
    lyapunov_solve(&companion(&config.b), &DMatrix::identity(n, n))
}

/// Right-hand side of the filter-gain condition.
pub fn min_filter_gain(a: &DVector<f64>, config: &EstimatorConfig) -> Result<f64> {
    let p0 = p0_matrix(config)?;
    let n = 2 * config.q0;
    let bt = bottom_row(a, config);
    let col = p0.column(n - 1).norm();
    let bvec = bt.rows(0, n).norm();
    Ok(bt[n] + 2.0 * col * bvec)
}

/// θ = b₀y + b₁y' + … + b_{2q0−1}y^{(2q0−1)} + y^{(2q0)} in observer units.
pub fn measurement_theta(model: &SignalModel, config: &EstimatorConfig, t: f64) -> Result<DVector<f64>> {
    let q0 = config.q0;
    let rho = config.time_scale;
    let mut th = model.eval_reference_derivative(t, 2 * q0)? / rho.powi(2 * q0 as i32);
    for j in 0..2 * q0 {
        th += model.eval_reference_derivative(t, j)? * (config.b[j] / rho.powi(j as i32));
    }
    Ok(th / config.amplitude_scale)
}

/// The exact trajectory η̃ the observer reconstructs (observer units).
pub fn true_eta(model: &SignalModel, config: &EstimatorConfig, t: f64) -> Result<Vec<DVector<f64>>> {
    let q0 = config.q0;
    let (rho, y) = (config.time_scale, config.amplitude_scale);
    let th = measurement_theta(model, config, t)?;
    let mut ders = Vec::with_capacity(2 * q0);
    for j in 0..2 * q0 {
        ders.push(model.eval_reference_derivative(t, j)? / (rho.powi(j as i32) * y));
    }
    Ok((0..model.p())
        .map(|k| {
            DVector::from_iterator(2 * q0 + 1, ders.iter().map(|d| d[k]).chain(std::iter::once(th[k])))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    /// One block of length 2q0+1 per output; the last entry is θ̂_k.
    pub eta_hat: Vec<DVector<f64>>,
    /// â in observer units.
    pub a_hat: DVector<f64>,
    pub time_scale: f64,
}

impl EstimatorState {
    /// η̂ = 0 and â from an initial frequency guess in signal units.
    pub fn from_guess(config: &EstimatorConfig, p: usize, guess: &[f64]) -> Result<Self> {
        if guess.len() != config.q0 {
            return Err(Error::Argument("initial guess must have q0 entries".into()));
        }
        Ok(EstimatorState {
            eta_hat: vec![DVector::zeros(config.q()); p],
            a_hat: config.normalized_coefficients(guess)?,
            time_scale: config.time_scale,
        })
    }

    pub fn p(&self) -> usize {
        self.eta_hat.len()
    }

    /// The regressor blocks η̂_{0,k}: entries 2, 4, …, 2q0 (one-based).
    pub fn eta0(&self) -> Vec<DVector<f64>> {
        let q0 = self.a_hat.len();
        self.eta_hat
            .iter()
            .map(|e| DVector::from_iterator(q0, (0..q0).map(|i| e[2 * i + 1])))
            .collect()
    }

    fn pack(&self) -> DVector<f64> {
        let q = self.eta_hat.first().map_or(0, |e| e.len());
        let mut x = DVector::zeros(self.p() * q + self.a_hat.len());
        for (k, e) in self.eta_hat.iter().enumerate() {
            x.rows_mut(k * q, q).copy_from(e);
        }
        let off = self.p() * q;
        x.rows_mut(off, self.a_hat.len()).copy_from(&self.a_hat);
        x
    }

    fn unpack(&self, x: &DVector<f64>) -> Self {
        let q = self.eta_hat.first().map_or(0, |e| e.len());
        let p = self.p();
        EstimatorState {
            eta_hat: (0..p).map(|k| x.rows(k * q, q).into_owned()).collect(),
            a_hat: x.rows(p * q, self.a_hat.len()).into_owned(),
            time_scale: self.time_scale,
        }
    }
}

/// Observer vector field in signal time for a packed state.
fn observer_field(x: &DVector<f64>, theta: &DVector<f64>, config: &EstimatorConfig, p: usize) -> DVector<f64> {
    let q0 = config.q0;
    let q = 2 * q0 + 1;
    let a = x.rows(p * q, q0).into_owned();
    let s = build_s_hat(&a, config);
    let mut dx = DVector::zeros(x.len());
    for k in 0..p {
        let eta = x.rows(k * q, q);
        let innovation = theta[k] - eta[q - 1];
        let mut d = &s * eta;
        d[q - 1] += config.k0 * innovation;
        dx.rows_mut(k * q, q).copy_from(&d);
        for i in 0..q0 {
            dx[p * q + i] += innovation * eta[2 * i + 1] / config.gamma;
        }
    }
    dx * config.time_scale
}

/// One RK4 step with θ held at the given value.
pub fn observer_step(
    state: &EstimatorState,
    theta: &DVector<f64>,
    config: &EstimatorConfig,
    dt: f64,
) -> Result<EstimatorState> {
    let p = state.p();
    let x = ode_step(|_, x| observer_field(x, theta, config, p), &state.pack(), 0.0, dt)?;
    Ok(state.unpack(&x))
}

/// One RK4 step with θ evaluated at every stage time.
pub fn observer_step_with<F>(
    state: &EstimatorState,
    config: &EstimatorConfig,
    t: f64,
    dt: f64,
    mut theta: F,
) -> Result<EstimatorState>
where
    F: FnMut(f64) -> DVector<f64>,
{
    let p = state.p();
    let x = ode_step(|s, x| observer_field(x, &theta(s), config, p), &state.pack(), t, dt)?;
    Ok(state.unpack(&x))
}

pub fn estimate_frequencies(state: &EstimatorState) -> Result<FrequencyEstimate> {
    let mut est = frequencies_from_coefficients(&state.a_hat)?;
    for w in &mut est.values {
        *w *= state.time_scale;
    }
    Ok(est)
}

/// Smallest eigenvalue of Σ_k ∫ η̂_{0,k}η̂_{0,k}ᵀ over all windows of the
/// given length (trapezoidal quadrature, end point interpolated).
pub fn persistent_excitation_margin(samples: &[(f64, Vec<DVector<f64>>)], window: f64) -> Result<f64> {
    if samples.len() < 2 || !(window > 0.0) {
        return Err(Error::Argument("need at least two samples and a positive window".into()));
    }
    let span = samples[samples.len() - 1].0 - samples[0].0;
    if window > span * (1.0 + 1e-12) {
        return Err(Error::Argument(format!("window {window} longer than trace span {span}")));
    }
    let dim = samples[0].1.first().map_or(0, |v| v.len());
    let outer = |blocks: &Vec<DVector<f64>>| {
        let mut m = DMatrix::zeros(dim, dim);
        for v in blocks {
            m += v * v.transpose();
        }
        m
    };
    let mut prefix = Vec::with_capacity(samples.len());
    prefix.push(DMatrix::zeros(dim, dim));
    let mut prev = outer(&samples[0].1);
    for w in samples.windows(2) {
        let cur = outer(&w[1].1);
        let inc = (&prev + &cur) * (0.5 * (w[1].0 - w[0].0));
        let last = prefix.last().unwrap().clone();
        prefix.push(last + inc);
        prev = cur;
    }
    let mut best = f64::INFINITY;
    let mut j = 1;
    let tol = 1e-9 * window;
    for i in 0..samples.len() {
        let end = samples[i].0 + window;
        if j <= i {
            j = i + 1;
        }
        while j < samples.len() && samples[j].0 < end - tol {
            j += 1;
        }
        if j >= samples.len() {
            break;
        }
        let (t0, t1) = (samples[j - 1].0, samples[j].0);
        let frac = if t1 > t0 { ((end - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 1.0 };
        let upper = &prefix[j - 1] + (&prefix[j] - &prefix[j - 1]) * frac;
        let m = upper - &prefix[i];
        let ev = m.symmetric_eigenvalues().min();
        best = best.min(ev);
    }
    if best.is_infinite() {
        return Err(Error::Argument("no complete window in trace".into()));
    }
    Ok(best.max(0.0))
}

/// Drives an estimator over a shared time grid, with substeps and optional
/// measurement noise.
#[derive(Debug, Clone)]
pub struct EstimatorDriver {
    pub config: EstimatorConfig,
    pub state: EstimatorState,
    pub substeps: usize,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl EstimatorDriver {
    pub fn new(config: EstimatorConfig, state: EstimatorState, substeps: usize) -> Self {
        EstimatorDriver {
            config,
            state,
            substeps: substeps.max(1),
            noise: None,
        }
    }

    /// Adds Gaussian noise of the given standard deviation (observer units)
    /// to θ, held constant over each substep.
    pub fn with_noise(mut self, std_dev: f64, seed: u64) -> Result<Self> {
        if std_dev > 0.0 {
            let dist = Normal::new(0.0, std_dev).map_err(|e| Error::Argument(e.to_string()))?;
            self.noise = Some((dist, ChaCha8Rng::seed_from_u64(seed)));
        }
        Ok(self)
    }

    pub fn advance(&mut self, model: &SignalModel, t: f64, dt: f64) -> Result<()> {
        let h = dt / self.substeps as f64;
        for s in 0..self.substeps {
            let ts = t + s as f64 * h;
            let offset = match &mut self.noise {
                Some((dist, rng)) => {
                    DVector::from_iterator(model.p(), (0..model.p()).map(|_| dist.sample(rng)))
                }
                None => DVector::zeros(model.p()),
            };
            let cfg = &self.config;
            let mut err = None;
            let next = observer_step_with(&self.state, cfg, ts, h, |tt| match measurement_theta(model, cfg, tt) {
                Ok(th) => th + &offset,
                Err(e) => {
                    err = Some(e);
                    DVector::zeros(model.p())
                }
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            self.state = next;
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Result<FrequencyEstimate> {
        estimate_frequencies(&self.state)
    }
}
