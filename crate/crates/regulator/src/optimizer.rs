//! Online reference optimizer for the diffusion plant: each step picks the
//! reference state closest to a moving Gaussian subject to the open-loop
//! dynamics and the moment constraints.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::closed_loop::{fmt17, ReferenceSource};
use crate::error::{Error, Result};
use crate::exosystem::SignalModel;
use crate::numerics::{expm, ode_step};
use crate::plant::{output_operator, FemGrid, PlantRealization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Gaussian variance parameter δr in metres.
    pub delta_r_m: f64,
    /// Optimization step δt in scaled time.
    pub delta_t: f64,
    /// RK4 steps used for the cross-check Gramian.
    pub gramian_rk4_steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            alpha: 1.0,
            beta: 1.0,
            delta_r_m: 0.0025,
            delta_t: 5e-4,
            gramian_rk4_steps: 64,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta_r_m", self.delta_r_m),
            ("delta_t", self.delta_t),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    path: format!("optimizer.{name}"),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        if self.gramian_rk4_steps == 0 {
            return Err(Error::Config {
                path: "optimizer.gramian_rk4_steps".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Nodal values of exp(−|x − center|² / (0.005·δr)).
pub fn gaussian_target(center: (f64, f64), config: &OptimizerConfig, grid: &FemGrid) -> DVector<f64> {
    let denom = 0.005 * config.delta_r_m;
    grid.interpolate(|r, s| (-((r - center.0).powi(2) + (s - center.1).powi(2)) / denom).exp())
}

/// Rows ∫r·c, ∫s·c, ∫c.
pub fn constraint_operator(grid: &FemGrid) -> DMatrix<f64> {
    let out = output_operator(grid);
    let mut cbar = DMatrix::zeros(3, out.ncols());
    cbar.row_mut(0).copy_from(&out.row(0));
    cbar.row_mut(1).copy_from(&out.row(1));
    cbar.row_mut(2).copy_from(&(out.row(2) + out.row(3)));
    cbar
}

/// ȳ = (y₁, y₂, 4L₀²).
pub fn constraint_target(y1: f64, y2: f64, l0: f64) -> DVector<f64> {
    DVector::from_vec(vec![y1, y2, 4.0 * l0 * l0])
}

/// Components three and four of the reference: ∫Π(r)c and ∫Π(−r)c.
pub fn reference_outputs_34(c_ref: &DVector<f64>, grid: &FemGrid) -> [f64; 2] {
    let out = output_operator(grid);
    [out.row(2).dot(&c_ref.transpose()), out.row(3).dot(&c_ref.transpose())]
}

/// ∫₀^δ e^{As}BBᵀe^{Aᵀs} ds from one exponential of the Van Loan block.
pub fn gramian_van_loan(a: &DMatrix<f64>, b: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&(-a * delta));
    big.view_mut((0, n), (n, n)).copy_from(&(b * b.transpose() * delta));
    big.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * delta));
    let e = expm(&big)?;
    let f12 = e.view((0, n), (n, n));
    let f22 = e.view((n, n), (n, n));
    let w = f22.transpose() * f12;
    Ok((&w + w.transpose()) * 0.5)
}

/// The same Gramian from RK4 on W' = AW + WAᵀ + BBᵀ, W(0) = 0.
pub fn gramian_rk4(a: &DMatrix<f64>, b: &DMatrix<f64>, delta: f64, steps: usize) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let bbt = b * b.transpose();
    let h = delta / steps as f64;
    let mut w = DVector::zeros(n * n);
    for i in 0..steps {
        w = ode_step(
            |_, v: &DVector<f64>| {
                let m = DMatrix::from_column_slice(n, n, v.as_slice());
                let d = a * &m + &m * a.transpose() + &bbt;
                DVector::from_column_slice(d.as_slice())
            },
            &w,
            i as f64 * h,
            h,
        )?;
    }
    let w = DMatrix::from_column_slice(n, n, w.as_slice());
    Ok((&w + w.transpose()) * 0.5)
}
#[allow(clippy::excessive_precision)]
const GAUSS8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_48),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_48),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

/// The Gramian by 8-point Gauss–Legendre quadrature of e^{As}BBᵀe^{Aᵀs}.
pub fn gramian_quadrature(a: &DMatrix<f64>, b: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut w = DMatrix::zeros(n, n);
    for (x, wt) in GAUSS8 {
        let s = 0.5 * delta * (x + 1.0);
        let eb = expm(&(a * s))? * b;
        w += &eb * eb.transpose() * (0.5 * delta * wt);
    }
    Ok(w)
}

/// Result of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct KktStep {
    pub c_ref: DVector<f64>,
    /// I_ref at the end of the interval, Bᵀλ₁/2α.
    pub i_ref: DVector<f64>,
    pub lambda1: DVector<f64>,
    pub lambda2: DVector<f64>,
    /// ‖c − T c_prev − Wλ₁/2α‖ / max(‖c‖, 1).
    pub dynamic_residual: f64,
    /// ‖C̄c − ȳ‖ / ‖ȳ‖.
    pub algebraic_residual: f64,
    pub cost: f64,
}

/// Pre-factored optimizer for a fixed plant and step.
#[derive(Debug, Clone)]
pub struct ReferenceOptimizer {
    pub config: OptimizerConfig,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub cbar: DMatrix<f64>,
    /// T(δt).
    pub semigroup: DMatrix<f64>,
    /// ∫₀^δt T(s)BBᵀT*(s) ds.
    pub gramian: DMatrix<f64>,
    kkt: DMatrix<f64>,
    scale: DVector<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ReferenceOptimizer {
    pub fn new(plant: &PlantRealization, grid: &FemGrid, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        let n = plant.n();
        if grid.node_count() != n {
            return Err(Error::Dimension {
                context: "ReferenceOptimizer::new",
                detail: format!("grid has {} nodes, plant {n} states", grid.node_count()),
            });
        }
        let dt = config.delta_t;
        let semigroup = expm(&(&plant.a * dt))?;
        let gramian = gramian_van_loan(&plant.a, &plant.b, dt)?;
        let cbar = constraint_operator(grid);
        let (al, be) = (config.alpha, config.beta);
        let a0 = DMatrix::identity(n, n) / (2.0 * be) + &gramian / (2.0 * al);
        let ct = cbar.transpose() / (2.0 * be);
        let c2 = &cbar / (2.0 * be);
        let cc = &cbar * cbar.transpose() / (2.0 * be);
        let kkt = crate::numerics::block(&[&[&a0, &ct], &[&c2, &cc]]);
        // Symmetric diagonal equilibration.
        let scale = DVector::from_iterator(kkt.nrows(), (0..kkt.nrows()).map(|i| 1.0 / kkt[(i, i)].abs().sqrt()));
        let scaled = DMatrix::from_fn(kkt.nrows(), kkt.ncols(), |i, j| scale[i] * kkt[(i, j)] * scale[j]);
        let svd = scaled.clone().singular_values();
        let cond = svd.max() / svd.min();
        if !(cond < 1e14) {
            return Err(Error::Design(format!("KKT matrix ill-conditioned (condition {cond:.3e})")));
        }
        let lu = scaled.lu();
        Ok(ReferenceOptimizer {
            config,
            a: plant.a.clone(),
            b: plant.b.clone(),
            cbar,
            semigroup,
            gramian,
            kkt,
            scale,
            lu,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    fn solve_kkt(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let solve_scaled = |r: &DVector<f64>| -> Result<DVector<f64>> {
            let rs = r.component_mul(&self.scale);
            let y = self.lu.solve(&rs).ok_or(Error::Singular("KKT matrix of the reference optimizer"))?;
            Ok(y.component_mul(&self.scale))
        };
        let mut x = solve_scaled(rhs)?;
        for _ in 0..2 {
            let r = rhs - &self.kkt * &x;
            if r.norm() <= 1e-15 * rhs.norm() {
                break;
            }
            x += solve_scaled(&r)?;
        }
        Ok(x)
    }

    /// One step from c_prev toward the target ĉ under the constraint ȳ.
    pub fn kkt_step(&self, c_prev: &DVector<f64>, target: &DVector<f64>, ybar: &DVector<f64>) -> Result<KktStep> {
        let n = self.n();
        let (al, be) = (self.config.alpha, self.config.beta);
        let top = target - &self.semigroup * c_prev;
        let bottom = &self.cbar * target - ybar;
        let mut rhs = DVector::zeros(n + 3);
        rhs.rows_mut(0, n).copy_from(&top);
        rhs.rows_mut(n, 3).copy_from(&bottom);
        let lam = self.solve_kkt(&rhs)?;
        let lambda1 = lam.rows(0, n).into_owned();
        let lambda2 = lam.rows(n, 3).into_owned();
        let c_ref = target - (&lambda1 + self.cbar.transpose() * &lambda2) / (2.0 * be);
        let i_ref = self.b.transpose() * &lambda1 / (2.0 * al);
        let wl = &self.gramian * &lambda1;
        let dynamic_residual = (&c_ref - &self.semigroup * c_prev - &wl / (2.0 * al)).norm() / c_ref.norm().max(1.0);
        let algebraic_residual = (&self.cbar * &c_ref - ybar).norm() / ybar.norm().max(f64::MIN_POSITIVE);
        let cost = lambda1.dot(&wl) / (4.0 * al) + be * (&c_ref - target).norm_squared();
        Ok(KktStep {
            c_ref,
            i_ref,
            lambda1,
            lambda2,
            dynamic_residual,
            algebraic_residual,
            cost,
        })
    }

    /// I_ref(t̄ − s) = BᵀT*(s)λ₁/2α for s in [0, δt].
    pub fn input_at(&self, lambda1: &DVector<f64>, s: f64) -> Result<DVector<f64>> {
        Ok(self.b.transpose() * expm(&(self.a.transpose() * s))? * lambda1 / (2.0 * self.config.alpha))
    }

    /// Gramian cross-check: relative gap between the Van Loan and RK4 routes.
    pub fn gramian_agreement(&self) -> Result<f64> {
        let alt = gramian_rk4(&self.a, &self.b, self.config.delta_t, self.config.gramian_rk4_steps)?;
        Ok((&self.gramian - &alt).norm() / self.gramian.norm())
    }
}

/// First-order optimality of a step, assembled independently of the KKT
/// solve: ‖∇_c‖ + ‖dynamic residual‖ + ‖algebraic residual‖, with the
/// Gramian taken from Gauss–Legendre quadrature.
pub fn stationarity(
    opt: &ReferenceOptimizer,
    step: &KktStep,
    c_prev: &DVector<f64>,
    target: &DVector<f64>,
    ybar: &DVector<f64>,
) -> Result<f64> {
    let (al, be) = (opt.config.alpha, opt.config.beta);
    let t = expm(&(&opt.a * opt.config.delta_t))?;
    let w = gramian_quadrature(&opt.a, &opt.b, opt.config.delta_t)?;
    let grad_c = (&step.c_ref - target) * (2.0 * be) + &step.lambda1 + opt.cbar.transpose() * &step.lambda2;
    let dynamic = &step.c_ref - t * c_prev - w * &step.lambda1 / (2.0 * al);
    let algebraic = &opt.cbar * &step.c_ref - ybar;
    Ok(grad_c.norm() + dynamic.norm() + algebraic.norm())
}

/// Optimizer output sampled every δt, usable as the closed-loop reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrace {
    pub delta_t: f64,
    pub times: Vec<f64>,
    pub c_ref: Vec<DVector<f64>>,
    pub i_ref: Vec<DVector<f64>>,
    pub y_ref: Vec<[f64; 4]>,
    pub mass: Vec<f64>,
    pub dynamic_residual: Vec<f64>,
    pub algebraic_residual: Vec<f64>,
    pub cost: Vec<f64>,
    /// Signal for the first two components, evaluated analytically.
    pub center: SignalModel,
}

impl ReferenceTrace {
    fn index(&self, t: f64) -> usize {
        ((t / self.delta_t).round().max(0.0) as usize).min(self.times.len() - 1)
    }

    /// CSV with columns t, y_ref_1..4, mass, dynamic_residual, algebraic_residual.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,y_ref_1,y_ref_2,y_ref_3,y_ref_4,mass,dynamic_residual,algebraic_residual\n");
        for i in 0..self.times.len() {
            let _ = write!(out, "{}", fmt17(self.times[i]));
            for y in self.y_ref[i] {
                let _ = write!(out, ",{}", fmt17(y));
            }
            let _ = writeln!(
                out,
                ",{},{},{}",
                fmt17(self.mass[i]),
                fmt17(self.dynamic_residual[i]),
                fmt17(self.algebraic_residual[i])
            );
        }
        out
    }
}

impl ReferenceSource for ReferenceTrace {
    /// (y₁, y₂) exactly, (y₃, y₄) from the nearest optimizer sample.
    fn reference(&self, t: f64) -> DVector<f64> {
        let y = self.center.eval_reference(t);
        let i = self.index(t);
        DVector::from_vec(vec![y[0], y[1], self.y_ref[i][2], self.y_ref[i][3]])
    }

    fn state_reference(&self, t: f64) -> Option<DVector<f64>> {
        Some(self.c_ref[self.index(t)].clone())
    }
}

/// Runs the optimizer over [0, horizon] from c_ref(0) = c0. The center
/// signal must have two outputs.
pub fn run_reference(
    opt: &ReferenceOptimizer,
    grid: &FemGrid,
    center: &SignalModel,
    c0: DVector<f64>,
    horizon: f64,
) -> Result<ReferenceTrace> {
    if center.p() != 2 {
        return Err(Error::Argument(format!("center signal needs 2 outputs, has {}", center.p())));
    }
    let dt = opt.config.delta_t;
    let steps = (horizon / dt).ceil() as usize + 1;
    let mut trace = ReferenceTrace {
        delta_t: dt,
        times: Vec::with_capacity(steps + 1),
        c_ref: Vec::with_capacity(steps + 1),
        i_ref: Vec::with_capacity(steps + 1),
        y_ref: Vec::with_capacity(steps + 1),
        mass: Vec::with_capacity(steps + 1),
        dynamic_residual: Vec::with_capacity(steps + 1),
        algebraic_residual: Vec::with_capacity(steps + 1),
        cost: Vec::with_capacity(steps + 1),
        center: center.clone(),
    };
    let push = |trace: &mut ReferenceTrace, t: f64, c: DVector<f64>, i_ref: DVector<f64>, dyn_r: f64, alg_r: f64, cost: f64| {
        let y = center.eval_reference(t);
        let [y3, y4] = reference_outputs_34(&c, grid);
        trace.times.push(t);
        trace.y_ref.push([y[0], y[1], y3, y4]);
        trace.mass.push(opt.cbar.row(2).dot(&c.transpose()));
        trace.c_ref.push(c);
        trace.i_ref.push(i_ref);
        trace.dynamic_residual.push(dyn_r);
        trace.algebraic_residual.push(alg_r);
        trace.cost.push(cost);
    };
    let m = opt.b.ncols();
    push(&mut trace, 0.0, c0.clone(), DVector::zeros(m), 0.0, 0.0, 0.0);
    let mut c = c0;
    for i in 1..=steps {
        let t = i as f64 * dt;
        let y = center.eval_reference(t);
        let target = gaussian_target((y[0], y[1]), &opt.config, grid);
        let ybar = constraint_target(y[0], y[1], grid.l0);
        let step = opt.kkt_step(&c, &target, &ybar)?;
        c = step.c_ref.clone();
        push(
            &mut trace,
            t,
            step.c_ref,
            step.i_ref,
            step.dynamic_residual,
            step.algebraic_residual,
            step.cost,
        );
    }
    Ok(trace)
}
