use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regulator::exosystem::SignalModel;
use regulator::numerics::expm;
use regulator::optimizer::*;
use regulator::plant::{assemble_diffusion_plant, output_operator, FemGrid, PlantRealization, SourceProfile};
use regulator::Error;

const L0: f64 = 0.01;
const DBAR: f64 = 1e-9 * 5e5;

fn desk() -> (FemGrid, PlantRealization) {
    let grid = FemGrid::new(L0, 8).unwrap();
    let plant = assemble_diffusion_plant(&grid, DBAR, 1.0, 1.0, &SourceProfile::default_set(L0)).unwrap();
    (grid, plant)
}

/// Simpson rule on e^{As}BBᵀe^{Aᵀs} over [0, δ].
fn simpson_gramian(a: &DMatrix<f64>, b: &DMatrix<f64>, delta: f64, intervals: usize) -> DMatrix<f64> {
    let h = delta / intervals as f64;
    let step = expm(&(a * h)).unwrap();
    let mut t = DMatrix::identity(a.nrows(), a.nrows());
    let mut acc = DMatrix::zeros(a.nrows(), a.nrows());
    for k in 0..=intervals {
        let w = if k == 0 || k == intervals { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let tb = &t * b;
        acc += &tb * tb.transpose() * w;
        t = &step * t;
    }
    acc * (h / 3.0)
}

#[test]
fn gaussian_target_shape() {
    let (grid, _) = desk();
    let cfg = OptimizerConfig::default();
    let c = gaussian_target((0.0, 0.0), &cfg, &grid);
    let centre = grid.nodes.iter().position(|&(r, s)| r.abs() < 1e-15 && s.abs() < 1e-15).unwrap();
    assert_eq!(c[centre], 1.0);
    assert!(c.iter().all(|&v| v > 0.0 && v <= 1.0));
    for i in 0..grid.node_count() {
        for j in 0..grid.node_count() {
            let (a, b) = (grid.nodes[i], grid.nodes[j]);
            if ((a.0 * a.0 + a.1 * a.1) - (b.0 * b.0 + b.1 * b.1)).abs() < 1e-18 {
                assert!((c[i] - c[j]).abs() < 1e-14);
            }
        }
    }
    // Off-centre target peaks on the node nearest its centre.
    let c = gaussian_target((0.0025, -0.005), &cfg, &grid);
    let (imax, _) = c.argmax();
    assert!((grid.nodes[imax].0 - 0.0025).abs() < 1e-12 && (grid.nodes[imax].1 + 0.005).abs() < 1e-12);
}

#[test]
fn centre_of_the_two_tone_signal() {
    let y = SignalModel::two_tone_center().eval_reference(0.0);
    assert_eq!((y[0], y[1]), (0.0, 0.01));
    let t = constraint_target(y[0], y[1], L0);
    assert_eq!(t.as_slice(), &[0.0, 0.01, 4.0 * L0 * L0]);
}

#[test]
fn constraint_rows() {
    let (grid, _) = desk();
    let cbar = constraint_operator(&grid);
    assert_eq!(cbar.shape(), (3, 81));
    let ones = DVector::from_element(81, 1.0);
    let y = &cbar * &ones;
    assert!(y[0].abs() < 1e-18 && y[1].abs() < 1e-18);
    assert!((y[2] - 4.0 * L0 * L0).abs() < 1e-17);

    let c = output_operator(&grid);
    assert!((cbar.row(2) - (c.row(2) + c.row(3))).norm() < 1e-18);

    // Moving a nodal spike one node in r shifts the first r-moment by h·mass.
    let idx = |r: f64, s: f64| {
        grid.nodes
            .iter()
            .position(|&(a, b)| (a - r).abs() < 1e-12 && (b - s).abs() < 1e-12)
            .unwrap()
    };
    let h = grid.h;
    let spike = |i: usize| {
        let mut v = DVector::zeros(81);
        v[i] = 1.0;
        v
    };
    let (a, b) = (spike(idx(0.0, h)), spike(idx(h, h)));
    let (ma, mb) = (&cbar * &a, &cbar * &b);
    assert!((mb[0] - ma[0] - h * ma[2]).abs() < 1e-18);
    assert!((mb[1] - ma[1]).abs() < 1e-18);
    assert!((mb[2] - ma[2]).abs() < 1e-18);
}

#[test]
fn heaviside_components() {
    let (grid, _) = desk();
    let ones = DVector::from_element(81, 1.0);
    let [y3, y4] = reference_outputs_34(&ones, &grid);
    assert!((y3 - 2.0 * L0 * L0).abs() < 1e-17 && (y4 - 2.0 * L0 * L0).abs() < 1e-17);
    let odd = grid.interpolate(|r, _| r);
    let [y3, y4] = reference_outputs_34(&odd, &grid);
    assert!((y3 + y4).abs() < 1e-18);
    let c = grid.interpolate(|r, s| 2.0 + (r / L0) + (s / L0).powi(2));
    let [y3, y4] = reference_outputs_34(&c, &grid);
    let mass = constraint_operator(&grid).row(2).dot(&c.transpose());
    assert!((y3 + y4 - mass).abs() < 1e-15 * mass);
}

#[test]
fn gramian_routes_agree() {
    let (_, plant) = desk();
    let cfg = OptimizerConfig::default();
    let vl = gramian_van_loan(&plant.a, &plant.b, cfg.delta_t).unwrap();
    let rk = gramian_rk4(&plant.a, &plant.b, cfg.delta_t, cfg.gramian_rk4_steps).unwrap();
    let gl = gramian_quadrature(&plant.a, &plant.b, cfg.delta_t).unwrap();
    let simpson = simpson_gramian(&plant.a, &plant.b, cfg.delta_t, 64);
    for other in [&rk, &gl, &simpson] {
        assert!((&vl - other).norm() <= 1e-6 * vl.norm());
    }
    assert!((&vl - vl.transpose()).norm() < 1e-12 * vl.norm());

    // Scalar check: ∫₀^δ e^{2as} ds.
    let (a, b) = (DMatrix::from_element(1, 1, -3.0), DMatrix::from_element(1, 1, 1.0));
    let exact = ((-6.0_f64 * 0.4).exp() - 1.0) / -6.0;
    assert!((gramian_van_loan(&a, &b, 0.4).unwrap()[(0, 0)] - exact).abs() < 1e-14);
    assert!((gramian_rk4(&a, &b, 0.4, 200).unwrap()[(0, 0)] - exact).abs() < 1e-10);

    let opt = ReferenceOptimizer::new(&plant, &desk().0, cfg).unwrap();
    assert!(opt.gramian_agreement().unwrap() <= 1e-6);
}

#[test]
fn feasible_target_gives_zero_multipliers() {
    let (grid, plant) = desk();
    let opt = ReferenceOptimizer::new(&plant, &grid, OptimizerConfig::default()).unwrap();
    let ones = DVector::from_element(81, 1.0);
    let ybar = &opt.cbar * &ones;
    let step = opt.kkt_step(&ones, &ones, &ybar).unwrap();
    assert!(step.lambda1.norm() < 1e-10, "{}", step.lambda1.norm());
    // The right-hand side is pure roundoff; the moment rows scale λ₂ up by about 1/h⁴.
    assert!((opt.cbar.transpose() * &step.lambda2).norm() < 1e-10);
    assert!((&step.c_ref - &ones).norm() < 1e-12);
    assert!(step.i_ref.norm() < 1e-12);
}

fn cost(opt: &ReferenceOptimizer, w: &DMatrix<f64>, mu: &DVector<f64>, c: &DVector<f64>, target: &DVector<f64>) -> f64 {
    // Input I = BᵀT*μ costs α·μᵀWμ.
    opt.config.alpha * mu.dot(&(w * mu)) + opt.config.beta * (c - target).norm_squared()
}

#[test]
fn kkt_step_is_locally_optimal() {
    let (grid, plant) = desk();
    let opt = ReferenceOptimizer::new(&plant, &grid, OptimizerConfig::default()).unwrap();
    let center = SignalModel::two_tone_center();
    let c_prev = grid.interpolate(|r, s| 1.0 + 20.0 * r - 15.0 * s);
    let t = 0.013;
    let y = center.eval_reference(t);
    let target = gaussian_target((y[0], y[1]), &opt.config, &grid);
    let ybar = constraint_target(y[0], y[1], L0);
    let step = opt.kkt_step(&c_prev, &target, &ybar).unwrap();
    assert!(step.algebraic_residual <= 1e-8);
    assert!(step.dynamic_residual <= 1e-8);

    let w = simpson_gramian(&plant.a, &plant.b, opt.config.delta_t, 200);
    let mu0 = &step.lambda1 / (2.0 * opt.config.alpha);
    let j0 = cost(&opt, &w, &mu0, &step.c_ref, &target);
    assert!((j0 - step.cost).abs() < 1e-6 * (1.0 + j0));

    // Directions μ with C̄Wμ = 0 keep both constraints.
    let cw = &opt.cbar * &w;
    let svd = cw.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut mu = DVector::from_fn(81, |_, _| rng.random_range(-1.0..1.0));
        for k in 0..3 {
            let v = vt.row(k).transpose();
            mu -= &v * v.dot(&mu);
        }
        assert!((&cw * &mu).norm() < 1e-10 * (&w * &mu).norm().max(1e-300) + 1e-22);
        let dc = &w * &mu;
        let eps = 1e-2 * step.c_ref.norm() / dc.norm();
        for sign in [1.0, -1.0] {
            let m = &mu0 + &mu * (sign * eps);
            let c = &step.c_ref + &dc * (sign * eps);
            let j = cost(&opt, &w, &m, &c, &target);
            assert!(j >= j0 * (1.0 - 1e-9), "{j} < {j0}");
        }
    }
}

#[test]
fn reference_run_holds_mass_and_stationarity() {
    let (grid, plant) = desk();
    let opt = ReferenceOptimizer::new(&plant, &grid, OptimizerConfig::default()).unwrap();
    let center = SignalModel::two_tone_center();
    let c0 = DVector::from_element(81, 1.0);
    let dt = opt.config.delta_t;
    let trace = run_reference(&opt, &grid, &center, c0, 99.5 * dt).unwrap();
    assert_eq!(trace.times.len(), 102);
    let m0 = 4.0 * L0 * L0;
    for (i, m) in trace.mass.iter().enumerate() {
        assert!((m - m0).abs() <= 1e-8 * m0, "step {i}: {m}");
    }
    for i in 1..trace.times.len() {
        assert!(trace.algebraic_residual[i] <= 1e-8 && trace.dynamic_residual[i] <= 1e-8);
        let y = center.eval_reference(trace.times[i]);
        assert_eq!((trace.y_ref[i][0], trace.y_ref[i][1]), (y[0], y[1]));
    }
    // Recompute a few steps and check stationarity from the independent assembly.
    for i in [1, 50, 100] {
        let t = trace.times[i];
        let y = center.eval_reference(t);
        let target = gaussian_target((y[0], y[1]), &opt.config, &grid);
        let ybar = constraint_target(y[0], y[1], L0);
        let step = opt.kkt_step(&trace.c_ref[i - 1], &target, &ybar).unwrap();
        assert_eq!(step.c_ref, trace.c_ref[i]);
        let s = stationarity(&opt, &step, &trace.c_ref[i - 1], &target, &ybar).unwrap();
        assert!(s <= 1e-6 * (1.0 + step.cost), "step {i}: {s}");
    }
    let csv = trace.to_csv();
    assert!(csv.starts_with("t,y_ref_1,y_ref_2,y_ref_3,y_ref_4,mass,dynamic_residual,algebraic_residual\n"));
    assert_eq!(csv.lines().count(), 103);
}

#[test]
fn input_profile_matches_formula() {
    let (grid, plant) = desk();
    let opt = ReferenceOptimizer::new(&plant, &grid, OptimizerConfig::default()).unwrap();
    let lambda = DVector::from_fn(81, |i, _| (i as f64 * 0.37).sin());
    let at0 = opt.input_at(&lambda, 0.0).unwrap();
    assert!((at0 - plant.b.transpose() * &lambda / 2.0).norm() < 1e-14);
}

#[test]
fn invalid_configs() {
    let (grid, plant) = desk();
    for (field, cfg) in [
        ("optimizer.alpha", OptimizerConfig { alpha: 0.0, ..Default::default() }),
        ("optimizer.beta", OptimizerConfig { beta: -1.0, ..Default::default() }),
        ("optimizer.delta_t", OptimizerConfig { delta_t: f64::NAN, ..Default::default() }),
        ("optimizer.gramian_rk4_steps", OptimizerConfig { gramian_rk4_steps: 0, ..Default::default() }),
    ] {
        match cfg.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, field),
            other => panic!("{field}: {other:?}"),
        }
        assert!(ReferenceOptimizer::new(&plant, &grid, cfg).is_err());
    }
    let other = FemGrid::new(L0, 4).unwrap();
    assert!(matches!(
        ReferenceOptimizer::new(&plant, &other, OptimizerConfig::default()),
        Err(Error::Dimension { .. })
    ));
    let opt = ReferenceOptimizer::new(&plant, &grid, OptimizerConfig::default()).unwrap();
    let one = SignalModel::reference(vec![1.0], vec![0.0], vec![vec![1.0]], vec![vec![0.0]]).unwrap();
    assert!(run_reference(&opt, &grid, &one, DVector::zeros(81), 0.01).is_err());
}
