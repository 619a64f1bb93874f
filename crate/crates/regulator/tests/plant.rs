use nalgebra::{Complex, DMatrix, DVector};
use regulator::closed_loop::log_linear_fit;
use regulator::numerics::{complex_rank, expm, ode_step, spectral_abscissa, spectrum};
use regulator::plant::*;
use regulator::Error;

const L0: f64 = 0.01;
// D = 1e-9 m²/s with time measured in units of 5e5 s.
const DBAR: f64 = 1e-9 * 5e5;

fn desk_plant(n: usize) -> (FemGrid, PlantRealization) {
    let grid = FemGrid::new(L0, n).unwrap();
    let plant = assemble_diffusion_plant(&grid, DBAR, 1.0, 1.0, &SourceProfile::default_set(L0)).unwrap();
    (grid, plant)
}

fn sorted_real(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

#[test]
fn grid_layout() {
    let g = FemGrid::new(L0, 15).unwrap();
    assert_eq!(g.node_count(), 256);
    assert_eq!(g.elements.len(), 225);
    assert!((g.h - 2.0 * L0 / 15.0).abs() < 1e-18);
    assert_eq!(g.nodes[0], (-L0, -L0));
    let last = g.nodes[255];
    assert!((last.0 - L0).abs() < 1e-15 && (last.1 - L0).abs() < 1e-15);
    assert!(FemGrid::new(0.0, 4).is_err());
    assert!(FemGrid::new(L0, 0).is_err());
}

#[test]
fn stiffness_and_mass_structure() {
    for n in [4, 15] {
        let g = FemGrid::new(L0, n).unwrap();
        let k = g.stiffness_matrix();
        let m = g.mass_matrix();
        for i in 0..g.node_count() {
            assert!(k.row(i).sum().abs() < 1e-12);
        }
        assert_eq!(k, k.transpose());
        assert_eq!(m, m.transpose());
        // Total mass matrix sums to the domain area.
        assert!((m.sum() - 4.0 * L0 * L0).abs() < 1e-15);
        let ek = sorted_real(&k);
        assert!(ek[0].abs() < 1e-12 && ek[1] > 1e-6, "{:?}", &ek[..3]);
        assert!(sorted_real(&m)[0] > 0.0);
    }
}

#[test]
fn diffusion_spectrum() {
    let (_, p) = desk_plant(8);
    let rep = spectrum(&p.a).unwrap();
    let mut re: Vec<f64> = rep.eigenvalues.iter().map(|z| z.re).collect();
    re.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert!(rep.eigenvalues.iter().all(|z| z.im.abs() < 1e-8 && z.re < 1e-9));
    assert!(re[0].abs() < 1e-9);
    assert!(re[1] < -1e-3);
    assert_eq!(p.a.shape(), (81, 81));
    assert_eq!(p.b.shape(), (81, 4));
    assert_eq!(p.c.shape(), (4, 81));
}

#[test]
fn mass_is_conserved_without_input() {
    let (g, p) = desk_plant(8);
    let mass = g.mass_matrix();
    let ones = DVector::from_element(g.node_count(), 1.0);
    let weights = mass * &ones;
    let mut x = g.interpolate(|r, s| 1.0 + 40.0 * r + 3000.0 * s * s);
    let m0 = weights.dot(&x);
    let dt = 1e-3;
    for i in 0..500 {
        x = ode_step(|_, x| &p.a * x, &x, i as f64 * dt, dt).unwrap();
    }
    assert!((weights.dot(&x) - m0).abs() < 1e-12 * m0.abs());
}

#[test]
fn outputs_of_constant_field() {
    let (g, p) = desk_plant(15);
    let one = DVector::from_element(g.node_count(), 1.0);
    let y = &p.c * &one;
    assert!(y[0].abs() < 1e-18 && y[1].abs() < 1e-18, "{y}");
    assert!((y[2] - 2.0 * L0 * L0).abs() < 1e-16);
    assert!((y[3] - 2.0 * L0 * L0).abs() < 1e-16);

    let mass = g.mass_matrix() * &one;
    let total = p.c.row(2) + p.c.row(3);
    assert!((total.transpose() - mass).norm() < 1e-17);
}

#[test]
fn heaviside_rows_on_even_grid() {
    let g = FemGrid::new(L0, 8).unwrap();
    let c = output_operator(&g);
    let y = &c * g.interpolate(|r, _| r);
    // ∫_{r>0} r = L0² · 2L0 / ... both half-domains: ±2L0 · L0²/2.
    assert!((y[2] - L0.powi(3)).abs() < 1e-18);
    assert!((y[3] + L0.powi(3)).abs() < 1e-18);
    let x = &c * g.interpolate(|r, s| r * s);
    assert!(x[0].abs() < 1e-20 && x[1].abs() < 1e-20);
}

#[test]
fn heat_flow_decays_at_second_eigenvalue() {
    let g = FemGrid::new(L0, 15).unwrap();
    let (_, p) = desk_plant(15);
    let mass = g.mass_matrix();
    // Generalized eigenvalues of (K, M) via the Cholesky factor of M.
    let chol = mass.clone().cholesky().unwrap();
    let linv = chol.l().try_inverse().unwrap();
    let sym = &linv * g.stiffness_matrix() * linv.transpose();
    let lam = sorted_real(&((&sym + sym.transpose()) * 0.5));
    let rate = DBAR * lam[1];
    let exact = DBAR * (std::f64::consts::PI / (2.0 * L0)).powi(2);
    assert!((rate - exact).abs() < 0.2 * exact, "{rate} vs {exact}");

    let x0 = g.interpolate(|r, s| 1.0 + 0.5 * (r / L0) + 0.2 * (s / L0).powi(3));
    let weights = &mass * DVector::from_element(g.node_count(), 1.0);
    let mean = weights.dot(&x0) / weights.sum();
    let dt = 0.02;
    let step = expm(&(&p.a * dt)).unwrap();
    let (mut x, mut ts, mut dev) = (x0.clone(), vec![], vec![]);
    for i in 1..=30 {
        x = &step * x;
        ts.push(i as f64 * dt);
        dev.push((x.add_scalar(-mean)).norm());
    }
    let fit = log_linear_fit(&ts[5..], &dev[5..]).unwrap();
    assert!(fit.r_squared > 0.99);
    assert!((-fit.slope - rate).abs() < 0.2 * rate, "fit {} vs {rate}", -fit.slope);
}

#[test]
fn refinement_changes_outputs_little() {
    let f = |r: f64, s: f64| 1.0 + 0.5 * (r / L0) + 0.3 * (s / L0) + 0.2 * (r * s / (L0 * L0));
    let outputs = |n: usize, t: f64| {
        let (g, p) = desk_plant(n);
        let x = expm(&(&p.a * t)).unwrap() * g.interpolate(f);
        &p.c * x
    };
    let (coarse, fine) = (outputs(8, 1.0), outputs(15, 1.0));
    assert!((&coarse - &fine).norm() < 0.05 * fine.norm(), "{coarse} vs {fine}");
    let (coarse, fine) = (outputs(8, 0.05), outputs(15, 0.05));
    for k in 0..4 {
        assert!((coarse[k] - fine[k]).abs() < 0.05 * fine[k].abs(), "output {k}: {coarse} vs {fine}");
    }
}

#[test]
fn negative_diffusion_rejected() {
    let g = FemGrid::new(L0, 4).unwrap();
    assert!(matches!(assemble_diffusion_plant(&g, 0.0, 1.0, 1.0, &[]), Err(Error::Argument(_))));
}

#[test]
fn input_matrix_has_full_column_rank() {
    let (_, p) = desk_plant(15);
    let sv = p.b.clone().singular_values();
    assert!(sv.min() > 1e-6 * sv.max(), "{sv}");
}

fn pencil_rank_full(p: &PlantRealization, w: f64) -> bool {
    let (n, m, q) = (p.n(), p.m(), p.p());
    let mut pen = DMatrix::<Complex<f64>>::zeros(n + q, n + m);
    for i in 0..n {
        for j in 0..n {
            pen[(i, j)] = Complex::new(p.a[(i, j)], if i == j { -w } else { 0.0 });
        }
        for j in 0..m {
            pen[(i, n + j)] = Complex::new(p.b[(i, j)], 0.0);
        }
    }
    for i in 0..q {
        for j in 0..n {
            pen[(n + i, j)] = Complex::new(p.c[(i, j)], 0.0);
        }
        for j in 0..m {
            pen[(n + i, n + j)] = Complex::new(p.d[(i, j)], 0.0);
        }
    }
    complex_rank(&pen, 1e-9) == (n + q).min(n + m)
}

#[test]
fn random_fixtures() {
    for seed in 0..30u64 {
        let (n, m, q) = (2 + seed as usize % 9, 1 + seed as usize % 3, 1 + seed as usize % 3);
        let p = random_stable_plant(n, m, q, seed).unwrap();
        let again = random_stable_plant(n, m, q, seed).unwrap();
        assert_eq!(p, again);
        assert!(spectral_abscissa(&p.a).unwrap() < 0.0);
        for w in [0.0, 1.0, 2.0] {
            assert!(pencil_rank_full(&p, w), "seed {seed} at {w}");
            assert!(p.no_transmission_zero(w));
        }
    }
    assert!(random_stable_plant(0, 1, 1, 0).is_err());
}

#[test]
fn transmission_zero_detected() {
    // G(s) = (s² + 4)/((s + 1)(s + 2)(s + 3)) has zeros at ±2i.
    let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -6.0, -11.0, -6.0]);
    let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    let c = DMatrix::from_row_slice(1, 3, &[4.0, 0.0, 1.0]);
    let p = PlantRealization::new(a, b, DMatrix::zeros(3, 0), c, DMatrix::zeros(1, 1)).unwrap();
    assert!(!p.no_transmission_zero(2.0));
    assert!(p.no_transmission_zero(1.0));
    assert!(p.no_transmission_zero(0.0));

    // With feedthrough D = CA⁻¹B the DC gain vanishes.
    let mut q = random_stable_plant(3, 1, 1, 5).unwrap();
    q.d = &q.c * q.a.clone().try_inverse().unwrap() * &q.b;
    assert!(!q.no_transmission_zero(0.0));
    assert!(!pencil_rank_full(&q, 0.0));
    assert!(q.no_transmission_zero(1.0));
}

#[test]
fn bundle_round_trip() {
    let p = random_stable_plant(5, 2, 3, 21).unwrap();
    let back = PlantRealization::from_bundle(&p.to_bundle()).unwrap();
    assert_eq!(back.a, p.a);
    assert_eq!(back.b, p.b);
    assert_eq!(back.bd, p.bd);
    assert_eq!(back.c, p.c);
    assert_eq!(back.d, p.d);

    let mut with_d = p.clone();
    with_d.bd = DMatrix::from_fn(5, 2, |i, j| (i as f64 - j as f64) / 3.0);
    let back = PlantRealization::from_bundle(&with_d.to_bundle()).unwrap();
    assert_eq!(back.bd, with_d.bd);

    assert!(PlantRealization::from_bundle("A 2 2\n1 2\n").is_err());
    assert!(matches!(PlantRealization::from_bundle("A 1 1\nx\n"), Err(Error::Config { .. })));
}

#[test]
fn dimension_checks() {
    let err = PlantRealization::new(
        DMatrix::zeros(2, 2),
        DMatrix::zeros(3, 1),
        DMatrix::zeros(2, 0),
        DMatrix::zeros(1, 2),
        DMatrix::zeros(1, 1),
    );
    assert!(matches!(err, Err(Error::Dimension { .. })));
    let mut a = DMatrix::zeros(1, 1);
    a[(0, 0)] = f64::NAN;
    let err = PlantRealization::new(a, DMatrix::zeros(1, 1), DMatrix::zeros(1, 0), DMatrix::zeros(1, 1), DMatrix::zeros(1, 1));
    assert!(err.is_err());
}
