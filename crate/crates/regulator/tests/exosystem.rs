use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regulator::exosystem::*;
use regulator::numerics::spectrum;
use regulator::Error;

fn single(w: f64, cos: f64, sin: f64) -> SignalModel {
    SignalModel::reference(vec![w], vec![0.0], vec![vec![cos]], vec![vec![sin]]).unwrap()
}

#[test]
fn two_tone_values_at_origin() {
    let m = SignalModel::two_tone_center();
    let y = m.eval_reference(0.0);
    assert!(y[0].abs() < 1e-15);
    assert!((y[1] - 0.01).abs() < 1e-15);
    let d = m.eval_reference_derivative(0.0, 1).unwrap();
    assert!((d[0] - 0.4).abs() < 1e-13);
    assert!(d[1].abs() < 1e-13);
}

#[test]
fn single_tone_values() {
    let m = single(1.0, 0.0, 1.0);
    assert!((m.eval_reference(PI / 2.0)[0] - 1.0).abs() < 1e-15);
    let m = single(2.0, 0.0, 1.0);
    let d2 = m.eval_reference_derivative(PI / 4.0, 2).unwrap();
    assert!((d2[0] + 4.0).abs() < 1e-12);
}

#[test]
fn constant_and_zero_signals() {
    let zero = SignalModel {
        frequencies: vec![],
        y0: vec![0.0, 0.0],
        y_cos: vec![],
        y_sin: vec![],
        w0: vec![0.0],
        w_cos: vec![],
        w_sin: vec![],
    };
    zero.validate().unwrap();
    for t in [0.0, 1.3, 10.0] {
        assert_eq!(zero.eval_reference(t).norm(), 0.0);
        assert_eq!(zero.eval_disturbance(t).norm(), 0.0);
    }
    let c = SignalModel::reference(vec![3.0], vec![2.5], vec![vec![1.0]], vec![vec![0.0]])
        .unwrap()
        .with_disturbance(vec![0.7], vec![vec![0.0]], vec![vec![0.0]])
        .unwrap();
    for t in [0.0, 0.4, 7.0] {
        assert!((c.eval_disturbance(t)[0] - 0.7).abs() < 1e-15);
    }
    let konst = SignalModel {
        frequencies: vec![],
        y0: vec![1.5],
        y_cos: vec![],
        y_sin: vec![],
        w0: vec![],
        w_cos: vec![],
        w_sin: vec![],
    };
    for order in 1..3 {
        assert_eq!(konst.eval_reference_derivative(0.3, order).unwrap()[0], 0.0);
    }
}

#[test]
fn disturbance_tone_at_origin() {
    let m = single(2.0, 1.0, 0.0)
        .with_disturbance(vec![0.0, 0.0], vec![vec![0.3, -0.2]], vec![vec![5.0, 5.0]])
        .unwrap();
    let w = m.eval_disturbance(0.0);
    assert!((w[0] - 0.3).abs() < 1e-15 && (w[1] + 0.2).abs() < 1e-15);
}

#[test]
fn derivative_order_out_of_range() {
    let m = SignalModel::two_tone_center();
    assert!(m.eval_reference_derivative(0.0, 4).is_ok());
    assert!(matches!(m.eval_reference_derivative(0.0, 5), Err(Error::Argument(_))));
}

#[test]
fn derivatives_match_finite_differences() {
    let m = SignalModel::two_tone_center();
    let h = 1e-5;
    for &t in &[0.0, 0.013, 0.21, 1.7] {
        let fd1 = (m.eval_reference(t + h) - m.eval_reference(t - h)) / (2.0 * h);
        let fd2 = (m.eval_reference(t + h) - 2.0 * m.eval_reference(t) + m.eval_reference(t - h)) / (h * h);
        let d1 = m.eval_reference_derivative(t, 1).unwrap();
        let d2 = m.eval_reference_derivative(t, 2).unwrap();
        assert!((fd1 - &d1).norm() < 1e-6 * (1.0 + d1.norm()), "t={t}");
        assert!((fd2 - &d2).norm() < 1e-3 * (1.0 + d2.norm()), "t={t}");
    }
}

#[test]
fn coefficient_examples() {
    let a = coefficients_from_frequencies(&[1.0]).unwrap();
    assert_eq!(a.as_slice(), &[-1.0]);
    let a = coefficients_from_frequencies(&[20.0, 60.0]).unwrap();
    assert_eq!(a.as_slice(), &[-1_440_000.0, -4000.0]);
    let a = coefficients_from_frequencies(&[1.0, 2.0]).unwrap();
    assert_eq!(a.as_slice(), &[-4.0, -5.0]);
}

#[test]
fn coefficient_errors() {
    assert!(matches!(coefficients_from_frequencies(&[2.0, 2.0]), Err(Error::Argument(_))));
    assert!(coefficients_from_frequencies(&[0.0]).is_err());
    assert!(coefficients_from_frequencies(&[-1.0]).is_err());
}

#[test]
fn frequencies_examples() {
    let est = frequencies_from_coefficients(&DVector::from_vec(vec![-1.0])).unwrap();
    assert!((est.values[0] - 1.0).abs() < 1e-12 && !est.warning());
    let est = frequencies_from_coefficients(&DVector::from_vec(vec![-1_440_000.0, -4000.0])).unwrap();
    assert!((est.values[0] - 20.0).abs() < 1e-9);
    assert!((est.values[1] - 60.0).abs() < 1e-9);
    assert!(!est.warning());
}

#[test]
fn degenerate_coefficients_are_flagged() {
    // λ² − 1 has real roots ±1.
    let est = frequencies_from_coefficients(&DVector::from_vec(vec![1.0])).unwrap();
    assert!(est.non_oscillatory);
    assert_eq!(est.values.len(), 1);
    // (λ² + 4)²
    let est = frequencies_from_coefficients(&DVector::from_vec(vec![-16.0, -8.0])).unwrap();
    assert!(est.repeated);
    assert_eq!(est.values.len(), 2);
    assert!(est.values[0] <= est.values[1]);
}

#[test]
fn coefficient_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let q0 = 1 + trial % 3;
        let mut w: Vec<f64> = Vec::new();
        while w.len() < q0 {
            let v = rng.random_range(0.1..10.0);
            if w.iter().all(|x: &f64| (x - v).abs() > 0.05) {
                w.push(v);
            }
        }
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let back = frequencies_from_coefficients(&coefficients_from_frequencies(&w).unwrap()).unwrap();
        for (x, y) in w.iter().zip(&back.values) {
            assert!((x - y).abs() < 1e-9, "{w:?} -> {:?}", back.values);
        }
    }
}

#[test]
fn realization_spectrum_and_output() {
    let m = SignalModel::two_tone_center();
    let exo = m.realization();
    assert_eq!(exo.q(), 5);
    let mut ev: Vec<(f64, f64)> = spectrum(&exo.s).unwrap().eigenvalues.iter().map(|z| (z.re, z.im)).collect();
    ev.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let want = [-60.0, -20.0, 0.0, 20.0, 60.0];
    for ((re, im), w) in ev.iter().zip(want) {
        assert!(re.abs() < 1e-10 && (im - w).abs() < 1e-10, "{ev:?}");
    }
    for &t in &[0.0, 0.05, 0.3, 2.0] {
        let y = &exo.y_out * exo.state(t);
        assert!((y - m.eval_reference(t)).norm() < 1e-14);
        assert!((exo.f_matrix() * exo.state(t) + m.eval_reference(t)).norm() < 1e-14);
    }
}

#[test]
fn invalid_models_rejected() {
    assert!(SignalModel::reference(vec![2.0, 1.0], vec![0.0], vec![vec![1.0], vec![1.0]], vec![vec![0.0], vec![0.0]]).is_err());
    assert!(SignalModel::reference(vec![1.0], vec![0.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
    assert!(SignalModel::reference(vec![1.0], vec![0.0], vec![vec![1.0, 2.0]], vec![vec![0.0]]).is_err());
}
