use nalgebra::{Complex, DMatrix};

use super::linalg::{min_singular_ratio_complex, spd_inverse};
use super::spectrum::spectrum;
use super::sylvester::lyapunov_solve;
use crate::error::{Error, Result};

/// Stabilizing solution of the continuous algebraic Riccati equation.
#[derive(Debug, Clone)]
pub struct AreSolution {
    /// Π with AᵀΠ + ΠA − ΠBR⁻¹BᵀΠ + Q = 0.
    pub pi: DMatrix<f64>,
    /// K = −R⁻¹BᵀΠ, so that A + BK is Hurwitz.
    pub gain: DMatrix<f64>,
    pub iterations: usize,
    /// Frobenius norm of the Riccati residual.
    pub residual: f64,
    pub closed_loop_abscissa: f64,
}

const MAX_NEWTON: usize = 80;

pub fn are_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    Ok(are_solve_full(a, b, q, r, None)?.pi)
}

/// LQR state-feedback gain `K` (u = Kx) for the given weights.
pub fn lqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(are_solve_full(a, b, q, r, None)?.gain)
}

pub fn riccati_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    pi: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let rinv = spd_inverse(r)?;
    Ok(a.transpose() * pi + pi * a - pi * b * rinv * b.transpose() * pi + q)
}

/// Newton–Kleinman iteration, optionally seeded with a stabilizing gain.
pub fn are_solve_full(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    seed: Option<&DMatrix<f64>>,
) -> Result<AreSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension {
            context: "are_solve",
            detail: format!(
                "A {:?}, B {:?}, Q {:?}, R {:?}",
                a.shape(),
                b.shape(),
                q.shape(),
                r.shape()
            ),
        });
    }
    let rinv = spd_inverse(r)?;
    let k0 = match seed {
        Some(k) => k.clone(),
        None => initial_stabilizer(a, b, q, r)?,
    };
    newton_kleinman(a, b, q, r, &rinv, k0)
}

fn newton_kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    rinv: &DMatrix<f64>,
    mut k: DMatrix<f64>,
) -> Result<AreSolution> {
    let brt = rinv * b.transpose();
    let mut pi_old: Option<DMatrix<f64>> = None;
    let mut iterations = 0;
    let mut pi = DMatrix::zeros(a.nrows(), a.nrows());
    for it in 1..=MAX_NEWTON {
        iterations = it;
        let ak = a + b * &k;
        let qk = q + k.transpose() * r * &k;
        pi = match lyapunov_solve(&ak, &qk) {
            Ok(p) => p,
            Err(Error::NotHurwitz { re, im }) => {
                return Err(Error::Design(format!(
                    "Newton-Kleinman iterate lost stability (eigenvalue {re:.3e}{im:+.3e}i)"
                )))
            }
            Err(e) => return Err(e),
        };
        k = -&brt * &pi;
        if let Some(prev) = &pi_old {
            let change = (&pi - prev).norm();
            if change <= 1e-13 * pi.norm().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        pi_old = Some(pi.clone());
    }
    let res = a.transpose() * &pi + &pi * a - &pi * b * &brt * &pi + q;
    let residual = res.norm();
    let scale = q.norm() + 2.0 * a.norm() * pi.norm() + pi.norm().powi(2) * (b * &brt).norm();
    if !(residual <= 1e-8 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::NoConvergence {
            context: "are_solve",
            residual,
            iterations,
        });
    }
    let closed_loop_abscissa = spectrum(&(a + b * &k))?.spectral_abscissa;
    if closed_loop_abscissa >= 0.0 {
        return Err(Error::Design(format!(
            "Riccati closed loop not Hurwitz (abscissa {closed_loop_abscissa:.3e})"
        )));
    }
    Ok(AreSolution {
        pi,
        gain: k,
        iterations,
        residual,
        closed_loop_abscissa,
    })
}

/// PBH test: every eigenvalue with nonnegative real part must be controllable.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Option<Complex<f64>>> {
    let n = a.nrows();
    let spec = spectrum(a)?;
    let scale = a.norm().max(1.0);
    let bn = b.norm().max(f64::MIN_POSITIVE);
    for z in spec.eigenvalues.iter().filter(|z| z.re >= -1e-10 * scale) {
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        for i in 0..n {
            for j in 0..n {
                pencil[(i, j)] = Complex::new(-a[(i, j)], 0.0);
            }
            pencil[(i, i)] += z;
            for j in 0..b.ncols() {
                pencil[(i, n + j)] = Complex::new(b[(i, j)] * scale / bn, 0.0);
            }
        }
        if min_singular_ratio_complex(&pencil) < 1e-10 {
            return Ok(Some(*z));
        }
    }
    Ok(None)
}

/// Finds K with A + BK Hurwitz by continuation in a stabilizing shift.
pub fn initial_stabilizer(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    let abscissa = spectrum(a)?.spectral_abscissa;
    let zero = DMatrix::zeros(m, n);
    if abscissa < -1e-12 * a.norm().max(1.0) {
        return Ok(zero);
    }
    if let Some(z) = is_stabilizable(a, b)? {
        return Err(Error::Design(format!(
            "pair is not stabilizable: uncontrollable eigenvalue {:.6e}{:+.6e}i",
            z.re, z.im
        )));
    }
    let rinv = spd_inverse(r)?;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut shift = abscissa + 1.0 + 0.1 * a.norm();
    let mut k = zero;
    let mut step = shift;
    for _ in 0..200 {
        let shifted = a - &eye * shift;
        k = newton_kleinman(&shifted, b, q, r, &rinv, k)?.gain;
        if shift == 0.0 {
            return Ok(k);
        }
        loop {
            let next = (shift - step).max(0.0);
            let cl = a - &eye * next + b * &k;
            if spectrum(&cl)?.spectral_abscissa < 0.0 {
                shift = next;
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < 1e-10 * (1.0 + shift) {
                return Err(Error::Design("stabilizer continuation stalled".into()));
            }
        }
    }
    Err(Error::Design("stabilizer continuation exceeded step budget".into()))
}
