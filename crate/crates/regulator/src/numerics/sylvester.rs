use nalgebra::{DMatrix, DVector};

use super::spectrum::{diagonal_blocks, real_schur, RealSchur};
use crate::error::{Error, Result};

/// Reusable solver for `A1·H − H·A2 = C` once both Schur forms are known.
#[derive(Debug, Clone)]
pub struct SylvesterSolver {
    s1: RealSchur,
    s2: RealSchur,
    b1: Vec<(usize, usize)>,
    b2: Vec<(usize, usize)>,
    a1: DMatrix<f64>,
    a2: DMatrix<f64>,
}

impl SylvesterSolver {
    pub fn new(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> Result<Self> {
        Self::from_schur(a1, a2, real_schur(a1)?, real_schur(a2)?, true)
    }

    /// `check_overlap` may be false when the caller already knows the
    /// spectra are separated (e.g. A1 = Aᵀ, A2 = −A with A Hurwitz).
    pub(crate) fn from_schur(
        a1: &DMatrix<f64>,
        a2: &DMatrix<f64>,
        s1: RealSchur,
        s2: RealSchur,
        check_overlap: bool,
    ) -> Result<Self> {
        if check_overlap {
            let scale = 1.0 + a1.norm().max(a2.norm());
            for z1 in &s1.eigenvalues {
                for z2 in &s2.eigenvalues {
                    if (z1 - z2).norm() <= 1e-11 * scale {
                        return Err(Error::SpectralOverlap { re: z1.re, im: z1.im });
                    }
                }
            }
        }
        let b1 = diagonal_blocks(&s1.t);
        let b2 = diagonal_blocks(&s2.t);
        Ok(SylvesterSolver {
            s1,
            s2,
            b1,
            b2,
            a1: a1.clone(),
            a2: a2.clone(),
        })
    }

    pub fn solve(&self, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (m, k) = (self.a1.nrows(), self.a2.nrows());
        if c.nrows() != m || c.ncols() != k {
            return Err(Error::Dimension {
                context: "sylvester_solve",
                detail: format!("C is {}x{}, expected {}x{}", c.nrows(), c.ncols(), m, k),
            });
        }
        let mut h = self.solve_once(c)?;
        let tol = 1e-13 * (1.0 + c.norm());
        for _ in 0..3 {
            let res = c - (&self.a1 * &h - &h * &self.a2);
            if res.norm() <= tol.max(1e-15 * h.norm() * (self.a1.norm() + self.a2.norm())) {
                break;
            }
            h += self.solve_once(&res)?;
        }
        Ok(h)
    }

    fn solve_once(&self, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let t = &self.s1.t;
        let s = &self.s2.t;
        let f = self.s1.u.transpose() * c * &self.s2.u;
        let m = t.nrows();
        let mut y = DMatrix::<f64>::zeros(m, s.nrows());
        for &(j0, cj) in &self.b2 {
            let mut rhs = f.columns(j0, cj).into_owned();
            if j0 > 0 {
                rhs += y.columns(0, j0) * s.view((0, j0), (j0, cj));
            }
            for &(k0, rk) in self.b1.iter().rev() {
                let mut r = rhs.rows(k0, rk).into_owned();
                let tail = k0 + rk;
                if tail < m {
                    r -= t.view((k0, tail), (rk, m - tail)) * y.view((tail, j0), (m - tail, cj));
                }
                let x = small_sylvester(
                    &t.view((k0, k0), (rk, rk)).into_owned(),
                    &s.view((j0, j0), (cj, cj)).into_owned(),
                    &r,
                )?;
                y.view_mut((k0, j0), (rk, cj)).copy_from(&x);
            }
        }
        Ok(&self.s1.u * y * self.s2.u.transpose())
    }
}

/// Solves `T X − X S = R` for blocks of size at most 2 by vectorization.
fn small_sylvester(t: &DMatrix<f64>, s: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rk, cj) = (t.nrows(), s.nrows());
    let dim = rk * cj;
    let mut k = DMatrix::<f64>::zeros(dim, dim);
    for col in 0..cj {
        for i in 0..rk {
            for l in 0..rk {
                k[(col * rk + i, col * rk + l)] += t[(i, l)];
            }
        }
        for other in 0..cj {
            for i in 0..rk {
                k[(col * rk + i, other * rk + i)] -= s[(other, col)];
            }
        }
    }
    let rhs = DVector::from_column_slice(r.as_slice());
    let scale = t.norm() + s.norm() + f64::MIN_POSITIVE;
    let lu = k.clone().full_piv_lu();
    let sol = lu.solve(&rhs).ok_or(Error::Singular("sylvester block"))?;
    let sv = k.singular_values();
    if sv.min() <= 1e-14 * scale {
        let z = t[(0, 0)];
        return Err(Error::SpectralOverlap { re: z, im: 0.0 });
    }
    Ok(DMatrix::from_column_slice(rk, cj, sol.as_slice()))
}

/// Solves `A1·H − H·A2 = C`.
pub fn sylvester_solve(a1: &DMatrix<f64>, a2: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    for (mat, name) in [(a1, "A1"), (a2, "A2")] {
        if mat.nrows() != mat.ncols() {
            return Err(Error::Dimension {
                context: "sylvester_solve",
                detail: format!("{name} must be square"),
            });
        }
    }
    SylvesterSolver::new(a1, a2)?.solve(c)
}

/// Solves `P·A + Aᵀ·P = −Q` for Hurwitz `A`.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension {
            context: "lyapunov_solve",
            detail: format!("A is {}x{}, Q is {}x{}", a.nrows(), a.ncols(), q.nrows(), q.ncols()),
        });
    }
    let sa = real_schur(a)?;
    if let Some(z) = sa.eigenvalues.iter().filter(|z| z.re >= 0.0).max_by(|x, y| x.re.total_cmp(&y.re)) {
        return Err(Error::NotHurwitz { re: z.re, im: z.im });
    }
    let at = a.transpose();
    let sat = real_schur(&at)?;
    let neg = RealSchur {
        t: -&sa.t,
        u: sa.u.clone(),
        eigenvalues: sa.eigenvalues.iter().map(|z| -z).collect(),
    };
    let solver = SylvesterSolver::from_schur(&at, &(-a), sat, neg, false)?;
    let p = solver.solve(&(-q))?;
    Ok((&p + p.transpose()) * 0.5)
}

/// Frobenius residual of `A1·H − H·A2 − C` divided by the natural scale.
pub fn sylvester_relative_residual(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    c: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> f64 {
    let res = a1 * h - h * a2 - c;
    res.norm() / (h.norm() * (a1.norm() + a2.norm()) + c.norm()).max(f64::MIN_POSITIVE)
}

pub fn lyapunov_relative_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let res = p * a + a.transpose() * p + q;
    res.norm() / (2.0 * p.norm() * a.norm() + q.norm()).max(f64::MIN_POSITIVE)
}
