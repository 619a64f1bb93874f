use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

/// Eigenvalues of a square matrix together with the largest real part.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<Complex<f64>>,
    pub spectral_abscissa: f64,
}

impl SpectrumReport {
    fn from_eigenvalues(mut eigenvalues: Vec<Complex<f64>>) -> Self {
        eigenvalues.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
        let spectral_abscissa = eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        SpectrumReport {
            eigenvalues,
            spectral_abscissa,
        }
    }

    /// Eigenvalue with the largest real part.
    pub fn rightmost(&self) -> Option<Complex<f64>> {
        self.eigenvalues.first().copied()
    }

    pub fn is_hurwitz(&self) -> bool {
        self.spectral_abscissa < 0.0
    }
}

/// Real Schur decomposition `A = U T Uᵀ` with `T` quasi upper triangular.
#[derive(Debug, Clone)]
pub struct RealSchur {
    pub t: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
}

impl RealSchur {
    /// Diagonal block boundaries as (start, size) with size 1 or 2.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        diagonal_blocks(&self.t)
    }
}

pub(crate) fn diagonal_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            out.push((i, 2));
            i += 2;
        } else {
            out.push((i, 1));
            i += 1;
        }
    }
    out
}

pub fn spectrum(a: &DMatrix<f64>) -> Result<SpectrumReport> {
    check_square(a, "spectrum")?;
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("spectrum of a matrix with non-finite entries".into()));
    }
    let balanced = balance(a);
    let schur = schur_impl(balanced, false)?;
    Ok(SpectrumReport::from_eigenvalues(schur.eigenvalues))
}

pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    Ok(spectrum(a)?.spectral_abscissa)
}

pub fn real_schur(a: &DMatrix<f64>) -> Result<RealSchur> {
    check_square(a, "real_schur")?;
    schur_impl(a.clone(), true)
}

fn check_square(a: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension {
            context,
            detail: format!("expected square matrix, got {}x{}", a.nrows(), a.ncols()),
        });
    }
    Ok(())
}

/// Diagonal similarity scaling by powers of two so row and column norms match.
pub fn balance(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut b = a.clone();
    let radix = 2.0_f64;
    let sqrdx = radix * radix;
    for _ in 0..100 {
        let mut done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / radix;
            while c < g {
                f *= radix;
                c *= sqrdx;
            }
            g = r * radix;
            while c >= g {
                f /= radix;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let inv = 1.0 / f;
                for j in 0..n {
                    b[(i, j)] *= inv;
                    b[(j, i)] *= f;
                }
            }
        }
        if done {
            break;
        }
    }
    b
}

fn schur_impl(mut h: DMatrix<f64>, want_u: bool) -> Result<RealSchur> {
    let n = h.nrows();
    if n == 0 {
        return Ok(RealSchur {
            t: h,
            u: DMatrix::zeros(0, 0),
            eigenvalues: Vec::new(),
        });
    }
    let mut v = hessenberg_in_place(&mut h, want_u);
    let (d, e) = francis_qr(&mut h, &mut v, want_u)?;
    let eigenvalues = d.iter().zip(&e).map(|(&re, &im)| Complex::new(re, im)).collect();
    Ok(RealSchur {
        t: h,
        u: v,
        eigenvalues,
    })
}

/// Householder reduction to upper Hessenberg form; returns the accumulated
/// orthogonal factor (identity-sized zeros when not requested).
fn hessenberg_in_place(h: &mut DMatrix<f64>, want_u: bool) -> DMatrix<f64> {
    let n = h.nrows();
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[(i, m - 1)].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[(i, m - 1)] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;
        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[(i, j)];
            }
            f /= hh;
            for i in m..=high {
                h[(i, j)] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * h[(i, j)];
            }
            f /= hh;
            for j in m..=high {
                h[(i, j)] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[(m, m - 1)] = scale * g;
    }

    let mut v = if want_u {
        DMatrix::identity(n, n)
    } else {
        DMatrix::zeros(0, 0)
    };
    if want_u {
        for m in (1..high).rev() {
            if h[(m, m - 1)] == 0.0 {
                continue;
            }
            for i in (m + 1)..=high {
                ort[i] = h[(i, m - 1)];
            }
            for j in m..=high {
                let mut g = 0.0;
                for i in m..=high {
                    g += ort[i] * v[(i, j)];
                }
                g = (g / ort[m]) / h[(m, m - 1)];
                for i in m..=high {
                    v[(i, j)] += g * ort[i];
                }
            }
        }
    }
    for j in 0..n {
        for i in (j + 2)..n {
            h[(i, j)] = 0.0;
        }
    }
    v
}

const MAX_SWEEPS_PER_EIGENVALUE: usize = 200;

/// Francis double-shift QR on an upper Hessenberg matrix, reducing it to
/// real Schur form. Returns real and imaginary parts of the eigenvalues.
#[allow(unused_assignments)]
fn francis_qr(
    h: &mut DMatrix<f64>,
    v: &mut DMatrix<f64>,
    want_u: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nn = h.nrows();
    let mut d = vec![0.0; nn];
    let mut e = vec![0.0; nn];
    let low: isize = 0;
    let mut n: isize = nn as isize - 1;
    let eps = f64::EPSILON;
    let mut exshift = 0.0;
    let (mut p, mut q, mut r, mut s, mut z) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let (mut w, mut x, mut y);

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }
    if norm == 0.0 {
        return Ok((d, e));
    }

    let mut iter = 0usize;
    let u = |k: isize| k as usize;
    while n >= low {
        let mut l = n;
        while l > low {
            s = h[(u(l - 1), u(l - 1))].abs() + h[(u(l), u(l))].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(u(l), u(l - 1))].abs() < eps * s {
                h[(u(l), u(l - 1))] = 0.0;
                break;
            }
            l -= 1;
        }

        if l == n {
            h[(u(n), u(n))] += exshift;
            d[u(n)] = h[(u(n), u(n))];
            e[u(n)] = 0.0;
            n -= 1;
            iter = 0;
        } else if l == n - 1 {
            let (nu, n1) = (u(n), u(n - 1));
            w = h[(nu, n1)] * h[(n1, nu)];
            p = (h[(n1, n1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(n1, n1)] += exshift;
            x = h[(nu, nu)];
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                d[n1] = x + z;
                d[nu] = d[n1];
                if z != 0.0 {
                    d[nu] = x - w / z;
                }
                e[n1] = 0.0;
                e[nu] = 0.0;
                x = h[(nu, n1)];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;
                for j in n1..nn {
                    z = h[(n1, j)];
                    h[(n1, j)] = q * z + p * h[(nu, j)];
                    h[(nu, j)] = q * h[(nu, j)] - p * z;
                }
                for i in 0..=nu {
                    z = h[(i, n1)];
                    h[(i, n1)] = q * z + p * h[(i, nu)];
                    h[(i, nu)] = q * h[(i, nu)] - p * z;
                }
                if want_u {
                    for i in 0..nn {
                        z = v[(i, n1)];
                        v[(i, n1)] = q * z + p * v[(i, nu)];
                        v[(i, nu)] = q * v[(i, nu)] - p * z;
                    }
                }
                h[(nu, n1)] = 0.0;
            } else {
                d[n1] = x + p;
                d[nu] = x + p;
                e[n1] = z;
                e[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            let nu = u(n);
            x = h[(nu, nu)];
            y = 0.0;
            w = 0.0;
            if l < n {
                y = h[(nu - 1, nu - 1)];
                w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            }

            if iter == 10 {
                exshift += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }

            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }

            iter += 1;
            if iter > MAX_SWEEPS_PER_EIGENVALUE {
                return Err(Error::EigenNoConvergence { iterations: iter });
            }

            let mut m = n - 2;
            while m >= l {
                let mu = u(m);
                z = h[(mu, mu)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(mu + 1, mu)] + h[(mu, mu + 1)];
                q = h[(mu + 1, mu + 1)] - z - r - s;
                r = h[(mu + 2, mu + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[(mu, mu - 1)].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[(mu - 1, mu - 1)].abs() + z.abs() + h[(mu + 1, mu + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }
            let mu = u(m);

            for i in (mu + 2)..=nu {
                h[(i, i - 2)] = 0.0;
                if i > mu + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            for k in mu..nu {
                let notlast = k != nu - 1;
                if k != mu {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s == 0.0 {
                    continue;
                }
                if k != mu {
                    h[(k, k - 1)] = -s * x;
                } else if l != m {
                    h[(k, k - 1)] = -h[(k, k - 1)];
                }
                p += s;
                x = p / s;
                y = q / s;
                z = r / s;
                q /= p;
                r /= p;

                for j in k..nn {
                    p = h[(k, j)] + q * h[(k + 1, j)];
                    if notlast {
                        p += r * h[(k + 2, j)];
                        h[(k + 2, j)] -= p * z;
                    }
                    h[(k, j)] -= p * x;
                    h[(k + 1, j)] -= p * y;
                }
                for i in 0..=nu.min(k + 3) {
                    p = x * h[(i, k)] + y * h[(i, k + 1)];
                    if notlast {
                        p += z * h[(i, k + 2)];
                        h[(i, k + 2)] -= p * r;
                    }
                    h[(i, k)] -= p;
                    h[(i, k + 1)] -= p * q;
                }
                if want_u {
                    for i in 0..nn {
                        p = x * v[(i, k)] + y * v[(i, k + 1)];
                        if notlast {
                            p += z * v[(i, k + 2)];
                            v[(i, k + 2)] -= p * r;
                        }
                        v[(i, k)] -= p;
                        v[(i, k + 1)] -= p * q;
                    }
                }
            }
        }
    }
    // Bulge-chasing leaves stray entries below the first subdiagonal.
    for j in 0..nn {
        for i in (j + 2)..nn {
            h[(i, j)] = 0.0;
        }
    }
    Ok((d, e))
}
