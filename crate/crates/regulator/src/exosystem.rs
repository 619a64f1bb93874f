//! Reference/disturbance signal classes and their exosystem realization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::spectrum;

/// Finite sums of sinusoids plus a constant, for both the reference and the
/// disturbance channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    pub frequencies: Vec<f64>,
    pub y0: Vec<f64>,
    pub y_cos: Vec<Vec<f64>>,
    pub y_sin: Vec<Vec<f64>>,
    #[serde(default)]
    pub w0: Vec<f64>,
    #[serde(default)]
    pub w_cos: Vec<Vec<f64>>,
    #[serde(default)]
    pub w_sin: Vec<Vec<f64>>,
}

impl SignalModel {
    /// A reference-only model (no disturbance channel).
    pub fn reference(frequencies: Vec<f64>, y0: Vec<f64>, y_cos: Vec<Vec<f64>>, y_sin: Vec<Vec<f64>>) -> Result<Self> {
        let q0 = frequencies.len();
        let model = SignalModel {
            frequencies,
            y0,
            y_cos,
            y_sin,
            w0: Vec::new(),
            w_cos: vec![Vec::new(); q0],
            w_sin: vec![Vec::new(); q0],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_disturbance(mut self, w0: Vec<f64>, w_cos: Vec<Vec<f64>>, w_sin: Vec<Vec<f64>>) -> Result<Self> {
        self.w0 = w0;
        self.w_cos = w_cos;
        self.w_sin = w_sin;
        self.validate()?;
        Ok(self)
    }

    /// The two-tone reference of the drug-delivery experiment: centre
    /// coordinates 0.005(sin 20t + sin 60t) and 0.005(cos 20t + cos 60t).
    pub fn two_tone_center() -> Self {
        let a = 0.005;
        SignalModel::reference(
            vec![20.0, 60.0],
            vec![0.0, 0.0],
            vec![vec![0.0, a], vec![0.0, a]],
            vec![vec![a, 0.0], vec![a, 0.0]],
        )
        .expect("built-in model is valid")
    }

    pub fn q0(&self) -> usize {
        self.frequencies.len()
    }

    pub fn p(&self) -> usize {
        self.y0.len()
    }

    pub fn nd(&self) -> usize {
        self.w0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q0 = self.q0();
        let (p, nd) = (self.p(), self.nd());
        let bad = |m: String| Err(Error::Argument(m));
        for (k, w) in self.frequencies.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return bad(format!("frequency {k} must be positive, got {w}"));
            }
            if k > 0 && *w <= self.frequencies[k - 1] {
                return bad("frequencies must be strictly increasing".into());
            }
        }
        if self.y_cos.len() != q0 || self.y_sin.len() != q0 || self.w_cos.len() != q0 || self.w_sin.len() != q0 {
            return bad(format!("expected {q0} coefficient vectors per channel"));
        }
        for k in 0..q0 {
            if self.y_cos[k].len() != p || self.y_sin[k].len() != p {
                return bad(format!("reference coefficients for frequency {k} must have length {p}"));
            }
            if self.w_cos[k].len() != nd || self.w_sin[k].len() != nd {
                return bad(format!("disturbance coefficients for frequency {k} must have length {nd}"));
            }
            let weight: f64 = self.y_cos[k].iter().chain(&self.y_sin[k]).map(|x| x.abs()).sum();
            if weight == 0.0 {
                return bad(format!("frequency {k} does not appear in the reference"));
            }
        }
        let all = self
            .y0
            .iter()
            .chain(self.w0.iter())
            .chain(self.y_cos.iter().flatten())
            .chain(self.y_sin.iter().flatten())
            .chain(self.w_cos.iter().flatten())
            .chain(self.w_sin.iter().flatten());
        for x in all {
            if !x.is_finite() {
                return bad("signal coefficients must be finite".into());
            }
        }
        Ok(())
    }

    pub fn eval_reference(&self, t: f64) -> DVector<f64> {
        eval(&self.frequencies, &self.y0, &self.y_cos, &self.y_sin, t, 0)
    }

    pub fn eval_reference_derivative(&self, t: f64, order: usize) -> Result<DVector<f64>> {
        let q0 = self.q0();
        if q0 > 0 && order > 2 * q0 {
            return Err(Error::Argument(format!("derivative order {order} exceeds 2q0 = {}", 2 * q0)));
        }
        Ok(eval(&self.frequencies, &self.y0, &self.y_cos, &self.y_sin, t, order))
    }

    pub fn eval_disturbance(&self, t: f64) -> DVector<f64> {
        eval(&self.frequencies, &self.w0, &self.w_cos, &self.w_sin, t, 0)
    }

    /// Real block-diagonal exosystem generating both channels.
    pub fn realization(&self) -> ExoRealization {
        let q0 = self.q0();
        let q = 2 * q0 + 1;
        let mut s = DMatrix::zeros(q, q);
        let mut v0 = DVector::zeros(q);
        v0[0] = 1.0;
        let (p, nd) = (self.p(), self.nd());
        let mut y_out = DMatrix::zeros(p, q);
        let mut w_out = DMatrix::zeros(nd, q);
        for i in 0..p {
            y_out[(i, 0)] = self.y0[i];
        }
        for i in 0..nd {
            w_out[(i, 0)] = self.w0[i];
        }
        for (k, &w) in self.frequencies.iter().enumerate() {
            let (c, sn) = (1 + 2 * k, 2 + 2 * k);
            s[(c, sn)] = -w;
            s[(sn, c)] = w;
            v0[c] = 1.0;
            for i in 0..p {
                y_out[(i, c)] = self.y_cos[k][i];
                y_out[(i, sn)] = self.y_sin[k][i];
            }
            for i in 0..nd {
                w_out[(i, c)] = self.w_cos[k][i];
                w_out[(i, sn)] = self.w_sin[k][i];
            }
        }
        ExoRealization { s, y_out, w_out, v0 }
    }
}

fn eval(freqs: &[f64], c0: &[f64], cc: &[Vec<f64>], cs: &[Vec<f64>], t: f64, order: usize) -> DVector<f64> {
    let mut out = if order == 0 {
        DVector::from_column_slice(c0)
    } else {
        DVector::zeros(c0.len())
    };
    for (k, &w) in freqs.iter().enumerate() {
        let (s, c) = (w * t).sin_cos();
        // j-th derivatives of cos and sin, cycling with period four.
        let (dc, ds) = match order % 4 {
            0 => (c, s),
            1 => (-s, c),
            2 => (-c, -s),
            _ => (s, -c),
        };
        let g = w.powi(order as i32);
        for i in 0..out.len() {
            out[i] += g * (cc[k][i] * dc + cs[k][i] * ds);
        }
    }
    out
}

/// State-space form `v' = S v`, `y_ref = Y v`, `w = W v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExoRealization {
    pub s: DMatrix<f64>,
    /// Maps the exosystem state to the reference (p × q).
    pub y_out: DMatrix<f64>,
    /// Maps the exosystem state to the disturbance (n_d × q).
    pub w_out: DMatrix<f64>,
    pub v0: DVector<f64>,
}

impl ExoRealization {
    pub fn q(&self) -> usize {
        self.s.nrows()
    }

    /// Disturbance input matrix `E = B_d W` for a plant with input matrix `bd`.
    pub fn e_matrix(&self, bd: &DMatrix<f64>) -> DMatrix<f64> {
        if self.w_out.nrows() == 0 {
            DMatrix::zeros(bd.nrows(), self.q())
        } else {
            bd * &self.w_out
        }
    }

    /// Error feedthrough `F` with `e = Cx + Du + Fv`.
    pub fn f_matrix(&self) -> DMatrix<f64> {
        -&self.y_out
    }

    /// Exosystem state at time t (exact flow of the rotation blocks).
    pub fn state(&self, t: f64) -> DVector<f64> {
        let mut v = self.v0.clone();
        let q0 = (self.q() - 1) / 2;
        for k in 0..q0 {
            let (c, s) = (1 + 2 * k, 2 + 2 * k);
            let w = self.s[(s, c)];
            let (sn, cs) = (w * t).sin_cos();
            let (a, b) = (self.v0[c], self.v0[s]);
            v[c] = cs * a - sn * b;
            v[s] = sn * a + cs * b;
        }
        v
    }
}

/// Coefficients `a` with λ^{2q0} − a_{q0}λ^{2q0−2} − … − a₁ = ∏(λ² + ω_k²).
pub fn coefficients_from_frequencies(frequencies: &[f64]) -> Result<DVector<f64>> {
    for (i, w) in frequencies.iter().enumerate() {
        if !(w.is_finite() && *w > 0.0) {
            return Err(Error::Argument(format!("frequency {i} must be positive")));
        }
        for v in &frequencies[..i] {
            if v == w {
                return Err(Error::Argument(format!("duplicate frequency {w}")));
            }
        }
    }
    // Polynomial in μ = λ², low degree first, monic.
    let mut poly = vec![1.0];
    for w in frequencies {
        let w2 = w * w;
        let mut next = vec![0.0; poly.len() + 1];
        for (i, c) in poly.iter().enumerate() {
            next[i] += c * w2;
            next[i + 1] += c;
        }
        poly = next;
    }
    Ok(DVector::from_iterator(frequencies.len(), (0..frequencies.len()).map(|i| -poly[i])))
}

/// Frequencies recovered from coefficients, with degeneracy markers.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyEstimate {
    /// |Im λ| of the upper-half-plane roots, ascending.
    pub values: Vec<f64>,
    /// Some root is not (numerically) on the imaginary axis.
    pub non_oscillatory: bool,
    /// Two recovered frequencies coincide or one vanishes.
    pub repeated: bool,
}

impl FrequencyEstimate {
    pub fn warning(&self) -> bool {
        self.non_oscillatory || self.repeated
    }
}

pub fn frequencies_from_coefficients(a: &DVector<f64>) -> Result<FrequencyEstimate> {
    let q0 = a.len();
    if q0 == 0 {
        return Ok(FrequencyEstimate {
            values: Vec::new(),
            non_oscillatory: false,
            repeated: false,
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("coefficients must be finite".into()));
    }
    // Companion matrix of μ^{q0} − a_{q0}μ^{q0−1} − … − a₁.
    let mut comp = DMatrix::zeros(q0, q0);
    for i in 0..q0 - 1 {
        comp[(i, i + 1)] = 1.0;
    }
    for j in 0..q0 {
        comp[(q0 - 1, j)] = a[j];
    }
    let mus = spectrum(&comp)?.eigenvalues;
    let eval_poly = |mu: f64| {
        let mut p = 1.0;
        let mut dp = 0.0;
        for j in (0..q0).rev() {
            dp = dp * mu + p;
            p = p * mu - a[j];
        }
        (p, dp)
    };
    let mut non_oscillatory = false;
    let mut values = Vec::with_capacity(q0);
    for mu in mus {
        let mut mu = mu;
        if mu.im == 0.0 {
            let mut m = mu.re;
            for _ in 0..3 {
                let (p, dp) = eval_poly(m);
                if dp == 0.0 {
                    break;
                }
                let step = p / dp;
                if !step.is_finite() || step.abs() > 1e-3 * (1.0 + m.abs()) {
                    break;
                }
                m -= step;
            }
            mu.re = m;
        }
        let lambda = mu.sqrt();
        if lambda.re.abs() > 1e-6 * (1.0 + lambda.im.abs()) {
            non_oscillatory = true;
        }
        values.push(lambda.im.abs());
    }
    values.sort_by(f64::total_cmp);
    let scale = values.last().copied().unwrap_or(0.0).max(1.0);
    let repeated = values.iter().any(|&w| w <= 1e-9)
        || values.windows(2).any(|w| (w[1] - w[0]).abs() <= 1e-6 * scale);
    Ok(FrequencyEstimate {
        values,
        non_oscillatory,
        repeated,
    })
}
