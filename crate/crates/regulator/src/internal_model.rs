//! Time-varying internal model and the observer-based controller around it.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::numerics::{are_solve, block, spectrum, to_complex};
use crate::plant::PlantRealization;

/// G₁ = blockdiag(0_p, ω̂₁Ω_p, …) and G₂ = [I, I, 0, I, 0, …]ᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalModelBlock {
    pub p: usize,
    pub q0: usize,
    pub omega_hat: Vec<f64>,
    pub g1: DMatrix<f64>,
    pub g2: DMatrix<f64>,
    /// Estimates coincide or vanish; (G₁, G₂) may lose controllability.
    pub degenerate: bool,
}

impl InternalModelBlock {
    pub fn dim(&self) -> usize {
        self.p * (2 * self.q0 + 1)
    }
}

pub fn build_internal_model(omega_hat: &[f64], p: usize) -> InternalModelBlock {
    let q0 = omega_hat.len();
    let dim = p * (2 * q0 + 1);
    let mut g1 = DMatrix::zeros(dim, dim);
    let mut g2 = DMatrix::zeros(dim, p);
    for i in 0..p {
        g2[(i, i)] = 1.0;
    }
    for (k, &w) in omega_hat.iter().enumerate() {
        let off = p + 2 * p * k;
        for i in 0..p {
            g1[(off + i, off + p + i)] = w;
            g1[(off + p + i, off + i)] = -w;
            g2[(off + i, i)] = 1.0;
        }
    }
    let degenerate = omega_hat.iter().any(|w| w.abs() < 1e-9)
        || omega_hat
            .iter()
            .enumerate()
            .any(|(i, w)| omega_hat[..i].iter().any(|v| (v - w).abs() < 1e-9));
    InternalModelBlock {
        p,
        q0,
        omega_hat: omega_hat.to_vec(),
        g1,
        g2,
        degenerate,
    }
}

/// Numerical dimension of ker(iω − G₁) over the complex numbers.
pub fn internal_model_dimension(block: &InternalModelBlock, omega: f64) -> usize {
    let n = block.dim();
    let mut m = to_complex(&(-&block.g1));
    for i in 0..n {
        m[(i, i)] += Complex::new(0.0, omega);
    }
    let sv = m.singular_values();
    let tol = 1e-8 * block.g1.norm().max(1.0);
    sv.iter().filter(|&&s| s < tol).count()
}

/// Observer-based error-feedback controller around an internal model:
/// z' = 𝒢₁z + 𝒢₂e, u = Kz with z = (z₀, x̂).
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRealization {
    pub im: InternalModelBlock,
    pub l: DMatrix<f64>,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    /// The nominal plant the observer part is built from.
    pub model: PlantRealization,
}

impl ControllerRealization {
    pub fn dim(&self) -> usize {
        self.im.dim() + self.model.n()
    }

    pub fn gain(&self) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.k1.nrows(), self.dim());
        k.view_mut((0, 0), self.k1.shape()).copy_from(&self.k1);
        k.view_mut((0, self.im.dim()), self.k2.shape()).copy_from(&self.k2);
        k
    }

    /// 𝒢₁ = [[G₁, 0], [(B+LD)K₁, A+(B+LD)K₂+LC]].
    pub fn g1_cal(&self) -> DMatrix<f64> {
        let pm = &self.model;
        let bld = &pm.b + &self.l * &pm.d;
        let zero = DMatrix::zeros(self.im.dim(), pm.n());
        let lower_left = &bld * &self.k1;
        let lower_right = &pm.a + &bld * &self.k2 + &self.l * &pm.c;
        block(&[&[&self.im.g1, &zero], &[&lower_left, &lower_right]])
    }

    /// 𝒢₂ = [G₂; −L].
    pub fn g2_cal(&self) -> DMatrix<f64> {
        let neg_l = -&self.l;
        block(&[&[&self.im.g2], &[&neg_l]])
    }

    /// Same controller with a new internal model and gain (L unchanged).
    pub fn with_block_and_gain(&self, im: InternalModelBlock, k: &DMatrix<f64>) -> Self {
        let d0 = im.dim();
        ControllerRealization {
            k1: k.columns(0, d0).into_owned(),
            k2: k.columns(d0, self.model.n()).into_owned(),
            im,
            l: self.l.clone(),
            model: self.model.clone(),
        }
    }
}

pub fn assemble_controller(
    block: InternalModelBlock,
    plant: &PlantRealization,
    l: DMatrix<f64>,
    k1: DMatrix<f64>,
    k2: DMatrix<f64>,
) -> Result<ControllerRealization> {
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    if block.p != p || l.shape() != (n, p) || k1.shape() != (m, block.dim()) || k2.shape() != (m, n) {
        return Err(Error::Dimension {
            context: "assemble_controller",
            detail: format!(
                "block p {}, L {:?}, K1 {:?}, K2 {:?} for plant (n, m, p) = ({n}, {m}, {p})",
                block.p,
                l.shape(),
                k1.shape(),
                k2.shape()
            ),
        });
    }
    let ab = spectrum(&(&plant.a + &l * &plant.c))?.spectral_abscissa;
    if ab >= 0.0 {
        return Err(Error::Design(format!("A+LC is not Hurwitz (abscissa {ab:.6e})")));
    }
    Ok(ControllerRealization {
        im: block,
        l,
        k1,
        k2,
        model: plant.clone(),
    })
}

/// Output injection from the dual Riccati equation with weights
/// `state_weight·I` and `output_weight·I`: L = −ΣCᵀ/output_weight.
pub fn design_l(plant: &PlantRealization, state_weight: f64, output_weight: f64) -> Result<DMatrix<f64>> {
    let (n, p) = (plant.n(), plant.p());
    let sigma = are_solve(
        &plant.a.transpose(),
        &plant.c.transpose(),
        &(DMatrix::identity(n, n) * state_weight),
        &(DMatrix::identity(p, p) * output_weight),
    )
    .map_err(|e| match e {
        Error::Design(m) => Error::Design(format!("(A, C) not detectable: {m}")),
        other => other,
    })?;
    let l = -(sigma * plant.c.transpose()) / output_weight;
    let ab = spectrum(&(&plant.a + &l * &plant.c))?.spectral_abscissa;
    if ab >= 0.0 {
        return Err(Error::Design(format!("observer design left A+LC with abscissa {ab:.6e}")));
    }
    Ok(l)
}
