use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type DenseVector = DVector<f64>;

/// Builds a matrix from row-major entries, rejecting non-finite values.
pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<DenseMatrix> {
    if entries.len() != rows * cols {
        return Err(Error::Dimension {
            context: "from_row_major",
            detail: format!("{} entries for a {rows}x{cols} matrix", entries.len()),
        });
    }
    if entries.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("matrix entries must be finite".into()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, entries))
}

pub fn to_row_major(m: &DenseMatrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a.kronecker(b)
}

pub fn block_diag(blocks: &[&DenseMatrix]) -> DenseMatrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Assembles a dense matrix from a grid of blocks with consistent sizes.
pub fn block(rows: &[&[&DenseMatrix]]) -> DenseMatrix {
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    let mut out = DMatrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (i, row) in rows.iter().enumerate() {
        let mut c0 = 0;
        for (j, b) in row.iter().enumerate() {
            debug_assert_eq!(b.shape(), (heights[i], widths[j]));
            out.view_mut((r0, c0), b.shape()).copy_from(*b);
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    out
}

pub fn spd_inverse(r: &DenseMatrix) -> Result<DenseMatrix> {
    match r.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => Err(Error::Argument("weight matrix is not symmetric positive definite".into())),
    }
}

pub fn solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    a.clone().lu().solve(b).ok_or(Error::Singular("dense solve"))
}

pub fn to_complex(a: &DenseMatrix) -> DMatrix<Complex<f64>> {
    a.map(|x| Complex::new(x, 0.0))
}

/// Ratio of the smallest to the largest singular value.
pub fn min_singular_ratio_complex(a: &DMatrix<Complex<f64>>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0.0;
    }
    sv.min() / max
}

/// Numerical rank with a threshold relative to the largest singular value.
pub fn rank(a: &DenseMatrix, rel_tol: f64) -> usize {
    let sv = a.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

pub fn complex_rank(a: &DMatrix<Complex<f64>>, rel_tol: f64) -> usize {
    let sv = a.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

pub fn controllability_matrix(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}
