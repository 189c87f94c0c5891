//! Small helpers for contracting dynamic-rank complex tensors.
//!
//! The tensor-network simulators work with modest tensors whose ranks vary
//! at runtime, so contractions are implemented the classical way: permute
//! the contracted axes to the back/front, reshape to matrices, multiply.

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;

use crate::error::Result;

/// Eigendecomposition of a complex Hermitian matrix with correctly oriented
/// eigenvectors (as columns). The LAPACK binding sees our row-major array
/// as its transpose, so the raw eigenvectors come back conjugated; this
/// wrapper undoes that.
pub fn eigh_hermitian(m: &Array2<Complex64>) -> Result<(Array1<f64>, Array2<Complex64>)> {
    let (evals, vecs) = m.eigh(UPLO::Lower)?;
    Ok((evals, vecs.mapv(|v| v.conj())))
}

/// Contract `a` and `b` over the given axis pairs, in order. The result
/// keeps the uncontracted axes of `a` (in order) followed by those of `b`.
pub fn contract(
    a: &ArrayD<Complex64>,
    b: &ArrayD<Complex64>,
    axes_a: &[usize],
    axes_b: &[usize],
) -> ArrayD<Complex64> {
    assert_eq!(axes_a.len(), axes_b.len());
    let keep_a: Vec<usize> = (0..a.ndim()).filter(|i| !axes_a.contains(i)).collect();
    let keep_b: Vec<usize> = (0..b.ndim()).filter(|i| !axes_b.contains(i)).collect();

    let mut perm_a = keep_a.clone();
    perm_a.extend_from_slice(axes_a);
    let mut perm_b = axes_b.to_vec();
    perm_b.extend_from_slice(&keep_b);

    let at = a.view().permuted_axes(perm_a.as_slice());
    let bt = b.view().permuted_axes(perm_b.as_slice());

    let rows: usize = keep_a.iter().map(|&i| a.shape()[i]).product();
    let mid: usize = axes_a.iter().map(|&i| a.shape()[i]).product();
    let cols: usize = keep_b.iter().map(|&i| b.shape()[i]).product();

    // force C layout before reshaping: permuted views (and arrays cloned
    // from them) carry arbitrary strides
    let am = at
        .as_standard_layout()
        .to_shape(((rows, mid), ndarray::Order::RowMajor))
        .expect("contiguous reshape")
        .to_owned();
    let bm = bt
        .as_standard_layout()
        .to_shape(((mid, cols), ndarray::Order::RowMajor))
        .expect("contiguous reshape")
        .to_owned();
    let prod = am.dot(&bm);
    let prod = prod.as_standard_layout().to_owned();

    let mut shape: Vec<usize> = keep_a.iter().map(|&i| a.shape()[i]).collect();
    shape.extend(keep_b.iter().map(|&i| b.shape()[i]));
    if shape.is_empty() {
        shape.push(1);
        let mut out = ArrayD::zeros(IxDyn(&[1]));
        out[[0]] = prod[[0, 0]];
        return out;
    }
    prod.into_shape_with_order(IxDyn(&shape))
        .expect("shape product matches")
}
