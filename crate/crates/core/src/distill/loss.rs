//! Distillation objectives. Both losses are mean-reduced over rays.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{NerdfError, Result};
use crate::scalar::Scalar;

/// Guard added to the per-ray density sum before normalising.
pub const NORMALIZE_EPS: f64 = 1e-8;

fn same_shape<T>(a: &ArrayView2<'_, T>, b: &ArrayView2<'_, T>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(NerdfError::Structural(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `sum_rays |pred - gt|^2 / rays`.
pub fn render_loss<T: Scalar>(pred: ArrayView2<'_, T>, gt: ArrayView2<'_, T>) -> Result<T> {
    same_shape(&pred, &gt, "render loss")?;
    if pred.nrows() == 0 {
        return Ok(T::zero());
    }
    let sum = Zip::from(&pred).and(&gt).fold(T::zero(), |acc, p, g| acc + (*p - *g) * (*p - *g));
    Ok(sum / T::of(pred.nrows() as f64))
}

/// Gradient of [`render_loss`] with respect to `pred`.
pub fn render_loss_grad<T: Scalar>(pred: ArrayView2<'_, T>, gt: ArrayView2<'_, T>) -> Array2<T> {
    let scale = T::of(2.0 / pred.nrows().max(1) as f64);
    (&pred - &gt).mapv(|d| d * scale)
}

/// `sigma_i / (sum_j sigma_j + eps)`.
pub fn normalize_density(sigma: &[f64]) -> Vec<f64> {
    let total: f64 = sigma.iter().sum::<f64>() + NORMALIZE_EPS;
    sigma.iter().map(|s| s / total).collect()
}

/// [`normalize_density`] applied to every row.
pub fn normalize_rows<T: Scalar>(sigma: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = sigma.to_owned();
    for mut row in out.rows_mut() {
        let total = row.sum() + T::of(NORMALIZE_EPS);
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Pulls a gradient on normalised rows back to the raw densities:
/// `dL/dsigma_j = (g_j - sum_i g_i n_i) / (S + eps)`.
pub fn normalize_rows_backward<T: Scalar>(
    sigma: ArrayView2<'_, T>,
    normalized: ArrayView2<'_, T>,
    grad: ArrayView2<'_, T>,
) -> Array2<T> {
    let mut out = Array2::zeros(sigma.raw_dim());
    for r in 0..sigma.nrows() {
        let total = sigma.row(r).sum() + T::of(NORMALIZE_EPS);
        let dot = grad.row(r).dot(&normalized.row(r));
        for (o, g) in out.row_mut(r).iter_mut().zip(grad.row(r)) {
            *o = (*g - dot) / total;
        }
    }
    out
}

/// `lambda * sum_rays sum_t (a - b)^2 / rays` on already-normalised densities.
pub fn vdc_loss<T: Scalar>(student: ArrayView2<'_, T>, teacher: ArrayView2<'_, T>, lambda: f64) -> Result<T> {
    same_shape(&student, &teacher, "density constraint")?;
    if student.nrows() == 0 || lambda == 0.0 {
        return Ok(T::zero());
    }
    let sum = Zip::from(&student).and(&teacher).fold(T::zero(), |acc, a, b| acc + (*a - *b) * (*a - *b));
    Ok(T::of(lambda) * sum / T::of(student.nrows() as f64))
}

/// Gradient of [`vdc_loss`] with respect to the student rows.
pub fn vdc_loss_grad<T: Scalar>(student: ArrayView2<'_, T>, teacher: ArrayView2<'_, T>, lambda: f64) -> Array2<T> {
    let scale = T::of(2.0 * lambda / student.nrows().max(1) as f64);
    (&student - &teacher).mapv(|d| d * scale)
}
