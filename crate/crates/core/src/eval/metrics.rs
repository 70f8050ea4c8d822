use super::image::Image;
use crate::error::{NerdfError, Result};

/// Returned when two images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(NerdfError::Structural(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sum: f64 = a
        .rgb
        .iter()
        .zip(&b.rgb)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.rgb.len() as f64)
}

/// `10 log10(1 / MSE)` on unquantised `[0, 1]` values, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}
