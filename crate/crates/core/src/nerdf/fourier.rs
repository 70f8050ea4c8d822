//! Trigonometric basis for per-ray opacity and colour distributions.
//!
//! Basis function `i` over a segment of length `T` is `cos(i pi t / T)` for
//! even `i` and `sin((i + 1) pi t / T)` for odd `i`, `i = 0 .. 2K`. A network
//! output row holds `8K` coefficients: `2K` for opacity, then `2K` for each of
//! red, green and blue.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{NerdfError, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

pub fn basis_eval(t: f64, k: usize, period: f64) -> Vec<f64> {
    (0..2 * k).map(|i| basis_fn(i, t, period)).collect()
}

#[inline]
fn basis_fn(i: usize, t: f64, period: f64) -> f64 {
    let w = std::f64::consts::PI / period;
    if i.is_multiple_of(2) {
        (i as f64 * w * t).cos()
    } else {
        ((i + 1) as f64 * w * t).sin()
    }
}

/// `samples x 2K` matrix of basis values at ray-local `ts`.
pub fn basis_matrix<T: Scalar>(ts: &[f64], k: usize, period: f64) -> Array2<T> {
    Array2::from_shape_fn((ts.len(), 2 * k), |(r, i)| T::of(basis_fn(i, ts[r], period)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoeffs {
    pub k: usize,
    pub w_sigma: Vec<f64>,
    pub w_color: [Vec<f64>; 3],
    pub t_period: f64,
}

impl FourierCoeffs {
    pub fn zeros(k: usize, t_period: f64) -> Self {
        Self {
            k,
            w_sigma: vec![0.0; 2 * k],
            w_color: std::array::from_fn(|_| vec![0.0; 2 * k]),
            t_period,
        }
    }

    /// Splits one network output row using the fixed channel layout.
    pub fn from_channels(channels: &[f64], k: usize, t_period: f64) -> Result<Self> {
        if channels.len() != 8 * k {
            return Err(NerdfError::Structural(format!(
                "expected {} coefficient channels for K = {k}, got {}",
                8 * k,
                channels.len()
            )));
        }
        if !(t_period > 0.0) || channels.iter().any(|v| !v.is_finite()) {
            return Err(NerdfError::InvalidInput("coefficients must be finite with T > 0".into()));
        }
        let block = |b: usize| channels[b * 2 * k..(b + 1) * 2 * k].to_vec();
        Ok(Self {
            k,
            w_sigma: block(0),
            w_color: [block(1), block(2), block(3)],
            t_period,
        })
    }

    pub fn channel_count(&self) -> usize {
        self.w_sigma.len() + self.w_color.iter().map(Vec::len).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub raw_sigma: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rgb: Vec<[f64; 3]>,
}

/// Reconstructs `sigma = softplus(sum w_i B_i(t))` and `rgb = sigmoid(...)` at ray-local `t`.
pub fn decode_distribution(coeffs: &FourierCoeffs, t_samples: &[f64]) -> Distribution {
    let mut raw_sigma = Vec::with_capacity(t_samples.len());
    let mut sigma = Vec::with_capacity(t_samples.len());
    let mut rgb = Vec::with_capacity(t_samples.len());
    for &t in t_samples {
        let basis = basis_eval(t, coeffs.k, coeffs.t_period);
        let dot = |w: &[f64]| w.iter().zip(&basis).map(|(a, b)| a * b).sum::<f64>();
        let rs = dot(&coeffs.w_sigma);
        raw_sigma.push(rs);
        sigma.push(softplus(rs));
        rgb.push(std::array::from_fn(|c| sigmoid(dot(&coeffs.w_color[c]))));
    }
    Distribution { raw_sigma, sigma, rgb }
}

/// Batched decode of coefficient rows (`rays x 8K`) against a basis matrix.
#[derive(Debug, Clone)]
pub struct DecodedRows<T> {
    pub raw_sigma: Array2<T>,
    pub sigma: Array2<T>,
    pub color: [Array2<T>; 3],
}

/// Pre-activation values `rays x samples` for opacity, then red, green, blue.
pub fn decode_raw<T: Scalar>(coeffs: ArrayView2<'_, T>, basis: &Array2<T>) -> Result<[Array2<T>; 4]> {
    let two_k = basis.ncols();
    if coeffs.ncols() != 4 * two_k {
        return Err(NerdfError::Structural(format!(
            "coefficient rows have {} channels, basis expects {}",
            coeffs.ncols(),
            4 * two_k
        )));
    }
    let bt = basis.t();
    Ok(std::array::from_fn(|b| {
        coeffs.slice(s![.., b * two_k..(b + 1) * two_k]).dot(&bt)
    }))
}

pub fn decode_rows<T: Scalar>(coeffs: ArrayView2<'_, T>, basis: &Array2<T>) -> Result<DecodedRows<T>> {
    let [raw_sigma, r, g, b] = decode_raw(coeffs, basis)?;
    let sigma = raw_sigma.mapv(softplus);
    let color = [r.mapv(sigmoid), g.mapv(sigmoid), b.mapv(sigmoid)];
    Ok(DecodedRows {
        raw_sigma,
        sigma,
        color,
    })
}

/// Gradient with respect to coefficient rows, given gradients on decoded
/// densities and colours.
pub fn decode_rows_backward<T: Scalar>(
    decoded: &DecodedRows<T>,
    basis: &Array2<T>,
    grad_sigma: &Array2<T>,
    grad_color: &[Array2<T>; 3],
) -> Array2<T> {
    let two_k = basis.ncols();
    let rays = grad_sigma.nrows();
    let mut out = Array2::zeros((rays, 4 * two_k));
    // softplus' = sigmoid
    let mut g = decoded.raw_sigma.mapv(sigmoid);
    g *= grad_sigma;
    out.slice_mut(s![.., 0..two_k]).assign(&g.dot(basis));
    for c in 0..3 {
        let col = &decoded.color[c];
        let g = col.mapv(|v| v * (T::one() - v)) * &grad_color[c];
        let lo = (c + 1) * two_k;
        out.slice_mut(s![.., lo..lo + two_k]).assign(&g.dot(basis));
    }
    out
}

/// Ray-local sample positions used for rendering: bin midpoints over `[0, period]`.
pub fn local_midpoints(period: f64, s: usize) -> Vec<f64> {
    crate::geometry::midpoints(0.0, period, s)
}

/// Per-ray maximum normalisation, for plotting distributions only.
pub fn normalize_for_plot(sigma: &[f64]) -> Vec<f64> {
    let max = sigma.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; sigma.len()];
    }
    sigma.iter().map(|v| v / max).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn basis_at_zero() {
        let b = basis_eval(0.0, 5, 3.0);
        assert_eq!(b.len(), 10);
        for (i, v) in b.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 1.0 } else { 0.0 });
        }
        assert_eq!(basis_eval(1.0, 12, 4.0).len(), 24);
    }

    #[test]
    fn basis_full_period() {
        let b = basis_eval(2.5, 3, 2.5);
        assert!(b[1].abs() < 1e-12);
        assert!((b[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_coefficients_decode_to_constants() {
        let d = decode_distribution(&FourierCoeffs::zeros(12, 4.0), &local_midpoints(4.0, 64));
        for (s, c) in d.sigma.iter().zip(&d.rgb) {
            assert!((s - std::f64::consts::LN_2).abs() < 1e-12);
            assert_eq!(*c, [0.5; 3]);
        }
    }

    #[test]
    fn dc_term_is_constant() {
        let mut c = FourierCoeffs::zeros(6, 4.0);
        c.w_sigma[0] = -1.7;
        let d = decode_distribution(&c, &local_midpoints(4.0, 32));
        assert!(d.raw_sigma.iter().all(|v| (v + 1.7).abs() < 1e-15));
    }

    #[test]
    fn channel_layout_and_count() {
        let ch: Vec<f64> = (0..8 * 3).map(|i| i as f64).collect();
        let c = FourierCoeffs::from_channels(&ch, 3, 1.0).unwrap();
        assert_eq!(c.channel_count(), 24);
        assert_eq!(c.w_sigma, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(c.w_color[2][0], 18.0);
        assert!(FourierCoeffs::from_channels(&ch, 4, 1.0).is_err());
    }

    #[test]
    fn least_squares_projection_reproduces_band_limited_target() {
        // oracle: dense least squares via SVD on a fine grid
        let (k, period, n) = (8usize, 3.0, 4096);
        let ts = local_midpoints(period, n);
        let target = |t: f64| {
            let w = 2.0 * std::f64::consts::PI / period;
            0.4 - 1.1 * (w * t).cos() + 0.7 * (3.0 * w * t).sin() + 0.25 * (7.0 * w * t).cos()
        };
        let a = DMatrix::from_fn(n, 2 * k, |r, i| basis_fn(i, ts[r], period));
        let y = DVector::from_fn(n, |r, _| target(ts[r]));
        let w = a.clone().svd(true, true).solve(&y, 1e-12).unwrap();
        let mut c = FourierCoeffs::zeros(k, period);
        c.w_sigma = w.iter().copied().collect();
        let d = decode_distribution(&c, &ts);
        let err = d
            .raw_sigma
            .iter()
            .zip(&ts)
            .map(|(v, t)| (v - target(*t)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "max error {err}");
    }

    #[test]
    fn basis_gram_is_diagonally_dominant() {
        let (k, period, n) = (12usize, 4.0, 4096);
        let ts = local_midpoints(period, n);
        let b: Array2<f64> = basis_matrix(&ts, k, period);
        let gram = b.t().dot(&b);
        for i in 0..2 * k {
            for j in 0..2 * k {
                if i != j {
                    assert!(gram[[i, j]].abs() <= 1e-3 * gram[[i, i]], "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn rows_agree_with_single_ray_decode() {
        let k = 4;
        let ts = local_midpoints(2.0, 16);
        let basis: Array2<f64> = basis_matrix(&ts, k, 2.0);
        let coeffs = Array2::from_shape_fn((2, 8 * k), |(r, i)| ((r * 31 + i * 7) % 13) as f64 / 13.0 - 0.5);
        let rows = decode_rows(coeffs.view(), &basis).unwrap();
        for r in 0..2 {
            let c = FourierCoeffs::from_channels(coeffs.row(r).as_slice().unwrap(), k, 2.0).unwrap();
            let d = decode_distribution(&c, &ts);
            for i in 0..16 {
                assert!((rows.sigma[[r, i]] - d.sigma[i]).abs() < 1e-12);
                for ch in 0..3 {
                    assert!((rows.color[ch][[r, i]] - d.rgb[i][ch]).abs() < 1e-12);
                }
            }
        }
        assert!(decode_rows(coeffs.slice(s![.., 0..8]).view(), &basis).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let k = 3;
        let ts = local_midpoints(2.0, 10);
        let basis: Array2<f64> = basis_matrix(&ts, k, 2.0);
        let coeffs = Array2::from_shape_fn((2, 8 * k), |(r, i)| ((r * 17 + i * 5) % 11) as f64 / 11.0 - 0.5);
        let gs = Array2::from_shape_fn((2, 10), |(r, i)| ((r + 2 * i) % 5) as f64 - 2.0);
        let gc: [Array2<f64>; 3] = std::array::from_fn(|c| Array2::from_shape_fn((2, 10), |(r, i)| ((r + i + c) % 3) as f64 - 1.0));
        let loss = |x: &Array2<f64>| {
            let d = decode_rows(x.view(), &basis).unwrap();
            (&d.sigma * &gs).sum() + (0..3).map(|c| (&d.color[c] * &gc[c]).sum()).sum::<f64>()
        };
        let d = decode_rows(coeffs.view(), &basis).unwrap();
        let g = decode_rows_backward(&d, &basis, &gs, &gc);
        let h = 1e-6;
        for idx in ndarray::indices(coeffs.dim()) {
            let mut p = coeffs.clone();
            p[idx] += h;
            let mut m = coeffs.clone();
            m[idx] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-7, "{idx:?}");
        }
    }

    #[test]
    fn plot_normalisation() {
        assert_eq!(normalize_for_plot(&[1.0, 4.0, 2.0]), vec![0.25, 1.0, 0.5]);
        assert_eq!(normalize_for_plot(&[0.0, 0.0]), vec![0.0, 0.0]);
    }
}
