//! Alpha-compositing quadrature of the volume rendering integral.
//!
//! For samples with density `sigma_i`, colour `c_i` and spacing `delta_i`:
//! `alpha_i = 1 - exp(-sigma_i delta_i)`, `T_i = prod_{j<i} (1 - alpha_j)`,
//! output `sum_i T_i alpha_i c_i`. Both the teacher and the student render
//! through [`composite`], so their results agree bit for bit on equal inputs.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1};

use crate::error::{NerdfError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Composite<T> {
    pub rgb: [T; 3],
    /// `T_i alpha_i` per sample.
    pub weights: Vec<T>,
}

impl<T: Scalar> Composite<T> {
    pub fn opacity(&self) -> T {
        self.weights.iter().copied().sum()
    }
}

/// Single-ray compositing over per-sample densities, colours and spacings.
pub fn volume_render<T: Scalar>(sigma: &[T], rgb: &[[T; 3]], deltas: &[T]) -> Result<Composite<T>> {
    let n = sigma.len();
    if rgb.len() != n || deltas.len() != n {
        return Err(NerdfError::Structural(format!(
            "volume_render length mismatch: {} sigma, {} colours, {} deltas",
            n,
            rgb.len(),
            deltas.len()
        )));
    }
    if n < 2 {
        return Err(NerdfError::InvalidInput("volume_render needs at least two samples".into()));
    }
    let mut weights = vec![T::zero(); n];
    let rgb = composite(
        |i| sigma[i],
        |i, c| rgb[i][c],
        |i| deltas[i],
        n,
        |i, w| weights[i] = w,
    );
    Ok(Composite { rgb, weights })
}

/// The compositing kernel. `sigma`, `color` and `delta` index samples; `store`
/// receives each weight.
#[inline]
pub(crate) fn composite<T: Scalar>(
    sigma: impl Fn(usize) -> T,
    color: impl Fn(usize, usize) -> T,
    delta: impl Fn(usize) -> T,
    n: usize,
    mut store: impl FnMut(usize, T),
) -> [T; 3] {
    let mut transmittance = T::one();
    let mut out = [T::zero(); 3];
    for i in 0..n {
        let decay = (-(sigma(i) * delta(i))).exp();
        let w = transmittance * (T::one() - decay);
        store(i, w);
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * color(i, c);
        }
        transmittance *= decay;
    }
    out
}

/// Batched compositing: one ray per row of `sigma` and of each colour channel.
/// Returns `(rgb [rays x 3], weights [rays x samples])`.
pub fn composite_rows<T: Scalar>(
    sigma: ArrayView2<'_, T>,
    color: [ArrayView2<'_, T>; 3],
    deltas: &[T],
) -> (Array2<T>, Array2<T>) {
    let (rays, n) = sigma.dim();
    let mut rgb = Array2::zeros((rays, 3));
    let mut weights = Array2::zeros((rays, n));
    for r in 0..rays {
        let s = sigma.row(r);
        let ch = [color[0].row(r), color[1].row(r), color[2].row(r)];
        let mut wrow = weights.row_mut(r);
        let out = composite(|i| s[i], |i, c| ch[c][i], |i| deltas[i], n, |i, w| wrow[i] = w);
        for c in 0..3 {
            rgb[[r, c]] = out[c];
        }
    }
    (rgb, weights)
}

/// Gradients of `<grad_rgb, C>` with respect to densities and colours of one ray.
///
/// `d/dc_i = w_i g` and `d/dsigma_i = delta_i (T_{i+1} <g, c_i> - <g, sum_{j>i} w_j c_j>)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn composite_backward_row<T: Scalar>(
    sigma: ArrayView1<'_, T>,
    color: [ArrayView1<'_, T>; 3],
    deltas: &[T],
    weights: ArrayView1<'_, T>,
    grad_rgb: [T; 3],
    mut grad_sigma: ArrayViewMut1<'_, T>,
    grad_color: [&mut ArrayViewMut1<'_, T>; 3],
) {
    let n = sigma.len();
    // T_{i+1} for each i, forward pass
    let mut trans_after = vec![T::zero(); n];
    let mut t = T::one();
    for i in 0..n {
        t *= (-(sigma[i] * deltas[i])).exp();
        trans_after[i] = t;
    }
    let [gr, gg, gb] = grad_color;
    let mut suffix = T::zero(); // <g, sum_{j>i} w_j c_j>
    for i in (0..n).rev() {
        let gc = grad_rgb[0] * color[0][i] + grad_rgb[1] * color[1][i] + grad_rgb[2] * color[2][i];
        grad_sigma[i] = deltas[i] * (trans_after[i] * gc - suffix);
        suffix += weights[i] * gc;
        gr[i] = weights[i] * grad_rgb[0];
        gg[i] = weights[i] * grad_rgb[1];
        gb[i] = weights[i] * grad_rgb[2];
    }
}

/// Batched backward of [`composite_rows`].
pub(crate) fn composite_rows_backward<T: Scalar>(
    sigma: ArrayView2<'_, T>,
    color: [ArrayView2<'_, T>; 3],
    deltas: &[T],
    weights: ArrayView2<'_, T>,
    grad_rgb: ArrayView2<'_, T>,
) -> (Array2<T>, [Array2<T>; 3]) {
    let dim = sigma.raw_dim();
    let mut gs = Array2::zeros(dim);
    let mut gc = [Array2::zeros(dim), Array2::zeros(dim), Array2::zeros(dim)];
    for r in 0..sigma.nrows() {
        let [c0, c1, c2] = &mut gc;
        let (mut a, mut b, mut c) = (c0.row_mut(r), c1.row_mut(r), c2.row_mut(r));
        composite_backward_row(
            sigma.row(r),
            [color[0].row(r), color[1].row(r), color[2].row(r)],
            deltas,
            weights.row(r),
            [grad_rgb[[r, 0]], grad_rgb[[r, 1]], grad_rgb[[r, 2]]],
            gs.row_mut(r),
            [&mut a, &mut b, &mut c],
        );
    }
    (gs, gc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ray_is_black() {
        let c = volume_render(&[0.0f64; 5], &[[0.3, 0.4, 0.5]; 5], &[0.1; 5]).unwrap();
        assert_eq!(c.rgb, [0.0; 3]);
        assert!(c.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn half_opacity_sample() {
        let ln2 = std::f64::consts::LN_2;
        let sigma = [0.0, ln2 / 0.5, 0.0];
        let rgb = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let c = volume_render(&sigma, &rgb, &[0.5; 3]).unwrap();
        assert!((c.rgb[0] - 0.5).abs() < 1e-15);
        assert_eq!(c.rgb[1], 0.0);
        assert_eq!(c.rgb[2], 0.0);
    }

    #[test]
    fn length_mismatch_is_structural() {
        let r = volume_render(&[0.0f64; 3], &[[0.0; 3]; 2], &[0.1; 3]);
        assert!(matches!(r, Err(NerdfError::Structural(_))));
    }

    #[test]
    fn constant_density_closed_form() {
        let (s0, len, n) = (0.7f64, 4.0, 64);
        let c = [0.2, 0.6, 0.9];
        let out = volume_render(&vec![s0; n], &vec![c; n], &vec![len / n as f64; n]).unwrap();
        let expect = 1.0 - (-s0 * len).exp();
        for ch in 0..3 {
            assert!((out.rgb[ch] - c[ch] * expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_match_single_ray_bitwise() {
        let sigma = Array2::from_shape_fn((3, 6), |(r, i)| (r as f32 + 1.0) * (i as f32 * 0.3).sin().abs());
        let col: [Array2<f32>; 3] = std::array::from_fn(|c| Array2::from_shape_fn((3, 6), |(r, i)| ((r + i + c) % 5) as f32 / 5.0));
        let deltas = [0.25f32; 6];
        let (rgb, w) = composite_rows(sigma.view(), [col[0].view(), col[1].view(), col[2].view()], &deltas);
        for r in 0..3 {
            let s: Vec<f32> = sigma.row(r).to_vec();
            let cs: Vec<[f32; 3]> = (0..6).map(|i| [col[0][[r, i]], col[1][[r, i]], col[2][[r, i]]]).collect();
            let single = volume_render(&s, &cs, &deltas).unwrap();
            assert_eq!(single.rgb, [rgb[[r, 0]], rgb[[r, 1]], rgb[[r, 2]]]);
            assert_eq!(single.weights, w.row(r).to_vec());
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let n = 7;
        let sigma: Vec<f64> = (0..n).map(|i| 0.3 + (i as f64 * 0.9).sin().abs() * 2.0).collect();
        let col: [Vec<f64>; 3] = std::array::from_fn(|c| (0..n).map(|i| ((i * 3 + c) % 7) as f64 / 7.0).collect());
        let deltas = vec![0.21; n];
        let g = [0.7, -0.4, 1.3];
        let loss = |s: &[f64], cc: &[Vec<f64>; 3]| {
            let rgb: Vec<[f64; 3]> = (0..n).map(|i| [cc[0][i], cc[1][i], cc[2][i]]).collect();
            let out = volume_render(s, &rgb, &deltas).unwrap().rgb;
            g[0] * out[0] + g[1] * out[1] + g[2] * out[2]
        };
        let rgb: Vec<[f64; 3]> = (0..n).map(|i| [col[0][i], col[1][i], col[2][i]]).collect();
        let fwd = volume_render(&sigma, &rgb, &deltas).unwrap();
        let mut gs = ndarray::Array1::zeros(n);
        let mut gc: [ndarray::Array1<f64>; 3] = std::array::from_fn(|_| ndarray::Array1::zeros(n));
        let [a, b, c] = &mut gc;
        composite_backward_row(
            ArrayView1::from(&sigma),
            [ArrayView1::from(&col[0]), ArrayView1::from(&col[1]), ArrayView1::from(&col[2])],
            &deltas,
            ArrayView1::from(&fwd.weights),
            g,
            gs.view_mut(),
            [&mut a.view_mut(), &mut b.view_mut(), &mut c.view_mut()],
        );
        let h = 1e-6;
        for i in 0..n {
            let mut p = sigma.clone();
            p[i] += h;
            let mut m = sigma.clone();
            m[i] -= h;
            let fd = (loss(&p, &col) - loss(&m, &col)) / (2.0 * h);
            assert!((fd - gs[i]).abs() < 1e-8, "sigma {i}: {fd} vs {}", gs[i]);
            for ch in 0..3 {
                let mut p = col.clone();
                p[ch][i] += h;
                let mut m = col.clone();
                m[ch][i] -= h;
                let fd = (loss(&sigma, &p) - loss(&sigma, &m)) / (2.0 * h);
                assert!((fd - gc[ch][i]).abs() < 1e-8);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn weights_bounded_and_transmittance_monotone(
            sigma in proptest::collection::vec(0.0f64..50.0, 2..40),
            delta in 0.001f64..0.5,
        ) {
            let n = sigma.len();
            let c = volume_render(&sigma, &vec![[1.0, 0.5, 0.0]; n], &vec![delta; n]).unwrap();
            proptest::prop_assert!(c.weights.iter().all(|w| *w >= 0.0));
            proptest::prop_assert!(c.opacity() <= 1.0 + 1e-12);
            // T_i = 1 - sum_{j<i} w_j must not increase
            let mut acc = 0.0;
            let mut prev_t = 1.0;
            for w in &c.weights {
                let t = 1.0 - acc;
                proptest::prop_assert!(t <= prev_t + 1e-12);
                prev_t = t;
                acc += w;
            }
        }
    }
}
