//! Layer primitives with explicit backward passes. Feature maps are
//! `(channels, height, width)` arrays; batch-norm inputs are `(rows, features)`.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::real::Real;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Unfolds `k x k` zero-padded neighbourhoods into columns:
/// row `(ci * k + dy) * k + dx`, column `y * w + x`.
pub fn im2col<F: Real>(x: &Array3<F>, k: usize) -> Array2<F> {
    let (c, h, w) = x.dim();
    let pad = (k / 2) as isize;
    let mut cols = Array2::<F>::zeros((c * k * k, h * w));
    for ci in 0..c {
        let plane = x.index_axis(Axis(0), ci);
        for dy in 0..k {
            for dx in 0..k {
                let mut row = cols.row_mut((ci * k + dy) * k + dx);
                let row = row.as_slice_mut().expect("standard layout");
                let oy = dy as isize - pad;
                let ox = dx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-ox).max(0) as usize;
                    let x1 = ((w as isize - ox).min(w as isize)).max(0) as usize;
                    for xx in x0..x1 {
                        row[y * w + xx] = plane[[sy as usize, (xx as isize + ox) as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub fn col2im<F: Real>(cols: &Array2<F>, c: usize, h: usize, w: usize, k: usize) -> Array3<F> {
    let pad = (k / 2) as isize;
    let mut x = Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for dy in 0..k {
            for dx in 0..k {
                let row = cols.row((ci * k + dy) * k + dx);
                let oy = dy as isize - pad;
                let ox = dx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-ox).max(0) as usize;
                    let x1 = ((w as isize - ox).min(w as isize)).max(0) as usize;
                    for xx in x0..x1 {
                        let v = row[y * w + xx];
                        x[[ci, sy as usize, (xx as isize + ox) as usize]] += v;
                    }
                }
            }
        }
    }
    x
}

fn weight_view<'a, F: Real>(weight: &'a [F], cout: usize, cin: usize, k: usize) -> Result<ArrayView2<'a, F>> {
    ArrayView2::from_shape((cout, cin * k * k), weight).map_err(|_| {
        Error::DimensionMismatch(format!(
            "conv weight of length {} is not {cout}x{cin}x{k}x{k}",
            weight.len()
        ))
    })
}

/// Stride-1 convolution with same-size zero padding. `weight` is
/// `(cout, cin, k, k)` row-major.
pub fn conv_forward<F: Real>(x: &Array3<F>, weight: &[F], bias: &[F], cout: usize, k: usize) -> Result<Array3<F>> {
    let (cin, h, w) = x.dim();
    let wv = weight_view(weight, cout, cin, k)?;
    if bias.len() != cout {
        return Err(Error::DimensionMismatch(format!(
            "conv bias has {} entries, expected {cout}",
            bias.len()
        )));
    }
    let mut y = wv.dot(&im2col(x, k));
    for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(bias) {
        row.mapv_inplace(|v| v + b);
    }
    Ok(y.into_shape_with_order((cout, h, w)).expect("contiguous"))
}

pub struct ConvGrads<F> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
    pub input: Option<Array3<F>>,
}

pub fn conv_backward<F: Real>(
    x: &Array3<F>,
    weight: &[F],
    dy: &Array3<F>,
    k: usize,
    need_input: bool,
) -> Result<ConvGrads<F>> {
    let (cin, h, w) = x.dim();
    let cout = dy.dim().0;
    if dy.dim() != (cout, h, w) {
        return Err(Error::DimensionMismatch("conv output gradient shape".into()));
    }
    let wv = weight_view(weight, cout, cin, k)?;
    let dy2 = dy.view().into_shape_with_order((cout, h * w)).expect("contiguous");
    let cols = im2col(x, k);
    let dw = dy2.dot(&cols.t());
    let db = dy2.sum_axis(Axis(1)).to_vec();
    let input = need_input.then(|| col2im(&wv.t().dot(&dy2), cin, h, w, k));
    Ok(ConvGrads {
        weight: dw.into_raw_vec_and_offset().0,
        bias: db,
        input,
    })
}

pub fn relu_inplace<F: Real>(x: &mut Array3<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward<F: Real>(dy: &mut Array3<F>, y: &Array3<F>) {
    ndarray::Zip::from(dy).and(y).for_each(|d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
}

/// 2x2 max-pool with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled map and, per output cell, the flat input index of
/// the first maximum.
pub fn maxpool_forward<F: Real>(x: &Array3<F>) -> (Array3<F>, Vec<usize>) {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array3::<F>::zeros((c, oh, ow));
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for r in 0..oh {
            for q in 0..ow {
                let mut best = (2 * r, 2 * q);
                for (dr, dq) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = (2 * r + dr, 2 * q + dq);
                    if x[[ci, cand.0, cand.1]] > x[[ci, best.0, best.1]] {
                        best = cand;
                    }
                }
                y[[ci, r, q]] = x[[ci, best.0, best.1]];
                arg.push((ci * h + best.0) * w + best.1);
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward<F: Real>(dy: &Array3<F>, arg: &[usize], input_dim: (usize, usize, usize)) -> Array3<F> {
    let mut dx = Array3::<F>::zeros(input_dim);
    let flat = dx.as_slice_mut().expect("contiguous");
    for (&i, &g) in arg.iter().zip(dy.iter()) {
        flat[i] += g;
    }
    dx
}

/// Normalised activations and inverse standard deviations kept for the
/// backward pass.
pub struct BnCache<F> {
    pub xhat: Array2<F>,
    pub inv_std: Vec<F>,
}

/// Batch statistics over rows: returns output, batch mean, biased batch
/// variance and the backward cache.
pub fn batchnorm_train<F: Real>(x: &Array2<F>, gamma: &[F], beta: &[F]) -> (Array2<F>, Vec<F>, Vec<F>, BnCache<F>) {
    let n = F::of(x.nrows() as f64);
    let mean = x.sum_axis(Axis(0)).mapv(|v| v / n);
    let mut xhat = x - &mean;
    let var = xhat.mapv(|v| v * v).sum_axis(Axis(0)).mapv(|v| v / n);
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + F::of(BN_EPS)).sqrt()).collect();
    for mut row in xhat.axis_iter_mut(Axis(0)) {
        for (v, &s) in row.iter_mut().zip(&inv_std) {
            *v *= s;
        }
    }
    let mut y = xhat.clone();
    for mut row in y.axis_iter_mut(Axis(0)) {
        for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = *v * g + b;
        }
    }
    (y, mean.to_vec(), var.to_vec(), BnCache { xhat, inv_std })
}

pub fn batchnorm_infer<F: Real>(x: &Array2<F>, gamma: &[F], beta: &[F], mean: &[F], var: &[F]) -> Array2<F> {
    let scale: Vec<F> = gamma
        .iter()
        .zip(var)
        .map(|(&g, &v)| g / (v + F::of(BN_EPS)).sqrt())
        .collect();
    let mut y = x.clone();
    for mut row in y.axis_iter_mut(Axis(0)) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[j]) * scale[j] + beta[j];
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<F: Real>(dy: &Array2<F>, cache: &BnCache<F>, gamma: &[F]) -> (Array2<F>, Vec<F>, Vec<F>) {
    let n = F::of(dy.nrows() as f64);
    let dbeta = dy.sum_axis(Axis(0)).to_vec();
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0)).to_vec();
    let mut dx = Array2::<F>::zeros(dy.raw_dim());
    for ((mut out, d), xh) in dx
        .axis_iter_mut(Axis(0))
        .zip(dy.axis_iter(Axis(0)))
        .zip(cache.xhat.axis_iter(Axis(0)))
    {
        for j in 0..out.len() {
            // dxhat = dy * gamma; dx = inv_std / n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
            let s1 = dbeta[j] * gamma[j];
            let s2 = dgamma[j] * gamma[j];
            out[j] = cache.inv_std[j] / n * (n * d[j] * gamma[j] - s1 - xh[j] * s2);
        }
    }
    (dx, dgamma, dbeta)
}

/// `running <- momentum * running + (1 - momentum) * batch`.
pub fn update_running<F: Real>(running: &mut [F], batch: &[F]) {
    let m = F::of(BN_MOMENTUM);
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = m * *r + (F::one() - m) * b;
    }
}

/// `x W^T + b` for `x: (n, in)`, `W: (out, in)`.
pub fn linear_forward<F: Real>(x: &Array2<F>, weight: &[F], bias: &[F]) -> Result<Array2<F>> {
    let out = bias.len();
    let w = ArrayView2::from_shape((out, x.ncols()), weight).map_err(|_| {
        Error::DimensionMismatch(format!(
            "linear weight of length {} does not match {out}x{}",
            weight.len(),
            x.ncols()
        ))
    })?;
    let mut y = x.dot(&w.t());
    y += &ndarray::ArrayView1::from(bias);
    Ok(y)
}

/// Returns `(dx, dW, db)`; `dx` is skipped when not needed.
pub fn linear_backward<F: Real>(
    x: &Array2<F>,
    weight: &[F],
    dy: &Array2<F>,
    need_input: bool,
) -> (Option<Array2<F>>, Vec<F>, Vec<F>) {
    let w = ArrayView2::from_shape((dy.ncols(), x.ncols()), weight).expect("checked in forward");
    let dw = dy.t().dot(x);
    let db = dy.sum_axis(Axis(0)).to_vec();
    let dx = need_input.then(|| dy.dot(&w));
    (dx, dw.into_raw_vec_and_offset().0, db)
}

/// Copies rows `lo..hi` out of a row-major matrix.
pub fn rows<F: Real>(x: &Array2<F>, lo: usize, hi: usize) -> Array2<F> {
    x.slice(s![lo..hi, ..]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_conv() {
        let x = Array3::<f64>::ones((1, 3, 3));
        let y = conv_forward(&x, &[1.0; 9], &[0.0], 1, 3).unwrap();
        assert_eq!(y[[0, 1, 1]], 9.0);
        assert_eq!(y[[0, 0, 0]], 4.0);
        assert_eq!(y[[0, 0, 1]], 6.0);
    }

    #[test]
    fn conv_shape_errors() {
        let x = Array3::<f64>::ones((2, 3, 3));
        assert!(conv_forward(&x, &[1.0; 9], &[0.0], 1, 3).is_err());
        assert!(conv_forward(&x, &[1.0; 18], &[0.0, 0.0], 1, 3).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (cin, cout, h, w, k) = (2, 3, 5, 4, 3);
        let x = Array3::from_shape_fn((cin, h, w), |(c, y, x)| ((c * 31 + y * 7 + x * 3) % 11) as f64 - 5.0);
        let weight: Vec<f64> = (0..cout * cin * k * k).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let bias = vec![0.5, -1.0, 2.0];
        let y = conv_forward(&x, &weight, &bias, cout, k).unwrap();
        for o in 0..cout {
            for r in 0..h {
                for c in 0..w {
                    let mut acc = bias[o];
                    for i in 0..cin {
                        for dy in 0..k {
                            for dx in 0..k {
                                let (sy, sx) = (r as isize + dy as isize - 1, c as isize + dx as isize - 1);
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += weight[((o * cin + i) * k + dy) * k + dx] * x[[i, sy as usize, sx as usize]];
                                }
                            }
                        }
                    }
                    assert!((y[[o, r, c]] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let x = Array3::from_shape_fn((2, 4, 5), |(c, y, x)| (c + 2 * y + 3 * x) as f64 * 0.1);
        let cols = im2col(&x, 3);
        let g = Array2::from_shape_fn(cols.raw_dim(), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        let lhs: f64 = (&cols * &g).sum();
        let rhs: f64 = (&x * &col2im(&g, 2, 4, 5, 3)).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn maxpool_picks_the_maximum() {
        let x = Array3::from_shape_vec((1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool_forward(&x);
        assert_eq!(y[[0, 0, 0]], 4.0);
        let dx = maxpool_backward(&Array3::from_elem((1, 1, 1), 1.0), &arg, (1, 2, 2));
        assert_eq!(dx.into_raw_vec_and_offset().0, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn batchnorm_of_two_values() {
        let x = Array2::from_shape_vec((2, 1), vec![1.0f64, 3.0]).unwrap();
        let (y, mean, var, _) = batchnorm_train(&x, &[1.0], &[0.0]);
        assert!((y[[0, 0]] + 1.0).abs() < 1e-4);
        assert!((y[[1, 0]] - 1.0).abs() < 1e-4);
        assert_eq!((mean[0], var[0]), (2.0, 1.0));
        let yi = batchnorm_infer(&x, &[1.0], &[0.0], &mean, &var);
        assert!((&yi - &y).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn batchnorm_gradient_matches_finite_differences() {
        let x = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 7 + j * 5) % 6) as f64 * 0.3 - 0.4 + j as f64);
        let gamma = [1.3, 0.7, -0.4];
        let beta = [0.1, -0.2, 0.3];
        let g = Array2::from_shape_fn((5, 3), |(i, j)| ((i + 2 * j) % 4) as f64 - 1.5);
        let loss = |x: &Array2<f64>| (&batchnorm_train(x, &gamma, &beta).0 * &g).sum();
        let (_, _, _, cache) = batchnorm_train(&x, &gamma, &beta);
        let (dx, _, _) = batchnorm_backward(&g, &cache, &gamma);
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
                assert!((fd - dx[[i, j]]).abs() < 1e-6, "{i},{j}: {fd} vs {}", dx[[i, j]]);
            }
        }
    }

    #[test]
    fn running_moments_use_momentum() {
        let mut r = vec![1.0f64];
        update_running(&mut r, &[0.0]);
        assert!((r[0] - 0.9).abs() < 1e-15);
    }
}
