//! Sparse bilinear sampling of tap feature maps at input-resolution pixels.
//!
//! Pixel centres sit at half-integers, so input pixel `r` lands at
//! `(r + 0.5) / s - 0.5` on a tap with stride `s`. Coordinates are clamped
//! to the tap extent.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::real::Real;

/// Up to four source cells and their weights for one pixel on one tap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bilinear {
    pub index: [usize; 4],
    pub weight: [f64; 4],
}

/// Fractional tap coordinate of input index `p` on a tap of extent `size`.
pub fn tap_coordinate(p: usize, stride: usize, size: usize) -> f64 {
    let f = (p as f64 + 0.5) / stride as f64 - 0.5;
    f.clamp(0.0, (size - 1) as f64)
}

/// Interpolation stencil at fractional position `(fy, fx)` on an `h x w`
/// plane; indices are flat `y * w + x`.
pub fn bilinear_stencil(fy: f64, fx: f64, h: usize, w: usize) -> Bilinear {
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ay, ax) = (fy - y0 as f64, fx - x0 as f64);
    Bilinear {
        index: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        weight: [(1.0 - ay) * (1.0 - ax), (1.0 - ay) * ax, ay * (1.0 - ax), ay * ax],
    }
}

/// Interpolated value of every channel of `map` at `(fy, fx)`.
pub fn bilinear_sample<F: Real>(map: &Array3<F>, fy: f64, fx: f64) -> Vec<F> {
    let (c, h, w) = map.dim();
    let st = bilinear_stencil(fy, fx, h, w);
    let flat = map.as_slice().expect("contiguous");
    (0..c)
        .map(|ci| {
            let plane = &flat[ci * h * w..(ci + 1) * h * w];
            (0..4).map(|j| plane[st.index[j]] * F::of(st.weight[j])).sum()
        })
        .collect()
}

/// One tap: a feature map and its stride relative to the input.
pub struct Tap<'a, F> {
    pub map: &'a Array3<F>,
    pub stride: usize,
}

/// Stencils per tap per pixel, kept for scattering gradients back.
pub struct SampleRecord {
    pub stencils: Vec<Vec<Bilinear>>,
}

/// Writes hypercolumns for `coords` into rows `row0..` of `out`, taps
/// concatenated in order. `(height, width)` is the input extent.
pub fn sparse_hypercolumn<F: Real>(
    taps: &[Tap<F>],
    coords: &[(usize, usize)],
    height: usize,
    width: usize,
    out: &mut Array2<F>,
    row0: usize,
) -> Result<SampleRecord> {
    let dim: usize = taps.iter().map(|t| t.map.dim().0).sum();
    if out.ncols() != dim || out.nrows() < row0 + coords.len() {
        return Err(Error::DimensionMismatch(format!(
            "hypercolumn buffer is {}x{}, need {} rows of width {dim}",
            out.nrows(),
            out.ncols(),
            row0 + coords.len()
        )));
    }
    if let Some(&(r, c)) = coords.iter().find(|&&(r, c)| r >= height || c >= width) {
        return Err(Error::invalid(
            "coords",
            format!("pixel ({r}, {c}) is outside the {height}x{width} image"),
        ));
    }
    let mut stencils = Vec::with_capacity(taps.len());
    let mut col0 = 0;
    for tap in taps {
        let (ch, th, tw) = tap.map.dim();
        let flat = tap.map.as_slice().expect("contiguous");
        let plane = th * tw;
        let mut st_tap = Vec::with_capacity(coords.len());
        for (i, &(r, c)) in coords.iter().enumerate() {
            let st = bilinear_stencil(
                tap_coordinate(r, tap.stride, th),
                tap_coordinate(c, tap.stride, tw),
                th,
                tw,
            );
            let wts = st.weight.map(F::of);
            let mut row = out.row_mut(row0 + i);
            for ci in 0..ch {
                let base = ci * plane;
                row[col0 + ci] = flat[base + st.index[0]] * wts[0]
                    + flat[base + st.index[1]] * wts[1]
                    + flat[base + st.index[2]] * wts[2]
                    + flat[base + st.index[3]] * wts[3];
            }
            st_tap.push(st);
        }
        stencils.push(st_tap);
        col0 += ch;
    }
    Ok(SampleRecord { stencils })
}

/// Adjoint of [`sparse_hypercolumn`]: adds the row gradients `dh[row0..]`
/// into per-tap map gradients.
pub fn scatter_hypercolumn<F: Real>(record: &SampleRecord, dh: &Array2<F>, row0: usize, grads: &mut [Array3<F>]) {
    let mut col0 = 0;
    for (st_tap, g) in record.stencils.iter().zip(grads.iter_mut()) {
        let (ch, th, tw) = g.dim();
        let plane = th * tw;
        let flat = g.as_slice_mut().expect("contiguous");
        for (i, st) in st_tap.iter().enumerate() {
            let row = dh.row(row0 + i);
            for ci in 0..ch {
                let d = row[col0 + ci];
                let base = ci * plane;
                for j in 0..4 {
                    flat[base + st.index[j]] += d * F::of(st.weight[j]);
                }
            }
        }
        col0 += ch;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_of_two_by_two() {
        let map = Array3::from_shape_vec((1, 2, 2), vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(bilinear_sample(&map, 0.5, 0.5), vec![1.5]);
    }

    #[test]
    fn stride_one_integer_coordinates_are_exact() {
        let map = Array3::from_shape_fn((2, 3, 4), |(c, y, x)| (c * 100 + y * 10 + x) as f64);
        let mut out = Array2::zeros((12, 2));
        let coords: Vec<(usize, usize)> = (0..3).flat_map(|y| (0..4).map(move |x| (y, x))).collect();
        sparse_hypercolumn(&[Tap { map: &map, stride: 1 }], &coords, 3, 4, &mut out, 0).unwrap();
        for (i, &(y, x)) in coords.iter().enumerate() {
            assert_eq!(out[[i, 0]], map[[0, y, x]]);
            assert_eq!(out[[i, 1]], map[[1, y, x]]);
        }
    }

    #[test]
    fn stride_two_coordinates() {
        assert_eq!(tap_coordinate(0, 2, 4), 0.0);
        assert_eq!(tap_coordinate(1, 2, 4), 0.25);
        assert_eq!(tap_coordinate(2, 2, 4), 0.75);
        assert_eq!(tap_coordinate(7, 2, 4), 3.0);
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        let map = Array3::<f64>::zeros((1, 2, 2));
        let mut out = Array2::zeros((1, 1));
        assert!(sparse_hypercolumn(&[Tap { map: &map, stride: 2 }], &[(4, 0)], 4, 4, &mut out, 0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let map = Array3::from_shape_fn((2, 3, 3), |(c, y, x)| ((c * 5 + y * 3 + x * 7) % 9) as f64 * 0.37);
        let coords = [(0, 0), (1, 4), (5, 2), (3, 3), (5, 5)];
        let g = Array2::from_shape_fn((5, 2), |(i, j)| (i as f64 - 2.0) * 0.5 + j as f64);
        let loss = |m: &Array3<f64>| {
            let mut out = Array2::zeros((5, 2));
            sparse_hypercolumn(&[Tap { map: m, stride: 2 }], &coords, 6, 6, &mut out, 0).unwrap();
            (&out * &g).sum()
        };
        let mut out = Array2::zeros((5, 2));
        let rec = sparse_hypercolumn(&[Tap { map: &map, stride: 2 }], &coords, 6, 6, &mut out, 0).unwrap();
        let mut grads = vec![Array3::zeros(map.raw_dim())];
        scatter_hypercolumn(&rec, &g, 0, &mut grads);
        let h = 1e-6;
        for (idx, &analytic) in grads[0].indexed_iter() {
            let mut p = map.clone();
            p[idx] += h;
            let mut m = map.clone();
            m[idx] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
            assert!(
                rel < 1e-4 || (fd - analytic).abs() < 1e-9,
                "{idx:?}: {fd} vs {analytic}"
            );
        }
    }
}
