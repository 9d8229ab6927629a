//! Exact Euclidean distance transform (lower-envelope-of-parabolas method,
//! separable over columns then rows).

use crate::error::{Error, Result};
use crate::imagecore::Mask;

/// Euclidean distance, in pixels, from every pixel centre to the nearest
/// pixel of a target set.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMap {
    height: usize,
    width: usize,
    dist: Vec<f64>,
}

impl DistanceMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.dist
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.dist[row * self.width + col]
    }
}

/// Squared distance transform of a 1-D sampled function `f` into `out`.
fn envelope_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let mut seeded = f[0].is_finite();
    for q in 1..n {
        if !f[q].is_finite() {
            continue;
        }
        if !seeded {
            v[0] = q;
            seeded = true;
            continue;
        }
        let parabola_cut =
            |p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
        let mut s = parabola_cut(v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola_cut(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    if !seeded {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distances to the nearest `true` pixel. Pixels have
/// infinite distance when the target is empty.
pub fn squared_distance_transform(target: &Mask) -> Vec<f64> {
    let (h, w) = (target.height(), target.width());
    let mut grid: Vec<f64> = target
        .data()
        .iter()
        .map(|&t| if t { 0.0 } else { f64::INFINITY })
        .collect();
    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..w {
        for r in 0..h {
            f[r] = grid[r * w + c];
        }
        envelope_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    for r in 0..h {
        f[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        envelope_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// Exact Euclidean distance transform. Errors on an empty target.
pub fn distance_transform(target: &Mask) -> Result<DistanceMap> {
    if !target.any() {
        return Err(Error::Empty("distance transform target set has no pixels".into()));
    }
    let dist = squared_distance_transform(target).into_iter().map(f64::sqrt).collect();
    Ok(DistanceMap {
        height: target.height(),
        width: target.width(),
        dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(mask: &Mask) -> Vec<f64> {
        let (h, w) = (mask.height(), mask.width());
        let pts: Vec<(f64, f64)> = (0..h * w)
            .filter(|&i| mask.data()[i])
            .map(|i| ((i / w) as f64, (i % w) as f64))
            .collect();
        (0..h * w)
            .map(|i| {
                let (r, c) = ((i / w) as f64, (i % w) as f64);
                pts.iter()
                    .map(|&(pr, pc)| ((pr - r).powi(2) + (pc - c).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn three_four_five() {
        let mut m = Mask::empty(6, 6);
        m.set(0, 0, true);
        let d = distance_transform(&m).unwrap();
        assert_eq!(d.get(3, 4), 5.0);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn full_target_gives_zero_map() {
        let m = Mask::from_fn(7, 9, |_, _| true);
        assert!(distance_transform(&m).unwrap().values().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn empty_target_is_an_error() {
        assert!(distance_transform(&Mask::empty(4, 4)).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let (h, w) = (rng.random_range(1..24), rng.random_range(1..24));
            let density = rng.random_range(0.005..0.5);
            let mut m = Mask::from_fn(h, w, |_, _| rng.random_bool(density));
            if !m.any() {
                m.set(h / 2, w / 2, true);
            }
            let d = distance_transform(&m).unwrap();
            for (a, b) in d.values().iter().zip(brute(&m)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_lipschitz_across_four_neighbours() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mut m = Mask::from_fn(30, 30, |_, _| rng.random_bool(0.02));
            m.set(0, 0, true);
            let d = distance_transform(&m).unwrap();
            for r in 0..30 {
                for c in 0..30 {
                    if r + 1 < 30 {
                        assert!((d.get(r, c) - d.get(r + 1, c)).abs() <= 1.0 + 1e-12);
                    }
                    if c + 1 < 30 {
                        assert!((d.get(r, c) - d.get(r, c + 1)).abs() <= 1.0 + 1e-12);
                    }
                }
            }
        }
    }
}
