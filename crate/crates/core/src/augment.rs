//! Random rotation, zoom, mirror and intensity augmentation, and uniform
//! pixel sampling for sparse training batches.

use std::f64::consts::TAU;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{LabelMap, Micrograph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    /// Rotation angle range in radians, inside [0, 2π].
    pub rotation: (f64, f64),
    /// Zoom factor range; 1 keeps the full field of view.
    pub scale: (f64, f64),
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Relative intensity shift; the factor is drawn from [1 - s, 1 + s].
    pub intensity_shift: f64,
    pub enabled: bool,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            rotation: (0.0, TAU),
            scale: (1.0, 2.0),
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            intensity_shift: 0.05,
            enabled: true,
        }
    }
}

impl AugmentSpec {
    pub fn disabled() -> Self {
        AugmentSpec {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (r0, r1) = self.rotation;
        if !(0.0 <= r0 && r0 <= r1 && r1 <= TAU) {
            return Err(Error::invalid(
                "rotation",
                format!("range ({r0}, {r1}) is not inside [0, 2π]"),
            ));
        }
        let (s0, s1) = self.scale;
        if !(1.0 <= s0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::invalid(
                "scale",
                format!("range ({s0}, {s1}) must satisfy 1 <= min <= max"),
            ));
        }
        for (arg, p) in [("hflip_prob", self.hflip_prob), ("vflip_prob", self.vflip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(arg, format!("{p} is not a probability")));
            }
        }
        if !(0.0..1.0).contains(&self.intensity_shift) {
            return Err(Error::invalid(
                "intensity_shift",
                format!("{} is outside [0, 1)", self.intensity_shift),
            ));
        }
        Ok(())
    }
}

/// One concrete draw from an [`AugmentSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub angle: f64,
    pub scale: f64,
    pub hflip: bool,
    pub vflip: bool,
    /// Multiplicative intensity factor.
    pub intensity: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            angle: 0.0,
            scale: 1.0,
            hflip: false,
            vflip: false,
            intensity: 1.0,
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn coin(rng: &mut impl Rng, p: f64) -> bool {
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        rng.random_bool(p)
    }
}

/// Draws each component uniformly from its range. A disabled spec yields
/// the identity without consuming randomness.
pub fn sample_augmentation(rng: &mut impl Rng, spec: &AugmentSpec) -> AugmentParams {
    if !spec.enabled {
        return AugmentParams::identity();
    }
    let angle = uniform(rng, spec.rotation);
    let scale = uniform(rng, spec.scale);
    let hflip = coin(rng, spec.hflip_prob);
    let vflip = coin(rng, spec.vflip_prob);
    let s = spec.intensity_shift;
    let intensity = uniform(rng, (1.0 - s, 1.0 + s));
    AugmentParams {
        angle,
        scale,
        hflip,
        vflip,
        intensity,
    }
}

/// Half-sample symmetric reflection of an integer index into `0..n`.
#[inline]
pub(crate) fn mirror_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let j = i.rem_euclid(2 * n);
    (if j >= n { 2 * n - 1 - j } else { j }) as usize
}

/// Source coordinate of every output pixel: flips first (undoing them on the
/// output grid), then inverse rotation and zoom about the image centre.
fn source_coords(h: usize, w: usize, p: &AugmentParams) -> Vec<(f64, f64)> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = p.angle.sin_cos();
    let inv = 1.0 / p.scale;
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let rr = if p.vflip { h - 1 - r } else { r };
        for c in 0..w {
            let cc = if p.hflip { w - 1 - c } else { c };
            let (dy, dx) = (rr as f64 - cy, cc as f64 - cx);
            let sy = cy + (dy * cos - dx * sin) * inv;
            let sx = cx + (dy * sin + dx * cos) * inv;
            out.push((sy, sx));
        }
    }
    out
}

fn bilinear(pixels: &[f32], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let at = |yy: i64, xx: i64| pixels[mirror_index(yy, h) * w + mirror_index(xx, w)] as f64;
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples the image bilinearly and the labels by nearest neighbour,
/// with mirrored borders. Output sizes equal input sizes.
pub fn apply_augmentation(m: &Micrograph, l: &LabelMap, p: &AugmentParams) -> Result<(Micrograph, LabelMap)> {
    let (h, w) = (m.height(), m.width());
    if !l.same_shape(h, w) {
        return Err(Error::DimensionMismatch(format!(
            "image is {h}x{w}, labels are {}x{}",
            l.height(),
            l.width()
        )));
    }
    if *p == AugmentParams::identity() {
        return Ok((m.clone(), l.clone()));
    }
    let coords = source_coords(h, w, p);
    let src = m.pixels();
    let pixels: Vec<f32> = coords
        .iter()
        .map(|&(y, x)| (bilinear(src, h, w, y, x) * p.intensity).clamp(0.0, 1.0) as f32)
        .collect();
    let labels: Vec<u8> = coords
        .iter()
        .map(|&(y, x)| {
            let (yy, xx) = (mirror_index(y.round() as i64, h), mirror_index(x.round() as i64, w));
            l.labels()[yy * w + xx]
        })
        .collect();
    Ok((
        Micrograph::new(h, w, pixels)?.with_scale(m.scale),
        l.with_labels(labels)?,
    ))
}

/// `n` distinct (row, col) coordinates drawn uniformly without replacement.
pub fn sample_pixels(l: &LabelMap, n: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    let total = l.height() * l.width();
    if n > total {
        return Err(Error::invalid(
            "n",
            format!("cannot sample {n} distinct pixels from {total}"),
        ));
    }
    let w = l.width();
    Ok(index::sample(rng, total, n)
        .into_iter()
        .map(|i| (i / w, i % w))
        .collect())
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::imagecore::ClassTaxonomy;

    fn ramp(n: usize) -> (Micrograph, LabelMap) {
        let px = (0..n * n).map(|i| i as f32 / (n * n) as f32).collect();
        let lb = (0..n * n).map(|i| (i % 4) as u8).collect();
        (
            Micrograph::new(n, n, px).unwrap(),
            LabelMap::new(n, n, lb, ClassTaxonomy::microconstituent()).unwrap(),
        )
    }

    #[test]
    fn zero_width_ranges_give_the_only_admissible_draw() {
        let spec = AugmentSpec {
            rotation: (1.0, 1.0),
            scale: (1.5, 1.5),
            hflip_prob: 1.0,
            vflip_prob: 0.0,
            intensity_shift: 0.0,
            enabled: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_augmentation(&mut rng, &spec);
        assert_eq!(
            p,
            AugmentParams {
                angle: 1.0,
                scale: 1.5,
                hflip: true,
                vflip: false,
                intensity: 1.0
            }
        );
    }

    #[test]
    fn angle_mean_is_pi() {
        let spec = AugmentSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| sample_augmentation(&mut rng, &spec).angle).sum::<f64>() / n as f64;
        // sd of the mean of U(0, 2π) draws: 2π / sqrt(12 n).
        let sd = TAU / (12.0 * n as f64).sqrt();
        assert!((mean - std::f64::consts::PI).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn same_seed_same_draw() {
        let spec = AugmentSpec::default();
        let a = sample_augmentation(&mut ChaCha8Rng::seed_from_u64(3), &spec);
        let b = sample_augmentation(&mut ChaCha8Rng::seed_from_u64(3), &spec);
        assert_eq!(a, b);
    }

    #[test]
    fn identity_is_a_no_op() {
        let (m, l) = ramp(9);
        let (m2, l2) = apply_augmentation(&m, &l, &AugmentParams::identity()).unwrap();
        assert_eq!((m, l), (m2, l2));
    }

    #[test]
    fn quarter_turn_is_an_index_permutation() {
        let n = 11;
        let (m, l) = ramp(n);
        let p = AugmentParams {
            angle: std::f64::consts::FRAC_PI_2,
            ..AugmentParams::identity()
        };
        let (m2, l2) = apply_augmentation(&m, &l, &p).unwrap();
        for r in 0..n {
            for c in 0..n {
                assert!((m2.get(r, c) - m.get(n - 1 - c, r)).abs() < 1e-6);
                assert_eq!(l2.get(r, c), l.get(n - 1 - c, r));
            }
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let (m, l) = ramp(8);
        let p = AugmentParams {
            hflip: true,
            vflip: true,
            ..AugmentParams::identity()
        };
        let (m1, l1) = apply_augmentation(&m, &l, &p).unwrap();
        assert_ne!(m1, m);
        let (m2, l2) = apply_augmentation(&m1, &l1, &p).unwrap();
        assert_eq!((m, l), (m2, l2));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let (m, _) = ramp(8);
        let (_, l) = ramp(9);
        assert!(apply_augmentation(&m, &l, &AugmentParams::identity()).is_err());
    }

    #[test]
    fn bad_specs_are_rejected() {
        let spec = AugmentSpec {
            scale: (0.5, 2.0),
            ..Default::default()
        };
        assert!(spec.validate().is_err());
        let spec = AugmentSpec {
            rotation: (0.0, 7.0),
            ..Default::default()
        };
        assert!(spec.validate().is_err());
        assert!(AugmentSpec::default().validate().is_ok());
    }

    #[test]
    fn pixel_samples_are_distinct() {
        let l = LabelMap::filled(484, 645, 0, ClassTaxonomy::particle()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_pixels(&l, 2048, &mut rng).unwrap();
        assert_eq!(s.len(), 2048);
        assert_eq!(s.iter().collect::<HashSet<_>>().len(), 2048);
        assert!(s.iter().all(|&(r, c)| r < 484 && c < 645));
        let again = sample_pixels(&l, 2048, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s, again);

        let small = LabelMap::filled(3, 4, 0, ClassTaxonomy::particle()).unwrap();
        let all = sample_pixels(&small, 12, &mut rng).unwrap();
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 12);
        assert!(sample_pixels(&small, 13, &mut rng).is_err());
    }
}
