//! Otsu's global threshold over a 256-level histogram.

use crate::error::{Error, Result};
use crate::imagecore::{Mask, Micrograph};

/// Histogram level of an intensity in `[0, 1]`.
#[inline]
pub fn level_of(v: f32) -> usize {
    ((v * 255.0).round() as i64).clamp(0, 255) as usize
}

pub fn histogram(m: &Micrograph) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in m.pixels() {
        hist[level_of(v)] += 1;
    }
    hist
}

#[derive(Clone, Debug, PartialEq)]
pub struct OtsuResult {
    /// Highest level assigned to the dark class.
    pub level: u8,
    /// Intensity cut between `level` and `level + 1`.
    pub threshold: f64,
    /// Between-class variance at the chosen level.
    pub between_class_variance: f64,
    /// Bright (carbide) pixels: level above the threshold level.
    pub mask: Mask,
}

/// Between-class variance `w0 * w1 * (mu0 - mu1)^2` for every split level,
/// from cumulative sums. `None` where a class is empty.
pub fn between_class_variances(hist: &[u64; 256]) -> [Option<f64>; 256] {
    let total: f64 = hist.iter().map(|&c| c as f64).sum();
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut out = [None; 256];
    let (mut w0, mut s0) = (0.0, 0.0);
    for t in 0..256 {
        w0 += hist[t] as f64;
        s0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = s0 / w0;
        let mu1 = (total_sum - s0) / w1;
        let p0 = w0 / total;
        let p1 = w1 / total;
        out[t] = Some(p0 * p1 * (mu0 - mu1) * (mu0 - mu1));
    }
    out
}

/// Threshold maximizing between-class variance; ties go to the smallest level.
pub fn otsu_threshold(m: &Micrograph) -> Result<OtsuResult> {
    let hist = histogram(m);
    let vars = between_class_variances(&hist);
    let mut best: Option<(usize, f64)> = None;
    for (t, v) in vars.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
    }
    let (level, var) = best.ok_or(Error::ConstantImage)?;
    let data = m.pixels().iter().map(|&v| level_of(v) > level).collect();
    Ok(OtsuResult {
        level: level as u8,
        threshold: (level as f64 + 0.5) / 255.0,
        between_class_variance: var,
        mask: Mask::new(m.height(), m.width(), data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_delta_histogram_splits_between_the_deltas() {
        let px: Vec<f32> = (0..200)
            .map(|i| if i < 120 { 50.0 / 255.0 } else { 200.0 / 255.0 })
            .collect();
        let m = Micrograph::new(10, 20, px).unwrap();
        let r = otsu_threshold(&m).unwrap();
        assert!((50..200).contains(&r.level));
        assert_eq!(r.level, 50);
        assert_eq!(r.mask.count(), 80);
    }

    #[test]
    fn constant_image_has_no_threshold() {
        assert!(matches!(
            otsu_threshold(&Micrograph::filled(4, 4, 0.3)),
            Err(Error::ConstantImage)
        ));
    }
}
