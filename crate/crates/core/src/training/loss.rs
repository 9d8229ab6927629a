//! Pixelwise softmax losses with class weights, and inverse-frequency
//! class weighting.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::LabelMap;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[serde(alias = "cross_entropy", alias = "crossentropy")]
    Ce,
    Focal,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" | "cross_entropy" | "crossentropy" => Ok(LossKind::Ce),
            "focal" => Ok(LossKind::Focal),
            other => Err(Error::invalid(
                "loss",
                format!("unknown loss `{other}` (expected focal or ce)"),
            )),
        }
    }
}

/// How the per-class weights are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSpec {
    /// Equal weights summing to one.
    Uniform,
    /// Inverse pixel frequency over the training labels, normalised to sum
    /// to one.
    InverseFrequency,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    pub kind: LossKind,
    pub gamma: f64,
    pub alpha: AlphaSpec,
    /// Frequency floor for classes absent from the training labels; without
    /// it an absent class is an error under inverse-frequency weighting.
    pub frequency_floor: Option<f64>,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            kind: LossKind::Focal,
            gamma: 2.0,
            alpha: AlphaSpec::InverseFrequency,
            frequency_floor: None,
        }
    }
}

pub const DEFAULT_FREQUENCY_FLOOR: f64 = 1e-4;

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(
                "gamma",
                format!("{} must be finite and >= 0", self.gamma),
            ));
        }
        if let AlphaSpec::Explicit(a) = &self.alpha {
            if a.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::invalid("alpha", "class weights must be positive"));
            }
        }
        if let Some(f) = self.frequency_floor {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid("frequency_floor", format!("{f} is outside (0, 1)")));
            }
        }
        Ok(())
    }

    /// Concrete class weights for a training set.
    pub fn resolve_alpha(&self, maps: &[&LabelMap], k: usize) -> Result<Vec<f64>> {
        match &self.alpha {
            AlphaSpec::Uniform => Ok(vec![1.0 / k as f64; k]),
            AlphaSpec::InverseFrequency => class_weights_inverse_frequency(maps, self.frequency_floor),
            AlphaSpec::Explicit(a) if a.len() == k => Ok(a.clone()),
            AlphaSpec::Explicit(a) => Err(Error::invalid(
                "alpha",
                format!("{} class weights given for {k} classes", a.len()),
            )),
        }
    }

    pub fn evaluate<F: Real>(&self, logits: &Array2<F>, labels: &[u8], alpha: &[f64]) -> Result<(f64, Array2<F>)> {
        match self.kind {
            LossKind::Ce => cross_entropy(logits, labels, alpha),
            LossKind::Focal => focal_loss(logits, labels, self.gamma, alpha),
        }
    }
}

/// `alpha_c = (1 / f_c) / sum_k (1 / f_k)`. With a floor, frequencies are
/// raised to at least `floor`; without one an absent class is an error.
pub fn alpha_from_frequencies(freqs: &[f64], floor: Option<f64>, names: &[String]) -> Result<Vec<f64>> {
    let mut inv = Vec::with_capacity(freqs.len());
    for (c, &f) in freqs.iter().enumerate() {
        let f = match floor {
            Some(fl) => f.max(fl),
            None if f > 0.0 => f,
            None => {
                return Err(Error::AbsentClass {
                    class: c,
                    name: names.get(c).cloned().unwrap_or_else(|| format!("class{c}")),
                })
            }
        };
        inv.push(1.0 / f);
    }
    let s: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|v| v / s).collect())
}

pub fn class_weights_inverse_frequency(maps: &[&LabelMap], floor: Option<f64>) -> Result<Vec<f64>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Empty("no label maps to weight".into()))?;
    let tax = first.taxonomy();
    let k = tax.len();
    let mut counts = vec![0u64; k];
    let mut total = 0u64;
    for m in maps {
        if m.num_classes() != k {
            return Err(Error::DimensionMismatch("label maps use different taxonomies".into()));
        }
        for &l in m.labels() {
            counts[l as usize] += 1;
        }
        total += m.labels().len() as u64;
    }
    if total == 0 {
        return Err(Error::Empty("label maps contain no pixels".into()));
    }
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    alpha_from_frequencies(&freqs, floor, &tax.names)
}

fn check<F: Real>(logits: &Array2<F>, labels: &[u8], alpha: &[f64]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if alpha.len() != logits.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} class weights for {} classes",
            alpha.len(),
            logits.ncols()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= alpha.len()) {
        return Err(Error::invalid("labels", format!("label {l} >= K = {}", alpha.len())));
    }
    if labels.is_empty() {
        return Err(Error::Empty("loss over zero pixels".into()));
    }
    Ok(())
}

/// Log-softmax of one row, computed in f64 with max subtraction.
fn log_softmax<F: Real>(row: ndarray::ArrayView1<F>, out: &mut Vec<f64>) {
    out.clear();
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.f64()));
    let lse = row.iter().map(|&v| (v.f64() - max).exp()).sum::<f64>().ln();
    out.extend(row.iter().map(|&v| v.f64() - max - lse));
}

/// Mean over pixels of `-alpha_y log p_y`, and its gradient with respect to
/// the logits.
pub fn cross_entropy<F: Real>(logits: &Array2<F>, labels: &[u8], alpha: &[f64]) -> Result<(f64, Array2<F>)> {
    check(logits, labels, alpha)?;
    let n = labels.len() as f64;
    let mut grad = Array2::<F>::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut lp = Vec::new();
    for (i, (row, &y)) in logits.outer_iter().zip(labels).enumerate() {
        log_softmax(row, &mut lp);
        let y = y as usize;
        let a = alpha[y];
        loss -= a * lp[y];
        for (j, &l) in lp.iter().enumerate() {
            let d = if j == y { 1.0 } else { 0.0 };
            grad[[i, j]] = F::of(a * (l.exp() - d) / n);
        }
    }
    Ok((loss / n, grad))
}

/// Mean over pixels of `-alpha_y (1 - p_y)^gamma log p_y`, and its gradient.
pub fn focal_loss<F: Real>(logits: &Array2<F>, labels: &[u8], gamma: f64, alpha: &[f64]) -> Result<(f64, Array2<F>)> {
    check(logits, labels, alpha)?;
    let n = labels.len() as f64;
    let mut grad = Array2::<F>::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut lp = Vec::new();
    for (i, (row, &y)) in logits.outer_iter().zip(labels).enumerate() {
        log_softmax(row, &mut lp);
        let y = y as usize;
        let a = alpha[y];
        let log_pt = lp[y];
        let pt = log_pt.exp();
        let q = -log_pt.exp_m1();
        let modulation = q.powf(gamma);
        loss -= a * modulation * log_pt;
        // dL/dz_j = a [gamma q^(gamma-1) pt log pt - q^gamma] (delta_jy - p_j)
        let curvature = if gamma == 0.0 || q == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * pt * log_pt
        };
        let coef = a * (curvature - modulation) / n;
        for (j, &l) in lp.iter().enumerate() {
            let d = if j == y { 1.0 } else { 0.0 };
            grad[[i, j]] = F::of(coef * (d - l.exp()));
        }
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::imagecore::ClassTaxonomy;

    fn row(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let (l, _) = cross_entropy(&row(&[0.3; 4]), &[2], &[1.0; 4]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let (l, _) = cross_entropy(&row(&[60.0, 0.0, 0.0]), &[0], &[1.0; 3]).unwrap();
        assert!(l < 1e-20);
    }

    #[test]
    fn focal_at_half_probability() {
        let (l, _) = focal_loss(&row(&[0.0, 0.0]), &[1], 2.0, &[1.0, 1.0]).unwrap();
        assert!((l - 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.17329).abs() < 1e-5);
    }

    #[test]
    fn focal_vanishes_faster_than_cross_entropy() {
        let mut prev = f64::INFINITY;
        for z in [2.0, 4.0, 8.0, 16.0] {
            let logits = row(&[z, 0.0, 0.0]);
            let (f, _) = focal_loss(&logits, &[0], 2.0, &[1.0; 3]).unwrap();
            let (c, _) = cross_entropy(&logits, &[0], &[1.0; 3]).unwrap();
            let ratio = f / c;
            assert!(ratio < prev);
            prev = ratio;
        }
        assert!(prev < 1e-12);
    }

    fn fd_check(kind: LossKind, gamma: f64) {
        let logits = Array2::from_shape_fn((5, 4), |(i, j)| {
            ((i * 7 + j * 3) % 5) as f64 * 0.7 - 1.2 + 0.1 * i as f64
        });
        let labels = [0u8, 3, 1, 2, 3];
        let alpha = [0.1, 0.2, 0.3, 0.4];
        let p = LossParams {
            kind,
            gamma,
            ..Default::default()
        };
        let (_, g) = p.evaluate(&logits, &labels, &alpha).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..4 {
                let mut a = logits.clone();
                a[[i, j]] += h;
                let mut b = logits.clone();
                b[[i, j]] -= h;
                let fd = (p.evaluate(&a, &labels, &alpha).unwrap().0 - p.evaluate(&b, &labels, &alpha).unwrap().0)
                    / (2.0 * h);
                let rel = (fd - g[[i, j]]).abs() / fd.abs().max(g[[i, j]].abs()).max(1e-10);
                assert!(rel < 1e-6, "{kind:?} ({i},{j}): {fd} vs {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(LossKind::Ce, 0.0);
        fd_check(LossKind::Focal, 2.0);
        fd_check(LossKind::Focal, 0.5);
    }

    #[test]
    fn focal_gradient_is_finite_at_certainty() {
        let (_, g) = focal_loss(&row(&[800.0, 0.0]), &[0], 0.5, &[1.0, 1.0]).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn inverse_frequency_weights() {
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let a = alpha_from_frequencies(&[0.9, 0.1], None, &names).unwrap();
        assert!((a[0] - 0.1).abs() < 1e-12 && (a[1] - 0.9).abs() < 1e-12);
        let a = alpha_from_frequencies(&[0.25; 4], None, &[]).unwrap();
        assert!(a.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(matches!(
            alpha_from_frequencies(&[1.0, 0.0], None, &names),
            Err(Error::AbsentClass { class: 1, .. })
        ));
        let a = alpha_from_frequencies(&[1.0, 0.0], Some(DEFAULT_FREQUENCY_FLOOR), &names).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_from_label_maps() {
        let m = LabelMap::new(1, 10, vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 1], ClassTaxonomy::particle()).unwrap();
        let a = class_weights_inverse_frequency(&[&m], None).unwrap();
        assert!((a[0] - 0.1).abs() < 1e-12 && (a[1] - 0.9).abs() < 1e-12);
        let none = LabelMap::filled(2, 2, 0, ClassTaxonomy::particle()).unwrap();
        assert!(class_weights_inverse_frequency(&[&none], None).is_err());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        assert!(cross_entropy(&row(&[0.0, 1.0]), &[0, 1], &[1.0, 1.0]).is_err());
        assert!(cross_entropy(&row(&[0.0, 1.0]), &[2], &[1.0, 1.0]).is_err());
        assert!(focal_loss(&row(&[0.0, 1.0]), &[0], 2.0, &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn focal_is_bounded_by_cross_entropy(z in prop::collection::vec(-20.0f64..20.0, 4), y in 0u8..4, gamma in 0.0f64..5.0) {
            let alpha = [0.4, 0.1, 0.3, 0.2];
            let (f, _) = focal_loss(&row(&z), &[y], gamma, &alpha).unwrap();
            let (c, _) = cross_entropy(&row(&z), &[y], &alpha).unwrap();
            prop_assert!(f >= 0.0 && c >= 0.0);
            prop_assert!(f <= c + 1e-15);
        }

        #[test]
        fn losses_are_shift_invariant(z in prop::collection::vec(-20.0f64..20.0, 3), y in 0u8..3, shift in -50.0f64..50.0) {
            let alpha = [1.0; 3];
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            for kind in [LossKind::Ce, LossKind::Focal] {
                let p = LossParams { kind, ..Default::default() };
                let (a, ga) = p.evaluate(&row(&z), &[y], &alpha).unwrap();
                let (b, gb) = p.evaluate(&row(&shifted), &[y], &alpha).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
                for (u, v) in ga.iter().zip(gb.iter()) {
                    prop_assert!((u - v).abs() <= 1e-9);
                }
            }
        }
    }
}
