//! Confusion-matrix segmentation metrics: per-class precision, recall and
//! intersection-over-union, and overall pixel accuracy.
//!
//! A ratio with an empty denominator is undefined and reported as `None`,
//! never as 0 or 1. Averages skip undefined entries.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::LabelMap;

/// `counts[i][j]`: pixels of ground-truth class `i` predicted as class `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::DimensionMismatch(format!(
                "{k}-class confusion matrix needs {} counts, got {}",
                k * k,
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    /// Ground-truth pixel count of class `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.k).map(|j| self.get(c, j)).sum()
    }

    /// Predicted pixel count of class `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, c)).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::DimensionMismatch(format!(
                "cannot add {}-class matrix to {}-class matrix",
                other.k, self.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// TP / (TP + FP).
pub fn precision(cm: &ConfusionMatrix, c: usize) -> Option<f64> {
    ratio(cm.true_positives(c), cm.predicted(c))
}

/// TP / (TP + FN).
pub fn recall(cm: &ConfusionMatrix, c: usize) -> Option<f64> {
    ratio(cm.true_positives(c), cm.support(c))
}

/// TP / (TP + FP + FN), the Jaccard index.
pub fn iu(cm: &ConfusionMatrix, c: usize) -> Option<f64> {
    let tp = cm.true_positives(c);
    ratio(tp, cm.support(c) + cm.predicted(c) - tp)
}

/// trace / total.
pub fn overall_accuracy(cm: &ConfusionMatrix) -> Option<f64> {
    ratio((0..cm.k).map(|c| cm.get(c, c)).sum(), cm.total())
}

/// Counts pixels of `gt` (rows) against `pred` (columns). Pixels where
/// `ignore` is `true` are skipped.
pub fn confusion_matrix(pred: &LabelMap, gt: &LabelMap, ignore: Option<&[bool]>) -> Result<ConfusionMatrix> {
    if !pred.same_shape(gt.height(), gt.width()) {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    if pred.num_classes() != gt.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has K={}, ground truth has K={}",
            pred.num_classes(),
            gt.num_classes()
        )));
    }
    if let Some(mask) = ignore {
        if mask.len() != gt.labels().len() {
            return Err(Error::DimensionMismatch(
                "ignore mask size differs from the label maps".into(),
            ));
        }
    }
    let k = gt.num_classes();
    let mut cm = ConfusionMatrix::zeros(k);
    for (i, (&p, &g)) in pred.labels().iter().zip(gt.labels()).enumerate() {
        if ignore.is_some_and(|m| m[i]) {
            continue;
        }
        cm.counts[g as usize * k + p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub name: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub iu: Option<f64>,
    pub support: u64,
    pub predicted: u64,
}

/// Per-class metrics plus overall accuracy and both IU averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub classes: Vec<ClassScore>,
    pub accuracy: Option<f64>,
    /// Unweighted mean of the defined class IUs.
    pub mean_iu: Option<f64>,
    /// Support-weighted mean of the defined class IUs.
    pub weighted_iu: Option<f64>,
}

impl ClassMetrics {
    pub fn from_confusion(cm: &ConfusionMatrix, names: &[String]) -> Self {
        let classes: Vec<ClassScore> = (0..cm.k)
            .map(|c| ClassScore {
                name: names.get(c).cloned().unwrap_or_else(|| format!("class{c}")),
                precision: precision(cm, c),
                recall: recall(cm, c),
                iu: iu(cm, c),
                support: cm.support(c),
                predicted: cm.predicted(c),
            })
            .collect();
        let ius: Vec<f64> = classes.iter().filter_map(|s| s.iu).collect();
        let undefined = classes.len() - ius.len();
        if undefined > 0 {
            warn!("{undefined} class IU value(s) undefined (class absent from both maps); excluded from the mean");
        }
        let mean_iu = (!ius.is_empty()).then(|| ius.iter().sum::<f64>() / ius.len() as f64);
        let weighted: Vec<(f64, f64)> = classes
            .iter()
            .filter_map(|s| s.iu.map(|v| (v, s.support as f64)))
            .collect();
        let wsum: f64 = weighted.iter().map(|(_, w)| w).sum();
        let weighted_iu = (wsum > 0.0).then(|| weighted.iter().map(|(v, w)| v * w).sum::<f64>() / wsum);
        ClassMetrics {
            classes,
            accuracy: overall_accuracy(cm),
            mean_iu,
            weighted_iu,
        }
    }
}

/// Mean and standard error (`sd / sqrt(n)`, sample sd) of the defined values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(values: &[Option<f64>]) -> Option<MeanSe> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.len() < values.len() {
        warn!(
            "{} undefined value(s) excluded from a mean over {} images",
            values.len() - defined.len(),
            values.len()
        );
    }
    let n = defined.len();
    if n == 0 {
        return None;
    }
    // Shifted by the first value so identical inputs give exactly zero spread.
    let shift = defined[0];
    let d: Vec<f64> = defined.iter().map(|v| v - shift).collect();
    let dmean = d.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = d.iter().map(|v| (v - dmean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanSe {
        mean: shift + dmean,
        se,
        n,
    })
}

/// One row of a summary table: per-image mean and standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub precision: Option<MeanSe>,
    pub recall: Option<MeanSe>,
    pub iu: Option<MeanSe>,
}

/// Per-class rows plus an `overall` row, aggregated over images. In the
/// overall row precision and recall both equal pixel accuracy and IU is
/// the unweighted class mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub images: usize,
    pub rows: Vec<TableRow>,
}

impl MetricsTable {
    pub fn from_images(per_image: &[ClassMetrics], names: &[String]) -> Self {
        let mut rows: Vec<TableRow> = names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let col = |f: fn(&ClassScore) -> Option<f64>| -> Vec<Option<f64>> {
                    per_image.iter().map(|m| m.classes.get(c).and_then(f)).collect()
                };
                TableRow {
                    name: name.clone(),
                    precision: mean_se(&col(|s| s.precision)),
                    recall: mean_se(&col(|s| s.recall)),
                    iu: mean_se(&col(|s| s.iu)),
                }
            })
            .collect();
        let acc: Vec<Option<f64>> = per_image.iter().map(|m| m.accuracy).collect();
        let acc = mean_se(&acc);
        rows.push(TableRow {
            name: "overall".into(),
            precision: acc,
            recall: acc,
            iu: mean_se(&per_image.iter().map(|m| m.mean_iu).collect::<Vec<_>>()),
        });
        MetricsTable {
            images: per_image.len(),
            rows,
        }
    }

    pub fn row(&self, name: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Fixed-width text rendering, values as `mean ± se` in percent.
    pub fn to_text(&self) -> String {
        let cell = |v: &Option<MeanSe>| match v {
            Some(m) => format!("{:5.1} ± {:4.1}", 100.0 * m.mean, 100.0 * m.se),
            None => "n/a".to_string(),
        };
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let mut s = format!(
            "{:<width$}  {:>12}  {:>12}  {:>12}\n",
            "class", "precision", "recall", "IU"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<width$}  {:>12}  {:>12}  {:>12}\n",
                r.name,
                cell(&r.precision),
                cell(&r.recall),
                cell(&r.iu)
            ));
        }
        s.push_str(&format!("({} images)\n", self.images));
        s
    }
}
