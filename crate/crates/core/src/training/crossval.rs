//! k-fold cross-validation: split, train one model per fold, evaluate on the
//! held-out images and aggregate per-image metrics.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train, ExperimentConfig, UpdateRecord};
use crate::error::{Error, Result};
use crate::imagecore::Sample;
use crate::metrics::{confusion_matrix, ClassMetrics, MetricsTable};
use crate::net::Model;

/// Shuffles `0..n` and cuts it into `k` folds whose sizes differ by at most
/// one (the first `n % k` folds get the extra item).
pub fn crossval_split(n: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("cannot split {n} items into {k} folds")));
    }
    if !n.is_multiple_of(k) {
        warn!("{n} items do not divide into {k} folds; fold sizes differ by one");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub validation: Vec<usize>,
    pub final_loss: Option<f64>,
    pub per_image: Vec<ClassMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub folds: Vec<FoldResult>,
    pub table: MetricsTable,
}

/// Trains one model per fold (initialised and trained from seeds derived
/// from `seed` and the fold index), predicts every held-out image densely
/// and aggregates per-image metrics into a table.
pub fn run_crossval(dataset: &[Sample], k: usize, config: &ExperimentConfig, seed: u64) -> Result<CrossvalReport> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Empty("cross-validation set".into()))?;
    let taxonomy = first.labels.taxonomy().clone();
    let folds = crossval_split(dataset.len(), k, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut results = Vec::with_capacity(k);
    let mut all = Vec::new();
    for (f, held_out) in folds.iter().enumerate() {
        let training: Vec<Sample> = (0..dataset.len())
            .filter(|i| !held_out.contains(i))
            .map(|i| dataset[i].clone())
            .collect();
        let fold_seed = seed.wrapping_add(1 + f as u64);
        let model = Model::<f32>::init(&config.net, &mut ChaCha8Rng::seed_from_u64(fold_seed))?;
        let mut train_config = config.train.clone();
        train_config.seed = fold_seed;
        info!("fold {}/{k}: training on {} images", f + 1, training.len());
        let (model, history): (_, Vec<UpdateRecord>) = train(model, &training, &train_config, &config.loss)?;
        let mut per_image = Vec::with_capacity(held_out.len());
        for &i in held_out {
            let s = &dataset[i];
            let pred = model.predict_dense(&s.image, &taxonomy, 1 << 14)?;
            let cm = confusion_matrix(&pred.labels, &s.labels, None)?;
            per_image.push(ClassMetrics::from_confusion(&cm, &taxonomy.names));
        }
        all.extend(per_image.iter().cloned());
        results.push(FoldResult {
            fold: f,
            validation: held_out.clone(),
            final_loss: history.last().map(|r| r.loss),
            per_image,
        });
    }
    Ok(CrossvalReport {
        folds: results,
        table: MetricsTable::from_images(&all, &taxonomy.names),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn twenty_four_into_six() {
        let folds = crossval_split(24, 6, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![4; 6]);
        let all: HashSet<usize> = folds.iter().flatten().copied().collect();
        assert_eq!(all.len(), 24);
        assert_eq!(folds, crossval_split(24, 6, &mut ChaCha8Rng::seed_from_u64(0)).unwrap());
    }

    #[test]
    fn uneven_and_invalid_splits() {
        let folds = crossval_split(10, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 2, 2]);
        assert!(crossval_split(3, 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(crossval_split(3, 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
