//! Two-phase training: the backbone is frozen while the head learns at a
//! high rate, then everything is fine-tuned at a low rate. Each update
//! draws a few augmented images and a uniform random pixel sample from each.

pub mod crossval;
pub mod loss;
pub mod optim;

use log::{debug, info};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_augmentation, sample_augmentation, sample_pixels, AugmentSpec};
use crate::error::{Error, Result};
use crate::imagecore::{Micrograph, Sample};
use crate::net::{Mode, Model, NetConfig};
use crate::real::Real;
use loss::LossParams;
use optim::{adamw_step, AdamW, OptState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub lr: f64,
    pub updates: usize,
    pub freeze_backbone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub images_per_batch: usize,
    pub pixels_per_image: usize,
    pub phases: Vec<PhaseConfig>,
    pub optimizer: AdamW,
    pub augment: AugmentSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            images_per_batch: 4,
            pixels_per_image: 2048,
            phases: vec![
                PhaseConfig {
                    lr: 1e-3,
                    updates: 125,
                    freeze_backbone: true,
                },
                PhaseConfig {
                    lr: 1e-5,
                    updates: 125,
                    freeze_backbone: false,
                },
            ],
            optimizer: AdamW::default(),
            augment: AugmentSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.images_per_batch == 0 || self.pixels_per_image == 0 {
            return Err(Error::invalid(
                "batch",
                "images_per_batch and pixels_per_image must be positive",
            ));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if !(p.lr >= 0.0 && p.lr.is_finite()) {
                return Err(Error::invalid(
                    "phases",
                    format!("phase {} has learning rate {}", i + 1, p.lr),
                ));
            }
        }
        self.augment.validate()
    }

    pub fn total_updates(&self) -> usize {
        self.phases.iter().map(|p| p.updates).sum()
    }
}

/// Everything a training run needs besides data; the CLI config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub loss: LossParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub phase: usize,
    pub loss: f64,
}

/// Loss history as CSV with columns `update,phase,loss`.
pub fn history_csv(history: &[UpdateRecord]) -> String {
    let mut s = String::from("update,phase,loss\n");
    for r in history {
        s.push_str(&format!("{},{},{:.9e}\n", r.update, r.phase, r.loss));
    }
    s
}

fn pick_images(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    if k <= n {
        index::sample(rng, n, k).into_vec()
    } else {
        (0..k).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Runs every phase of `config` in order and returns the trained model with
/// one history record per update (the loss before that update). Fully
/// determined by `config.seed`, the model and the dataset.
pub fn train<F: Real>(
    mut model: Model<F>,
    dataset: &[Sample],
    config: &TrainConfig,
    loss: &LossParams,
) -> Result<(Model<F>, Vec<UpdateRecord>)> {
    config.validate()?;
    loss.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let k = model.config().num_classes;
    if let Some(s) = dataset.iter().find(|s| s.labels.num_classes() != k) {
        return Err(Error::DimensionMismatch(format!(
            "model has {k} classes, training labels have {}",
            s.labels.num_classes()
        )));
    }
    let maps: Vec<_> = dataset.iter().map(|s| &s.labels).collect();
    let alpha = loss.resolve_alpha(&maps, k)?;
    info!("class weights {alpha:?}");
    let images: Vec<Micrograph> = dataset
        .iter()
        .map(|s| model.preprocess(&s.image))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = OptState::new(model.params());
    let mut history = Vec::with_capacity(config.total_updates());
    for (phase_idx, phase) in config.phases.iter().enumerate() {
        info!(
            "phase {}: {} updates at lr {:e}{}",
            phase_idx + 1,
            phase.updates,
            phase.lr,
            if phase.freeze_backbone { ", backbone frozen" } else { "" }
        );
        for _ in 0..phase.updates {
            let picks = pick_images(&mut rng, dataset.len(), config.images_per_batch);
            let mut batch_images = Vec::with_capacity(picks.len());
            let mut coords = Vec::with_capacity(picks.len());
            let mut labels = Vec::new();
            for &i in &picks {
                let params = sample_augmentation(&mut rng, &config.augment);
                let (img, lab) = apply_augmentation(&images[i], &dataset[i].labels, &params)?;
                let n = config.pixels_per_image.min(lab.height() * lab.width());
                let c = sample_pixels(&lab, n, &mut rng)?;
                labels.extend(c.iter().map(|&(r, q)| lab.get(r, q)));
                batch_images.push(img);
                coords.push(c);
            }
            let batch: Vec<(&Micrograph, &[(usize, usize)])> = batch_images
                .iter()
                .zip(&coords)
                .map(|(m, c)| (m, c.as_slice()))
                .collect();
            let logits = model.forward(&batch, Mode::Train, &mut rng)?;
            let (value, dlogits) = loss.evaluate(&logits, &labels, &alpha)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteGradient(format!("loss at update {}", history.len())));
            }
            let grads = model.backward(&dlogits, phase.freeze_backbone)?;
            adamw_step(
                model.params_mut(),
                &grads,
                &mut state,
                &config.optimizer,
                phase.lr,
                phase.freeze_backbone,
            )?;
            history.push(UpdateRecord {
                update: history.len(),
                phase: phase_idx + 1,
                loss: value,
            });
            if history.len() % 25 == 0 {
                info!("update {}: loss {value:.5}", history.len());
            } else {
                debug!("update {}: loss {value:.5}", history.len());
            }
        }
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::BlockConfig;
    use crate::synthgen::{generate_microconstituent_scene, SceneSpec};

    fn scenes(n: usize, size: usize) -> Vec<Sample> {
        (0..n as u64)
            .map(|seed| {
                let (image, labels) = generate_microconstituent_scene(&SceneSpec {
                    height: size,
                    width: size,
                    seed,
                    cell_size_px: 24.0,
                    ..Default::default()
                })
                .unwrap();
                Sample { image, labels }
            })
            .collect()
    }

    fn small_net() -> NetConfig {
        NetConfig {
            blocks: vec![
                BlockConfig { convs: 1, channels: 4 },
                BlockConfig { convs: 1, channels: 8 },
                BlockConfig { convs: 1, channels: 8 },
            ],
            mlp: vec![32],
            equalize: None,
            ..Default::default()
        }
    }

    #[test]
    fn default_schedule_records_every_update() {
        let data = scenes(2, 32);
        let config = TrainConfig {
            pixels_per_image: 64,
            ..Default::default()
        };
        let model = Model::<f32>::init(&small_net(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (_, history) = train(model, &data, &config, &LossParams::default()).unwrap();
        assert_eq!(history.len(), 250);
        assert_eq!(history.iter().filter(|r| r.phase == 1).count(), 125);
        assert_eq!(history.iter().filter(|r| r.phase == 2).count(), 125);
        assert!(history.iter().all(|r| r.loss.is_finite()));
        assert!(history_csv(&history).starts_with("update,phase,loss\n0,1,"));
    }

    #[test]
    fn zero_learning_rates_leave_parameters_unchanged() {
        let data = scenes(2, 32);
        let mut config = TrainConfig {
            pixels_per_image: 64,
            ..Default::default()
        };
        for p in &mut config.phases {
            p.lr = 0.0;
            p.updates = 5;
        }
        let model = Model::<f32>::init(&small_net(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = model.clone();
        let (after, _) = train(model, &data, &config, &LossParams::default()).unwrap();
        for (a, b) in before.params().iter().zip(after.params()) {
            if a.role != crate::net::ParamRole::Buffer {
                assert_eq!(a.value, b.value, "{}", a.name);
            }
        }
    }

    #[test]
    fn same_seed_same_run() {
        let data = scenes(2, 32);
        let mut config = TrainConfig {
            pixels_per_image: 64,
            ..Default::default()
        };
        config.phases[0].updates = 6;
        config.phases[1].updates = 6;
        let run = || {
            let model = Model::<f32>::init(&small_net(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            train(model, &data, &config, &LossParams::default()).unwrap()
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(ha, hb);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn overfits_two_images() {
        let data = scenes(2, 32);
        let config = TrainConfig {
            pixels_per_image: 256,
            images_per_batch: 2,
            phases: vec![PhaseConfig {
                lr: 3e-3,
                updates: 500,
                freeze_backbone: false,
            }],
            augment: AugmentSpec::disabled(),
            ..Default::default()
        };
        let net = NetConfig {
            dropout: 0.0,
            ..small_net()
        };
        let model = Model::<f32>::init(&net, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (_, h) = train(model, &data, &config, &LossParams::default()).unwrap();
        let first: f64 = h[..10].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        let last: f64 = h[h.len() - 10..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        assert!(last < 0.25 * first, "first {first}, last {last}");
    }

    #[test]
    fn mismatched_taxonomy_is_rejected() {
        let data = scenes(1, 32);
        let net = NetConfig {
            num_classes: 2,
            ..small_net()
        };
        let model = Model::<f32>::init(&net, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(train(model, &data, &TrainConfig::default(), &LossParams::default()).is_err());
    }
}
