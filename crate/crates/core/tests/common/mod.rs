//! Finite-difference gradient checking shared by the test targets.
#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use microseg::imagecore::Micrograph;
use microseg::net::{BlockConfig, Mode, Model, NetConfig, ParamRole};
use microseg::training::loss::{cross_entropy, focal_loss};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-3;
/// Denominator floor so that gradients that are zero up to rounding do not
/// produce huge relative errors.
pub const FLOOR: f64 = 1e-7;

/// Denominator floor set by what central differences can resolve: `ulps`
/// units of rounding in the loss, divided by the step, must stay below
/// `TOLERANCE` of the gradient. Wide networks accumulate more rounding.
pub fn resolution_floor(loss: f64, ulps: f64) -> f64 {
    let ulp = f64::EPSILON * loss.abs().max(f64::MIN_POSITIVE);
    (ulps * ulp / (2.0 * STEP) / TOLERANCE).max(FLOOR)
}

#[derive(Clone, Copy, Debug)]
pub enum Loss {
    Ce,
    Focal,
}

pub fn loss_of(kind: Loss, logits: &Array2<f64>, labels: &[u8], alpha: &[f64]) -> (f64, Array2<f64>) {
    match kind {
        Loss::Ce => cross_entropy(logits, labels, alpha).unwrap(),
        Loss::Focal => focal_loss(logits, labels, 2.0, alpha).unwrap(),
    }
}

pub struct Problem {
    pub image: Micrograph,
    pub coords: Vec<(usize, usize)>,
    pub labels: Vec<u8>,
    pub alpha: Vec<f64>,
}

pub fn problem(size: usize, pixels: usize, k: usize, seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Micrograph::new(size, size, (0..size * size).map(|_| rng.random::<f32>()).collect()).unwrap();
    let coords = rand::seq::index::sample(&mut rng, size * size, pixels)
        .into_iter()
        .map(|i| (i / size, i % size))
        .collect();
    let labels = (0..pixels).map(|_| rng.random_range(0..k as u8)).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
    let s: f64 = raw.iter().sum();
    Problem {
        image,
        coords,
        labels,
        alpha: raw.iter().map(|a| a / s).collect(),
    }
}

/// Train-mode loss with a dropout mask fixed by re-seeding.
pub fn total_loss(model: &mut Model<f64>, p: &Problem, kind: Loss) -> (f64, Array2<f64>) {
    let batch = [(&p.image, p.coords.as_slice())];
    let logits = model
        .forward(&batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(99))
        .unwrap();
    loss_of(kind, &logits, &p.labels, &p.alpha)
}

/// Checks every entry of the selected tensors (or `stride`-spaced entries
/// of each) and returns the worst relative error. `floor` maps the loss to
/// the relative-error denominator floor.
pub fn check(
    model: &mut Model<f64>,
    p: &Problem,
    kind: Loss,
    freeze: bool,
    stride: usize,
    floor: impl Fn(f64) -> f64,
) -> (f64, String) {
    let (loss, dlogits) = total_loss(model, p, kind);
    let floor = floor(loss);
    let grads = model.backward(&dlogits, freeze).unwrap();
    let mut worst = (0.0f64, String::new());
    for t in 0..model.params().len() {
        let role = model.params()[t].role;
        if role == ParamRole::Buffer {
            continue;
        }
        if freeze && role == ParamRole::Backbone {
            assert!(
                grads[t].iter().all(|&g| g == 0.0),
                "{} not zero while frozen",
                model.params()[t].name
            );
            continue;
        }
        for j in (0..grads[t].len()).step_by(stride) {
            let orig = model.params()[t].value[j];
            model.params_mut()[t].value[j] = orig + STEP;
            let (up, _) = total_loss(model, p, kind);
            model.params_mut()[t].value[j] = orig - STEP;
            let (down, _) = total_loss(model, p, kind);
            model.params_mut()[t].value[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads[t][j];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(floor);
            if rel > worst.0 {
                worst = (
                    rel,
                    format!(
                        "{}[{j}]: analytic {analytic:e}, numeric {numeric:e}",
                        model.params()[t].name
                    ),
                );
            }
        }
    }
    worst
}

pub fn reduced_config() -> NetConfig {
    NetConfig {
        blocks: vec![
            BlockConfig { convs: 2, channels: 3 },
            BlockConfig { convs: 1, channels: 4 },
        ],
        extra_tap_7x7: true,
        mlp: vec![6, 5],
        dropout: 0.25,
        equalize: None,
        ..Default::default()
    }
}
