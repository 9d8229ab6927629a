//! Particle metrology: thresholding baseline, connected components,
//! particle size distributions, two-sample KS testing and fusion of the
//! particle and microconstituent predictions.

pub mod components;
pub mod ks;
pub mod otsu;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{ClassTaxonomy, LabelMap, Mask};

pub use components::Connectivity;
pub use ks::{ks_consistency_score, ks_two_sample, KsResult};
pub use otsu::otsu_threshold;

/// Inclusive pixel bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    /// Row-major pixel indices into the source image.
    pub pixels: Vec<usize>,
    pub centroid: (f64, f64),
    pub bbox: BoundingBox,
    pub touches_border: bool,
}

impl Particle {
    pub fn from_pixels(mut pixels: Vec<usize>, height: usize, width: usize) -> Self {
        pixels.sort_unstable();
        let mut bbox = BoundingBox {
            row_min: usize::MAX,
            row_max: 0,
            col_min: usize::MAX,
            col_max: 0,
        };
        let (mut sr, mut sc) = (0.0, 0.0);
        for &p in &pixels {
            let (r, c) = (p / width, p % width);
            bbox.row_min = bbox.row_min.min(r);
            bbox.row_max = bbox.row_max.max(r);
            bbox.col_min = bbox.col_min.min(c);
            bbox.col_max = bbox.col_max.max(c);
            sr += r as f64;
            sc += c as f64;
        }
        let n = pixels.len().max(1) as f64;
        let touches_border = !pixels.is_empty()
            && (bbox.row_min == 0 || bbox.col_min == 0 || bbox.row_max + 1 == height || bbox.col_max + 1 == width);
        Particle {
            pixels,
            centroid: (sr / n, sc / n),
            bbox,
            touches_border,
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Radius of the disk with the same area.
    pub fn equivalent_radius(&self) -> f64 {
        (self.area() as f64 / std::f64::consts::PI).sqrt()
    }
}

/// Disjoint particles detected in (or rendered into) one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub height: usize,
    pub width: usize,
    pub um_per_px: Option<f64>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Foreground mask of all particles.
    pub fn mask(&self) -> Mask {
        let mut m = Mask::empty(self.height, self.width);
        for p in &self.particles {
            for &i in &p.pixels {
                m.data_mut()[i] = true;
            }
        }
        m
    }

    /// Drops particles with fewer than `min_area` pixels.
    pub fn with_min_area(mut self, min_area: usize) -> Self {
        self.particles.retain(|p| p.area() >= min_area);
        self
    }
}

/// Maximal connected foreground regions, labelled in row-major order of
/// their first pixel.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> ParticleSet {
    let (ids, count) = components::label_components(mask, connectivity);
    let particles = components::component_pixels(&ids, count)
        .into_iter()
        .map(|px| Particle::from_pixels(px, mask.height(), mask.width()))
        .collect();
    ParticleSet {
        particles,
        height: mask.height(),
        width: mask.width(),
        um_per_px: None,
    }
}

/// Removes every particle whose bounding box reaches the image edge.
pub fn remove_border_particles(ps: &ParticleSet) -> ParticleSet {
    ParticleSet {
        particles: ps.particles.iter().filter(|p| !p.touches_border).cloned().collect(),
        ..ps.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "px")]
    Pixel,
    #[serde(rename = "um")]
    Micrometre,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Pixel => "px",
            Unit::Micrometre => "um",
        }
    }
}

/// Sorted sample of finite scalar measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
    pub unit: Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    pub unit: Unit,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// (probability, value) pairs at 0.05, 0.25, 0.5, 0.75, 0.95.
    pub quantiles: Vec<(f64, f64)>,
}

impl EmpiricalDistribution {
    pub fn new(mut values: Vec<f64>, unit: Unit) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("values", format!("non-finite sample {v}")));
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(EmpiricalDistribution { values, unit })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.values.iter().sum::<f64>() / self.len() as f64)
    }

    /// Linear-interpolated quantile, `q` in `[0, 1]`.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let pos = q.clamp(0.0, 1.0) * (self.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let f = pos - lo as f64;
        Some(self.values[lo] * (1.0 - f) + self.values[hi] * f)
    }

    pub fn median(&self) -> Option<f64> {
        self.quantile(0.5)
    }

    /// Fraction of samples `<= x`.
    pub fn ecdf(&self, x: f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.values.partition_point(|&v| v <= x) as f64 / self.len() as f64
    }

    pub fn summary(&self) -> DistributionSummary {
        DistributionSummary {
            count: self.len(),
            unit: self.unit,
            mean: self.mean(),
            median: self.median(),
            min: self.values.first().copied(),
            max: self.values.last().copied(),
            quantiles: [0.05, 0.25, 0.5, 0.75, 0.95]
                .iter()
                .filter_map(|&q| self.quantile(q).map(|v| (q, v)))
                .collect(),
        }
    }

    /// Equal-width histogram over `[min, max]`; returns bin edges
    /// (`bins + 1` values) and counts.
    pub fn histogram(&self, bins: usize) -> (Vec<f64>, Vec<usize>) {
        let bins = bins.max(1);
        let (lo, hi) = match (self.values.first(), self.values.last()) {
            (Some(&a), Some(&b)) if b > a => (a, b),
            (Some(&a), Some(_)) => (a - 0.5, a + 0.5),
            _ => (0.0, 1.0),
        };
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0usize; bins];
        for &v in &self.values {
            let i = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[i] += 1;
        }
        (edges, counts)
    }
}

/// Equivalent circular radius of every particle, in µm when the set carries
/// a scale and in pixels otherwise.
pub fn particle_size_distribution(ps: &ParticleSet) -> EmpiricalDistribution {
    let (scale, unit) = match ps.um_per_px {
        Some(s) if s > 0.0 => (s, Unit::Micrometre),
        _ => (1.0, Unit::Pixel),
    };
    EmpiricalDistribution::new(
        ps.particles.iter().map(|p| p.equivalent_radius() * scale).collect(),
        unit,
    )
    .expect("radii are finite")
}

/// Keeps particle pixels only where the microconstituent map reads
/// spheroidite; every other pixel becomes matrix.
pub fn fuse_predictions(particles: &LabelMap, microconstituents: &LabelMap) -> Result<LabelMap> {
    if particles.num_classes() != 2 || microconstituents.num_classes() != 4 {
        return Err(Error::invalid(
            "labels",
            format!(
                "fusion needs a 2-class particle map and a 4-class microconstituent map, got K={} and K={}",
                particles.num_classes(),
                microconstituents.num_classes()
            ),
        ));
    }
    if !microconstituents.same_shape(particles.height(), particles.width()) {
        return Err(Error::DimensionMismatch(format!(
            "particle map is {}x{}, microconstituent map is {}x{}",
            particles.height(),
            particles.width(),
            microconstituents.height(),
            microconstituents.width()
        )));
    }
    let fused = particles
        .labels()
        .iter()
        .zip(microconstituents.labels())
        .map(|(&p, &m)| {
            if p == ClassTaxonomy::PARTICLE && m == ClassTaxonomy::SPHEROIDITE {
                ClassTaxonomy::PARTICLE
            } else {
                ClassTaxonomy::MATRIX
            }
        })
        .collect();
    particles.with_labels(fused)
}
