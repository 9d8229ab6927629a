//! Binary morphology with disk structuring elements.
//!
//! A disk of radius `r` contains every offset `(dy, dx)` with
//! `dy² + dx² <= r²`. Dilation by that disk is exactly the set of pixels
//! within Euclidean distance `r` of the mask, so both dilation and erosion
//! are computed from an exact distance transform. Pixels outside the image
//! count as background for dilation and as foreground for erosion, which
//! makes closing extensive at the image border.

use crate::error::{Error, Result};
use crate::imagecore::Mask;
use crate::metrology::components::{label_components, Connectivity};

use super::edt::squared_distance_transform;

fn check_radius(radius: usize) -> Result<()> {
    if radius == 0 {
        return Err(Error::invalid("radius", "structuring element radius must be >= 1"));
    }
    Ok(())
}

pub fn dilate(mask: &Mask, radius: usize) -> Result<Mask> {
    check_radius(radius)?;
    let r2 = (radius * radius) as f64;
    let d2 = squared_distance_transform(mask);
    Mask::new(mask.height(), mask.width(), d2.into_iter().map(|d| d <= r2).collect())
}

pub fn erode(mask: &Mask, radius: usize) -> Result<Mask> {
    Ok(dilate(&mask.not(), radius)?.not())
}

/// Dilation followed by erosion.
pub fn closing(mask: &Mask, radius: usize) -> Result<Mask> {
    erode(&dilate(mask, radius)?, radius)
}

/// Erosion followed by dilation.
pub fn opening(mask: &Mask, radius: usize) -> Result<Mask> {
    dilate(&erode(mask, radius)?, radius)
}

/// Background regions (4-connected) that do not reach the image border.
pub fn holes(mask: &Mask) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let (ids, count) = label_components(&mask.not(), Connectivity::Four);
    let mut touches = vec![false; count + 1];
    for r in 0..h {
        for c in 0..w {
            if r == 0 || c == 0 || r + 1 == h || c + 1 == w {
                touches[ids[r * w + c] as usize] = true;
            }
        }
    }
    Mask::new(h, w, ids.iter().map(|&id| id != 0 && !touches[id as usize]).collect()).expect("same shape")
}

/// Sets every enclosed background pixel.
pub fn fill_holes(mask: &Mask) -> Mask {
    let enclosed = holes(mask);
    Mask::new(
        mask.height(),
        mask.width(),
        mask.data().iter().zip(enclosed.data()).map(|(&a, &b)| a || b).collect(),
    )
    .expect("same shape")
}
