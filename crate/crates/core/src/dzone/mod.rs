//! Denuded-zone width measurement on microconstituent label maps.
//!
//! The map is cleaned so that only matrix adjacent to the cementite network
//! remains, the matrix boundary is split into the network interface and the
//! outer zone boundary, and widths are read from the distance-to-network map
//! at the outer boundary.

pub mod edt;
pub mod morphology;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{ClassTaxonomy, LabelMap, Mask};
use crate::metrology::components::{component_pixels, label_components, Connectivity};
use crate::metrology::{EmpiricalDistribution, Unit};

pub use edt::{distance_transform, DistanceMap};

const MATRIX: u8 = ClassTaxonomy::MATRIX;
const NETWORK: u8 = ClassTaxonomy::NETWORK;
const SPHEROIDITE: u8 = ClassTaxonomy::SPHEROIDITE;
const WIDMANSTATTEN: u8 = ClassTaxonomy::WIDMANSTATTEN;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DzoneParams {
    /// Disk radius of the closing used to group matrix regions.
    pub closing_radius: usize,
    /// Network components with fewer pixels are relabelled as spheroidite
    /// before cleanup. `0` disables the filter.
    pub min_network_size: usize,
    /// µm per pixel; widths are reported in µm when set.
    pub um_per_px: Option<f64>,
}

impl Default for DzoneParams {
    fn default() -> Self {
        DzoneParams {
            closing_radius: 5,
            min_network_size: 0,
            um_per_px: None,
        }
    }
}

/// Network-side and zone-side boundary pixels of the cleaned matrix region.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceSet {
    pub network_interface: Mask,
    pub zone_boundary: Mask,
}

fn check_map(l: &LabelMap) -> Result<()> {
    if l.num_classes() != 4 {
        return Err(Error::invalid(
            "labels",
            format!(
                "denuded-zone analysis needs the 4-class taxonomy, got K={}",
                l.num_classes()
            ),
        ));
    }
    if !l.labels().contains(&NETWORK) {
        return Err(Error::Empty("label map contains no network pixels".into()));
    }
    Ok(())
}

fn touches(mask_pixels: &[usize], target: &[u8], class: u8, h: usize, w: usize) -> bool {
    mask_pixels.iter().any(|&p| {
        if target[p] == class {
            return true;
        }
        let (r, c) = (p / w, p % w);
        (r > 0 && target[p - w] == class)
            || (r + 1 < h && target[p + w] == class)
            || (c > 0 && target[p - 1] == class)
            || (c + 1 < w && target[p + 1] == class)
    })
}

/// Removes matrix regions whose closed component neither contains nor
/// 4-borders a network pixel. Returns whether anything changed.
fn drop_detached_matrix(labels: &mut [u8], h: usize, w: usize, radius: usize) -> Result<bool> {
    let matrix = Mask::new(h, w, labels.iter().map(|&l| l == MATRIX).collect())?;
    if !matrix.any() {
        return Ok(false);
    }
    let closed = morphology::closing(&matrix, radius)?;
    let (ids, count) = label_components(&closed, Connectivity::Eight);
    let mut changed = false;
    for pixels in component_pixels(&ids, count) {
        if touches(&pixels, labels, NETWORK, h, w) {
            continue;
        }
        for p in pixels {
            if labels[p] == MATRIX {
                labels[p] = SPHEROIDITE;
                changed = true;
            }
        }
    }
    Ok(changed)
}

/// Cleans a microconstituent map so that only matrix associated with the
/// network remains. Steps, in order:
///
/// 1. matrix enclosed by network (holes of the network mask that hold only
///    matrix) becomes network;
/// 2. matrix regions whose closing does not meet the network are removed;
/// 3. matrix closer to widmanstatten than to network is removed, then the
///    widmanstatten regions themselves;
/// 4. step 2 is repeated until nothing changes.
///
/// Removed pixels become spheroidite.
pub fn clean_microconstituent_map(l: &LabelMap, params: &DzoneParams) -> Result<LabelMap> {
    check_map(l)?;
    let (h, w) = (l.height(), l.width());
    let mut labels = l.labels().to_vec();

    if params.min_network_size > 0 {
        let net = Mask::from_labels(l, NETWORK);
        let (ids, count) = label_components(&net, Connectivity::Eight);
        for pixels in component_pixels(&ids, count) {
            if pixels.len() < params.min_network_size {
                for p in pixels {
                    labels[p] = SPHEROIDITE;
                }
            }
        }
        if !labels.contains(&NETWORK) {
            return Err(Error::Empty(format!(
                "no network component reaches {} px",
                params.min_network_size
            )));
        }
    }

    let net = Mask::new(h, w, labels.iter().map(|&v| v == NETWORK).collect())?;
    let enclosed = morphology::holes(&net);
    let (ids, count) = label_components(&enclosed, Connectivity::Four);
    for pixels in component_pixels(&ids, count) {
        if pixels.iter().all(|&p| labels[p] == MATRIX) {
            for p in pixels {
                labels[p] = NETWORK;
            }
        }
    }

    drop_detached_matrix(&mut labels, h, w, params.closing_radius)?;

    if labels.contains(&WIDMANSTATTEN) {
        let net = Mask::new(h, w, labels.iter().map(|&v| v == NETWORK).collect())?;
        let wid = Mask::new(h, w, labels.iter().map(|&v| v == WIDMANSTATTEN).collect())?;
        let d_net = edt::squared_distance_transform(&net);
        let d_wid = edt::squared_distance_transform(&wid);
        for (p, v) in labels.iter_mut().enumerate() {
            if (*v == MATRIX && d_wid[p] < d_net[p]) || *v == WIDMANSTATTEN {
                *v = SPHEROIDITE;
            }
        }
    }

    while drop_detached_matrix(&mut labels, h, w, params.closing_radius)? {}

    l.with_labels(labels)
}

/// Matrix pixels with at least one non-matrix 4-neighbour, split by whether
/// one of those neighbours is network.
pub fn extract_interfaces(cleaned: &LabelMap) -> InterfaceSet {
    let (h, w) = (cleaned.height(), cleaned.width());
    let l = cleaned.labels();
    let mut network_interface = Mask::empty(h, w);
    let mut zone_boundary = Mask::empty(h, w);
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            if l[p] != MATRIX {
                continue;
            }
            let neighbours = [
                (r > 0).then(|| l[p - w]),
                (r + 1 < h).then(|| l[p + w]),
                (c > 0).then(|| l[p - 1]),
                (c + 1 < w).then(|| l[p + 1]),
            ];
            let mut boundary = false;
            let mut at_network = false;
            for n in neighbours.into_iter().flatten() {
                if n != MATRIX {
                    boundary = true;
                }
                if n == NETWORK {
                    at_network = true;
                }
            }
            if at_network {
                network_interface.set(r, c, true);
            } else if boundary {
                zone_boundary.set(r, c, true);
            }
        }
    }
    if network_interface.count() + zone_boundary.count() == 0 {
        warn!("cleaned map has no matrix boundary; interface sets are empty");
    }
    InterfaceSet {
        network_interface,
        zone_boundary,
    }
}

/// Everything produced by the width pipeline for one map.
#[derive(Clone, Debug)]
pub struct DenudedZoneAnalysis {
    pub cleaned: LabelMap,
    pub interfaces: InterfaceSet,
    pub network_distance: DistanceMap,
    pub widths: EmpiricalDistribution,
}

pub fn analyze(l: &LabelMap, params: &DzoneParams) -> Result<DenudedZoneAnalysis> {
    let cleaned = clean_microconstituent_map(l, params)?;
    let interfaces = extract_interfaces(&cleaned);
    let network_distance = distance_transform(&Mask::from_labels(&cleaned, NETWORK))?;
    let (scale, unit) = match params.um_per_px {
        Some(s) if s > 0.0 => (s, Unit::Micrometre),
        _ => (1.0, Unit::Pixel),
    };
    let samples: Vec<f64> = interfaces
        .zone_boundary
        .data()
        .iter()
        .zip(network_distance.values())
        .filter(|(&b, _)| b)
        .map(|(_, &d)| d * scale)
        .collect();
    let widths = EmpiricalDistribution::new(samples, unit)?;
    Ok(DenudedZoneAnalysis {
        cleaned,
        interfaces,
        network_distance,
        widths,
    })
}

/// Distance to the network sampled at every denuded-zone boundary pixel.
pub fn denuded_zone_widths(l: &LabelMap, params: &DzoneParams) -> Result<EmpiricalDistribution> {
    Ok(analyze(l, params)?.widths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from(rows: &[&str]) -> LabelMap {
        let h = rows.len();
        let w = rows[0].len();
        let labels = rows
            .iter()
            .flat_map(|r| {
                r.bytes().map(|b| match b {
                    b'm' => MATRIX,
                    b'n' => NETWORK,
                    b's' => SPHEROIDITE,
                    b'w' => WIDMANSTATTEN,
                    _ => panic!("bad fixture char"),
                })
            })
            .collect();
        LabelMap::new(h, w, labels, ClassTaxonomy::microconstituent()).unwrap()
    }

    #[test]
    fn far_matrix_island_is_reassigned() {
        let mut rows = vec!["nnnmmsssssssssssssss".to_string(); 12];
        rows[5] = "nnnmmssssssssmmmssss".into();
        rows[6] = "nnnmmssssssssmmmssss".into();
        let refs: Vec<&str> = rows.iter().map(|s| s.as_str()).collect();
        let map = map_from(&refs);
        let cleaned = clean_microconstituent_map(
            &map,
            &DzoneParams {
                closing_radius: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cleaned.get(5, 14), SPHEROIDITE);
        assert_eq!(cleaned.get(5, 3), MATRIX);
        assert_eq!(cleaned.get(0, 4), MATRIX);
    }

    #[test]
    fn matrix_enclosed_by_network_becomes_network() {
        let map = map_from(&["ssssssss", "snnnnnss", "snmmmnss", "snmmmnss", "snnnnnss", "ssssssss"]);
        let cleaned = clean_microconstituent_map(&map, &DzoneParams::default()).unwrap();
        assert_eq!(cleaned.get(2, 3), NETWORK);
        assert!(!cleaned.labels().contains(&MATRIX));
    }

    #[test]
    fn widmanstatten_side_matrix_is_removed() {
        let map = map_from(&["nnmmmmmmww", "nnmmmmmmww", "nnmmmmmmww"]);
        let cleaned = clean_microconstituent_map(
            &map,
            &DzoneParams {
                closing_radius: 1,
                ..Default::default()
            },
        )
        .unwrap();
        // distance to network at col c is c-1, to widmanstatten is 8-c.
        assert_eq!(cleaned.get(0, 4), MATRIX);
        assert_eq!(cleaned.get(0, 5), SPHEROIDITE);
        assert!(!cleaned.labels().contains(&WIDMANSTATTEN));
    }

    #[test]
    fn no_widmanstatten_means_no_widmanstatten_removal() {
        let map = map_from(&["nnmmmmss", "nnmmmmss", "nnmmmmss"]);
        let cleaned = clean_microconstituent_map(
            &map,
            &DzoneParams {
                closing_radius: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cleaned, map);
    }

    #[test]
    fn map_without_network_is_an_error() {
        let map = map_from(&["mmss", "mmss"]);
        assert!(clean_microconstituent_map(&map, &DzoneParams::default()).is_err());
    }

    #[test]
    fn one_pixel_ring_widths_between_one_and_root_two() {
        let size = 31usize;
        let labels = (0..size * size)
            .map(|i| {
                let (r, c) = ((i / size) as f64 - 15.0, (i % size) as f64 - 15.0);
                let d = (r * r + c * c).sqrt();
                if d <= 6.0 {
                    NETWORK
                } else {
                    SPHEROIDITE
                }
            })
            .collect::<Vec<_>>();
        let mut map = LabelMap::new(size, size, labels, ClassTaxonomy::microconstituent()).unwrap();
        // Matrix ring: every non-network pixel 8-adjacent to the network.
        let net = Mask::from_labels(&map, NETWORK);
        let ring: Vec<u8> = (0..size * size)
            .map(|i| {
                let (r, c) = (i / size, i % size);
                if net.data()[i] {
                    return NETWORK;
                }
                let near = (-1i64..=1).any(|dr| {
                    (-1i64..=1).any(|dc| {
                        let (y, x) = (r as i64 + dr, c as i64 + dc);
                        y >= 0 && x >= 0 && y < size as i64 && x < size as i64 && net.get(y as usize, x as usize)
                    })
                });
                if near {
                    MATRIX
                } else {
                    SPHEROIDITE
                }
            })
            .collect();
        map = map.with_labels(ring).unwrap();
        let widths = denuded_zone_widths(
            &map,
            &DzoneParams {
                closing_radius: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!widths.is_empty());
        assert!(widths
            .values()
            .iter()
            .all(|&d| (1.0..=2f64.sqrt() + 1e-12).contains(&d)));
    }

    #[test]
    fn single_pixel_wide_matrix_is_all_boundary() {
        let map = map_from(&["nnmss", "nnmss", "nnmss"]);
        let iface = extract_interfaces(&map);
        let matrix = Mask::from_labels(&map, MATRIX);
        for i in 0..matrix.data().len() {
            if matrix.data()[i] {
                assert!(iface.network_interface.data()[i] || iface.zone_boundary.data()[i]);
            }
        }
        assert!(iface
            .network_interface
            .data()
            .iter()
            .zip(iface.zone_boundary.data())
            .all(|(&a, &b)| !(a && b)));
    }

    #[test]
    fn min_network_size_filter_removes_specks() {
        let map = map_from(&["nnnmmsssss", "nnnmmssnss", "nnnmmsssss"]);
        let params = DzoneParams {
            closing_radius: 1,
            min_network_size: 2,
            ..Default::default()
        };
        let cleaned = clean_microconstituent_map(&map, &params).unwrap();
        assert_eq!(cleaned.get(1, 7), SPHEROIDITE);
        assert_eq!(cleaned.get(1, 0), NETWORK);
    }
}
