//! Connected-component labelling of binary masks.

use serde::{Deserialize, Serialize};

use crate::imagecore::Mask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u8) -> Option<Self> {
        match n {
            4 => Some(Connectivity::Four),
            8 => Some(Connectivity::Eight),
            _ => None,
        }
    }

    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// Labels maximal connected foreground regions. Returns a per-pixel
/// component id (`0` for background, `1..=n` in row-major order of each
/// component's first pixel) and the component count.
pub fn label_components(mask: &Mask, connectivity: Connectivity) -> (Vec<u32>, usize) {
    let (h, w) = (mask.height(), mask.width());
    let mut ids = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.data()[start] || ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for &(dr, dc) in connectivity.offsets() {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let q = nr as usize * w + nc as usize;
                if mask.data()[q] && ids[q] == 0 {
                    ids[q] = next;
                    stack.push(q);
                }
            }
        }
    }
    (ids, next as usize)
}

/// Pixel indices of each component, in component order; each list is
/// sorted row-major.
pub fn component_pixels(ids: &[u32], count: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); count];
    for (i, &id) in ids.iter().enumerate() {
        if id > 0 {
            out[id as usize - 1].push(i);
        }
    }
    out
}
