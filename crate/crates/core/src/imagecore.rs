//! Micrograph and label-map containers, PNG I/O, dataset manifests and
//! contrast-limited local histogram equalization.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gray-level micrograph with intensities normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Micrograph {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    /// Physical scale in µm per pixel, when known.
    pub scale: Option<f64>,
}

impl Micrograph {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height * width != pixels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} micrograph needs {} pixels, got {}",
                height,
                width,
                height * width,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(
                "pixels",
                format!("intensity {} at index {} is outside [0, 1]", pixels[i], i),
            ));
        }
        Ok(Micrograph {
            height,
            width,
            pixels,
            scale: None,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Micrograph::new(height, width, vec![value.clamp(0.0, 1.0); height * width]).expect("filled micrograph is valid")
    }

    pub fn with_scale(mut self, scale: Option<f64>) -> Self {
        self.scale = scale.filter(|s| *s > 0.0);
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }
}

/// Ordered set of classes with display colors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    pub names: Vec<String>,
    pub colors: Vec<[u8; 3]>,
}

pub const DARK_BLUE: [u8; 3] = [0, 0, 139];
pub const LIGHT_BLUE: [u8; 3] = [135, 206, 250];
pub const YELLOW: [u8; 3] = [255, 215, 0];
pub const GREEN: [u8; 3] = [0, 160, 0];

impl ClassTaxonomy {
    pub const MATRIX: u8 = 0;
    pub const NETWORK: u8 = 1;
    pub const SPHEROIDITE: u8 = 2;
    pub const WIDMANSTATTEN: u8 = 3;
    /// Particle class index in the two-class particle taxonomy.
    pub const PARTICLE: u8 = 1;

    /// matrix (0), network (1), spheroidite (2), widmanstatten (3).
    pub fn microconstituent() -> Self {
        ClassTaxonomy {
            names: ["matrix", "network", "spheroidite", "widmanstatten"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            colors: vec![DARK_BLUE, LIGHT_BLUE, YELLOW, GREEN],
        }
    }

    /// matrix (0), spheroidite particle (1).
    pub fn particle() -> Self {
        ClassTaxonomy {
            names: vec!["matrix".into(), "spheroidite".into()],
            colors: vec![DARK_BLUE, YELLOW],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "microconstituent" => Ok(Self::microconstituent()),
            "particle" => Ok(Self::particle()),
            other => Err(Error::invalid(
                "taxonomy",
                format!("unknown taxonomy `{other}` (expected microconstituent or particle)"),
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Per-pixel class indices over a taxonomy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    taxonomy: ClassTaxonomy,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>, taxonomy: ClassTaxonomy) -> Result<Self> {
        if height * width != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} label map needs {} labels, got {}",
                height,
                width,
                height * width,
                labels.len()
            )));
        }
        let k = taxonomy.len();
        if let Some(i) = labels.iter().position(|&l| l as usize >= k) {
            return Err(Error::LabelOutOfRange {
                row: i / width,
                col: i % width,
                label: labels[i] as u32,
                classes: k,
            });
        }
        Ok(LabelMap {
            height,
            width,
            labels,
            taxonomy,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8, taxonomy: ClassTaxonomy) -> Result<Self> {
        LabelMap::new(height, width, vec![label; height * width], taxonomy)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn taxonomy(&self) -> &ClassTaxonomy {
        &self.taxonomy
    }

    pub fn num_classes(&self) -> usize {
        self.taxonomy.len()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Boolean mask of pixels carrying `class`.
    pub fn mask(&self, class: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class).collect()
    }

    pub fn same_shape(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }

    /// Rebuilds a map with the same shape and taxonomy from new labels.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        LabelMap::new(self.height, self.width, labels, self.taxonomy.clone())
    }
}

fn open_png(path: &Path) -> Result<png::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    decoder.read_info().map_err(|source| Error::PngDecode {
        path: path.to_path_buf(),
        source,
    })
}

fn read_frame(path: &Path, reader: &mut png::Reader<BufReader<File>>) -> Result<(Vec<u8>, png::OutputInfo)> {
    let size = reader.output_buffer_size().ok_or_else(|| Error::UnsupportedRaster {
        path: path.to_path_buf(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|source| Error::PngDecode {
        path: path.to_path_buf(),
        source,
    })?;
    buf.truncate(info.buffer_size());
    Ok((buf, info))
}

/// Path of the optional JSON sidecar holding `{"um_per_px": ...}` for an image.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Sidecar {
    um_per_px: Option<f64>,
}

/// Loads a single-channel 8- or 16-bit PNG, dividing by the maximum code value.
pub fn load_micrograph(path: impl AsRef<Path>) -> Result<Micrograph> {
    let path = path.as_ref();
    let mut reader = open_png(path)?;
    let (buf, info) = read_frame(path, &mut reader)?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedRaster {
            path: path.to_path_buf(),
            reason: format!("expected single-channel grayscale, found {:?}", info.color_type),
        });
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let pixels: Vec<f32> = match info.bit_depth {
        png::BitDepth::Eight => {
            let stride = info.line_size;
            (0..h)
                .flat_map(|r| buf[r * stride..r * stride + w].iter().map(|&v| v as f32 / 255.0))
                .collect()
        }
        png::BitDepth::Sixteen => {
            let stride = info.line_size;
            (0..h)
                .flat_map(|r| {
                    buf[r * stride..r * stride + 2 * w]
                        .chunks_exact(2)
                        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0)
                })
                .collect()
        }
        other => {
            return Err(Error::UnsupportedRaster {
                path: path.to_path_buf(),
                reason: format!("unsupported bit depth {:?}", other),
            })
        }
    };
    let scale = read_sidecar(path)?;
    Ok(Micrograph::new(h, w, pixels)?.with_scale(scale))
}

fn read_sidecar(path: &Path) -> Result<Option<f64>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: Sidecar = serde_json::from_str(&text).map_err(|source| Error::Json {
        context: side.display().to_string(),
        source,
    })?;
    Ok(meta.um_per_px)
}

/// Writes an 8-bit grayscale PNG (intensities rounded to the nearest code)
/// and, when the scale is known, its JSON sidecar.
pub fn save_micrograph(m: &Micrograph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u8> = m
        .pixels
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    write_png(path, m.width, m.height, png::ColorType::Grayscale, None, &data)?;
    if let Some(s) = m.scale {
        let side = sidecar_path(path);
        let text = serde_json::to_string(&Sidecar { um_per_px: Some(s) }).expect("sidecar serializes");
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    }
    Ok(())
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let wrap = |source| Error::PngEncode {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = enc.write_header().map_err(wrap)?;
    writer.write_image_data(data).map_err(wrap)?;
    writer.finish().map_err(wrap)
}

/// Writes interleaved 8-bit RGB pixels, row-major.
pub fn save_rgb(height: usize, width: usize, rgb: &[u8], path: impl AsRef<Path>) -> Result<()> {
    if rgb.len() != 3 * height * width {
        return Err(Error::DimensionMismatch(format!(
            "{} bytes for a {height}x{width} RGB image",
            rgb.len()
        )));
    }
    write_png(path.as_ref(), width, height, png::ColorType::Rgb, None, rgb)
}

/// Loads an 8-bit indexed PNG (or raw 8-bit grayscale indices) as a label map.
pub fn load_labelmap(path: impl AsRef<Path>, taxonomy: &ClassTaxonomy) -> Result<LabelMap> {
    let path = path.as_ref();
    let mut reader = open_png(path)?;
    let palette = reader.info().palette.as_ref().map(|p| p.to_vec());
    let (buf, info) = read_frame(path, &mut reader)?;
    match (info.color_type, info.bit_depth) {
        (png::ColorType::Indexed, png::BitDepth::Eight) | (png::ColorType::Grayscale, png::BitDepth::Eight) => {}
        (c, d) => {
            return Err(Error::UnsupportedRaster {
                path: path.to_path_buf(),
                reason: format!("label maps must be 8-bit indexed, found {:?} at {:?}", c, d),
            })
        }
    }
    if let Some(pal) = palette {
        for (k, color) in taxonomy.colors.iter().enumerate() {
            match pal.get(3 * k..3 * k + 3) {
                Some(entry) if entry == color => {}
                Some(entry) => {
                    return Err(Error::UnsupportedRaster {
                        path: path.to_path_buf(),
                        reason: format!(
                            "palette entry {k} is {:?}, expected {:?} for class `{}`",
                            entry, color, taxonomy.names[k]
                        ),
                    })
                }
                None => break,
            }
        }
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let stride = info.line_size;
    let labels: Vec<u8> = (0..h)
        .flat_map(|r| buf[r * stride..r * stride + w].iter().copied())
        .collect();
    LabelMap::new(h, w, labels, taxonomy.clone())
}

/// Writes a label map as an 8-bit paletted PNG with the taxonomy colors.
pub fn save_labelmap(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let palette: Vec<u8> = map.taxonomy.colors.iter().flatten().copied().collect();
    write_png(
        path.as_ref(),
        map.width,
        map.height,
        png::ColorType::Indexed,
        Some(palette),
        &map.labels,
    )
}

/// Binary raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height * width != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} mask needs {} entries, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(Mask { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Mask { height, width, data }
    }

    pub fn from_labels(map: &LabelMap, class: u8) -> Self {
        Mask {
            height: map.height(),
            width: map.width(),
            data: map.mask(class),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    pub fn not(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// One image/label pair of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_path: PathBuf,
    pub label_path: PathBuf,
    #[serde(default)]
    pub um_per_px: Option<f64>,
    #[serde(default)]
    pub split_tags: Vec<String>,
}

/// Reads a manifest (JSON array of records); relative paths resolve against
/// the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records: Vec<ManifestRecord> = serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for r in &mut records {
        if r.image_path.is_relative() {
            r.image_path = base.join(&r.image_path);
        }
        if r.label_path.is_relative() {
            r.label_path = base.join(&r.label_path);
        }
    }
    Ok(records)
}

pub fn save_manifest(records: &[ManifestRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(records).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A loaded micrograph/label pair.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Micrograph,
    pub labels: LabelMap,
}

/// Loads every record of a manifest; the manifest scale overrides the sidecar.
pub fn load_dataset(records: &[ManifestRecord], taxonomy: &ClassTaxonomy) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            let mut image = load_micrograph(&r.image_path)?;
            if r.um_per_px.is_some() {
                image = image.with_scale(r.um_per_px);
            }
            let labels = load_labelmap(&r.label_path, taxonomy)?;
            if !labels.same_shape(image.height(), image.width()) {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {}x{} but {} is {}x{}",
                    r.image_path.display(),
                    image.height(),
                    image.width(),
                    r.label_path.display(),
                    labels.height(),
                    labels.width()
                )));
            }
            Ok(Sample { image, labels })
        })
        .collect()
}

/// Parameters of the contrast-limited local histogram equalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EqualizeParams {
    pub tile: usize,
    pub clip: f64,
}

impl Default for EqualizeParams {
    fn default() -> Self {
        EqualizeParams { tile: 64, clip: 0.01 }
    }
}

const BINS: usize = 256;

#[inline]
fn bin_of(v: f32) -> usize {
    ((v * 255.0).round() as i64).clamp(0, 255) as usize
}

/// Clipped-histogram equalization lookup for a set of intensities. `None`
/// means identity: a region whose histogram occupies a single bin maps to
/// itself.
fn tile_lut(values: impl Iterator<Item = f32>, clip: f64) -> Option<[f32; BINS]> {
    let mut hist = [0f64; BINS];
    let mut n = 0f64;
    for v in values {
        hist[bin_of(v)] += 1.0;
        n += 1.0;
    }
    if n == 0.0 || hist.iter().filter(|&&c| c > 0.0).count() < 2 {
        return None;
    }
    let limit = (clip * n).max(1.0);
    let mut excess = 0.0;
    for c in hist.iter_mut() {
        if *c > limit {
            excess += *c - limit;
            *c = limit;
        }
    }
    let share = excess / BINS as f64;
    for c in hist.iter_mut() {
        *c += share;
    }
    let mut cdf = [0f64; BINS];
    let mut acc = 0.0;
    for b in 0..BINS {
        acc += hist[b];
        cdf[b] = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0.0).unwrap_or(0.0);
    let denom = n - cdf_min;
    if denom <= 0.0 {
        return None;
    }
    let mut lut = [0f32; BINS];
    for b in 0..BINS {
        lut[b] = ((cdf[b] - cdf_min) / denom).clamp(0.0, 1.0) as f32;
    }
    Some(lut)
}

#[inline]
fn lookup(lut: &Option<[f32; BINS]>, v: f32) -> f64 {
    match lut {
        Some(l) => l[bin_of(v)] as f64,
        None => v as f64,
    }
}

/// Tile-based contrast-limited equalization with bilinear blending between
/// the lookup tables of neighbouring tile centres. When the tile is larger
/// than the image the whole image is equalized with one table.
pub fn local_hist_equalize(m: &Micrograph, params: EqualizeParams) -> Result<Micrograph> {
    if params.tile < 8 {
        return Err(Error::invalid(
            "tile",
            format!("tile must be >= 8 px, got {}", params.tile),
        ));
    }
    if !(params.clip > 0.0 && params.clip <= 1.0) {
        return Err(Error::invalid(
            "clip",
            format!("clip must lie in (0, 1], got {}", params.clip),
        ));
    }
    let (h, w) = (m.height, m.width);
    if params.tile > h || params.tile > w {
        let lut = tile_lut(m.pixels.iter().copied(), params.clip);
        let pixels = m.pixels.iter().map(|&v| lookup(&lut, v) as f32).collect();
        return Ok(Micrograph::new(h, w, pixels)?.with_scale(m.scale));
    }
    let t = params.tile;
    let ny = h.div_ceil(t);
    let nx = w.div_ceil(t);
    let mut luts = Vec::with_capacity(ny * nx);
    let mut centers_y = Vec::with_capacity(ny);
    let mut centers_x = Vec::with_capacity(nx);
    for ty in 0..ny {
        let (r0, r1) = (ty * t, ((ty + 1) * t).min(h));
        centers_y.push((r0 + r1) as f64 / 2.0 - 0.5);
        for tx in 0..nx {
            let (c0, c1) = (tx * t, ((tx + 1) * t).min(w));
            if ty == 0 {
                centers_x.push((c0 + c1) as f64 / 2.0 - 0.5);
            }
            let vals = (r0..r1)
                .flat_map(|r| (c0..c1).map(move |c| (r, c)))
                .map(|(r, c)| m.get(r, c));
            luts.push(tile_lut(vals, params.clip));
        }
    }
    let bracket = |centers: &[f64], x: f64| -> (usize, usize, f64) {
        if x <= centers[0] {
            return (0, 0, 0.0);
        }
        let last = centers.len() - 1;
        if x >= centers[last] {
            return (last, last, 0.0);
        }
        let i = centers.iter().rposition(|&c| c <= x).unwrap_or(0);
        let f = (x - centers[i]) / (centers[i + 1] - centers[i]);
        (i, i + 1, f)
    };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let (y0, y1, fy) = bracket(&centers_y, r as f64);
        for c in 0..w {
            let (x0, x1, fx) = bracket(&centers_x, c as f64);
            let v = m.get(r, c);
            let top = (1.0 - fx) * lookup(&luts[y0 * nx + x0], v) + fx * lookup(&luts[y0 * nx + x1], v);
            let bottom = (1.0 - fx) * lookup(&luts[y1 * nx + x0], v) + fx * lookup(&luts[y1 * nx + x1], v);
            out.push(((1.0 - fy) * top + fy * bottom).clamp(0.0, 1.0) as f32);
        }
    }
    Ok(Micrograph::new(h, w, out)?.with_scale(m.scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_gray8(path: &Path, w: u32, h: u32, data: &[u8]) {
        let file = File::create(path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut wr = enc.write_header().unwrap();
        wr.write_image_data(data).unwrap();
    }

    #[test]
    fn saturated_and_black_images_normalize_to_extremes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.png");
        write_gray8(&p, 5, 3, &[255; 15]);
        let m = load_micrograph(&p).unwrap();
        assert!(m.pixels().iter().all(|&v| v == 1.0));
        assert_eq!(m.scale, None);

        let p = dir.path().join("black.png");
        write_gray8(&p, 5, 3, &[0; 15]);
        assert!(load_micrograph(&p).unwrap().pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sixteen_bit_images_use_full_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let file = File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut wr = enc.write_header().unwrap();
        wr.write_image_data(&[0xff, 0xff, 0x80, 0x00]).unwrap();
        drop(wr);
        let m = load_micrograph(&p).unwrap();
        assert_eq!(m.pixels()[0], 1.0);
        assert!((m.pixels()[1] - 32768.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn multichannel_input_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let file = File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 2);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut wr = enc.write_header().unwrap();
        wr.write_image_data(&[0; 12]).unwrap();
        drop(wr);
        assert!(matches!(load_micrograph(&p), Err(Error::UnsupportedRaster { .. })));
    }

    #[test]
    fn scale_comes_from_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scaled.png");
        let m = Micrograph::filled(4, 4, 0.5).with_scale(Some(0.25));
        save_micrograph(&m, &p).unwrap();
        assert_eq!(load_micrograph(&p).unwrap().scale, Some(0.25));
    }

    #[test]
    fn micrograph_round_trip_within_one_code() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..5 {
            let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
            let px: Vec<f32> = (0..h * w).map(|_| rng.random::<f32>()).collect();
            let m = Micrograph::new(h, w, px).unwrap();
            let p = dir.path().join(format!("rt{trial}.png"));
            save_micrograph(&m, &p).unwrap();
            let back = load_micrograph(&p).unwrap();
            assert_eq!((back.height(), back.width()), (h, w));
            for (a, b) in m.pixels().iter().zip(back.pixels()) {
                assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn all_zero_indexed_file_is_all_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zeros.png");
        let tax = ClassTaxonomy::microconstituent();
        save_labelmap(&LabelMap::filled(6, 7, 0, tax.clone()).unwrap(), &p).unwrap();
        let l = load_labelmap(&p, &tax).unwrap();
        assert!(l.labels().iter().all(|&v| v == ClassTaxonomy::MATRIX));
        assert_eq!(l.num_classes(), 4);
    }

    #[test]
    fn out_of_range_index_names_the_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        let mut data = vec![0u8; 12];
        data[7] = 7;
        write_gray8(&p, 4, 3, &data);
        match load_labelmap(&p, &ClassTaxonomy::microconstituent()) {
            Err(Error::LabelOutOfRange {
                row,
                col,
                label,
                classes,
            }) => {
                assert_eq!((row, col, label, classes), (1, 3, 7, 4));
            }
            other => panic!("expected out-of-range error, got {other:?}"),
        }
    }

    #[test]
    fn palette_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pal.png");
        let map = LabelMap::filled(2, 2, 0, ClassTaxonomy::particle()).unwrap();
        save_labelmap(&map, &p).unwrap();
        // Particle palette has yellow at index 1, microconstituent expects light blue.
        assert!(matches!(
            load_labelmap(&p, &ClassTaxonomy::microconstituent()),
            Err(Error::UnsupportedRaster { .. })
        ));
    }

    #[test]
    fn constant_image_is_unchanged_by_equalization() {
        let m = Micrograph::filled(40, 50, 0.42);
        for params in [
            EqualizeParams { tile: 16, clip: 0.01 },
            EqualizeParams { tile: 64, clip: 0.5 },
        ] {
            let e = local_hist_equalize(&m, params).unwrap();
            assert_eq!(e, m);
            assert_eq!(local_hist_equalize(&e, params).unwrap(), e);
        }
    }

    #[test]
    fn two_level_image_is_stretched_to_extremes_by_global_fallback() {
        // Global CDF mapping: half the pixels sit at 0.4 (cdf = cdf_min), the
        // rest at 0.6 (cdf = n), so (cdf - cdf_min) / (n - cdf_min) gives 0 and 1.
        let px: Vec<f32> = (0..100).map(|i| if i % 2 == 0 { 0.4 } else { 0.6 }).collect();
        let m = Micrograph::new(10, 10, px).unwrap();
        let e = local_hist_equalize(&m, EqualizeParams { tile: 64, clip: 1.0 }).unwrap();
        for (src, dst) in m.pixels().iter().zip(e.pixels()) {
            let expected = if *src < 0.5 { 0.0 } else { 1.0 };
            assert_eq!(*dst, expected);
        }
    }

    #[test]
    fn equalization_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (h, w) = (rng.random_range(8..90), rng.random_range(8..90));
            let px = (0..h * w).map(|_| rng.random::<f32>().powi(3)).collect();
            let m = Micrograph::new(h, w, px).unwrap();
            let params = EqualizeParams {
                tile: rng.random_range(8..40),
                clip: rng.random_range(0.001..1.0),
            };
            let e = local_hist_equalize(&m, params).unwrap();
            assert!(e.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(e, local_hist_equalize(&m, params).unwrap());
        }
    }

    #[test]
    fn equalization_rejects_bad_parameters() {
        let m = Micrograph::filled(20, 20, 0.1);
        assert!(local_hist_equalize(&m, EqualizeParams { tile: 4, clip: 0.01 }).is_err());
        assert!(local_hist_equalize(&m, EqualizeParams { tile: 16, clip: 0.0 }).is_err());
    }

    #[test]
    fn manifest_paths_resolve_relative_to_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![ManifestRecord {
            image_path: "images/a.png".into(),
            label_path: "labels/a.png".into(),
            um_per_px: Some(0.1),
            split_tags: vec!["train".into()],
        }];
        let p = dir.path().join("manifest.json");
        save_manifest(&recs, &p).unwrap();
        let back = load_manifest(&p).unwrap();
        assert_eq!(back[0].image_path, dir.path().join("images/a.png"));
        assert_eq!(back[0].split_tags, vec!["train".to_string()]);
    }
}
