//! Datasets: seeded synthetic shapes with ground-truth masks, IDX ingestion,
//! PGM image I/O and epoch batching.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One sample: a grayscale image in [0,1], its class label, and (for
/// generated data) the exact binary object mask.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub id: u64,
    /// Image tensor of shape [1, H, W].
    pub image: Tensor,
    pub label: usize,
    /// Binary mask of shape [H, W] with values in {0.0, 1.0}.
    pub mask: Option<Tensor>,
}

impl LabeledExample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Square,
    Circle,
    Triangle,
    Cross,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::Square,
        ShapeClass::Circle,
        ShapeClass::Triangle,
        ShapeClass::Cross,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeClass::Square => "square",
            ShapeClass::Circle => "circle",
            ShapeClass::Triangle => "triangle",
            ShapeClass::Cross => "cross",
        }
    }
}

impl std::str::FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "square" => Ok(ShapeClass::Square),
            "circle" => Ok(ShapeClass::Circle),
            "triangle" => Ok(ShapeClass::Triangle),
            "cross" => Ok(ShapeClass::Cross),
            other => Err(Error::InvalidConfig(format!(
                "unknown shape class '{other}' (expected square, circle, triangle or cross)"
            ))),
        }
    }
}

/// Configuration for the synthetic shapes generator.
#[derive(Debug, Clone)]
pub struct ShapesConfig {
    pub classes: Vec<ShapeClass>,
    pub image_size: usize,
    pub samples_per_class: usize,
    /// Background pixels are uniform in [0, noise_level].
    pub noise_level: f32,
    /// Adds a bright 3x3 patch disjoint from the object mask.
    pub distractor: bool,
    pub seed: u64,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self {
            classes: ShapeClass::ALL.to_vec(),
            image_size: 32,
            samples_per_class: 100,
            noise_level: 0.1,
            distractor: false,
            seed: 0,
        }
    }
}

impl ShapesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InvalidConfig("need at least 2 shape classes".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(Error::InvalidConfig(format!("duplicate class '{}'", c.as_str())));
            }
        }
        if self.image_size < 16 {
            return Err(Error::InvalidConfig(format!(
                "image_size must be at least 16, got {}",
                self.image_size
            )));
        }
        if !(0.0..=0.5).contains(&self.noise_level) {
            return Err(Error::InvalidConfig(format!(
                "noise_level must lie in [0, 0.5], got {}",
                self.noise_level
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidConfig("samples_per_class must be positive".into()));
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: usize = 100;
const MIN_SHAPE_AREA: usize = 9;

/// Generates `samples_per_class` examples per class, class-major, ids
/// sequential from 0. One sequential ChaCha8 stream seeded by `seed` drives
/// everything, so equal configs give bit-identical datasets.
pub fn gen_shapes(cfg: &ShapesConfig) -> Result<Vec<LabeledExample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.classes.len() * cfg.samples_per_class);
    let mut id = 0u64;
    for (label, &class) in cfg.classes.iter().enumerate() {
        for _ in 0..cfg.samples_per_class {
            out.push(gen_one(&mut rng, cfg, class, label, id)?);
            id += 1;
        }
    }
    Ok(out)
}

/// Draw order per sample: background noise pixels, then shape geometry
/// (repeated on placement retries), then intensity, then distractor
/// placement. Keep this stable; tests pin the resulting streams.
fn gen_one(
    rng: &mut ChaCha8Rng,
    cfg: &ShapesConfig,
    class: ShapeClass,
    label: usize,
    id: u64,
) -> Result<LabeledExample> {
    let s = cfg.image_size;
    let mut image: Vec<f32> = (0..s * s).map(|_| rng.random::<f32>() * cfg.noise_level).collect();

    let mut attempts = 0;
    let cells = loop {
        attempts += 1;
        let cells = rasterize(rng, class, s);
        let inside = cells.iter().all(|&(y, x)| y >= 1 && x >= 1 && y < s - 1 && x < s - 1);
        if inside && cells.len() >= MIN_SHAPE_AREA {
            break cells;
        }
        if attempts >= PLACEMENT_ATTEMPTS {
            return Err(Error::ShapePlacement { attempts });
        }
    };

    let intensity = 0.7 + 0.3 * rng.random::<f32>();
    let mut mask = vec![0.0f32; s * s];
    for &(y, x) in &cells {
        image[y * s + x] = intensity;
        mask[y * s + x] = 1.0;
    }

    if cfg.distractor {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let dy = rng.random_range(1..s - 3);
            let dx = rng.random_range(1..s - 3);
            let clear = (0..3).all(|i| (0..3).all(|j| mask[(dy + i) * s + dx + j] == 0.0));
            if clear {
                for i in 0..3 {
                    for j in 0..3 {
                        image[(dy + i) * s + dx + j] = 1.0;
                    }
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::ShapePlacement { attempts: PLACEMENT_ATTEMPTS });
        }
    }

    Ok(LabeledExample {
        id,
        image: Tensor::new(vec![1, s, s], image)?,
        label,
        mask: Some(Tensor::new(vec![s, s], mask)?),
    })
}

fn rasterize(rng: &mut ChaCha8Rng, class: ShapeClass, s: usize) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    match class {
        ShapeClass::Square => {
            let side = rng.random_range(3..=s / 2);
            let y0 = rng.random_range(1..s - side);
            let x0 = rng.random_range(1..s - side);
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    cells.push((y, x));
                }
            }
        }
        ShapeClass::Circle => {
            let r = rng.random_range(2..=s / 4);
            let cy = rng.random_range(r + 1..s - r - 1);
            let cx = rng.random_range(r + 1..s - r - 1);
            let r2 = (r * r) as isize;
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    let dy = y as isize - cy as isize;
                    let dx = x as isize - cx as isize;
                    if dy * dy + dx * dx <= r2 {
                        cells.push((y, x));
                    }
                }
            }
        }
        ShapeClass::Triangle => {
            // filled isoceles triangle, apex up
            let h = rng.random_range(4..=s / 3);
            let hw = rng.random_range(2..=s / 4);
            let y0 = rng.random_range(1..s - h);
            let cx = rng.random_range(hw + 1..s - hw - 1);
            for i in 0..h {
                let half = i * hw / (h - 1).max(1);
                for x in cx - half..=cx + half {
                    cells.push((y0 + i, x));
                }
            }
        }
        ShapeClass::Cross => {
            // plus sign with unit thickness
            let a = rng.random_range(3..=s / 4);
            let cy = rng.random_range(a + 1..s - a - 1);
            let cx = rng.random_range(a + 1..s - a - 1);
            for d in 0..=a {
                cells.push((cy - d, cx));
                if d > 0 {
                    cells.push((cy + d, cx));
                    cells.push((cy, cx - d));
                    cells.push((cy, cx + d));
                }
            }
        }
    }
    cells
}

// ---- IDX ------------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn idx_u32(bytes: &[u8], pos: usize) -> Result<u32> {
    if pos + 4 > bytes.len() {
        return Err(Error::IdxTruncated { needed: pos + 4, available: bytes.len() });
    }
    Ok(u32::from_be_bytes([bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]]))
}

/// Loads an IDX image/label pair (the MNIST container format: big-endian
/// magics 0x00000803 / 0x00000801). Pixels are scaled to [0,1]; samples have
/// no masks.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<LabeledExample>> {
    let img = fs::read(images_path)?;
    let magic = idx_u32(&img, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxBadMagic { expected: IDX_IMAGES_MAGIC, actual: magic });
    }
    let count = idx_u32(&img, 4)? as usize;
    let rows = idx_u32(&img, 8)? as usize;
    let cols = idx_u32(&img, 12)? as usize;
    let needed = 16 + count * rows * cols;
    if img.len() < needed {
        return Err(Error::IdxTruncated { needed, available: img.len() });
    }

    let lab = fs::read(labels_path)?;
    let magic = idx_u32(&lab, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxBadMagic { expected: IDX_LABELS_MAGIC, actual: magic });
    }
    let lcount = idx_u32(&lab, 4)? as usize;
    if lcount != count {
        return Err(Error::IdxCountMismatch { images: count, labels: lcount });
    }
    let lneeded = 8 + lcount;
    if lab.len() < lneeded {
        return Err(Error::IdxTruncated { needed: lneeded, available: lab.len() });
    }

    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let data: Vec<f32> = img[start..start + rows * cols]
            .iter()
            .map(|&b| f32::from(b) / 255.0)
            .collect();
        out.push(LabeledExample {
            id: i as u64,
            image: Tensor::new(vec![1, rows, cols], data)?,
            label: lab[8 + i] as usize,
            mask: None,
        });
    }
    Ok(out)
}

// ---- PGM ------------------------------------------------------------------

/// Writes an 8-bit binary PGM (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::PgmFormat(format!(
            "pixel count {} does not match {width}x{height}",
            pixels.len()
        )));
    }
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(pixels);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads an 8-bit binary PGM, returning (width, height, pixels).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comment lines
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::PgmFormat("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(Error::PgmFormat("not a binary PGM (missing P5)".into()));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::PgmFormat("bad width".into()))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::PgmFormat("bad height".into()))?;
    let maxval: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::PgmFormat("bad maxval".into()))?;
    if maxval != 255 {
        return Err(Error::PgmFormat(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if bytes.len() < pos + width * height {
        return Err(Error::PgmFormat("truncated raster".into()));
    }
    Ok((width, height, bytes[pos..pos + width * height].to_vec()))
}

// ---- dataset directory I/O --------------------------------------------------

/// Writes images (and masks when present) as PGM files plus a
/// `manifest.csv` with columns id,label,image_path,mask_path. Returns the
/// manifest path.
pub fn write_dataset(dir: &Path, examples: &[LabeledExample]) -> Result<PathBuf> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    fs::create_dir_all(dir.join("images"))?;
    let any_mask = examples.iter().any(|e| e.mask.is_some());
    if any_mask {
        fs::create_dir_all(dir.join("masks"))?;
    }
    let mut manifest = String::from("id,label,image_path,mask_path\n");
    for ex in examples {
        let (h, w) = (ex.height(), ex.width());
        let img_rel = format!("images/{:05}.pgm", ex.id);
        let pixels: Vec<u8> = ex
            .image
            .data()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        write_pgm(&dir.join(&img_rel), w, h, &pixels)?;
        let mask_rel = match &ex.mask {
            Some(mask) => {
                let rel = format!("masks/{:05}.pgm", ex.id);
                let pixels: Vec<u8> =
                    mask.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
                write_pgm(&dir.join(&rel), w, h, &pixels)?;
                rel
            }
            None => String::new(),
        };
        manifest.push_str(&format!("{},{},{},{}\n", ex.id, ex.label, img_rel, mask_rel));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest)?;
    Ok(path)
}

/// Loads a dataset directory written by `write_dataset`.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledExample>> {
    let manifest_path = if dir.is_dir() { dir.join("manifest.csv") } else { dir.to_path_buf() };
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&manifest_path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("id,label,image_path,mask_path") => {}
        other => {
            return Err(Error::InvalidConfig(format!(
                "bad manifest header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::InvalidConfig(format!(
                "manifest line {}: expected 4 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("manifest line {}: bad id", lineno + 2)))?;
        let label: usize = fields[1].parse().map_err(|_| {
            Error::InvalidConfig(format!("manifest line {}: bad label", lineno + 2))
        })?;
        let (w, h, pixels) = read_pgm(&root.join(fields[2]))?;
        let image = Tensor::new(
            vec![1, h, w],
            pixels.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )?;
        let mask = if fields[3].is_empty() {
            None
        } else {
            let (mw, mh, mpix) = read_pgm(&root.join(fields[3]))?;
            if (mw, mh) != (w, h) {
                return Err(Error::ShapeMismatch {
                    context: format!("mask for sample {id}"),
                    expected: format!("{w}x{h}"),
                    actual: format!("{mw}x{mh}"),
                });
            }
            Some(Tensor::new(
                vec![h, w],
                mpix.iter().map(|&b| if b > 127 { 1.0 } else { 0.0 }).collect(),
            )?)
        };
        out.push(LabeledExample { id, image, label, mask });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

// ---- batching ----------------------------------------------------------------

/// Splits `0..n` into shuffled batches (seeded Fisher-Yates); the final batch
/// may be smaller.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Derived per-epoch shuffle seed.
pub fn shuffle_seed(base: u64, epoch: usize) -> u64 {
    base.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Number of classes implied by the labels (max label + 1).
pub fn class_count(examples: &[LabeledExample]) -> usize {
    examples.iter().map(|e| e.label + 1).max().unwrap_or(0)
}
