//! IDX image/label files and deterministic splits.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{D2nnError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;
pub const VALIDATION_SIZE: usize = 5000;

/// Grayscale images with class labels, stored as raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImageSet {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl LabeledImageSet {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(D2nnError::Dataset("image dimensions must be positive".into()));
        }
        if pixels.len() != rows * cols * labels.len() {
            return Err(D2nnError::Dataset(format!(
                "{} pixel bytes do not match {} images of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(D2nnError::Dataset(format!("label {l} outside 0..{CLASSES}")));
        }
        Ok(LabeledImageSet {
            rows,
            cols,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Image `i` scaled to `[0, 1]`.
    pub fn image(&self, i: usize) -> Vec<f64> {
        self.raw_image(i).iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * self.rows * self.cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.raw_image(i));
            labels.push(self.labels[i]);
        }
        LabeledImageSet {
            rows: self.rows,
            cols: self.cols,
            pixels,
            labels,
        }
    }

    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut counts = [0; CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| D2nnError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| D2nnError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| D2nnError::Dataset(format!("{what}: truncated header")))
}

/// Parses an IDX image file: returns `(n, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(D2nnError::Dataset(format!(
            "images: bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let payload = &bytes[16..];
    let expected = n * rows * cols;
    if payload.len() < expected {
        return Err(D2nnError::Dataset(format!(
            "images: truncated payload, {} of {expected} bytes",
            payload.len()
        )));
    }
    Ok((n, rows, cols, payload[..expected].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(D2nnError::Dataset(format!(
            "labels: bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(D2nnError::Dataset(format!(
            "labels: truncated payload, {} of {n} bytes",
            payload.len()
        )));
    }
    Ok(payload[..n].to_vec())
}

/// Serializes images in IDX format (uncompressed).
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads a pair of IDX files, transparently handling gzip compression.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path.as_ref())?)?;
    if labels.len() != n {
        return Err(D2nnError::Dataset(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    LabeledImageSet::new(rows, cols, pixels, labels)
}

/// Standard file names inside a dataset directory.
pub fn load_standard_dir(dir: impl AsRef<Path>) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let dir = dir.as_ref();
    let pick = |stem: &str| {
        let plain = dir.join(stem);
        if plain.exists() {
            plain
        } else {
            dir.join(format!("{stem}.gz"))
        }
    };
    let train = load_idx(pick("train-images-idx3-ubyte"), pick("train-labels-idx1-ubyte"))?;
    let test = load_idx(pick("t10k-images-idx3-ubyte"), pick("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

/// Train/validation indices into the training pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledImageSet,
    pub validation: LabeledImageSet,
    pub test: LabeledImageSet,
    pub indices: SplitIndices,
}

/// Shuffles the pool with `seed` and holds out `validation_size` samples.
pub fn split_indices(pool_len: usize, validation_size: usize, seed: u64) -> Result<SplitIndices> {
    if validation_size == 0 || pool_len <= validation_size {
        return Err(D2nnError::Dataset(format!(
            "cannot hold out {validation_size} validation samples from a pool of {pool_len}"
        )));
    }
    let mut order: Vec<usize> = (0..pool_len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let validation = order[..validation_size].to_vec();
    let train = order[validation_size..].to_vec();
    Ok(SplitIndices { train, validation })
}

/// 55k/5k train/validation from the 60k pool; the published test set is kept as is.
pub fn split(pool: &LabeledImageSet, test: &LabeledImageSet, seed: u64) -> Result<Splits> {
    if test.is_empty() {
        return Err(D2nnError::Dataset("empty test set".into()));
    }
    let indices = split_indices(pool.len(), VALIDATION_SIZE, seed)?;
    Ok(Splits {
        train: pool.subset(&indices.train),
        validation: pool.subset(&indices.validation),
        test: test.clone(),
        indices,
    })
}

/// Indices of a class-balanced subset of `n` samples, in ascending order.
///
/// Each class receives a share proportional to its frequency, with leftover
/// slots going to the largest fractional remainders.
pub fn stratified_indices(set: &LabeledImageSet, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > set.len() {
        return Err(D2nnError::Dataset(format!(
            "requested {n} samples from a set of {}",
            set.len()
        )));
    }
    let counts = set.class_counts();
    let total = set.len();
    let mut quota: Vec<usize> = counts.iter().map(|&c| c * n / total).collect();
    let mut order: Vec<usize> = (0..CLASSES).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse((counts[c] * n) % total), c));
    let mut left = n - quota.iter().sum::<usize>();
    for c in order {
        if left == 0 {
            break;
        }
        if quota[c] < counts[c] {
            quota[c] += 1;
            left -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (class, &q) in quota.iter().enumerate() {
        let mut members: Vec<usize> = (0..total).filter(|&i| set.label(i) == class).collect();
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..q]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn stratified_subset(set: &LabeledImageSet, n: usize, seed: u64) -> Result<LabeledImageSet> {
    Ok(set.subset(&stratified_indices(set, n, seed)?))
}
