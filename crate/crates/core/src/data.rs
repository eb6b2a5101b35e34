//! Datasets: MNIST-style IDX files, synthetic sources, shuffled batching.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub split: String,
}

/// Flattened samples in `[0, 1]`, one per row.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Option<Vec<u8>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Option<Vec<u8>>, meta: DatasetMeta) -> Result<Self> {
        if !images.is_matrix() || images.rows() == 0 {
            return Err(Error::Config("dataset must be a non-empty [count, n] matrix".into()));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("dataset values must lie in [0, 1]".into()));
        }
        if labels.as_ref().is_some_and(|l| l.len() != images.rows()) {
            return Err(Error::Config("label count differs from image count".into()));
        }
        Ok(Dataset { images, labels, meta })
    }

    pub fn count(&self) -> usize {
        self.images.rows()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    /// The first `count` samples.
    pub fn head(&self, count: usize) -> Dataset {
        let count = count.min(self.count());
        Dataset {
            images: self.images.slice_rows(0, count),
            labels: self.labels.as_ref().map(|l| l[..count].to_vec()),
            meta: self.meta.clone(),
        }
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: offset + 4,
            actual: bytes.len(),
        })
}

/// Parses an IDX image payload (magic `0x00000803`).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }
    Ok((count, rows, cols, &bytes[16..expected]))
}

/// Parses an IDX label payload (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(&bytes[8..expected])
}

/// Loads an IDX image file (and optional label file), scaling pixels by
/// 1/255.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let bytes = fs::read(images_path)?;
    let (count, rows, cols, pixels) = parse_idx_images(&bytes)?;
    if count == 0 {
        return Err(Error::Format("IDX file holds no images".into()));
    }
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let images = Tensor::matrix(count, rows * cols, data)?;
    let labels = match labels_path {
        Some(p) => {
            let lb = fs::read(p)?;
            Some(parse_idx_labels(&lb)?.to_vec())
        }
        None => None,
    };
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let split = if name.starts_with("t10k") || name.contains("test") {
        "test"
    } else {
        "train"
    };
    Dataset::new(
        images,
        labels,
        DatasetMeta {
            name,
            rows,
            cols,
            channels: 1,
            split: split.into(),
        },
    )
}

/// Serializes images back to an IDX image payload (pixels rounded from
/// `255 · v`).
pub fn encode_idx_images(images: &Tensor, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IDX_IMAGES_MAGIC, images.rows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// Synthetic source family.
#[derive(Clone, Debug, PartialEq)]
pub enum SynthKind {
    /// `N(0.5, 0.15²)` per coordinate, clipped to `[0, 1]`.
    Gaussian,
    /// Equal-weight Gaussians at the given centers (each of length `n`, or
    /// length 1 to broadcast), clipped to `[0, 1]`.
    Mixture { centers: Vec<Vec<f64>>, std: f64 },
    /// `U[0, 1]` per coordinate.
    Uniform,
}

impl SynthKind {
    pub fn parse(kind: &str) -> Result<Self> {
        match kind {
            "gaussian" => Ok(SynthKind::Gaussian),
            "uniform" => Ok(SynthKind::Uniform),
            "mixture" => Ok(SynthKind::Mixture {
                centers: vec![vec![0.25], vec![0.75]],
                std: 0.1,
            }),
            other => Err(Error::Config(format!("unknown synthetic source kind `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SynthKind::Gaussian => "gaussian",
            SynthKind::Mixture { .. } => "mixture",
            SynthKind::Uniform => "uniform",
        }
    }
}

pub fn synth_source(kind: &SynthKind, count: usize, n: usize, seed: u64) -> Result<Dataset> {
    if count == 0 || n == 0 {
        return Err(Error::Config("synthetic source needs count, n >= 1".into()));
    }
    let mut rng = Rng::derive(seed, "synth-source");
    let mut data = Vec::with_capacity(count * n);
    match kind {
        SynthKind::Gaussian => {
            for _ in 0..count * n {
                data.push((0.5 + 0.15 * rng.normal()).clamp(0.0, 1.0));
            }
        }
        SynthKind::Uniform => {
            for _ in 0..count * n {
                data.push(rng.uniform());
            }
        }
        SynthKind::Mixture { centers, std } => {
            if centers.is_empty() || centers.iter().any(|c| c.len() != n && c.len() != 1) {
                return Err(Error::Config(format!(
                    "mixture centers must be non-empty with length {n} or 1"
                )));
            }
            for _ in 0..count {
                let c = &centers[rng.below(centers.len())];
                for j in 0..n {
                    let mu = if c.len() == 1 { c[0] } else { c[j] };
                    data.push((mu + std * rng.normal()).clamp(0.0, 1.0));
                }
            }
        }
    }
    Dataset::new(
        Tensor::matrix(count, n, data)?,
        None,
        DatasetMeta {
            name: format!("synth-{}", kind.name()),
            rows: 1,
            cols: n,
            channels: 1,
            split: "train".into(),
        },
    )
}

/// Mini-batch schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub drop_last: bool,
}

impl BatchPlan {
    /// Sample order for `epoch`: a permutation drawn from the stream
    /// `(seed, "batches/<epoch>")`.
    pub fn permutation(&self, count: usize, epoch: usize, seed: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..count).collect();
        let mut rng = Rng::new(derive_seed(seed, &format!("batches/{epoch}")));
        rng.shuffle(&mut idx);
        idx
    }
}

/// Lazily materialized batches of one epoch.
pub struct Batches<'a> {
    data: &'a Tensor,
    order: Vec<usize>,
    batch_size: usize,
    drop_last: bool,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Tensor;

    fn next(&mut self) -> Option<Tensor> {
        let remaining = self.order.len() - self.pos;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let end = self.pos + remaining.min(self.batch_size);
        let batch = self.data.select_rows(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

pub fn batches<'a>(dataset: &'a Dataset, plan: &BatchPlan, epoch: usize, seed: u64) -> Result<Batches<'a>> {
    if plan.batch_size == 0 || plan.batch_size > dataset.count() {
        return Err(Error::Config(format!(
            "batch size {} must be in 1..={}",
            plan.batch_size,
            dataset.count()
        )));
    }
    Ok(Batches {
        data: &dataset.images,
        order: plan.permutation(dataset.count(), epoch, seed),
        batch_size: plan.batch_size,
        drop_last: plan.drop_last,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn zero_fixture_loads() {
        let dir = std::env::temp_dir().join(format!("aj-idx-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("zeros-idx3-ubyte");
        fs::write(&p, fixture(2, 2, 2, &[0; 8])).unwrap();
        let d = load_idx(&p, None).unwrap();
        assert_eq!(d.count(), 2);
        assert_eq!(d.dim(), 4);
        assert!(d.images.data().iter().all(|&v| v == 0.0));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut b = fixture(1, 1, 1, &[0]);
        b[..4].copy_from_slice(&0xDEAD_BEEFu32.to_be_bytes());
        assert!(matches!(parse_idx_images(&b), Err(Error::Format(_))));
        assert!(matches!(parse_idx_labels(&b), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_is_length_error() {
        let b = fixture(3, 2, 2, &[1; 5]);
        assert!(matches!(
            parse_idx_images(&b),
            Err(Error::Length { expected: 28, actual: 21 })
        ));
        assert!(matches!(parse_idx_images(&[0, 0]), Err(Error::Length { .. })));
    }

    #[test]
    fn labels_parse() {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[7, 1, 9]);
        assert_eq!(parse_idx_labels(&b).unwrap(), &[7, 1, 9]);
    }

    #[test]
    fn pixel_roundtrip_is_byte_exact() {
        let pixels: Vec<u8> = (0..=255).collect();
        let b = fixture(4, 8, 8, &pixels);
        let (count, rows, cols, px) = parse_idx_images(&b).unwrap();
        let t = Tensor::matrix(count, rows * cols, px.iter().map(|&p| f64::from(p) / 255.0).collect()).unwrap();
        assert_eq!(encode_idx_images(&t, rows, cols), b);
    }

    #[test]
    fn gaussian_source_mean() {
        let d = synth_source(&SynthKind::Gaussian, 100_000, 2, 4).unwrap();
        for j in 0..2 {
            let m = d.images.column(j).iter().sum::<f64>() / d.count() as f64;
            assert!((0.49..=0.51).contains(&m), "{m}");
        }
    }

    #[test]
    fn uniform_source_bounds_and_determinism() {
        let a = synth_source(&SynthKind::Uniform, 1000, 3, 8).unwrap();
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let b = synth_source(&SynthKind::Uniform, 1000, 3, 8).unwrap();
        assert_eq!(a.images, b.images);
    }

    #[test]
    fn mixture_needs_matching_centers() {
        let bad = SynthKind::Mixture {
            centers: vec![vec![0.1, 0.2, 0.3]],
            std: 0.1,
        };
        assert!(synth_source(&bad, 10, 2, 0).is_err());
        assert!(SynthKind::parse("cauchy").is_err());
    }

    fn tiny(count: usize) -> Dataset {
        let data = (0..count).map(|i| i as f64 / count as f64).collect();
        Dataset::new(Tensor::matrix(count, 1, data).unwrap(), None, DatasetMeta {
            name: "t".into(),
            rows: 1,
            cols: 1,
            channels: 1,
            split: "train".into(),
        })
        .unwrap()
    }

    #[test]
    fn full_batch_is_permutation() {
        let d = tiny(6);
        let plan = BatchPlan { batch_size: 6, drop_last: false };
        let bs: Vec<Tensor> = batches(&d, &plan, 0, 1).unwrap().collect();
        assert_eq!(bs.len(), 1);
        let mut v = bs[0].data().to_vec();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, d.images.data());
    }

    #[test]
    fn drop_last_discards_short_batch() {
        let d = tiny(5);
        let plan = BatchPlan { batch_size: 2, drop_last: true };
        let bs: Vec<Tensor> = batches(&d, &plan, 0, 1).unwrap().collect();
        assert_eq!(bs.len(), 2);
        assert_eq!(bs.iter().map(Tensor::rows).sum::<usize>(), 4);
        let keep = BatchPlan { batch_size: 2, drop_last: false };
        assert_eq!(batches(&d, &keep, 0, 1).unwrap().count(), 3);
    }

    #[test]
    fn epochs_shuffle_differently() {
        let plan = BatchPlan { batch_size: 4, drop_last: false };
        assert_ne!(plan.permutation(50, 1, 9), plan.permutation(50, 2, 9));
        assert_eq!(plan.permutation(50, 1, 9), plan.permutation(50, 1, 9));
    }

    #[test]
    fn oversized_batch_rejected() {
        let d = tiny(3);
        let plan = BatchPlan { batch_size: 4, drop_last: false };
        assert!(matches!(batches(&d, &plan, 0, 0), Err(Error::Config(_))));
    }
}
