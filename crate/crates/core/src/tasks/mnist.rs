use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMetadata, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;
const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MnistTargets {
    /// Ten columns, 1.0 at the label.
    OneHotMse,
    /// One column holding the label as a float.
    ClassIndex,
}

/// Raw IDX image payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let b = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.fail(self.bytes.len(), "truncated header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, want: u32) -> Result<()> {
        let got = self.u32()?;
        if got != want {
            return Err(self.fail(0, format!("bad magic {got}, expected {want}")));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if self.bytes.len() < end {
            return Err(self.fail(
                self.bytes.len(),
                format!("truncated payload, expected {len} bytes from offset {}", self.pos),
            ));
        }
        if self.bytes.len() > end {
            return Err(self.fail(end, "trailing bytes after payload"));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_file(path)?;
    parse_images(path, &bytes)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    parse_labels(path, &bytes)
}

fn parse_images(path: &Path, bytes: &[u8]) -> Result<IdxImages> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = r.payload(count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32()? as usize;
    let labels = r.payload(count)?;
    if let Some(i) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(r.fail(8 + i, format!("label {} out of range", labels[i])));
    }
    Ok(labels.to_vec())
}

/// Loads an IDX image/label pair, scales pixels to `[0, 1]` and keeps a
/// seeded subset of `subset` rows (all rows, in file order, when `None`).
/// The result is tagged [`Split::Train`]; use [`Dataset::with_split`] for
/// evaluation data.
pub fn load_mnist(
    images_path: &Path,
    labels_path: &Path,
    subset: Option<usize>,
    seed: u64,
    targets: MnistTargets,
) -> Result<Dataset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(Error::config(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let idx: Vec<usize> = match subset {
        None => (0..images.count).collect(),
        Some(k) if k == 0 || k > images.count => {
            return Err(Error::config(format!(
                "subset of {k} requested from {} images",
                images.count
            )))
        }
        Some(k) => {
            let mut v = sample(&mut ChaCha8Rng::seed_from_u64(seed), images.count, k).into_vec();
            v.sort_unstable();
            v
        }
    };
    let dim = images.rows * images.cols;
    let mut x = Vec::with_capacity(idx.len() * dim);
    for &i in &idx {
        x.extend(images.pixels[i * dim..(i + 1) * dim].iter().map(|&p| p as f64 / 255.0));
    }
    let y: Vec<f64> = match targets {
        MnistTargets::OneHotMse => idx
            .iter()
            .flat_map(|&i| {
                let label = labels[i] as usize;
                (0..NUM_CLASSES).map(move |c| if c == label { 1.0 } else { 0.0 })
            })
            .collect(),
        MnistTargets::ClassIndex => idx.iter().map(|&i| labels[i] as f64).collect(),
    };
    let y_cols = match targets {
        MnistTargets::OneHotMse => NUM_CLASSES,
        MnistTargets::ClassIndex => 1,
    };
    Dataset::new(
        Tensor2::from_vec(idx.len(), dim, x)?,
        Tensor2::from_vec(idx.len(), y_cols, y)?,
        Split::Train,
        DatasetMetadata {
            task: "mnist".into(),
            seed: subset.map(|_| seed),
            source_indices: if subset.is_some() { idx } else { Vec::new() },
            ..Default::default()
        },
    )
}
