//! Corpus ingestion: CIFAR-10 binary batches, directories of image files and
//! the normalized store cache. Every image ends up as a planar 3×32×32 `f32`
//! block with values in `[0, 1]`.

use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::read_u32;
use crate::error::{Error, Result};
use crate::{IMAGE_LEN, IMAGE_SIDE};

/// Bytes per CIFAR-10 record: one label byte plus 32·32·3 pixel bytes.
pub const CIFAR_RECORD: usize = 1 + IMAGE_LEN;
const STORE_MAGIC: &[u8; 4] = b"CFC1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub sources: Vec<String>,
    pub format: String,
    pub count: usize,
    pub files_scanned: usize,
    pub skipped: Vec<SkippedEntry>,
    /// SHA-256 of the normalized pixel payload and id table.
    pub checksum: String,
    /// CIFAR-10 class labels, when known. Never used for training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    images: Vec<f32>,
    ids: Vec<String>,
    manifest: CorpusManifest,
}

fn checksum(images: &[f32], ids: &[String]) -> String {
    let mut h = Sha256::new();
    for v in images {
        h.update(v.to_le_bytes());
    }
    for id in ids {
        h.update((id.len() as u32).to_le_bytes());
        h.update(id.as_bytes());
    }
    format!("{:x}", h.finalize())
}

impl Corpus {
    /// Builds a corpus from already-normalized images.
    pub fn from_images(images: Vec<f32>, ids: Vec<String>) -> Result<Self> {
        let n = ids.len();
        let manifest = CorpusManifest {
            sources: vec![],
            format: "memory".into(),
            count: n,
            files_scanned: n,
            skipped: vec![],
            checksum: String::new(),
            labels: None,
        };
        Self::assemble(images, ids, manifest)
    }

    fn assemble(images: Vec<f32>, ids: Vec<String>, mut manifest: CorpusManifest) -> Result<Self> {
        if images.len() != ids.len() * IMAGE_LEN {
            return Err(Error::Corpus(format!(
                "{} ids but {} pixel values",
                ids.len(),
                images.len()
            )));
        }
        if ids.len() < 2 {
            return Err(Error::Corpus(format!("corpus needs at least 2 images, got {}", ids.len())));
        }
        if let Some(bad) = images.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Corpus(format!(
                "image {} has a value outside [0, 1]",
                bad / IMAGE_LEN
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Corpus(format!("duplicate id {id:?}")));
            }
        }
        manifest.count = ids.len();
        manifest.checksum = checksum(&images, &ids);
        Ok(Corpus {
            images,
            ids,
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn checksum(&self) -> &str {
        &self.manifest.checksum
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.manifest.labels.as_deref()
    }

    pub fn get(&self, index: usize) -> Result<&[f32]> {
        if index >= self.len() {
            return Err(Error::OutOfRange {
                index,
                len: self.len(),
            });
        }
        Ok(&self.images[index * IMAGE_LEN..(index + 1) * IMAGE_LEN])
    }

    /// All images as one contiguous `N·3072` slice.
    pub fn pixels(&self) -> &[f32] {
        &self.images
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Copies the listed images into one contiguous buffer.
    pub fn gather(&self, indices: &[usize]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(indices.len() * IMAGE_LEN);
        for &i in indices {
            out.extend_from_slice(self.get(i)?);
        }
        Ok(out)
    }

    /// Writes the normalized store: `CFC1`, N (u32), N×3072 f32, then the id
    /// table (u32 byte length + UTF-8 per id). The manifest goes next to it
    /// as `<path>.json`.
    pub fn save_store(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        w.write_all(STORE_MAGIC).map_err(io)?;
        w.write_all(&(self.len() as u32).to_le_bytes()).map_err(io)?;
        for v in &self.images {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        for id in &self.ids {
            w.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(id.as_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)?;
        let mpath = manifest_path(path);
        std::fs::write(&mpath, serde_json::to_vec_pretty(&self.manifest)?)
            .map_err(|e| Error::io(&mpath, e))
    }

    pub fn load_store(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let fmt = |offset: u64, message: &str| Error::Format {
            path: path.to_path_buf(),
            offset,
            message: message.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| fmt(0, "missing header"))?;
        if &magic != STORE_MAGIC {
            return Err(fmt(0, "bad magic"));
        }
        let n = read_u32(&mut r).map_err(|_| fmt(4, "missing image count"))? as usize;
        let mut raw = vec![0u8; n * IMAGE_LEN * 4];
        r.read_exact(&mut raw).map_err(|_| fmt(8, "truncated pixel payload"))?;
        let images = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut offset = 8 + raw.len() as u64;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = read_u32(&mut r).map_err(|_| fmt(offset, "truncated id table"))? as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes).map_err(|_| fmt(offset + 4, "truncated id"))?;
            ids.push(String::from_utf8(bytes).map_err(|_| fmt(offset + 4, "id is not UTF-8"))?);
            offset += 4 + len as u64;
        }
        let mpath = manifest_path(path);
        let manifest = match std::fs::read(&mpath) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(_) => CorpusManifest {
                sources: vec![path.display().to_string()],
                format: "store".into(),
                count: n,
                files_scanned: n,
                skipped: vec![],
                checksum: String::new(),
                labels: None,
            },
        };
        Self::assemble(images, ids, manifest)
    }
}

pub fn manifest_path(store: &Path) -> PathBuf {
    let mut s = store.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Loads CIFAR-10 binary batch files (`data_batch_*.bin`, `test_batch.bin`).
pub fn load_cifar10_bin(paths: &[PathBuf]) -> Result<Corpus> {
    let mut images = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % CIFAR_RECORD != 0 {
            let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
            return Err(Error::Format {
                path: path.clone(),
                offset: whole as u64,
                message: format!(
                    "size {} is not a multiple of the {CIFAR_RECORD}-byte record; trailing partial record",
                    bytes.len()
                ),
            });
        }
        let stem = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        for (k, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            labels.push(record[0]);
            images.extend(record[1..].iter().map(|&b| f32::from(b) / 255.0));
            ids.push(format!("{stem}:{k}"));
        }
    }
    let manifest = CorpusManifest {
        sources: paths.iter().map(|p| p.display().to_string()).collect(),
        format: "cifar10-bin".into(),
        count: ids.len(),
        files_scanned: paths.len(),
        skipped: vec![],
        checksum: String::new(),
        labels: Some(labels),
    };
    Corpus::assemble(images, ids, manifest)
}

/// Resizes an interleaved RGB8 image to planar 3×32×32 in `[0, 1]` with
/// bilinear sampling at pixel centres (`(i + 0.5)·in/out − 0.5`).
pub fn resize_rgb8(rgb: &[u8], width: usize, height: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; IMAGE_LEN];
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let coord = |i: usize, n_in: usize| -> (usize, usize, f32) {
        let s = ((i as f32 + 0.5) * n_in as f32 / IMAGE_SIDE as f32 - 0.5).clamp(0.0, (n_in - 1) as f32);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f32)
    };
    for y in 0..IMAGE_SIDE {
        let (y0, y1, fy) = coord(y, height);
        for x in 0..IMAGE_SIDE {
            let (x0, x1, fx) = coord(x, width);
            for ch in 0..3 {
                let px = |xx: usize, yy: usize| f32::from(rgb[(yy * width + xx) * 3 + ch]);
                let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
                let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
                let v = (top * (1.0 - fy) + bottom * fy) / 255.0;
                out[ch * plane + y * IMAGE_SIDE + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn decode_file(path: &Path) -> std::result::Result<Vec<f32>, String> {
    let img = image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map_err(|e| e.to_string())?
        .to_rgb8();
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err("empty image".into());
    }
    Ok(resize_rgb8(img.as_raw(), w as usize, h as usize))
}

/// Loads every decodable image in `dir` (sorted by file name), squashing each
/// to 32×32. Undecodable files are skipped and listed in the manifest.
pub fn load_image_dir(dir: &Path) -> Result<Corpus> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    entries.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let mut images = Vec::new();
    let mut ids = Vec::new();
    let mut skipped = Vec::new();
    for path in &entries {
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match decode_file(path) {
            Ok(px) => {
                images.extend(px);
                ids.push(name);
            }
            Err(reason) => {
                log::warn!("skipping {}: {reason}", path.display());
                skipped.push(SkippedEntry {
                    path: name,
                    reason,
                });
            }
        }
    }
    if ids.is_empty() {
        return Err(Error::Corpus(format!(
            "no usable images in {} ({} skipped)",
            dir.display(),
            skipped.len()
        )));
    }
    let manifest = CorpusManifest {
        sources: vec![dir.display().to_string()],
        format: "image-dir".into(),
        count: ids.len(),
        files_scanned: entries.len(),
        skipped,
        checksum: String::new(),
        labels: None,
    };
    Corpus::assemble(images, ids, manifest)
}
