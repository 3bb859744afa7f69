use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_MIRROR: &str = "https://storage.googleapis.com/cvdf-datasets/mnist/";

const IMAGE_MAGIC: u32 = 0x0803;
const LABEL_MAGIC: u32 = 0x0801;

/// One gzip IDX file and the SHA-256 of its decompressed payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistFile {
    pub name: String,
    pub sha256: String,
}

impl MnistFile {
    pub fn new(name: &str, sha256: &str) -> Self {
        Self {
            name: name.to_string(),
            sha256: sha256.to_ascii_lowercase(),
        }
    }
}

/// Canonical file names and digests (train images, train labels, test
/// images, test labels).
pub const MNIST_FILES: [(&str, &str); 4] = [
    (
        "train-images-idx3-ubyte.gz",
        "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    ),
    (
        "train-labels-idx1-ubyte.gz",
        "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    ),
    (
        "t10k-images-idx3-ubyte.gz",
        "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    ),
    (
        "t10k-labels-idx1-ubyte.gz",
        "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    ),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistSet {
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl MnistSet {
    pub const SIDE: usize = 28;
    pub const PIXELS: usize = 28 * 28;

    pub fn new(images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() * Self::PIXELS {
            return Err(Error::shape(format!(
                "{} image bytes for {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::input(format!("label {l} outside 0..=9")));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * Self::PIXELS..(i + 1) * Self::PIXELS]
    }

    pub fn images(&self) -> &[u8] {
        &self.images
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn concat(mut self, other: &MnistSet) -> Self {
        self.images.extend_from_slice(&other.images);
        self.labels.extend_from_slice(&other.labels);
        self
    }

    /// The first `n` digits (all of them when `n` is 0 or too large).
    pub fn truncated(&self, n: usize) -> Self {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut images = Vec::with_capacity(idx.len() * Self::PIXELS);
        for &i in idx {
            images.extend_from_slice(self.image(i));
        }
        Self {
            images,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Decoded IDX container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Idx {
    Images { count: usize, rows: usize, cols: usize, data: Vec<u8> },
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<usize> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| Error::format("truncated IDX header"))
}

/// Parses decompressed IDX bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<Idx> {
    let magic = be_u32(bytes, 0)? as u32;
    match magic {
        IMAGE_MAGIC => {
            let (count, rows, cols) = (be_u32(bytes, 4)?, be_u32(bytes, 8)?, be_u32(bytes, 12)?);
            let payload = &bytes[16..];
            if payload.len() != count * rows * cols {
                return Err(Error::format(format!(
                    "image payload is {} bytes, header says {count}x{rows}x{cols}",
                    payload.len()
                )));
            }
            Ok(Idx::Images {
                count,
                rows,
                cols,
                data: payload.to_vec(),
            })
        }
        LABEL_MAGIC => {
            let count = be_u32(bytes, 4)?;
            let payload = &bytes[8..];
            if payload.len() != count {
                return Err(Error::format(format!(
                    "label payload is {} bytes, header says {count}",
                    payload.len()
                )));
            }
            Ok(Idx::Labels(payload.to_vec()))
        }
        m => Err(Error::format(format!("bad IDX magic {m:#010x}"))),
    }
}

pub fn read_gz(path: &Path) -> Result<Vec<u8>> {
    let file = fs::File::open(path).map_err(|e| Error::precondition(path, e.to_string()))?;
    let mut out = Vec::new();
    GzDecoder::new(file)
        .read_to_end(&mut out)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    Ok(out)
}

fn payload_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read_gz(path)?)))
}

/// Retry behaviour for downloads.
#[derive(Debug, Clone, Copy)]
pub struct FetchPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchReport {
    pub downloaded: Vec<String>,
    pub present: Vec<String>,
}

/// `http(s)://` URLs are fetched over the network; `file://` URLs and bare
/// paths name a local mirror directory.
fn fetch_once(base: &str, name: &str) -> std::result::Result<Vec<u8>, String> {
    if base.starts_with("http://") || base.starts_with("https://") {
        let url = format!("{}/{}", base.trim_end_matches('/'), name);
        let mut resp = ureq::get(&url).call().map_err(|e| format!("{url}: {e}"))?;
        resp.body_mut()
            .with_config()
            .limit(256 << 20)
            .read_to_vec()
            .map_err(|e| format!("{url}: {e}"))
    } else {
        let dir = base.strip_prefix("file://").unwrap_or(base);
        let path = Path::new(dir).join(name);
        fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn download(base: &str, name: &str, policy: FetchPolicy) -> Result<Vec<u8>> {
    let mut delay = policy.backoff;
    let mut last = String::new();
    for attempt in 1..=policy.attempts.max(1) {
        match fetch_once(base, name) {
            Ok(bytes) => return Ok(bytes),
            Err(e) => last = e,
        }
        if attempt < policy.attempts {
            thread::sleep(delay);
            delay *= 2;
        }
    }
    Err(Error::Network {
        attempts: policy.attempts.max(1),
        message: last,
    })
}

/// Ensures every file is present in `dest` with a matching payload digest.
/// Verified files are left alone; a download that fails verification is
/// deleted.
pub fn fetch_mnist(base_url: &str, dest: &Path, files: &[MnistFile], policy: FetchPolicy) -> Result<FetchReport> {
    fs::create_dir_all(dest)?;
    let mut report = FetchReport::default();
    for f in files {
        let path = dest.join(&f.name);
        if path.exists() && payload_digest(&path).ok().as_deref() == Some(f.sha256.as_str()) {
            report.present.push(f.name.clone());
            continue;
        }
        let bytes = download(base_url, &f.name, policy)?;
        let tmp: PathBuf = dest.join(format!("{}.part", f.name));
        fs::write(&tmp, &bytes)?;
        let digest = payload_digest(&tmp);
        if digest.as_ref().ok() != Some(&f.sha256) {
            let _ = fs::remove_file(&tmp);
            let found = digest.unwrap_or_else(|e| e.to_string());
            return Err(Error::Integrity(format!("{}: expected sha256 {}, got {found}", f.name, f.sha256)));
        }
        fs::rename(&tmp, &path)?;
        report.downloaded.push(f.name.clone());
    }
    Ok(report)
}

/// Decompresses and checks the payload digest.
fn read_verified(dir: &Path, f: &MnistFile) -> Result<Vec<u8>> {
    let bytes = read_gz(&dir.join(&f.name))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    if digest != f.sha256 {
        return Err(Error::Integrity(format!("{}: expected sha256 {}, got {digest}", f.name, f.sha256)));
    }
    Ok(bytes)
}

fn load_pair(dir: &Path, images: &MnistFile, labels: &MnistFile) -> Result<MnistSet> {
    let (data, rows, cols) = match parse_idx(&read_verified(dir, images)?)? {
        Idx::Images { data, rows, cols, .. } => (data, rows, cols),
        Idx::Labels(_) => return Err(Error::format(format!("{} holds labels", images.name))),
    };
    if (rows, cols) != (MnistSet::SIDE, MnistSet::SIDE) {
        return Err(Error::format(format!("{}: {rows}x{cols} images", images.name)));
    }
    let labels = match parse_idx(&read_verified(dir, labels)?)? {
        Idx::Labels(l) => l,
        Idx::Images { .. } => return Err(Error::format(format!("{} holds images", labels.name))),
    };
    MnistSet::new(data, labels)
}

/// Official training and test files concatenated in that order (70,000
/// digits for canonical MNIST). Payload digests are checked.
pub fn load_mnist(dir: &Path, files: &[MnistFile]) -> Result<MnistSet> {
    if files.len() != 4 {
        return Err(Error::input("expected four MNIST files"));
    }
    let train = load_pair(dir, &files[0], &files[1])?;
    let test = load_pair(dir, &files[2], &files[3])?;
    Ok(train.concat(&test))
}

/// Seeded shuffle of `0..70000` cut into 50,000/10,000/10,000 indices.
pub fn split_indices(seed: u64) -> [Vec<usize>; 3] {
    let mut idx: Vec<usize> = (0..70_000).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(60_000);
    let val = idx.split_off(50_000);
    [idx, val, test]
}

pub fn split_5_1_1(full: &MnistSet, seed: u64) -> Result<(MnistSet, MnistSet, MnistSet)> {
    if full.len() != 70_000 {
        return Err(Error::input(format!("5:1:1 split needs 70000 images, got {}", full.len())));
    }
    let [train, val, test] = split_indices(seed);
    Ok((full.subset(&train), full.subset(&val), full.subset(&test)))
}
