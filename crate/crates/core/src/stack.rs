//! Frame stacks and run manifests.
//!
//! A stack is a 64-byte header followed by fixed-size records, each holding
//! one Reference frame as little-endian `u16` counts (row-major) and the
//! bucket value as a little-endian `u64`. Record `i` holds shot `i`.
//!
//! Header layout (little-endian):
//!
//! | offset | type   | content                    |
//! |--------|--------|----------------------------|
//! | 0      | [u8;8] | magic `GHSTSTCK`           |
//! | 8      | u32    | format version (1)         |
//! | 12     | u32    | frame width                |
//! | 16     | u32    | frame height               |
//! | 20     | u32    | flags, bit 0 = dark frames |
//! | 24     | f64    | pixel pitch in meters      |
//! | 32     | u64    | record count               |
//! | 40     | -      | zero padding               |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::detector::ShotRecord;
use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"GHSTSTCK";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 64;
const FLAG_DARK: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StackHeader {
    pub width: u32,
    pub height: u32,
    pub dark: bool,
    pub pitch_m: f64,
    pub count: u64,
}

impl StackHeader {
    pub fn record_len(&self) -> u64 {
        2 * self.width as u64 * self.height as u64 + 8
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut h = [0u8; HEADER_LEN as usize];
        h[0..8].copy_from_slice(MAGIC);
        h[8..12].copy_from_slice(&VERSION.to_le_bytes());
        h[12..16].copy_from_slice(&self.width.to_le_bytes());
        h[16..20].copy_from_slice(&self.height.to_le_bytes());
        h[20..24].copy_from_slice(&(if self.dark { FLAG_DARK } else { 0 }).to_le_bytes());
        h[24..32].copy_from_slice(&self.pitch_m.to_le_bytes());
        h[32..40].copy_from_slice(&self.count.to_le_bytes());
        h
    }

    fn decode(h: &[u8; HEADER_LEN as usize], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptStack {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if &h[0..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
        if u32_at(8) != VERSION {
            return Err(corrupt(&format!("unsupported version {}", u32_at(8))));
        }
        let header = Self {
            width: u32_at(12),
            height: u32_at(16),
            dark: u32_at(20) & FLAG_DARK != 0,
            pitch_m: f64::from_le_bytes(h[24..32].try_into().unwrap()),
            count: u64::from_le_bytes(h[32..40].try_into().unwrap()),
        };
        if header.width == 0 || header.height == 0 {
            return Err(corrupt("zero frame size"));
        }
        Ok(header)
    }
}

pub struct StackWriter {
    file: BufWriter<File>,
    header: StackHeader,
    path: PathBuf,
    written: Vec<bool>,
}

impl StackWriter {
    pub fn create(
        path: &Path,
        width: usize,
        height: usize,
        pitch_m: f64,
        dark: bool,
        count: u64,
    ) -> Result<Self> {
        let header = StackHeader {
            width: width as u32,
            height: height as u32,
            dark,
            pitch_m,
            count,
        };
        let file = File::create(path).at(path)?;
        file.set_len(HEADER_LEN + count * header.record_len())
            .at(path)?;
        let mut file = BufWriter::new(file);
        file.write_all(&header.encode()).at(path)?;
        Ok(Self {
            file,
            header,
            path: path.to_path_buf(),
            written: vec![false; count as usize],
        })
    }

    /// Store a quantized record at the slot of its shot index.
    pub fn write(&mut self, record: &ShotRecord) -> Result<()> {
        let h = &self.header;
        if record.map_r.dim() != (h.height as usize, h.width as usize) {
            return Err(Error::GridMismatch(format!(
                "record {:?} in a {}x{} stack",
                record.map_r.dim(),
                h.width,
                h.height
            )));
        }
        if record.shot_index >= h.count {
            return Err(Error::Domain(format!(
                "shot {} beyond stack size {}",
                record.shot_index, h.count
            )));
        }
        let integral = |v: f64, max: f64| v.fract() == 0.0 && (0.0..=max).contains(&v);
        if !record.map_r.iter().all(|&v| integral(v, u16::MAX as f64))
            || !integral(record.bucket_t, u64::MAX as f64)
        {
            return Err(Error::Domain(
                "frame stacks store quantized counts only".into(),
            ));
        }
        let mut buf = Vec::with_capacity(h.record_len() as usize);
        for &v in record.map_r.iter() {
            buf.extend_from_slice(&(v as u16).to_le_bytes());
        }
        buf.extend_from_slice(&(record.bucket_t as u64).to_le_bytes());
        let offset = HEADER_LEN + record.shot_index * h.record_len();
        self.file.seek(SeekFrom::Start(offset)).at(&self.path)?;
        self.file.write_all(&buf).at(&self.path)?;
        self.written[record.shot_index as usize] = true;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if let Some(i) = self.written.iter().position(|w| !w) {
            return Err(Error::InsufficientData(format!(
                "record {i} of {} never written",
                self.path.display()
            )));
        }
        self.file.flush().at(&self.path)
    }
}

pub struct StackReader {
    path: PathBuf,
    pub header: StackHeader,
}

impl StackReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut f = File::open(path).at(path)?;
        let mut h = [0u8; HEADER_LEN as usize];
        f.read_exact(&mut h).map_err(|_| Error::CorruptStack {
            path: path.to_path_buf(),
            reason: "truncated header".into(),
        })?;
        let header = StackHeader::decode(&h, path)?;
        let len = f.metadata().at(path)?.len();
        let want = HEADER_LEN + header.count * header.record_len();
        if len != want {
            return Err(Error::CorruptStack {
                path: path.to_path_buf(),
                reason: format!("{len} bytes, header implies {want}"),
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
        })
    }

    pub fn count(&self) -> u64 {
        self.header.count
    }

    pub fn read_range(&self, range: Range<u64>) -> Result<Vec<ShotRecord>> {
        if range.end > self.header.count {
            return Err(Error::Domain(format!(
                "records {range:?} beyond {}",
                self.header.count
            )));
        }
        let (w, h) = (self.header.width as usize, self.header.height as usize);
        let rl = self.header.record_len() as usize;
        let mut f = BufReader::new(File::open(&self.path).at(&self.path)?);
        f.seek(SeekFrom::Start(HEADER_LEN + range.start * rl as u64))
            .at(&self.path)?;
        let mut buf = vec![0u8; rl];
        range
            .map(|i| {
                f.read_exact(&mut buf).at(&self.path)?;
                let map = Array2::from_shape_fn((h, w), |(y, x)| {
                    let o = 2 * (y * w + x);
                    u16::from_le_bytes([buf[o], buf[o + 1]]) as f64
                });
                let bucket = u64::from_le_bytes(buf[rl - 8..].try_into().unwrap()) as f64;
                Ok(ShotRecord {
                    shot_index: i,
                    map_r: map,
                    bucket_t: bucket,
                })
            })
            .collect()
    }

    pub fn read_all(&self) -> Result<Vec<ShotRecord>> {
        self.read_range(0..self.header.count)
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = BufReader::new(File::open(path).at(path)?);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).at(path)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Ordered `key = value` record of a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::ManifestMismatch(format!("manifest has no `{key}`")))
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| {
                Error::ManifestMismatch(format!("line {} is not `key = value`", n + 1))
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).at(path)
    }
}
