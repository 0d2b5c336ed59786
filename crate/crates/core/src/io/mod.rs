//! File formats.
//!
//! - Matrix format (images and sinograms): magic `RDGP`, format version
//!   `u16`, dtype tag (`1` = f64), dims as `u32` each (rows, cols), then
//!   the row-major little-endian `f64` payload.
//! - Weights format: magic `RDGW`, version `u16`, the denoiser
//!   configuration, the embedded diffusion schedule, the layout manifest,
//!   the `f64` parameter payload, and an FNV-1a 64-bit checksum trailer
//!   over everything before it.
//! - PNG export: 8-bit grayscale, values clamped to `[0, 1]` then scaled.
//! - CSV: UTF-8, LF line endings, header row first.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::diffusion::DiffusionSchedule;
use crate::nn::{DenoiserConfig, NoisePredictor, ParamVector};

const MATRIX_MAGIC: &[u8; 4] = b"RDGP";
const WEIGHTS_MAGIC: &[u8; 4] = b"RDGW";
const FORMAT_VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
    #[error("png encode error: {0}")]
    Png(String),
}

/// FNV-1a 64-bit over a byte stream.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.pos + n > self.buf.len() {
            return Err(IoError::Format("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, IoError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, IoError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| IoError::Format("invalid utf-8 in name".into()))
    }
}

/// Serialize a matrix into the `RDGP` byte layout.
pub fn matrix_bytes(m: &Array2<f64>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(MATRIX_MAGIC);
    w.u16(FORMAT_VERSION);
    w.u8(DTYPE_F64);
    let (rows, cols) = m.dim();
    w.u32(rows as u32);
    w.u32(cols as u32);
    for v in m.iter() {
        w.f64(*v);
    }
    w.buf
}

/// Write a matrix (image or sinogram) in the binary `RDGP` format.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<(), IoError> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&matrix_bytes(m))?;
    Ok(())
}

/// Read a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<Array2<f64>, IoError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut r = ByteReader::new(&bytes);
    if r.take(4)? != MATRIX_MAGIC {
        return Err(IoError::Format("bad magic; not an RDGP matrix file".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(IoError::Format(format!("unsupported version {version}")));
    }
    if r.u8()? != DTYPE_F64 {
        return Err(IoError::Format("unsupported dtype tag".into()));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.f64()?);
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| IoError::Format(format!("shape error: {e}")))
}

/// Write the weights file: config, schedule, manifest, payload, checksum.
pub fn write_weights(
    path: &Path,
    config: &DenoiserConfig,
    params: &ParamVector<f64>,
    schedule: &DiffusionSchedule<f64>,
) -> Result<(), IoError> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(WEIGHTS_MAGIC);
    w.u16(FORMAT_VERSION);
    // Config.
    w.u32(config.n_levels as u32);
    for &ch in &config.channels {
        w.u32(ch as u32);
    }
    w.u32(config.blocks_per_level as u32);
    w.u32(config.group_count as u32);
    w.u32(config.embed_dim as u32);
    // Schedule.
    w.u32(schedule.t_max() as u32);
    for &a in schedule.alphas() {
        w.f64(a);
    }
    // Manifest.
    w.u32(params.manifest.entries.len() as u32);
    for e in &params.manifest.entries {
        w.str(&e.name);
        w.u64(e.offset as u64);
        w.u8(e.shape.len() as u8);
        for &d in &e.shape {
            w.u32(d as u32);
        }
    }
    // Payload.
    w.u64(params.data.len() as u64);
    for &v in &params.data {
        w.f64(v);
    }
    let checksum = fnv1a(&w.buf);
    w.u64(checksum);
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&w.buf)?;
    Ok(())
}

/// Read a weights file, rebuilding (and verifying) the parameter layout.
pub fn read_weights(
    path: &Path,
) -> Result<(DenoiserConfig, ParamVector<f64>, DiffusionSchedule<f64>), IoError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(IoError::Format("file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    let computed = fnv1a(body);
    if stored != computed {
        return Err(IoError::Checksum { stored, computed });
    }

    let mut r = ByteReader::new(body);
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(IoError::Format("bad magic; not an RDGW weights file".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(IoError::Format(format!("unsupported version {version}")));
    }
    let n_levels = r.u32()? as usize;
    let channels: Vec<usize> = (0..n_levels)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<_, _>>()?;
    let blocks_per_level = r.u32()? as usize;
    let group_count = r.u32()? as usize;
    let embed_dim = r.u32()? as usize;
    let config = DenoiserConfig {
        n_levels,
        channels,
        blocks_per_level,
        group_count,
        embed_dim,
        deep_attention: false,
    };
    let t_max = r.u32()? as usize;
    let alphas: Vec<f64> = (0..=t_max).map(|_| r.f64()).collect::<Result<_, _>>()?;
    let schedule = DiffusionSchedule::from_alphas(alphas)?;

    let n_entries = r.u32()? as usize;
    let mut stored_entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name = r.str()?;
        let offset = r.u64()? as usize;
        let n_dims = r.u8()? as usize;
        let shape: Vec<usize> = (0..n_dims)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<_, _>>()?;
        stored_entries.push(crate::nn::ParamEntry { name, offset, shape });
    }

    let predictor = NoisePredictor::new(config.clone())?;
    if predictor.manifest().entries != stored_entries {
        return Err(IoError::Format(
            "stored layout manifest does not match the configuration".into(),
        ));
    }
    let total = r.u64()? as usize;
    if total != predictor.manifest().total_len {
        return Err(IoError::Format(format!(
            "payload length {total} does not match layout {}",
            predictor.manifest().total_len
        )));
    }
    let mut params = ParamVector::zeros(predictor.manifest().clone());
    for v in params.data.iter_mut() {
        *v = r.f64()?;
    }
    Ok((config, params, schedule))
}

/// 8-bit grayscale PNG export: values clamped to `[0, 1]` and scaled.
pub fn write_png(path: &Path, m: &Array2<f64>) -> Result<(), IoError> {
    let (rows, cols) = m.dim();
    let mut img = image::GrayImage::new(cols as u32, rows as u32);
    for r in 0..rows {
        for c in 0..cols {
            let v = (m[[r, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(c as u32, r as u32, image::Luma([v]));
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| IoError::Png(e.to_string()))
}

/// Write a CSV file: header row plus rows, UTF-8, LF line endings.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), IoError> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(header.join(",").as_bytes())?;
    f.write_all(b"\n")?;
    for row in rows {
        f.write_all(row.join(",").as_bytes())?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::cosine_noise_schedule;
    use crate::nn::init_params;
    use ndarray::array;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("rdgp-io-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn matrix_roundtrip_and_header() {
        let dir = tmpdir();
        let path = dir.join("m.rdgp");
        let m = array![[1.0, -0.5, 0.25], [0.0, 1e-12, 3.5]];
        write_matrix(&path, &m).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"RDGP");
        assert_eq!(bytes.len(), 4 + 2 + 1 + 4 + 4 + 6 * 8);
        let back = read_matrix(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn matrix_rejects_corruption() {
        let dir = tmpdir();
        let path = dir.join("bad.rdgp");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_matrix(&path).is_err());
    }

    #[test]
    fn weights_roundtrip_and_checksum() {
        let dir = tmpdir();
        let path = dir.join("w.rdgw");
        let config = crate::nn::DenoiserConfig::tiny();
        let mut params = init_params::<f64>(&config, 9).unwrap();
        params.jitter(1, 0.02);
        let schedule = cosine_noise_schedule::<f64>(50);
        write_weights(&path, &config, &params, &schedule).unwrap();
        let (c2, p2, s2) = read_weights(&path).unwrap();
        assert_eq!(config, c2);
        assert_eq!(params.data, p2.data);
        assert_eq!(schedule.alphas(), s2.alphas());

        // Flip one payload byte: checksum must catch it.
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        let bad = dir.join("w-bad.rdgw");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(read_weights(&bad), Err(IoError::Checksum { .. })));
    }

    #[test]
    fn png_and_csv_outputs() {
        let dir = tmpdir();
        let png = dir.join("img.png");
        let m = array![[0.0, 0.5], [1.0, 2.0]];
        write_png(&png, &m).unwrap();
        assert!(png.exists());

        let csv = dir.join("t.csv");
        write_csv(
            &csv,
            &["a", "b"],
            vec![vec!["1".to_string(), "2".to_string()]],
        )
        .unwrap();
        let content = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(content, "a,b\n1,2\n");
    }
}
