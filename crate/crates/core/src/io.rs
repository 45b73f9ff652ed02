//! Bit-exact file formats shared by every pipeline stage.
//!
//! Tensor container ("IDCT"): magic, version u32 = 1, rank u32, dims
//! u32×rank, then the payload as little-endian f32, row-major with the last
//! dimension fastest. In memory tensors are f64; the container quantizes to
//! f32 on write, so a write→read→write cycle is byte-stable and values that
//! are f32-representable round-trip exactly.
//!
//! Sequence directory: `rgb_%04d.idct` / `depth_%04d.idct` per frame plus
//! `trajectory.json` and `meta.json` (the depth normalization divisor).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{DepthMap, RgbImage, Trajectory};
use crate::scenes::{RgbdFrame, RgbdSequence};
use crate::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"IDCT";
pub const TENSOR_VERSION: u32 = 1;

/// Dense row-major tensor, last dimension fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if dims.is_empty() || dims.iter().any(|d| *d == 0) {
            return Err(Error::shape(format!("tensor dims {dims:?} must all be >= 1")));
        }
        if data.len() != numel {
            return Err(Error::shape(format!(
                "tensor data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let numel = dims.iter().product();
        Tensor { dims, data: vec![0.0; numel] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Serializes a tensor into container bytes. Non-finite payloads are
/// rejected rather than silently written.
pub fn tensor_to_bytes(tensor: &Tensor) -> Result<Vec<u8>> {
    if !tensor.data.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("tensor payload".into()));
    }
    let mut bytes =
        Vec::with_capacity(12 + 4 * tensor.dims.len() + 4 * tensor.data.len());
    bytes.extend_from_slice(TENSOR_MAGIC);
    bytes.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
    for &d in &tensor.dims {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in &tensor.data {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::TensorTruncated {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                reason: format!(
                    "need {} bytes for {} at offset {}, file has {}",
                    n,
                    what,
                    self.offset,
                    self.bytes.len()
                ),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses container bytes. `path` is used only for error reporting.
pub fn tensor_from_bytes(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut cur = Cursor { bytes, offset: 0, path };
    let magic = cur.take(4, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::TensorFormat {
            path: path.to_path_buf(),
            reason: format!("bad magic {magic:?}"),
        });
    }
    let version = cur.read_u32("version")?;
    if version != TENSOR_VERSION {
        return Err(Error::TensorFormat {
            path: path.to_path_buf(),
            reason: format!("unsupported version {version}"),
        });
    }
    let rank = cur.read_u32("rank")? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::TensorFormat {
            path: path.to_path_buf(),
            reason: format!("rank {rank} out of range 1..=8"),
        });
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let d = cur.read_u32(&format!("dim {i}"))? as usize;
        if d == 0 {
            return Err(Error::TensorFormat {
                path: path.to_path_buf(),
                reason: format!("dimension {i} is zero"),
            });
        }
        dims.push(d);
    }
    let numel: usize = dims.iter().product();
    let payload = cur.take(4 * numel, "payload")?;
    if cur.offset != bytes.len() {
        return Err(Error::TensorFormat {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() - cur.offset),
        });
    }
    let mut data = Vec::with_capacity(numel);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::TensorFormat {
                path: path.to_path_buf(),
                reason: "non-finite payload value".into(),
            });
        }
        data.push(v as f64);
    }
    Tensor::new(dims, data)
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let bytes = tensor_to_bytes(tensor)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    tensor_from_bytes(&bytes, path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub depth_divisor: f64,
    pub frame_count: usize,
}

fn rgb_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("rgb_{frame:04}.idct"))
}

fn depth_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("depth_{frame:04}.idct"))
}

/// Writes a sequence as per-frame tensors plus trajectory and metadata.
pub fn write_sequence(dir: &Path, seq: &RgbdSequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, frame) in seq.frames.iter().enumerate() {
        let h = frame.rgb.height();
        let w = frame.rgb.width();
        let rgb = Tensor::new(vec![h, w, 3], frame.rgb.data().to_vec())?;
        write_tensor(&rgb_path(dir, i), &rgb)?;
        let depth = Tensor::new(vec![h, w], frame.depth.values().to_vec())?;
        write_tensor(&depth_path(dir, i), &depth)?;
    }
    seq.trajectory.save(&dir.join("trajectory.json"))?;
    let meta = SequenceMeta { depth_divisor: seq.depth_divisor, frame_count: seq.len() };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Reads a sequence directory back. Frame count must match the trajectory,
/// and every referenced tensor file must exist.
pub fn read_sequence(dir: &Path) -> Result<RgbdSequence> {
    let traj_path = dir.join("trajectory.json");
    if !traj_path.is_file() {
        return Err(Error::BadSequenceDir {
            dir: dir.to_path_buf(),
            reason: "missing trajectory.json".into(),
        });
    }
    let trajectory = Trajectory::load(&traj_path)?;
    let meta_path = dir.join("meta.json");
    if !meta_path.is_file() {
        return Err(Error::BadSequenceDir {
            dir: dir.to_path_buf(),
            reason: "missing meta.json".into(),
        });
    }
    let meta: SequenceMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
    if meta.frame_count != trajectory.len() {
        return Err(Error::BadSequenceDir {
            dir: dir.to_path_buf(),
            reason: format!(
                "meta says {} frames, trajectory has {}",
                meta.frame_count,
                trajectory.len()
            ),
        });
    }
    let mut frames = Vec::with_capacity(meta.frame_count);
    for i in 0..meta.frame_count {
        let rp = rgb_path(dir, i);
        if !rp.is_file() {
            return Err(Error::MissingFrameFile { frame: i, path: rp });
        }
        let dp = depth_path(dir, i);
        if !dp.is_file() {
            return Err(Error::MissingFrameFile { frame: i, path: dp });
        }
        let rgb_t = read_tensor(&rp)?;
        let depth_t = read_tensor(&dp)?;
        let rd = rgb_t.dims();
        if rd.len() != 3 || rd[2] != 3 {
            return Err(Error::TensorFormat {
                path: rp,
                reason: format!("expected h x w x 3 rgb tensor, got {rd:?}"),
            });
        }
        let (h, w) = (rd[0], rd[1]);
        if depth_t.dims() != [h, w] {
            return Err(Error::TensorFormat {
                path: dp,
                reason: format!("depth dims {:?} do not match rgb {}x{}", depth_t.dims(), h, w),
            });
        }
        frames.push(RgbdFrame {
            rgb: RgbImage::new(rgb_t.into_data(), h, w)?,
            depth: DepthMap::new(depth_t.into_data(), h, w)?,
        });
    }
    RgbdSequence::new(frames, trajectory, meta.depth_divisor)
}
