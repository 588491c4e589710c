//! Volume ingestion: a NIfTI-1 reader subset with Hounsfield rescaling and
//! the VPT1 binary tensor format used for preprocessed samples and fixtures.
//!
//! Only single-file ("n+1") little-endian 3-D NIfTI-1 is accepted.
//! Orientation matrices (qform/sform) are ignored; axial slices are taken
//! along the z axis, so a parsed `Volume` is indexed (depth=z, height=y,
//! width=x). NIfTI stores x fastest, which already matches the `Tensor`
//! last-dim-fastest layout, so voxels copy over without reordering.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum VolumeIoError {
    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("expected a 3-D volume, header declares {0} dimensions")]
    DimensionMismatch(i16),
    #[error("truncated NIfTI payload: need {need} bytes, have {have}")]
    TruncatedData { need: usize, have: usize },
    #[error("malformed tensor file: {0}")]
    MalformedTensorFile(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Value domain of a volume's voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxelDomain {
    /// Raw CT intensities in Hounsfield units.
    Hounsfield,
    /// Windowed and affinely mapped to [0, 1].
    UnitNormalized,
}

/// A 3-D scalar grid, depth-major then row-major (depth, height, width).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: (usize, usize, usize),
    data: Vec<f64>,
    domain: VoxelDomain,
}

impl Volume {
    pub fn new(
        dims: (usize, usize, usize),
        data: Vec<f64>,
        domain: VoxelDomain,
    ) -> Result<Volume, VolumeIoError> {
        let (d, h, w) = dims;
        if d == 0 || h == 0 || w == 0 {
            return Err(VolumeIoError::MalformedHeader(format!(
                "zero extent in dims {dims:?}"
            )));
        }
        if data.len() != d * h * w {
            return Err(VolumeIoError::TruncatedData {
                need: d * h * w,
                have: data.len(),
            });
        }
        if domain == VoxelDomain::UnitNormalized
            && data.iter().any(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(VolumeIoError::MalformedHeader(
                "unit-normalized volume has values outside [0,1]".into(),
            ));
        }
        Ok(Volume { dims, data, domain })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn domain(&self) -> VoxelDomain {
        self.domain
    }

    #[inline]
    pub fn at(&self, d: usize, h: usize, w: usize) -> f64 {
        let (_, hh, ww) = self.dims;
        self.data[(d * hh + h) * ww + w]
    }

    pub(crate) fn from_parts(
        dims: (usize, usize, usize),
        data: Vec<f64>,
        domain: VoxelDomain,
    ) -> Volume {
        debug_assert_eq!(data.len(), dims.0 * dims.1 * dims.2);
        Volume { dims, data, domain }
    }

    /// View as a (D, H, W) tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.dims.0, self.dims.1, self.dims.2], self.data.clone())
            .expect("volume invariant guarantees length")
    }

    /// Build from a rank-3 tensor.
    pub fn from_tensor(t: &Tensor, domain: VoxelDomain) -> Result<Volume, VolumeIoError> {
        if t.rank() != 3 {
            return Err(VolumeIoError::MalformedTensorFile(format!(
                "expected rank-3 tensor, got rank {}",
                t.rank()
            )));
        }
        let d = t.dims();
        Volume::new((d[0], d[1], d[2]), t.data().to_vec(), domain)
    }
}

/// The NIfTI-1 header fields this reader consumes. Everything else in the
/// 348-byte block is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim_count: i16,
    pub dims: (usize, usize, usize), // (x, y, z)
    pub datatype_code: i16,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub vox_offset: f32,
    pub magic: [u8; 4],
}

const NIFTI_HEADER_LEN: usize = 348;

fn read_i16(bytes: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([bytes[off], bytes[off + 1]])
}

fn read_i32(bytes: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

fn read_f32(bytes: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

/// Parse the 348-byte NIfTI-1 header.
pub fn parse_nifti_header(bytes: &[u8]) -> Result<NiftiHeader, VolumeIoError> {
    if bytes.len() < NIFTI_HEADER_LEN {
        return Err(VolumeIoError::MalformedHeader(format!(
            "need {NIFTI_HEADER_LEN} header bytes, have {}",
            bytes.len()
        )));
    }
    let sizeof_hdr = read_i32(bytes, 0);
    if sizeof_hdr != NIFTI_HEADER_LEN as i32 {
        return Err(VolumeIoError::MalformedHeader(format!(
            "sizeof_hdr = {sizeof_hdr}, expected 348 (big-endian or non-NIfTI input?)"
        )));
    }
    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic == b"ni1\0" {
        return Err(VolumeIoError::MalformedHeader(
            "header+image pair (\"ni1\") not supported; use single-file \"n+1\"".into(),
        ));
    }
    if &magic != b"n+1\0" {
        return Err(VolumeIoError::MalformedHeader(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let dim_count = read_i16(bytes, 40);
    if !(1..=7).contains(&dim_count) {
        return Err(VolumeIoError::MalformedHeader(format!(
            "dim[0] = {dim_count} outside [1,7] (big-endian files are not supported)"
        )));
    }
    if dim_count != 3 {
        return Err(VolumeIoError::DimensionMismatch(dim_count));
    }
    let nx = read_i16(bytes, 42);
    let ny = read_i16(bytes, 44);
    let nz = read_i16(bytes, 46);
    if nx <= 0 || ny <= 0 || nz <= 0 {
        return Err(VolumeIoError::MalformedHeader(format!(
            "non-positive extent ({nx}, {ny}, {nz})"
        )));
    }
    let datatype_code = read_i16(bytes, 70);
    Ok(NiftiHeader {
        dim_count,
        dims: (nx as usize, ny as usize, nz as usize),
        datatype_code,
        scl_slope: read_f32(bytes, 112),
        scl_inter: read_f32(bytes, 116),
        vox_offset: read_f32(bytes, 108),
        magic,
    })
}

fn bytes_per_voxel(code: i16) -> Result<usize, VolumeIoError> {
    match code {
        2 => Ok(1),  // u8
        4 => Ok(2),  // i16
        8 => Ok(4),  // i32
        16 => Ok(4), // f32
        64 => Ok(8), // f64
        other => Err(VolumeIoError::UnsupportedDatatype(other)),
    }
}

/// Parse a complete single-file NIfTI-1 payload into a Hounsfield-domain
/// volume. Each voxel is rescaled as `raw * scl_slope + scl_inter`
/// (a stored slope of 0 means "no scaling" per the format's convention).
pub fn read_nifti(bytes: &[u8]) -> Result<Volume, VolumeIoError> {
    let header = parse_nifti_header(bytes)?;
    let (nx, ny, nz) = header.dims;
    let voxels = nx * ny * nz;
    let step = bytes_per_voxel(header.datatype_code)?;
    let offset = header.vox_offset.max(NIFTI_HEADER_LEN as f32) as usize;
    let need = offset + voxels * step;
    if bytes.len() < need {
        return Err(VolumeIoError::TruncatedData {
            need,
            have: bytes.len(),
        });
    }
    let slope = if header.scl_slope == 0.0 {
        1.0
    } else {
        header.scl_slope as f64
    };
    let inter = header.scl_inter as f64;
    let raw = &bytes[offset..need];
    let mut data = Vec::with_capacity(voxels);
    for i in 0..voxels {
        let o = i * step;
        let v = match header.datatype_code {
            2 => raw[o] as f64,
            4 => i16::from_le_bytes([raw[o], raw[o + 1]]) as f64,
            8 => i32::from_le_bytes(raw[o..o + 4].try_into().unwrap()) as f64,
            16 => f32::from_le_bytes(raw[o..o + 4].try_into().unwrap()) as f64,
            64 => f64::from_le_bytes(raw[o..o + 8].try_into().unwrap()),
            _ => unreachable!("datatype validated above"),
        };
        data.push(v * slope + inter);
    }
    // NIfTI linear order (x fastest, then y, then z) equals the (z, y, x)
    // depth-major layout, so no permutation pass is needed.
    Ok(Volume::from_parts((nz, ny, nx), data, VoxelDomain::Hounsfield))
}

/// Read a NIfTI volume from disk.
pub fn read_nifti_file<P: AsRef<Path>>(path: P) -> Result<Volume, VolumeIoError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_nifti(&bytes)
}

const VPT1_MAGIC: &[u8; 4] = b"VPT1";
const VPT1_VERSION: u32 = 1;

/// Serialize a tensor in the VPT1 format:
/// magic "VPT1" | version u32=1 | rank u32 | rank x u64 dims |
/// f32 little-endian payload, last dim fastest.
pub fn tensor_to_vpt1(tensor: &Tensor) -> Result<Vec<u8>, VolumeIoError> {
    if tensor.rank() > 4 {
        return Err(VolumeIoError::MalformedTensorFile(format!(
            "rank {} exceeds VPT1 maximum of 4",
            tensor.rank()
        )));
    }
    if tensor.dims().iter().any(|&d| d == 0) {
        return Err(VolumeIoError::MalformedTensorFile(
            "zero-length dimension".into(),
        ));
    }
    if !tensor.all_finite() {
        return Err(VolumeIoError::MalformedTensorFile(
            "non-finite value in tensor".into(),
        ));
    }
    let mut out = Vec::with_capacity(12 + 8 * tensor.rank() + 4 * tensor.len());
    out.extend_from_slice(VPT1_MAGIC);
    out.extend_from_slice(&VPT1_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parse a VPT1 byte stream.
pub fn tensor_from_vpt1(bytes: &[u8]) -> Result<Tensor, VolumeIoError> {
    let bad = |msg: &str| VolumeIoError::MalformedTensorFile(msg.to_string());
    if bytes.len() < 12 {
        return Err(bad("shorter than fixed header"));
    }
    if &bytes[0..4] != VPT1_MAGIC {
        return Err(VolumeIoError::MalformedTensorFile(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VPT1_VERSION {
        return Err(VolumeIoError::MalformedTensorFile(format!(
            "unsupported version {version}"
        )));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if !(1..=4).contains(&rank) {
        return Err(VolumeIoError::MalformedTensorFile(format!(
            "rank {rank} outside 1..=4"
        )));
    }
    if bytes.len() < 12 + 8 * rank {
        return Err(bad("truncated dims block"));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 12 + 8 * i;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        if d == 0 {
            return Err(bad("zero-length dimension"));
        }
        dims.push(d as usize);
    }
    let n: usize = dims.iter().product();
    let payload = &bytes[12 + 8 * rank..];
    if payload.len() != 4 * n {
        return Err(VolumeIoError::MalformedTensorFile(format!(
            "payload length {} does not match dims {:?} (need {})",
            payload.len(),
            dims,
            4 * n
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::from_vec(&dims, data).map_err(|e| bad(&e.to_string()))
}

/// Write a tensor as a VPT1 file. Round trips are exact at `f32` precision.
pub fn write_tensor<P: AsRef<Path>>(path: P, tensor: &Tensor) -> Result<(), VolumeIoError> {
    let bytes = tensor_to_vpt1(tensor)?;
    let mut f = File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Read a VPT1 tensor file.
pub fn read_tensor<P: AsRef<Path>>(path: P) -> Result<Tensor, VolumeIoError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    tensor_from_vpt1(&bytes)
}

/// Build a single-file NIfTI-1 byte payload. Test/fixture helper and the
/// write half of the round-trip property; not part of the ingestion API.
pub fn build_nifti_fixture(
    dims_xyz: (usize, usize, usize),
    datatype_code: i16,
    scl_slope: f32,
    scl_inter: f32,
    raw: &[f64],
) -> Vec<u8> {
    let (nx, ny, nz) = dims_xyz;
    assert_eq!(raw.len(), nx * ny * nz);
    let mut hdr = vec![0u8; 352]; // 348-byte header + 4 pad, data at 352
    hdr[0..4].copy_from_slice(&348i32.to_le_bytes());
    hdr[40..42].copy_from_slice(&3i16.to_le_bytes());
    hdr[42..44].copy_from_slice(&(nx as i16).to_le_bytes());
    hdr[44..46].copy_from_slice(&(ny as i16).to_le_bytes());
    hdr[46..48].copy_from_slice(&(nz as i16).to_le_bytes());
    hdr[70..72].copy_from_slice(&datatype_code.to_le_bytes());
    hdr[108..112].copy_from_slice(&352f32.to_le_bytes());
    hdr[112..116].copy_from_slice(&scl_slope.to_le_bytes());
    hdr[116..120].copy_from_slice(&scl_inter.to_le_bytes());
    hdr[344..348].copy_from_slice(b"n+1\0");
    for &v in raw {
        match datatype_code {
            2 => hdr.push(v as u8),
            4 => hdr.extend_from_slice(&(v as i16).to_le_bytes()),
            8 => hdr.extend_from_slice(&(v as i32).to_le_bytes()),
            16 => hdr.extend_from_slice(&(v as f32).to_le_bytes()),
            64 => hdr.extend_from_slice(&v.to_le_bytes()),
            other => panic!("unsupported datatype {other}"),
        }
    }
    hdr
}
