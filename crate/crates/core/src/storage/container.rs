//! `.plaf2d` frame and `.plaf3d` map containers.
//!
//! Both files are little-endian: a fixed 64-byte header followed by raw
//! row-major payloads. Header layout (byte offsets):
//!
//! ```text
//! .plaf2d                         .plaf3d
//!  0  magic "PLAF2D\0\0"           0  magic "PLAF3D\0\0"
//!  8  version u32 (1)              8  version u32 (1)
//! 12  height u32                  12  dim u32
//! 16  width u32                   16  reference bytes u32 (2 | 4)
//! 20  mask count K u32            20  float bytes u32 (4)
//! 24  dim C u32                   24  point count N u64
//! 28  index bytes u32 (2)         32  pool size M u64
//! 32  float bytes u32 (4)         40  reserved (zero)
//! 36  reserved (zero)
//! ```
//!
//! Frame payload: `H*W` u16 indices, then `K*C` f32 features. The payload is
//! exactly the mask-indexed 2D cost.
//!
//! Map payload: `N` references, `M*C` f32 descriptors, `M` u32 observation
//! counts, `N*3` f32 positions. The first two sections are exactly the
//! index-and-reference 3D cost; counts and positions are geometry and
//! bookkeeping and are reported separately.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{FeaturePool, MaskIndexedFrame, RefWidth, SemanticPointCloud};

pub const HEADER_LEN: usize = 64;
pub const FRAME_MAGIC: [u8; 8] = *b"PLAF2D\0\0";
pub const MAP_MAGIC: [u8; 8] = *b"PLAF3D\0\0";
pub const VERSION: u32 = 1;

const INDEX_BYTES: u32 = 2;
const FLOAT_BYTES: u32 = 4;

/// Total `.plaf2d` size for a frame of the given shape.
pub fn frame_file_size(height: u64, width: u64, masks: u64, dim: u64) -> u64 {
    // Saturating so hostile headers fail the length check instead of wrapping.
    (height.saturating_mul(width).saturating_mul(u64::from(INDEX_BYTES)))
        .saturating_add(masks.saturating_mul(dim).saturating_mul(u64::from(FLOAT_BYTES)))
        .saturating_add(HEADER_LEN as u64)
}

/// Byte sizes of the sections of a `.plaf3d` file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapLayout {
    pub ref_width: RefWidth,
    pub references: u64,
    pub descriptors: u64,
    pub counts: u64,
    pub positions: u64,
}

impl MapLayout {
    pub fn new(points: u64, pool: u64, dim: u64) -> Self {
        let ref_width = RefWidth::for_pool_size(pool as usize);
        Self::with_width(points, pool, dim, ref_width)
    }

    fn with_width(points: u64, pool: u64, dim: u64, ref_width: RefWidth) -> Self {
        MapLayout {
            ref_width,
            references: points.saturating_mul(ref_width.bytes()),
            descriptors: pool.saturating_mul(dim).saturating_mul(u64::from(FLOAT_BYTES)),
            counts: pool.saturating_mul(4),
            positions: points.saturating_mul(12),
        }
    }

    /// References plus descriptors: the index-and-reference semantic cost.
    pub fn semantic_payload(&self) -> u64 {
        self.references.saturating_add(self.descriptors)
    }

    pub fn file_size(&self) -> u64 {
        self.semantic_payload()
            .saturating_add(self.counts)
            .saturating_add(self.positions)
            .saturating_add(HEADER_LEN as u64)
    }
}

fn put_u32(buf: &mut [u8], at: usize, v: u32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut [u8], at: usize, v: u64) {
    buf[at..at + 8].copy_from_slice(&v.to_le_bytes());
}

fn get_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

fn get_u64(buf: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

fn to_u32(v: usize, what: &'static str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Overflow(what))
}

fn check_header(bytes: &[u8], magic: [u8; 8], what: &str) -> Result<()> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            what: format!("{what} header"),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let found: [u8; 8] = bytes[..8].try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    let version = get_u32(bytes, 8);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    Ok(())
}

fn check_length(bytes: &[u8], expected: u64, what: &str) -> Result<()> {
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated {
            what: what.to_string(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::TrailingBytes {
            what: what.to_string(),
            extra: found - expected,
        });
    }
    Ok(())
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn u32s(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn extend_f32(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_frame(frame: &MaskIndexedFrame) -> Result<Vec<u8>> {
    let report = frame.validate();
    if !report.is_empty() {
        return Err(Error::Invalid(report));
    }
    let size = frame_file_size(
        frame.height() as u64,
        frame.width() as u64,
        frame.mask_count() as u64,
        frame.dim() as u64,
    );
    let mut out = vec![0u8; HEADER_LEN];
    out[..8].copy_from_slice(&FRAME_MAGIC);
    put_u32(&mut out, 8, VERSION);
    put_u32(&mut out, 12, to_u32(frame.height(), "frame height")?);
    put_u32(&mut out, 16, to_u32(frame.width(), "frame width")?);
    put_u32(&mut out, 20, to_u32(frame.mask_count(), "mask count")?);
    put_u32(&mut out, 24, to_u32(frame.dim(), "feature dim")?);
    put_u32(&mut out, 28, INDEX_BYTES);
    put_u32(&mut out, 32, FLOAT_BYTES);
    out.reserve(size as usize - HEADER_LEN);
    for i in frame.index_map() {
        out.extend_from_slice(&i.to_le_bytes());
    }
    extend_f32(&mut out, frame.table());
    debug_assert_eq!(out.len() as u64, size);
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<MaskIndexedFrame> {
    check_header(bytes, FRAME_MAGIC, "frame")?;
    let height = get_u32(bytes, 12) as usize;
    let width = get_u32(bytes, 16) as usize;
    let masks = get_u32(bytes, 20) as usize;
    let dim = get_u32(bytes, 24) as usize;
    let (ib, fb) = (get_u32(bytes, 28), get_u32(bytes, 32));
    if ib != INDEX_BYTES || fb != FLOAT_BYTES {
        return Err(Error::InvalidInput(format!(
            "unsupported element widths: index {ib} bytes, float {fb} bytes"
        )));
    }
    let expected = frame_file_size(height as u64, width as u64, masks as u64, dim as u64);
    check_length(bytes, expected, "frame payload")?;
    let index_end = HEADER_LEN + height * width * 2;
    let index_map = bytes[HEADER_LEN..index_end]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let table = f32s(&bytes[index_end..]);
    MaskIndexedFrame::new(height, width, dim, index_map, table)
}

pub fn write_frame(frame: &MaskIndexedFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_frame(frame)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<MaskIndexedFrame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frame(&bytes)
}

pub fn encode_map(pool: &FeaturePool, cloud: &SemanticPointCloud) -> Result<Vec<u8>> {
    let mut report = pool.validate();
    report.extend(cloud.validate(pool.len()));
    if !report.is_empty() {
        return Err(Error::Invalid(report));
    }
    let layout = MapLayout::new(cloud.len() as u64, pool.len() as u64, pool.dim() as u64);
    let mut out = vec![0u8; HEADER_LEN];
    out[..8].copy_from_slice(&MAP_MAGIC);
    put_u32(&mut out, 8, VERSION);
    put_u32(&mut out, 12, to_u32(pool.dim(), "feature dim")?);
    put_u32(&mut out, 16, layout.ref_width.bytes() as u32);
    put_u32(&mut out, 20, FLOAT_BYTES);
    put_u64(&mut out, 24, cloud.len() as u64);
    put_u64(&mut out, 32, pool.len() as u64);
    out.reserve(layout.file_size() as usize - HEADER_LEN);
    for &r in cloud.refs() {
        match layout.ref_width {
            RefWidth::U16 => out.extend_from_slice(&(r as u16).to_le_bytes()),
            RefWidth::U32 => out.extend_from_slice(&r.to_le_bytes()),
        }
    }
    extend_f32(&mut out, pool.descriptors());
    for c in pool.counts() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for p in cloud.positions() {
        extend_f32(&mut out, p);
    }
    debug_assert_eq!(out.len() as u64, layout.file_size());
    Ok(out)
}

pub fn decode_map(bytes: &[u8]) -> Result<(FeaturePool, SemanticPointCloud)> {
    check_header(bytes, MAP_MAGIC, "map")?;
    let dim = get_u32(bytes, 12) as usize;
    let ref_width = match get_u32(bytes, 16) {
        2 => RefWidth::U16,
        4 => RefWidth::U32,
        other => {
            return Err(Error::InvalidInput(format!(
                "unsupported reference width {other}"
            )))
        }
    };
    let fb = get_u32(bytes, 20);
    if fb != FLOAT_BYTES {
        return Err(Error::InvalidInput(format!("unsupported float width {fb}")));
    }
    let points = get_u64(bytes, 24);
    let pool_size = get_u64(bytes, 32);
    let layout = MapLayout::with_width(points, pool_size, dim as u64, ref_width);
    check_length(bytes, layout.file_size(), "map payload")?;

    let mut at = HEADER_LEN;
    let mut take = |len: u64| {
        let s = &bytes[at..at + len as usize];
        at += len as usize;
        s
    };
    let refs: Vec<u32> = match ref_width {
        RefWidth::U16 => take(layout.references)
            .chunks_exact(2)
            .map(|c| u32::from(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
        RefWidth::U32 => u32s(take(layout.references)),
    };
    let descriptors = f32s(take(layout.descriptors));
    let counts = u32s(take(layout.counts));
    let positions = f32s(take(layout.positions))
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();

    let pool = FeaturePool::new(dim, descriptors, counts)?;
    let cloud = SemanticPointCloud::from_parts(positions, refs)?;
    let report = cloud.validate(pool.len());
    if !report.is_empty() {
        return Err(Error::Invalid(report));
    }
    Ok((pool, cloud))
}

pub fn write_map(
    pool: &FeaturePool,
    cloud: &SemanticPointCloud,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_map(pool, cloud)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_map(path: impl AsRef<Path>) -> Result<(FeaturePool, SemanticPointCloud)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_map(&bytes)
}
