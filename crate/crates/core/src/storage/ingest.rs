//! Raw input formats.
//!
//! Every binary input `foo.bin` is described by a JSON sidecar at
//! `foo.bin.json`:
//!
//! - dense features / depth: little-endian f32, row-major, channels innermost,
//!   sidecar `{"height", "width", "channels"}` (depth has one channel);
//! - masks: sidecar `{"height", "width", "count", "encoding"}` where encoding
//!   `raw` is `count` rasters of `height*width` bytes (non-zero = foreground)
//!   and `rle` is, per mask, a u32 run count followed by that many u32 run
//!   lengths over the row-major raster, alternating background/foreground and
//!   starting with background;
//! - text embeddings: little-endian f32, sidecar `{"label", "dim"}`.
//!
//! Cameras are a single JSON document naming their depth file relative to the
//! document's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CameraFrame, DenseFeatureMap, FeatureVector, Intrinsics, MaskSet, Pose};

/// Sidecar path for a binary input.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn expect_len(path: &Path, bytes: &[u8], expected: u64) -> Result<()> {
    let found = bytes.len() as u64;
    if found < expected {
        Err(Error::Truncated {
            what: path.display().to_string(),
            expected,
            found,
        })
    } else if found > expected {
        Err(Error::TrailingBytes {
            what: path.display().to_string(),
            extra: found - expected,
        })
    } else {
        Ok(())
    }
}

fn f32_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterSidecar {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

fn read_raster(path: &Path) -> Result<(RasterSidecar, Vec<f32>)> {
    let side: RasterSidecar = read_json(&sidecar_path(path))?;
    let bytes = read_bytes(path)?;
    let expected = (side.height as u64)
        .saturating_mul(side.width as u64)
        .saturating_mul(side.channels as u64)
        .saturating_mul(4);
    expect_len(path, &bytes, expected)?;
    Ok((side, f32_le(&bytes)))
}

fn write_raster(path: &Path, side: RasterSidecar, data: &[f32]) -> Result<()> {
    write_bytes(path, &f32_bytes(data))?;
    write_json(&sidecar_path(path), &side)
}

/// Writes any `height x width x channels` f32 raster with its sidecar.
pub fn write_f32_raster(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
    channels: usize,
    data: &[f32],
) -> Result<()> {
    if data.len() != height * width * channels {
        return Err(Error::DimensionMismatch {
            what: "raster data",
            expected: height * width * channels,
            found: data.len(),
        });
    }
    let side = RasterSidecar {
        height,
        width,
        channels,
    };
    write_raster(path.as_ref(), side, data)
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<DenseFeatureMap> {
    let path = path.as_ref();
    let (side, data) = read_raster(path)?;
    DenseFeatureMap::new(side.height, side.width, side.channels, data)
}

pub fn write_feature_map(path: impl AsRef<Path>, feat: &DenseFeatureMap) -> Result<()> {
    let side = RasterSidecar {
        height: feat.height(),
        width: feat.width(),
        channels: feat.dim(),
    };
    write_raster(path.as_ref(), side, feat.data())
}

/// Depth raster in meters: `(height, width, values)`.
pub fn read_depth(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let path = path.as_ref();
    let (side, data) = read_raster(path)?;
    if side.channels != 1 {
        return Err(Error::DimensionMismatch {
            what: "depth channels",
            expected: 1,
            found: side.channels,
        });
    }
    Ok((side.height, side.width, data))
}

pub fn write_depth(path: impl AsRef<Path>, height: usize, width: usize, depth: &[f32]) -> Result<()> {
    write_f32_raster(path, height, width, 1, depth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskEncoding {
    Raw,
    #[default]
    Rle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub height: usize,
    pub width: usize,
    pub count: usize,
    pub encoding: MaskEncoding,
}

/// Alternating background/foreground run lengths, starting with background.
pub fn rle_encode(mask: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in mask {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[u32], pixels: usize) -> Option<Vec<bool>> {
    let mut out = Vec::with_capacity(pixels);
    for (i, &r) in runs.iter().enumerate() {
        if out.len() + r as usize > pixels {
            return None;
        }
        out.resize(out.len() + r as usize, i % 2 == 1);
    }
    (out.len() == pixels).then_some(out)
}

struct WordCursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl WordCursor<'_> {
    fn next(&mut self, what: &str) -> Result<u32> {
        let end = self.at + 4;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                what: format!("{} ({what} at byte offset {})", self.path.display(), self.at),
                expected: end as u64,
                found: self.bytes.len() as u64,
            });
        }
        let v = u32::from_le_bytes(self.bytes[self.at..end].try_into().unwrap());
        self.at = end;
        Ok(v)
    }
}

pub fn read_masks(path: impl AsRef<Path>) -> Result<MaskSet> {
    let path = path.as_ref();
    let side: MaskSidecar = read_json(&sidecar_path(path))?;
    let bytes = read_bytes(path)?;
    let pixels = side.height * side.width;
    let masks = match side.encoding {
        MaskEncoding::Raw => {
            expect_len(path, &bytes, (side.count as u64).saturating_mul(pixels as u64))?;
            if pixels == 0 {
                vec![Vec::new(); side.count]
            } else {
                bytes
                    .chunks_exact(pixels)
                    .map(|c| c.iter().map(|&b| b != 0).collect())
                    .collect()
            }
        }
        MaskEncoding::Rle => {
            let mut cursor = WordCursor { path, bytes: &bytes, at: 0 };
            let mut masks = Vec::with_capacity(side.count);
            for k in 0..side.count {
                let offset = cursor.at;
                let n = cursor.next("run count")?;
                let runs = (0..n)
                    .map(|_| cursor.next("run length"))
                    .collect::<Result<Vec<_>>>()?;
                let mask = rle_decode(&runs, pixels).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "{}: runs of mask {k} at byte offset {offset} do not cover {pixels} pixels",
                        path.display()
                    ))
                })?;
                masks.push(mask);
            }
            if cursor.at != bytes.len() {
                return Err(Error::TrailingBytes {
                    what: path.display().to_string(),
                    extra: (bytes.len() - cursor.at) as u64,
                });
            }
            masks
        }
    };
    MaskSet::new(side.height, side.width, masks)
}

pub fn write_masks(path: impl AsRef<Path>, masks: &MaskSet, encoding: MaskEncoding) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = match encoding {
        MaskEncoding::Raw => masks
            .masks()
            .iter()
            .flat_map(|m| m.iter().map(|&b| u8::from(b)))
            .collect(),
        MaskEncoding::Rle => {
            let mut out = Vec::new();
            for m in masks.masks() {
                let runs = rle_encode(m);
                out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
                for r in runs {
                    out.extend_from_slice(&r.to_le_bytes());
                }
            }
            out
        }
    };
    write_bytes(path, &bytes)?;
    let side = MaskSidecar {
        height: masks.height(),
        width: masks.width(),
        count: masks.len(),
        encoding,
    };
    write_json(&sidecar_path(path), &side)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub label: String,
    pub dim: usize,
}

pub fn read_embedding(path: impl AsRef<Path>) -> Result<(String, FeatureVector)> {
    let path = path.as_ref();
    let side: EmbeddingSidecar = read_json(&sidecar_path(path))?;
    let bytes = read_bytes(path)?;
    expect_len(path, &bytes, side.dim as u64 * 4)?;
    Ok((side.label, FeatureVector::new(f32_le(&bytes))?))
}

pub fn write_embedding(path: impl AsRef<Path>, label: &str, embedding: &FeatureVector) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &f32_bytes(embedding.as_slice()))?;
    let side = EmbeddingSidecar {
        label: label.to_string(),
        dim: embedding.dim(),
    };
    write_json(&sidecar_path(path), &side)
}

/// JSON camera document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    /// Depth raster, relative to the camera file's directory.
    pub depth: PathBuf,
    pub intrinsics: Intrinsics,
    pub pose_world_from_camera: Pose,
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<CameraFrame> {
    let path = path.as_ref();
    let doc: CameraFile = read_json(path)?;
    let depth_path = path.parent().unwrap_or(Path::new(".")).join(&doc.depth);
    let (height, width, depth) = read_depth(&depth_path)?;
    CameraFrame::new(height, width, depth, doc.intrinsics, doc.pose_world_from_camera)
}

/// Writes `cam` as a camera document plus a depth raster named `depth_name`
/// next to it.
pub fn write_camera(path: impl AsRef<Path>, depth_name: &str, cam: &CameraFrame) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    write_depth(dir.join(depth_name), cam.height(), cam.width(), cam.depth())?;
    let doc = CameraFile {
        depth: PathBuf::from(depth_name),
        intrinsics: *cam.intrinsics(),
        pose_world_from_camera: *cam.pose(),
    };
    write_json(path, &doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_known_runs() {
        let m = [false, false, true, true, true, false, true];
        assert_eq!(rle_encode(&m), vec![2, 3, 1, 1]);
        assert_eq!(rle_decode(&[2, 3, 1, 1], 7).unwrap(), m);
        // Leading foreground starts with an empty background run.
        assert_eq!(rle_encode(&[true, false]), vec![0, 1, 1]);
        assert!(rle_decode(&[2, 3], 7).is_none());
        assert!(rle_decode(&[5, 3], 7).is_none());
    }

    #[test]
    fn masks_round_trip_in_both_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let masks = MaskSet::new(
            3,
            4,
            vec![
                vec![true, false, false, false, true, true, false, false, false, false, false, true],
                vec![false; 11].into_iter().chain([true]).collect(),
            ],
        )
        .unwrap();
        for enc in [MaskEncoding::Raw, MaskEncoding::Rle] {
            let p = dir.path().join(format!("m-{enc:?}"));
            write_masks(&p, &masks, enc).unwrap();
            assert_eq!(read_masks(&p).unwrap(), masks);
        }
    }

    #[test]
    fn truncated_feature_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("feat.f32");
        let feat = DenseFeatureMap::new(2, 2, 3, (0..12).map(|i| i as f32).collect()).unwrap();
        write_feature_map(&p, &feat).unwrap();
        assert_eq!(read_feature_map(&p).unwrap(), feat);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        let err = read_feature_map(&p).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
    }

    #[test]
    fn missing_sidecar_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_feature_map(dir.path().join("nope.f32")).unwrap_err();
        assert!(err.is_not_found());
    }

    #[test]
    fn camera_and_embedding_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let k = Intrinsics {
            fx: 100.0,
            fy: 110.0,
            cx: 50.0,
            cy: 40.0,
        };
        let cam = CameraFrame::new(2, 3, vec![1.0, 2.0, 0.0, -1.0, 3.5, 4.0], k, Pose::from_translation([1.0, 2.0, 3.0]))
            .unwrap();
        let p = dir.path().join("cam.json");
        write_camera(&p, "cam.depth.f32", &cam).unwrap();
        assert_eq!(read_camera(&p).unwrap(), cam);

        let e = FeatureVector::new(vec![0.25, -0.5, 1.0]).unwrap();
        let ep = dir.path().join("chair.f32");
        write_embedding(&ep, "chair", &e).unwrap();
        assert_eq!(read_embedding(&ep).unwrap(), ("chair".to_string(), e));
    }

    #[test]
    fn rle_mask_with_short_runs_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.rle");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        let side = MaskSidecar {
            height: 2,
            width: 2,
            count: 1,
            encoding: MaskEncoding::Rle,
        };
        fs::write(sidecar_path(&p), serde_json::to_string(&side).unwrap()).unwrap();
        let err = read_masks(&p).unwrap_err();
        assert!(err.to_string().contains("byte offset 0"), "{err}");
    }
}
