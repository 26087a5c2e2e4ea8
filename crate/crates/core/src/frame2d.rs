//! Per-image semantic memory construction.
//!
//! Backbone features are bilinearly upsampled to mask resolution, averaged
//! inside every mask, and each pixel is pointed at one mask. The result is a
//! [`MaskIndexedFrame`] that stores `H*W` indices and `K` feature rows instead
//! of `H*W` feature vectors.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::par;
use crate::types::{DenseFeatureMap, FeatureVector, MaskIndexedFrame, MaskSet, MAX_MASKS};

/// Rows per accumulation band. Fixed so that summation order, and with it every
/// output bit, does not depend on the thread count.
const BAND_ROWS: usize = 32;

/// How pixels covered by several masks pick their owner.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum AssignmentPolicy {
    /// The mask with the fewest foreground pixels wins; equal areas go to the
    /// lowest mask ID.
    #[default]
    SmallestMask,
}

impl FromStr for AssignmentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smallest-mask" | "smallest" => Ok(AssignmentPolicy::SmallestMask),
            other => Err(Error::InvalidInput(format!(
                "unknown assignment policy {other:?} (expected \"smallest-mask\")"
            ))),
        }
    }
}

impl fmt::Display for AssignmentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssignmentPolicy::SmallestMask => f.write_str("smallest-mask"),
        }
    }
}

/// Source index pair and weight of the second sample for one output coordinate.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Align-corners-false sampling taps, clamped at both borders.
fn taps(src_len: usize, dst_len: usize) -> Vec<Tap> {
    let scale = src_len as f64 / dst_len as f64;
    let last = src_len - 1;
    (0..dst_len)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last as f64);
            let lo = (s.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            Tap {
                lo,
                hi,
                frac: s - lo as f64,
            }
        })
        .collect()
}

/// Fills `out` (`width * dim`) with one interpolated output row.
fn interpolate_row(feat: &DenseFeatureMap, row: Tap, cols: &[Tap], out: &mut [f32]) {
    let dim = feat.dim();
    let (wy0, wy1) = (1.0 - row.frac, row.frac);
    for (x, col) in cols.iter().enumerate() {
        let (wx0, wx1) = (1.0 - col.frac, col.frac);
        let a = feat.pixel(row.lo, col.lo);
        let b = feat.pixel(row.lo, col.hi);
        let c = feat.pixel(row.hi, col.lo);
        let d = feat.pixel(row.hi, col.hi);
        let dst = &mut out[x * dim..(x + 1) * dim];
        for ch in 0..dim {
            let top = wx0 * f64::from(a[ch]) + wx1 * f64::from(b[ch]);
            let bottom = wx0 * f64::from(c[ch]) + wx1 * f64::from(d[ch]);
            dst[ch] = (wy0 * top + wy1 * bottom) as f32;
        }
    }
}

/// Channel-wise bilinear resize to `target_h x target_w`.
pub fn upsample_bilinear(
    feat: &DenseFeatureMap,
    target_h: usize,
    target_w: usize,
) -> Result<DenseFeatureMap> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::DimensionMismatch {
            what: "upsample target",
            expected: 1,
            found: 0,
        });
    }
    let dim = feat.dim();
    let rows = taps(feat.height(), target_h);
    let cols = taps(feat.width(), target_w);
    let row_len = target_w * dim;
    let mut data = vec![0.0f32; target_h * row_len];
    par::for_each_chunk_mut(&mut data, row_len, |y, out| {
        interpolate_row(feat, rows[y], &cols, out)
    });
    Ok(DenseFeatureMap::from_parts_unchecked(
        target_h, target_w, dim, data,
    ))
}

/// Produces feature rows at mask resolution, either directly or by interpolation.
enum RowSource<'a> {
    Direct(&'a DenseFeatureMap),
    Upsampled {
        feat: &'a DenseFeatureMap,
        rows: Vec<Tap>,
        cols: Vec<Tap>,
    },
}

impl<'a> RowSource<'a> {
    fn new(feat: &'a DenseFeatureMap, height: usize, width: usize) -> Self {
        if feat.height() == height && feat.width() == width {
            RowSource::Direct(feat)
        } else {
            RowSource::Upsampled {
                feat,
                rows: taps(feat.height(), height),
                cols: taps(feat.width(), width),
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            RowSource::Direct(f) | RowSource::Upsampled { feat: f, .. } => f.dim(),
        }
    }

    fn fill<'b>(&'b self, y: usize, buf: &'b mut [f32]) -> &'b [f32] {
        match self {
            RowSource::Direct(f) => {
                let len = f.width() * f.dim();
                &f.data()[y * len..(y + 1) * len]
            }
            RowSource::Upsampled { feat, rows, cols } => {
                interpolate_row(feat, rows[y], cols, buf);
                buf
            }
        }
    }
}

/// Mean feature of each selected mask over its full foreground.
fn accumulate_means(source: &RowSource<'_>, masks: &MaskSet, selected: &[usize]) -> Vec<Vec<f32>> {
    let (height, width, dim) = (masks.height(), masks.width(), source.dim());
    let n_bands = height.div_ceil(BAND_ROWS);
    let partials: Vec<Vec<f64>> = par::map_range(n_bands, |band| {
        let mut sums = vec![0.0f64; selected.len() * dim];
        let mut buf = match source {
            RowSource::Direct(_) => Vec::new(),
            RowSource::Upsampled { .. } => vec![0.0f32; width * dim],
        };
        let y_end = ((band + 1) * BAND_ROWS).min(height);
        for y in band * BAND_ROWS..y_end {
            // Skip interpolating rows no selected mask touches.
            let touched = selected
                .iter()
                .any(|&k| masks.mask(k)[y * width..(y + 1) * width].contains(&true));
            if !touched {
                continue;
            }
            let row = source.fill(y, &mut buf);
            for (slot, &k) in selected.iter().enumerate() {
                let mrow = &masks.mask(k)[y * width..(y + 1) * width];
                let acc = &mut sums[slot * dim..(slot + 1) * dim];
                for (x, _) in mrow.iter().enumerate().filter(|(_, &b)| b) {
                    let px = &row[x * dim..(x + 1) * dim];
                    for (a, &v) in acc.iter_mut().zip(px) {
                        *a += f64::from(v);
                    }
                }
            }
        }
        sums
    });

    let mut totals = vec![0.0f64; selected.len() * dim];
    for p in &partials {
        for (t, v) in totals.iter_mut().zip(p) {
            *t += v;
        }
    }
    let areas = masks.areas();
    selected
        .iter()
        .enumerate()
        .map(|(slot, &k)| {
            let n = areas[k] as f64;
            totals[slot * dim..(slot + 1) * dim]
                .iter()
                .map(|&s| (s / n) as f32)
                .collect()
        })
        .collect()
}

fn check_same_size(feat: &DenseFeatureMap, masks: &MaskSet) -> Result<()> {
    if feat.height() != masks.height() {
        return Err(Error::DimensionMismatch {
            what: "feature map height",
            expected: masks.height(),
            found: feat.height(),
        });
    }
    if feat.width() != masks.width() {
        return Err(Error::DimensionMismatch {
            what: "feature map width",
            expected: masks.width(),
            found: feat.width(),
        });
    }
    Ok(())
}

/// Mean feature inside every mask, accumulated in double precision.
pub fn aggregate_mask_features(
    feat: &DenseFeatureMap,
    masks: &MaskSet,
) -> Result<Vec<FeatureVector>> {
    check_same_size(feat, masks)?;
    if let Some(k) = masks.areas().iter().position(|&a| a == 0) {
        return Err(Error::EmptyMask { index: k });
    }
    let all: Vec<usize> = (0..masks.len()).collect();
    accumulate_means(&RowSource::Direct(feat), masks, &all)
        .into_iter()
        .map(FeatureVector::new)
        .collect()
}

/// Resolves every pixel to a mask ID (`1..=K`) or background (0).
pub fn assign_pixels(masks: &MaskSet, policy: AssignmentPolicy) -> Result<Vec<u16>> {
    if masks.len() > MAX_MASKS {
        return Err(Error::TooManyMasks { count: masks.len() });
    }
    let width = masks.width();
    let mut index = vec![0u16; masks.height() * width];
    if masks.is_empty() {
        return Ok(index);
    }
    let priority: Vec<usize> = match policy {
        AssignmentPolicy::SmallestMask => {
            let areas = masks.areas();
            let mut order: Vec<usize> = (0..masks.len()).collect();
            order.sort_by_key(|&k| (areas[k], k));
            order
        }
    };
    // Paint lowest priority first so the winner writes last.
    par::for_each_chunk_mut(&mut index, BAND_ROWS * width, |band, out| {
        let start = band * BAND_ROWS * width;
        for &k in priority.iter().rev() {
            let m = &masks.mask(k)[start..start + out.len()];
            let id = (k + 1) as u16;
            for (dst, _) in out.iter_mut().zip(m).filter(|(_, &b)| b) {
                *dst = id;
            }
        }
    });
    Ok(index)
}

/// Builds the mask-indexed memory of one image.
///
/// Features are upsampled on the fly when their grid differs from the mask
/// resolution, so the full-resolution dense map is never materialized. Masks
/// that lose every pixel to overlapping masks are dropped and the surviving
/// IDs are compacted in their original order.
pub fn build_frame(
    feat: &DenseFeatureMap,
    masks: &MaskSet,
    policy: AssignmentPolicy,
) -> Result<MaskIndexedFrame> {
    let (height, width, dim) = (masks.height(), masks.width(), feat.dim());
    let raw_index = assign_pixels(masks, policy)?;

    let mut assigned = vec![0usize; masks.len() + 1];
    for &i in &raw_index {
        assigned[usize::from(i)] += 1;
    }
    let survivors: Vec<usize> = (0..masks.len()).filter(|&k| assigned[k + 1] > 0).collect();
    let mut remap = vec![0u16; masks.len() + 1];
    for (new, &k) in survivors.iter().enumerate() {
        remap[k + 1] = (new + 1) as u16;
    }
    let index_map: Vec<u16> = raw_index.iter().map(|&i| remap[usize::from(i)]).collect();

    let source = RowSource::new(feat, height, width);
    let table: Vec<f32> = accumulate_means(&source, masks, &survivors)
        .into_iter()
        .flatten()
        .collect();
    MaskIndexedFrame::new(height, width, dim, index_map, table)
}

/// Per-pixel features looked up through the index map.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseReconstruction {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl DenseReconstruction {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Feature at `(row, col)`, or `None` for background.
    pub fn pixel(&self, row: usize, col: usize) -> Option<&[f32]> {
        let p = row * self.width + col;
        self.valid[p].then(|| &self.data[p * self.dim..(p + 1) * self.dim])
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Dense map with background pixels set to zero.
    pub fn to_feature_map(&self) -> Result<DenseFeatureMap> {
        DenseFeatureMap::new(self.height, self.width, self.dim, self.data.clone())
    }
}

/// Expands a frame back to per-pixel features by table lookup.
pub fn reconstruct_dense(frame: &MaskIndexedFrame) -> DenseReconstruction {
    let dim = frame.dim();
    let width = frame.width();
    let mut data = vec![0.0f32; frame.height() * width * dim];
    par::for_each_chunk_mut(&mut data, width * dim, |y, out| {
        let ids = &frame.index_map()[y * width..(y + 1) * width];
        for (x, &id) in ids.iter().enumerate() {
            if id > 0 {
                out[x * dim..(x + 1) * dim].copy_from_slice(frame.feature(id));
            }
        }
    });
    DenseReconstruction {
        height: frame.height(),
        width,
        dim,
        data,
        valid: frame.index_map().iter().map(|&i| i > 0).collect(),
    }
}
