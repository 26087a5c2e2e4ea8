//! Semantic storage cost arithmetic for dense versus indexed layouts.
//!
//! All byte counts use checked `u64` arithmetic. Ratios are returned two
//! ways, as the quotient of the exact integer costs and as the closed form
//! `b/(C*bf) + count/total`; the two agree to within floating-point rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes and element widths that determine storage cost.
///
/// `bf` is bytes per feature element, `bi` bytes per 2D mask index and `br`
/// bytes per 3D pool reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageModel {
    pub dim: u64,
    pub bf: u64,
    pub bi: u64,
    pub br: u64,
    pub height: u64,
    pub width: u64,
    pub masks: u64,
    pub points: u64,
    pub pool: u64,
}

impl Default for StorageModel {
    /// FP32 features with 16-bit indices and references; all sizes zero.
    fn default() -> Self {
        StorageModel {
            dim: 0,
            bf: 4,
            bi: 2,
            br: 2,
            height: 0,
            width: 0,
            masks: 0,
            points: 0,
            pool: 0,
        }
    }
}

fn positive(value: u64, name: &str) -> Result<u64> {
    if value == 0 {
        Err(Error::InvalidInput(format!("{name} must be positive")))
    } else {
        Ok(value)
    }
}

fn width_in(value: u64, name: &str, allowed: &[u64]) -> Result<u64> {
    if allowed.contains(&value) {
        Ok(value)
    } else {
        Err(Error::InvalidInput(format!(
            "{name} must be one of {allowed:?}, got {value}"
        )))
    }
}

fn mul(a: u64, b: u64, what: &'static str) -> Result<u64> {
    a.checked_mul(b).ok_or(Error::Overflow(what))
}

fn add(a: u64, b: u64, what: &'static str) -> Result<u64> {
    a.checked_add(b).ok_or(Error::Overflow(what))
}

impl StorageModel {
    fn bf(&self) -> Result<u64> {
        width_in(self.bf, "bf", &[2, 4])
    }

    fn pixels(&self) -> Result<u64> {
        mul(
            positive(self.height, "H")?,
            positive(self.width, "W")?,
            "H*W",
        )
    }

    /// Bytes for one feature vector per pixel.
    pub fn dense_2d_cost(&self) -> Result<u64> {
        let row = mul(positive(self.dim, "C")?, self.bf()?, "C*bf")?;
        mul(self.pixels()?, row, "dense 2D cost")
    }

    /// Bytes for an index map plus a `K`-row feature table.
    pub fn mask_indexed_2d_cost(&self) -> Result<u64> {
        let bi = width_in(self.bi, "bi", &[2, 4])?;
        let index = mul(self.pixels()?, bi, "index map cost")?;
        let row = mul(positive(self.dim, "C")?, self.bf()?, "C*bf")?;
        let table = mul(self.masks, row, "feature table cost")?;
        add(index, table, "mask-indexed 2D cost")
    }

    /// Mask-indexed over dense 2D cost, as a quotient of the exact integers.
    pub fn ratio_2d(&self) -> Result<f64> {
        Ok(self.mask_indexed_2d_cost()? as f64 / self.dense_2d_cost()? as f64)
    }

    /// `bi/(C*bf) + K/(H*W)`.
    pub fn ratio_2d_closed_form(&self) -> Result<f64> {
        let bi = width_in(self.bi, "bi", &[2, 4])?;
        let c = positive(self.dim, "C")?;
        Ok(bi as f64 / (c as f64 * self.bf()? as f64) + self.masks as f64 / self.pixels()? as f64)
    }

    /// Bytes for one feature vector per 3D point.
    pub fn dense_3d_cost(&self) -> Result<u64> {
        let row = mul(positive(self.dim, "C")?, self.bf()?, "C*bf")?;
        mul(positive(self.points, "N")?, row, "dense 3D cost")
    }

    /// Bytes for one pool reference per point plus an `M`-entry pool.
    pub fn index_ref_3d_cost(&self) -> Result<u64> {
        let br = width_in(self.br, "br", &[2, 4])?;
        let refs = mul(positive(self.points, "N")?, br, "reference cost")?;
        let row = mul(positive(self.dim, "C")?, self.bf()?, "C*bf")?;
        let pool = mul(self.pool, row, "pool cost")?;
        add(refs, pool, "index-and-reference 3D cost")
    }

    pub fn ratio_3d(&self) -> Result<f64> {
        Ok(self.index_ref_3d_cost()? as f64 / self.dense_3d_cost()? as f64)
    }

    /// `br/(C*bf) + M/N`.
    pub fn ratio_3d_closed_form(&self) -> Result<f64> {
        let br = width_in(self.br, "br", &[2, 4])?;
        let c = positive(self.dim, "C")?;
        let n = positive(self.points, "N")?;
        Ok(br as f64 / (c as f64 * self.bf()? as f64) + self.pool as f64 / n as f64)
    }

    /// Every quantity computable from the fields that are set.
    pub fn report(&self) -> StorageReport {
        StorageReport {
            model: *self,
            dense_2d_bytes: self.dense_2d_cost().ok(),
            mask_indexed_2d_bytes: self.mask_indexed_2d_cost().ok(),
            ratio_2d: self.ratio_2d().ok(),
            ratio_2d_closed_form: self.ratio_2d_closed_form().ok(),
            dense_3d_bytes: self.dense_3d_cost().ok(),
            index_ref_3d_bytes: self.index_ref_3d_cost().ok(),
            ratio_3d: self.ratio_3d().ok(),
            ratio_3d_closed_form: self.ratio_3d_closed_form().ok(),
        }
    }
}

/// Machine-readable cost summary; absent quantities are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub model: StorageModel,
    pub dense_2d_bytes: Option<u64>,
    pub mask_indexed_2d_bytes: Option<u64>,
    pub ratio_2d: Option<f64>,
    pub ratio_2d_closed_form: Option<f64>,
    pub dense_3d_bytes: Option<u64>,
    pub index_ref_3d_bytes: Option<u64>,
    pub ratio_3d: Option<f64>,
    pub ratio_3d_closed_form: Option<f64>,
}

/// Decimal (SI) rendering: `1_433_600` becomes `1.43 MB`.
pub fn human_bytes(bytes: u64) -> String {
    const UNITS: [&str; 5] = ["B", "kB", "MB", "GB", "TB"];
    let mut value = bytes as f64;
    let mut unit = 0;
    while value >= 1000.0 && unit < UNITS.len() - 1 {
        value /= 1000.0;
        unit += 1;
    }
    if unit == 0 {
        format!("{bytes} B")
    } else {
        format!("{value:.2} {}", UNITS[unit])
    }
}
