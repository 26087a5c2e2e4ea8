//! Open-vocabulary queries against frames and maps.
//!
//! A query is scored once per descriptor (`K` mask rows or `M` pool entries)
//! and broadcast to pixels or points through their indices.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::par;
use crate::storage::ingest::write_f32_raster;
use crate::types::{
    dot, norm, normalized, FeaturePool, FeatureVector, MaskIndexedFrame, SemanticPointCloud,
};

/// Default cosine threshold for selection.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct TextQuery {
    pub label: String,
    embedding: FeatureVector,
    unit: Vec<f32>,
    /// Targets scoring at least this are selected. Values above 1 select nothing.
    pub threshold: f64,
    pub top_k: Option<usize>,
}

impl TextQuery {
    pub fn new(label: impl Into<String>, embedding: FeatureVector) -> Result<Self> {
        let unit = embedding
            .normalized()
            .ok_or_else(|| Error::InvalidInput("query embedding has zero norm".into()))?
            .into_inner();
        Ok(TextQuery {
            label: label.into(),
            embedding,
            unit,
            threshold: DEFAULT_THRESHOLD,
            top_k: None,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if threshold.is_nan() {
            return Err(Error::InvalidInput("query threshold is NaN".into()));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn with_top_k(mut self, top_k: Option<usize>) -> Result<Self> {
        if top_k == Some(0) {
            return Err(Error::InvalidInput("top-k must be positive".into()));
        }
        self.top_k = top_k;
        Ok(self)
    }

    pub fn embedding(&self) -> &FeatureVector {
        &self.embedding
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.embedding.dim() != dim {
            return Err(Error::DimensionMismatch {
                what: "query embedding",
                expected: dim,
                found: self.embedding.dim(),
            });
        }
        Ok(())
    }
}

/// Per-target scores plus the selected targets.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// Cosine similarity per pixel or point; excluded targets hold `-inf`.
    pub scores: Vec<f32>,
    /// Selected target indices by descending score, ties by ascending index.
    pub selected: Vec<usize>,
}

impl QueryResult {
    fn from_scores(scores: Vec<f32>, threshold: f64, top_k: Option<usize>) -> Self {
        let selected = select(&scores, threshold, top_k);
        QueryResult { scores, selected }
    }

    pub fn is_selected_mask(&self) -> Vec<bool> {
        let mut flags = vec![false; self.scores.len()];
        for &i in &self.selected {
            flags[i] = true;
        }
        flags
    }
}

/// Indices with a finite score of at least `threshold`, best first, cut to `top_k`.
pub fn select(scores: &[f32], threshold: f64, top_k: Option<usize>) -> Vec<usize> {
    let mut chosen: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i].is_finite() && f64::from(scores[i]) >= threshold)
        .collect();
    chosen.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    if let Some(k) = top_k {
        chosen.truncate(k);
    }
    chosen
}

fn cosine_to_unit(v: &[f32], unit_query: &[f32]) -> f32 {
    let n = norm(v);
    if n == 0.0 {
        return 0.0;
    }
    (dot(v, unit_query) / n) as f32
}

/// Cosine similarity of the query against every pool entry.
pub fn score_pool(pool: &FeaturePool, q: &TextQuery) -> Result<Vec<f32>> {
    q.check_dim(pool.dim())?;
    Ok(par::map_range(pool.len(), |m| {
        cosine_to_unit(pool.descriptor(m), &q.unit)
    }))
}

/// Scores every point through its pool reference.
pub fn query_3d(pool: &FeaturePool, cloud: &SemanticPointCloud, q: &TextQuery) -> Result<QueryResult> {
    let entry_scores = score_pool(pool, q)?;
    let scores = cloud
        .refs()
        .iter()
        .map(|&r| {
            entry_scores.get(r as usize).copied().ok_or_else(|| {
                Error::InvalidInput(format!("point references missing pool entry {r}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryResult::from_scores(scores, q.threshold, q.top_k))
}

/// Scores every pixel through its mask ID; background pixels get `-inf`.
pub fn query_2d(frame: &MaskIndexedFrame, q: &TextQuery) -> Result<QueryResult> {
    q.check_dim(frame.dim())?;
    let mut mask_scores = vec![f32::NEG_INFINITY];
    mask_scores.extend(par::map_range(frame.mask_count(), |k| {
        cosine_to_unit(frame.feature(k as u16 + 1), &q.unit)
    }));
    let scores = frame
        .index_map()
        .iter()
        .map(|&i| mask_scores[usize::from(i)])
        .collect();
    Ok(QueryResult::from_scores(scores, q.threshold, q.top_k))
}

/// For several queries over the same targets, the index of the best-scoring
/// query per target, if that score reaches `min_score`.
pub fn segment_argmax(results: &[QueryResult], min_score: f64) -> Vec<Option<usize>> {
    let n = results.first().map_or(0, |r| r.scores.len());
    (0..n)
        .map(|t| {
            let mut best: Option<(usize, f32)> = None;
            for (qi, r) in results.iter().enumerate() {
                let s = r.scores[t];
                if s.is_finite() && best.is_none_or(|(_, b)| s > b) {
                    best = Some((qi, s));
                }
            }
            best.filter(|&(_, s)| f64::from(s) >= min_score).map(|(qi, _)| qi)
        })
        .collect()
}

/// Gray level for a cosine score: `[-1, 1]` maps linearly onto `[0, 255]`;
/// excluded targets are black.
pub fn gray_level(score: f32) -> u8 {
    if !score.is_finite() {
        return 0;
    }
    let s = f64::from(score).clamp(-1.0, 1.0);
    ((s + 1.0) * 0.5 * 255.0).round() as u8
}

/// Binary PGM (P5) bytes of a 2D result.
pub fn pgm_bytes(result: &QueryResult, height: usize, width: usize) -> Result<Vec<u8>> {
    if result.scores.len() != height * width {
        return Err(Error::DimensionMismatch {
            what: "heatmap pixels",
            expected: height * width,
            found: result.scores.len(),
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(result.scores.iter().map(|&s| gray_level(s)));
    Ok(out)
}

/// Writes the PGM heatmap to `path` and the raw f32 scores to `path.f32`
/// (with the usual raster sidecar).
pub fn export_heatmap_2d(result: &QueryResult, frame: &MaskIndexedFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = pgm_bytes(result, frame.height(), frame.width())?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mut raw = path.as_os_str().to_owned();
    raw.push(".f32");
    write_f32_raster(Path::new(&raw), frame.height(), frame.width(), 1, &result.scores)
}

/// ASCII PLY of points with their score and a selected flag.
pub fn ply_string(result: &QueryResult, cloud: &SemanticPointCloud) -> Result<String> {
    if result.scores.len() != cloud.len() {
        return Err(Error::DimensionMismatch {
            what: "scored points",
            expected: cloud.len(),
            found: result.scores.len(),
        });
    }
    let flags = result.is_selected_mask();
    let mut out = String::with_capacity(64 + cloud.len() * 32);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property float score\nproperty uchar selected\nend_header\n",
    );
    for ((p, s), f) in cloud.positions().iter().zip(&result.scores).zip(flags) {
        let _ = writeln!(out, "{} {} {} {} {}", p[0], p[1], p[2], s, u8::from(f));
    }
    Ok(out)
}

pub fn export_ply(result: &QueryResult, cloud: &SemanticPointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = ply_string(result, cloud)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Unit copy of a frame's feature table, used when comparing 2D and 3D scores.
pub fn normalized_table(frame: &MaskIndexedFrame) -> Option<Vec<f32>> {
    let mut out = Vec::with_capacity(frame.table().len());
    for id in 1..=frame.mask_count() as u16 {
        out.extend(normalized(frame.feature(id))?);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f32]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn axis_pool() -> FeaturePool {
        FeaturePool::new(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![1, 1, 1])
            .unwrap()
    }

    #[test]
    fn query_equal_to_entry_scores_one() {
        let q = TextQuery::new("y", fv(&[0.0, 2.0, 0.0])).unwrap();
        let s = score_pool(&axis_pool(), &q).unwrap();
        assert_eq!(s, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn orthogonal_query_scores_zero() {
        let pool = FeaturePool::new(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], vec![1, 1]).unwrap();
        let q = TextQuery::new("z", fv(&[0.0, 0.0, 1.0])).unwrap();
        assert!(score_pool(&pool, &q).unwrap().iter().all(|s| s.abs() < 1e-6));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let q = TextQuery::new("x", fv(&[1.0, 0.0])).unwrap();
        assert!(matches!(score_pool(&axis_pool(), &q), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_embedding_is_rejected() {
        assert!(TextQuery::new("nothing", fv(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn shared_entry_selects_every_point() {
        let pool = FeaturePool::new(2, vec![0.6, 0.8], vec![4]).unwrap();
        let cloud = SemanticPointCloud::from_parts(vec![[0.0; 3]; 4], vec![0; 4]).unwrap();
        let q = TextQuery::new("it", fv(&[0.6, 0.8])).unwrap();
        let r = query_3d(&pool, &cloud, &q).unwrap();
        assert_eq!(r.selected, vec![0, 1, 2, 3]);
        assert!(r.scores.iter().all(|&s| (s - 1.0).abs() < 1e-6));

        let impossible = q.with_threshold(1.0 + 1e-6).unwrap();
        assert!(query_3d(&pool, &cloud, &impossible).unwrap().selected.is_empty());
    }

    #[test]
    fn top_k_prefix_with_index_tie_break() {
        let scores = [0.7f32, 0.9, 0.7, f32::NEG_INFINITY, 0.2, 0.95];
        assert_eq!(select(&scores, 0.5, None), vec![5, 1, 0, 2]);
        assert_eq!(select(&scores, 0.5, Some(3)), vec![5, 1, 0]);
        assert_eq!(select(&scores, f64::NEG_INFINITY, None), vec![5, 1, 0, 2, 4]);
    }

    #[test]
    fn query_2d_broadcasts_mask_scores_and_skips_background() {
        let frame =
            MaskIndexedFrame::new(2, 2, 2, vec![1, 0, 2, 2], vec![3.0, 0.0, 0.0, 0.5]).unwrap();
        let q = TextQuery::new("x", fv(&[1.0, 0.0])).unwrap();
        let r = query_2d(&frame, &q).unwrap();
        assert_eq!(r.scores, vec![1.0, f32::NEG_INFINITY, 0.0, 0.0]);
        assert_eq!(r.selected, vec![0]);
    }

    #[test]
    fn argmax_segmentation() {
        let a = QueryResult { scores: vec![0.9, 0.1, f32::NEG_INFINITY], selected: vec![] };
        let b = QueryResult { scores: vec![0.2, 0.3, f32::NEG_INFINITY], selected: vec![] };
        assert_eq!(segment_argmax(&[a.clone(), b.clone()], 0.0), vec![Some(0), Some(1), None]);
        assert_eq!(segment_argmax(&[a, b], 0.5), vec![Some(0), None, None]);
    }

    #[test]
    fn single_point_ply() {
        let cloud = SemanticPointCloud::from_parts(vec![[0.0, 0.0, 1.0]], vec![0]).unwrap();
        let r = QueryResult { scores: vec![1.0], selected: vec![0] };
        let text = ply_string(&r, &cloud).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 1\n"));
        assert!(text.ends_with("end_header\n0 0 1 1 1\n"), "{text}");
    }

    #[test]
    fn empty_selection_ply_keeps_all_scores() {
        let cloud = SemanticPointCloud::from_parts(vec![[1.5, 0.0, 2.0], [0.0, 0.0, 0.0]], vec![0, 0])
            .unwrap();
        let r = QueryResult { scores: vec![0.25, -0.5], selected: vec![] };
        let text = ply_string(&r, &cloud).unwrap();
        let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body, vec!["1.5 0 2 0.25 0", "0 0 0 -0.5 0"]);
    }

    #[test]
    fn pgm_levels() {
        assert_eq!(gray_level(-1.0), 0);
        assert_eq!(gray_level(1.0), 255);
        assert_eq!(gray_level(0.0), 128);
        assert_eq!(gray_level(f32::NEG_INFINITY), 0);
        let r = QueryResult { scores: vec![1.0, f32::NEG_INFINITY], selected: vec![0] };
        assert_eq!(pgm_bytes(&r, 1, 2).unwrap(), b"P5\n2 1\n255\n\xff\x00".to_vec());
    }
}
