#![allow(dead_code)]

use plaf_core::{DenseFeatureMap, MaskSet};
use rand::Rng;

pub fn random_map(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> DenseFeatureMap {
    let data = (0..h * w * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    DenseFeatureMap::new(h, w, c, data).unwrap()
}

pub fn rect(h: usize, w: usize, r0: usize, r1: usize, c0: usize, c1: usize) -> Vec<bool> {
    (0..h * w)
        .map(|p| (r0..r1).contains(&(p / w)) && (c0..c1).contains(&(p % w)))
        .collect()
}

/// Random axis-aligned rectangles; they may overlap.
pub fn random_rects(rng: &mut impl Rng, h: usize, w: usize, k: usize) -> MaskSet {
    let masks = (0..k)
        .map(|_| {
            let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
            let (r1, c1) = (rng.random_range(r0 + 1..=h), rng.random_range(c0 + 1..=w));
            rect(h, w, r0, r1, c0, c1)
        })
        .collect();
    MaskSet::new(h, w, masks).unwrap()
}

/// Disjoint masks from a random labeling; label 0 is left uncovered.
pub fn random_disjoint(rng: &mut impl Rng, h: usize, w: usize, k: usize) -> MaskSet {
    loop {
        let labels: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..=k)).collect();
        let masks: Vec<Vec<bool>> = (1..=k)
            .map(|l| labels.iter().map(|&x| x == l).collect())
            .collect();
        if masks.iter().all(|m| m.contains(&true)) {
            return MaskSet::new(h, w, masks).unwrap();
        }
    }
}

/// Disjoint rectangular tiles on a grid, leaving one uncovered border row.
pub fn tiled_disjoint(h: usize, w: usize, rows: usize, cols: usize) -> MaskSet {
    let (th, tw) = ((h - 1) / rows, w / cols);
    let mut masks = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            masks.push(rect(h, w, r * th, (r + 1) * th, c * tw, (c + 1) * tw));
        }
    }
    MaskSet::new(h, w, masks).unwrap()
}
