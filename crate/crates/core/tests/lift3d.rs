use std::collections::HashMap;

use nalgebra::{Rotation3, Unit, Vector3};
use plaf_core::lift3d::{back_project, build_map, fuse_descriptor, project, Fused};
use plaf_core::{CameraFrame, FeaturePool, FusionConfig, Intrinsics, MapBuilder, MaskIndexedFrame, Pose};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn intrinsics() -> Intrinsics {
    Intrinsics { fx: 60.0, fy: 55.0, cx: 15.5, cy: 11.0 }
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0));
    let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), rng.random_range(-3.0..3.0));
    let t = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    Pose::new(*rot.matrix(), t).unwrap()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Descriptors scattered around a few cluster centers.
fn clustered(rng: &mut impl Rng, n: usize, dim: usize, centers: usize, spread: f64) -> Vec<Vec<f32>> {
    let c: Vec<Vec<f64>> = (0..centers)
        .map(|_| unit(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
        .collect();
    (0..n)
        .map(|_| {
            let base = &c[rng.random_range(0..centers)];
            base.iter()
                .map(|x| (x + spread * rng.random_range(-1.0..1.0)) as f32)
                .collect()
        })
        .collect()
}

/// Plain sequential greedy clustering over normalized observations.
struct GreedyOracle {
    entries: Vec<Vec<f64>>,
    counts: Vec<u32>,
}

impl GreedyOracle {
    fn new() -> Self {
        GreedyOracle { entries: Vec::new(), counts: Vec::new() }
    }

    fn observe(&mut self, raw: &[f32], tau: f64) -> usize {
        let u = unit(&raw.iter().map(|&x| f64::from(x)).collect::<Vec<_>>());
        let mut best: Option<(usize, f64)> = None;
        for (m, e) in self.entries.iter().enumerate() {
            let s: f64 = e.iter().zip(&u).map(|(a, b)| a * b).sum();
            if best.is_none() || s > best.unwrap().1 {
                best = Some((m, s));
            }
        }
        match best {
            Some((m, s)) if s >= tau => {
                let n = f64::from(self.counts[m]);
                let mean: Vec<f64> = self.entries[m].iter().zip(&u).map(|(a, b)| (n * a + b) / (n + 1.0)).collect();
                self.entries[m] = unit(&mean);
                self.counts[m] += 1;
                m
            }
            _ => {
                self.entries.push(u);
                self.counts.push(1);
                self.entries.len() - 1
            }
        }
    }
}

/// A frame whose index map references every one of its `table.len() / dim` masks.
fn random_frame(rng: &mut impl Rng, h: usize, w: usize, dim: usize, table: Vec<Vec<f32>>) -> MaskIndexedFrame {
    let k = table.len();
    let mut index: Vec<u16> = (0..h * w).map(|_| rng.random_range(0..=k as u16)).collect();
    for id in 1..=k {
        index[id - 1] = id as u16;
    }
    MaskIndexedFrame::new(h, w, dim, index, table.concat()).unwrap()
}

fn random_camera(rng: &mut impl Rng, h: usize, w: usize) -> CameraFrame {
    let depth = (0..h * w)
        .map(|_| if rng.random_bool(0.05) { 0.0 } else { rng.random_range(0.3f32..4.0) })
        .collect();
    CameraFrame::new(h, w, depth, intrinsics(), random_pose(rng)).unwrap()
}

#[test]
fn fusion_matches_greedy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let obs = clustered(&mut rng, 20, 8, 4, 0.15);
    let mut pool = FeaturePool::empty(8);
    let mut oracle = GreedyOracle::new();
    for o in &obs {
        let u: Vec<f32> = unit(&o.iter().map(|&x| f64::from(x)).collect::<Vec<_>>()).iter().map(|&x| x as f32).collect();
        let got = fuse_descriptor(&mut pool, &u, 0.95).unwrap();
        assert_eq!(got.index(), oracle.observe(o, 0.95));
    }
    assert_eq!(pool.len(), oracle.entries.len());
    assert!(pool.len() < 20, "clusters should merge");
    for m in 0..pool.len() {
        assert_eq!(pool.count(m), oracle.counts[m]);
        for (a, b) in pool.descriptor(m).iter().zip(&oracle.entries[m]) {
            assert!((f64::from(*a) - b).abs() < 1e-5);
        }
    }
}

#[test]
fn identical_observation_leaves_entry_unchanged() {
    let mut pool = FeaturePool::empty(3);
    let u = [0.6f32, 0.0, 0.8];
    assert_eq!(fuse_descriptor(&mut pool, &u, 0.9).unwrap(), Fused::Inserted(0));
    let before = pool.descriptor(0).to_vec();
    assert_eq!(fuse_descriptor(&mut pool, &u, 0.9).unwrap(), Fused::Merged(0));
    assert_eq!(pool.descriptor(0), &before[..]);
    assert_eq!(pool.count(0), 2);
}

/// Full map oracle: greedy pool plus last-write-wins voxel dedup in pixel order.
fn map_oracle(
    frames: &[(MaskIndexedFrame, CameraFrame)],
    cfg: FusionConfig,
) -> (GreedyOracle, Vec<[f64; 3]>, Vec<u32>) {
    let mut pool = GreedyOracle::new();
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let (mut pos, mut refs) = (Vec::new(), Vec::new());
    for (frame, cam) in frames {
        let k = frame.mask_count();
        let mut map_ref = vec![0u32];
        for id in 1..=k {
            map_ref.push(pool.observe(frame.feature(id as u16), cfg.similarity_threshold) as u32);
        }
        let k_in = cam.intrinsics();
        for v in (0..frame.height()).step_by(cfg.pixel_stride) {
            for u in (0..frame.width()).step_by(cfg.pixel_stride) {
                let id = frame.index_map()[v * frame.width() + u];
                let d = f64::from(cam.depth_at(u, v));
                if id == 0 || d.is_nan() || d <= 0.0 {
                    continue;
                }
                let cam_p = Vector3::new(
                    (u as f64 + 0.5 - k_in.cx) * d / k_in.fx,
                    (v as f64 + 0.5 - k_in.cy) * d / k_in.fy,
                    d,
                );
                let w = cam.pose().rotation() * cam_p + cam.pose().translation();
                let key = [0, 1, 2].map(|i| (w[i] / cfg.voxel_size).floor() as i64);
                let r = map_ref[usize::from(id)];
                match slots.get(&key) {
                    Some(&i) => {
                        pos[i] = [w.x, w.y, w.z];
                        refs[i] = r;
                    }
                    None => {
                        slots.insert(key, pos.len());
                        pos.push([w.x, w.y, w.z]);
                        refs.push(r);
                    }
                }
            }
        }
    }
    (pool, pos, refs)
}

#[test]
fn build_map_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = FusionConfig { similarity_threshold: 0.9, voxel_size: 0.05, pixel_stride: 2 };
    let frames: Vec<_> = (0..40)
        .map(|_| {
            let k = rng.random_range(0..6);
            let table = clustered(&mut rng, k, 6, 5, 0.1);
            (random_frame(&mut rng, 24, 32, 6, table), random_camera(&mut rng, 24, 32))
        })
        .collect();
    let (pool, cloud, report) = build_map(&frames, cfg).unwrap();
    let (oracle, pos, refs) = map_oracle(&frames, cfg);
    assert_eq!(pool.len(), oracle.entries.len());
    assert_eq!(pool.counts(), &oracle.counts[..]);
    for m in 0..pool.len() {
        for (a, b) in pool.descriptor(m).iter().zip(&oracle.entries[m]) {
            assert!((f64::from(*a) - b).abs() < 1e-5);
        }
    }
    assert_eq!(cloud.refs(), &refs[..]);
    for (a, b) in cloud.positions().iter().zip(&pos) {
        for i in 0..3 {
            assert!((f64::from(a[i]) - b[i]).abs() < 1e-5);
        }
    }
    assert_eq!(report.points, cloud.len());
    assert_eq!(report.masks_ingested, frames.iter().map(|f| f.0.mask_count()).sum::<usize>());
}

#[test]
fn unit_threshold_keeps_every_generic_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = FusionConfig { similarity_threshold: 1.0, ..Default::default() };
    let frames: Vec<_> = (0..10)
        .map(|_| {
            let table = clustered(&mut rng, 4, 16, 2, 0.3);
            (random_frame(&mut rng, 8, 8, 16, table), random_camera(&mut rng, 8, 8))
        })
        .collect();
    let (pool, _, _) = build_map(&frames, cfg).unwrap();
    assert_eq!(pool.len(), 40);
}

#[test]
fn disjoint_single_frame_refs_own_entries() {
    let cam = CameraFrame::new(4, 6, vec![1.0; 24], intrinsics(), Pose::identity()).unwrap();
    let index: Vec<u16> = (0..24).map(|p| ((p % 6) / 2 + 1) as u16).collect();
    let table = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let frame = MaskIndexedFrame::new(4, 6, 3, index, table).unwrap();
    let cfg = FusionConfig { similarity_threshold: 1.0, voxel_size: 1e-4, pixel_stride: 1 };
    let (pool, cloud, _) = build_map(&[(frame.clone(), cam)], cfg).unwrap();
    assert_eq!(pool.len(), 3);
    assert_eq!(cloud.len(), 24);
    for (p, &r) in cloud.refs().iter().enumerate() {
        assert_eq!(r + 1, u32::from(frame.index_map()[p]));
    }
}

#[test]
fn maskless_frames_yield_empty_map() {
    let cam = CameraFrame::new(3, 3, vec![1.0; 9], intrinsics(), Pose::identity()).unwrap();
    let frame = MaskIndexedFrame::new(3, 3, 4, vec![0; 9], Vec::new()).unwrap();
    let (pool, cloud, _) = build_map(&[(frame.clone(), cam.clone()), (frame, cam)], FusionConfig::default()).unwrap();
    assert!(pool.is_empty());
    assert!(cloud.is_empty());
}

#[test]
fn observing_a_frame_twice_only_raises_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let table = clustered(&mut rng, 5, 8, 5, 0.0);
    let frame = random_frame(&mut rng, 16, 16, 8, table);
    let cam = random_camera(&mut rng, 16, 16);
    let cfg = FusionConfig { similarity_threshold: 0.99, voxel_size: 0.01, pixel_stride: 1 };
    let mut b = MapBuilder::new(8, cfg).unwrap();
    b.fuse_frame(&frame, &cam).unwrap();
    let (pool1, cloud1) = (b.pool().clone(), b.cloud().clone());
    let second = b.fuse_frame(&frame, &cam).unwrap();
    assert_eq!(second.new_entries, 0);
    assert_eq!(second.points_added, 0);
    assert_eq!(b.pool().len(), pool1.len());
    assert_eq!(b.pool().descriptors(), pool1.descriptors());
    assert!(b.pool().counts().iter().zip(pool1.counts()).all(|(a, c)| *a == 2 * c));
    assert_eq!(b.cloud(), &cloud1);
}

#[test]
fn map_is_independent_of_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let frames: Vec<_> = (0..20)
        .map(|_| {
            let table = clustered(&mut rng, 6, 12, 3, 0.1);
            (random_frame(&mut rng, 30, 40, 12, table), random_camera(&mut rng, 30, 40))
        })
        .collect();
    let cfg = FusionConfig { pixel_stride: 1, ..Default::default() };
    let parallel = build_map(&frames, cfg).unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| build_map(&frames, cfg).unwrap());
    assert_eq!(parallel.0, single.0);
    assert_eq!(parallel.1, single.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pool_stays_unit_norm(seed in any::<u64>(), tau in 0.0f64..1.0, n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = FeaturePool::empty(5);
        for o in clustered(&mut rng, n, 5, 3, 0.5) {
            let u: Vec<f32> = unit(&o.iter().map(|&x| f64::from(x)).collect::<Vec<_>>()).iter().map(|&x| x as f32).collect();
            fuse_descriptor(&mut pool, &u, tau).unwrap();
        }
        prop_assert!(pool.validate().is_empty());
        for m in 0..pool.len() {
            let n: f64 = pool.descriptor(m).iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn one_point_per_voxel(seed in any::<u64>(), voxel in 0.01f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = FusionConfig { similarity_threshold: 0.9, voxel_size: voxel, pixel_stride: 1 };
        let frames: Vec<_> = (0..3)
            .map(|_| {
                let table = clustered(&mut rng, 3, 4, 3, 0.1);
                (random_frame(&mut rng, 12, 12, 4, table), random_camera(&mut rng, 12, 12))
            })
            .collect();
        let (pool, cloud, _) = build_map(&frames, cfg).unwrap();
        let (_, pos, _) = map_oracle(&frames, cfg);
        prop_assert_eq!(cloud.len(), pos.len());
        prop_assert!(cloud.validate(pool.len()).is_empty());
    }

    #[test]
    fn back_projection_round_trips(
        seed in any::<u64>(),
        u in 0usize..32,
        v in 0usize..24,
        d in 0.1f32..20.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut depth = vec![0.0; 32 * 24];
        depth[v * 32 + u] = d;
        let cam = CameraFrame::new(24, 32, depth, intrinsics(), random_pose(&mut rng)).unwrap();
        let mut index = vec![0u16; 32 * 24];
        index[v * 32 + u] = 1;
        let bp = back_project(&cam, &index, 1).unwrap();
        prop_assert_eq!(bp.points.len(), 1);
        prop_assert_eq!(bp.skipped_invalid_depth, 0);
        let (x, y) = project(&cam, &bp.points[0].position).unwrap();
        prop_assert!((x - (u as f64 + 0.5)).abs() < 1e-4);
        prop_assert!((y - (v as f64 + 0.5)).abs() < 1e-4);
    }
}
