//! Seeded two-class COCO-18 skeleton generator: falls and walking.
//!
//! A fall rotates the body about the ankles toward horizontal while the
//! root drops monotonically. A walk swings arms and legs sinusoidally with
//! a small vertical bob. Both get random placement, scale, speed and
//! per-joint noise, so the label is the only systematic difference.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::derive_seed;
use crate::skeleton::{
    format_sequence, normalize_clip, window_sequence, JointLayout, SkeletonClip, SkeletonFrame, SkeletonSequence,
};

pub const FALL: usize = 0;
pub const WALK: usize = 1;

pub fn class_names() -> Vec<String> {
    vec!["fall".to_string(), "walk".to_string()]
}

/// Standing COCO-18 pose, y up, ankles at the origin.
const STANDING: [[f64; 2]; 18] = [
    [0.0, 1.70],
    [0.0, 1.50],
    [-0.20, 1.50],
    [-0.25, 1.20],
    [-0.25, 0.95],
    [0.20, 1.50],
    [0.25, 1.20],
    [0.25, 0.95],
    [-0.10, 0.95],
    [-0.10, 0.50],
    [-0.10, 0.05],
    [0.10, 0.95],
    [0.10, 0.50],
    [0.10, 0.05],
    [-0.04, 1.75],
    [0.04, 1.75],
    [-0.08, 1.72],
    [0.08, 1.72],
];

const RIGHT_ARM: [usize; 2] = [3, 4];
const LEFT_ARM: [usize; 2] = [6, 7];
const RIGHT_LEG: [usize; 2] = [9, 10];
const LEFT_LEG: [usize; 2] = [12, 13];
const RIGHT_SHOULDER: usize = 2;
const LEFT_SHOULDER: usize = 5;
const RIGHT_HIP: usize = 8;
const LEFT_HIP: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub frames: usize,
    /// Standard deviation of per-joint coordinate noise, in body heights.
    pub noise: f64,
    /// Probability that a frame is marked as a failed pose extraction.
    pub invalid_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            frames: 16,
            noise: 0.02,
            invalid_rate: 0.0,
        }
    }
}

fn rotate(p: [f64; 2], pivot: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    let (dx, dy) = (p[0] - pivot[0], p[1] - pivot[1]);
    [pivot[0] + c * dx - s * dy, pivot[1] + s * dx + c * dy]
}

fn swing(pose: &mut [[f64; 2]; 18], chain: [usize; 2], pivot: usize, angle: f64) {
    let origin = pose[pivot];
    for j in chain {
        pose[j] = rotate(pose[j], origin, angle);
    }
}

fn fall_pose<R: Rng>(rng: &mut R, frames: usize) -> Vec<[[f64; 2]; 18]> {
    let direction = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let final_angle = rng.random_range(0.55..1.0) * FRAC_PI_2;
    let onset = rng.random_range(0.0..0.4);
    let drop = rng.random_range(0.05..0.3);
    let pivot = [0.0, 0.0];
    (0..frames)
        .map(|f| {
            let u = f as f64 / (frames - 1) as f64;
            let progress = ((u - onset) / (1.0 - onset)).clamp(0.0, 1.0);
            let eased = progress * progress * (3.0 - 2.0 * progress);
            let angle = direction * final_angle * eased;
            let mut pose = STANDING;
            for p in pose.iter_mut() {
                *p = rotate(*p, pivot, angle);
                p[1] -= drop * eased;
            }
            pose
        })
        .collect()
}

fn walk_pose<R: Rng>(rng: &mut R, frames: usize) -> Vec<[[f64; 2]; 18]> {
    let cycles = rng.random_range(0.7..1.6);
    let phase = rng.random_range(0.0..2.0 * PI);
    let amplitude = rng.random_range(0.25..0.5);
    let bob = rng.random_range(0.01..0.04);
    let speed = rng.random_range(-0.3..0.3);
    (0..frames)
        .map(|f| {
            let u = f as f64 / (frames - 1) as f64;
            let w = 2.0 * PI * cycles * u + phase;
            let a = amplitude * w.sin();
            let mut pose = STANDING;
            swing(&mut pose, RIGHT_LEG, RIGHT_HIP, a);
            swing(&mut pose, LEFT_LEG, LEFT_HIP, -a);
            swing(&mut pose, RIGHT_ARM, RIGHT_SHOULDER, -0.8 * a);
            swing(&mut pose, LEFT_ARM, LEFT_SHOULDER, 0.8 * a);
            let lift = bob * (2.0 * w).cos();
            for p in pose.iter_mut() {
                p[0] += speed * u;
                p[1] += lift;
            }
            pose
        })
        .collect()
}

/// One labelled sequence; identical `(seed, index)` always gives the same
/// sequence. Even indices are falls, odd indices walks.
pub fn generate_sequence(cfg: &SyntheticConfig, seed: u64, index: usize) -> SkeletonSequence {
    let label = if index.is_multiple_of(2) { FALL } else { WALK };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, index as u64]));
    let frames = cfg.frames.max(2);
    let poses = if label == FALL {
        fall_pose(&mut rng, frames)
    } else {
        walk_pose(&mut rng, frames)
    };
    let scale = rng.random_range(0.6..1.4);
    let offset = [rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.5)];
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite std");
    let frames = poses
        .into_iter()
        .map(|pose| {
            let mut coords = Vec::with_capacity(36);
            for p in pose {
                coords.push(scale * (p[0] + noise.sample(&mut rng)) + offset[0]);
                coords.push(scale * (p[1] + noise.sample(&mut rng)) + offset[1]);
            }
            if cfg.invalid_rate > 0.0 && rng.random_bool(cfg.invalid_rate.min(1.0)) {
                SkeletonFrame::invalid(18, 2)
            } else {
                SkeletonFrame::new(coords, 2)
            }
        })
        .collect();
    SkeletonSequence {
        id: format!("synthetic-{seed}-{index}"),
        label,
        layout: "coco18".to_string(),
        frames,
    }
}

/// `count` normalized clips of `cfg.frames` frames, balanced between the
/// two classes.
pub fn generate_clips(cfg: &SyntheticConfig, count: usize, seed: u64) -> Vec<SkeletonClip> {
    let layout = JointLayout::coco18();
    (0..count)
        .map(|i| {
            let seq = generate_sequence(
                &SyntheticConfig {
                    invalid_rate: 0.0,
                    ..*cfg
                },
                seed,
                i,
            );
            let clip = window_sequence(&seq, cfg.frames.max(2), cfg.frames.max(2))
                .expect("non-empty sequence")
                .remove(0);
            normalize_clip(&clip, &layout)
        })
        .collect()
}

/// Disjoint train and test sets drawn from independent seed streams.
pub fn train_test(
    cfg: &SyntheticConfig,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> (Vec<SkeletonClip>, Vec<SkeletonClip>) {
    (
        generate_clips(cfg, n_train, derive_seed(&[seed, 1])),
        generate_clips(cfg, n_test, derive_seed(&[seed, 2])),
    )
}

/// Writes `count` sequence files and a `manifest.csv` into `dir`.
pub fn write_dataset(dir: &Path, cfg: &SyntheticConfig, count: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names = class_names();
    let mut manifest = String::from("path,label,id\n");
    for i in 0..count {
        let seq = generate_sequence(cfg, seed, i);
        let file = format!("{}.json", seq.id);
        let path = dir.join(&file);
        fs::write(&path, format_sequence(&seq, &names)).map_err(|e| Error::io(&path, e))?;
        manifest.push_str(&format!("{file},{},{}\n", names[seq.label], seq.id));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}
