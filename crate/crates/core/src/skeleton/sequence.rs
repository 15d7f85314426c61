use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layout::JointLayout;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Joint coordinates of one video frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonFrame {
    /// `joint_count × dims`, joint-major.
    pub coords: Vec<f64>,
    pub dims: usize,
    /// False when pose extraction failed on this frame.
    pub valid: bool,
}

impl SkeletonFrame {
    pub fn new(coords: Vec<f64>, dims: usize) -> Self {
        SkeletonFrame {
            coords,
            dims,
            valid: true,
        }
    }

    pub fn invalid(joint_count: usize, dims: usize) -> Self {
        SkeletonFrame {
            coords: vec![0.0; joint_count * dims],
            dims,
            valid: false,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len() / self.dims
    }

    pub fn joint(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dims..(j + 1) * self.dims]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub label: usize,
    pub layout: String,
    pub frames: Vec<SkeletonFrame>,
}

/// Fixed-length model input: `data` is `[dims, T, joint_count]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonClip {
    pub data: Tensor,
    pub label: usize,
}

impl SkeletonClip {
    pub fn dims(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Keeps only frames where pose extraction succeeded.
pub fn drop_invalid_frames(mut seq: SkeletonSequence) -> SkeletonSequence {
    seq.frames.retain(|f| f.valid);
    seq
}

/// Cuts a sequence into clips of `clip_len` frames starting at
/// `0, stride, 2·stride, …`. A sequence shorter than `clip_len` yields one
/// clip padded by repeating its last frame.
pub fn window_sequence(seq: &SkeletonSequence, clip_len: usize, stride: usize) -> Result<Vec<SkeletonClip>> {
    if clip_len < 2 {
        return Err(Error::invalid(format!("clip length {clip_len} < 2")));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let Some(first) = seq.frames.first() else {
        return Err(Error::invalid(format!("sequence `{}` has no frames", seq.id)));
    };
    let (dims, joints) = (first.dims, first.joint_count());
    if seq.frames.iter().any(|f| f.dims != dims || f.joint_count() != joints) {
        return Err(Error::invalid(format!("sequence `{}` mixes frame shapes", seq.id)));
    }
    let len = seq.frames.len();
    let starts: Vec<usize> = if len < clip_len {
        vec![0]
    } else {
        (0..=(len - clip_len)).step_by(stride).collect()
    };
    let clips = starts
        .into_iter()
        .map(|start| {
            let mut data = vec![0.0; dims * clip_len * joints];
            for t in 0..clip_len {
                let frame = &seq.frames[(start + t).min(len - 1)];
                for j in 0..joints {
                    for d in 0..dims {
                        data[d * clip_len * joints + t * joints + j] = frame.coords[j * dims + d];
                    }
                }
            }
            SkeletonClip {
                data: Tensor::new(vec![dims, clip_len, joints], data).expect("sized above"),
                label: seq.label,
            }
        })
        .collect();
    Ok(clips)
}

/// Below this root distance a frame is centered but not rescaled.
pub const MIN_SCALE: f64 = 1e-8;

/// Per frame: translate so the root joint is at the origin, then divide by
/// the largest joint-to-root distance.
pub fn normalize_clip(clip: &SkeletonClip, layout: &JointLayout) -> SkeletonClip {
    let (dims, t, v) = (clip.dims(), clip.frames(), clip.joints());
    let root = layout.root_joint;
    let mut data = clip.data.data().to_vec();
    let at = |d: usize, f: usize, j: usize| d * t * v + f * v + j;
    for f in 0..t {
        let origin: Vec<f64> = (0..dims).map(|d| data[at(d, f, root)]).collect();
        let mut max_dist: f64 = 0.0;
        for j in 0..v {
            let mut sq = 0.0;
            for d in 0..dims {
                let x = data[at(d, f, j)] - origin[d];
                data[at(d, f, j)] = x;
                sq += x * x;
            }
            max_dist = max_dist.max(sq.sqrt());
        }
        if max_dist >= MIN_SCALE {
            for j in 0..v {
                for d in 0..dims {
                    data[at(d, f, j)] /= max_dist;
                }
            }
        }
    }
    SkeletonClip {
        data: Tensor::new(clip.data.shape().to_vec(), data).expect("same shape"),
        label: clip.label,
    }
}

/// Stratified, seeded train/test split. Each class contributes
/// `round(train_fraction · n)` clips to train, clamped so both sides get at
/// least one clip.
pub fn split_dataset(
    clips: Vec<SkeletonClip>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<SkeletonClip>, Vec<SkeletonClip>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<SkeletonClip>> = BTreeMap::new();
    for clip in clips {
        by_class.entry(clip.label).or_default().push(clip);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (label, mut members) in by_class {
        let n = members.len();
        if n < 2 {
            return Err(Error::SingletonClass(format!("class {label}")));
        }
        members.shuffle(&mut rng);
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let rest = members.split_off(n_train);
        train.extend(members);
        test.extend(rest);
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn seq_of(len: usize, joints: usize) -> SkeletonSequence {
        SkeletonSequence {
            id: "s".into(),
            label: 1,
            layout: "test".into(),
            frames: (0..len)
                .map(|t| SkeletonFrame::new((0..joints * 2).map(|i| (t * 100 + i) as f64).collect(), 2))
                .collect(),
        }
    }

    #[test]
    fn drops_invalid_frames_in_order() {
        let mut seq = seq_of(10, 3);
        for i in [1, 4, 8] {
            seq.frames[i].valid = false;
        }
        let kept = drop_invalid_frames(seq.clone());
        assert_eq!(kept.frames.len(), 7);
        let expected: Vec<_> = seq.frames.iter().filter(|f| f.valid).cloned().collect();
        assert_eq!(kept.frames, expected);
        assert_eq!(drop_invalid_frames(seq_of(5, 3)), seq_of(5, 3));
    }

    #[test]
    fn table_two_row_counts() {
        // ImViA: 42,066 extracted frames, 1,435 failed.
        let mut seq = SkeletonSequence {
            id: "imvia".into(),
            label: 0,
            layout: "coco18".into(),
            frames: vec![SkeletonFrame::new(vec![0.0; 36], 2); 42_066],
        };
        for f in seq.frames.iter_mut().step_by(29).take(1_435) {
            f.valid = false;
        }
        assert_eq!(drop_invalid_frames(seq).frames.len(), 40_631);
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_sequence(&seq_of(100, 3), 64, 32).unwrap().len(), 2);
        assert_eq!(window_sequence(&seq_of(64, 3), 64, 32).unwrap().len(), 1);
        let clips = window_sequence(&seq_of(100, 3), 64, 32).unwrap();
        // second clip starts at frame 32
        assert_eq!(clips[1].data.at(&[0, 0, 0]), 3200.0);
    }

    #[test]
    fn short_sequence_pads_with_last_frame() {
        let clips = window_sequence(&seq_of(10, 3), 64, 32).unwrap();
        assert_eq!(clips.len(), 1);
        let c = &clips[0];
        for t in 10..64 {
            for j in 0..3 {
                for d in 0..2 {
                    assert_eq!(c.data.at(&[d, t, j]), c.data.at(&[d, 9, j]));
                }
            }
        }
        assert_eq!(c.data.at(&[1, 9, 2]), 905.0);
        assert_eq!(c.label, 1);
    }

    #[test]
    fn window_errors() {
        assert!(window_sequence(&seq_of(0, 3), 64, 32).is_err());
        assert!(window_sequence(&seq_of(10, 3), 1, 1).is_err());
        assert!(window_sequence(&seq_of(10, 3), 4, 0).is_err());
    }

    fn two_joint_layout() -> JointLayout {
        JointLayout::new("pair", 2, vec![(0, 1)], 0).unwrap()
    }

    #[test]
    fn normalize_centers_and_scales() {
        let clip = SkeletonClip {
            data: Tensor::new(vec![2, 2, 2], vec![5.0, 6.0, 1.0, 1.0, 5.0, 5.0, 1.0, 1.0]).unwrap(),
            label: 0,
        };
        let n = normalize_clip(&clip, &two_joint_layout());
        // frame 0: root (5,5), joint (6,5) -> (0,0), (1,0)
        assert_eq!(n.data.at(&[0, 0, 0]), 0.0);
        assert_eq!(n.data.at(&[1, 0, 0]), 0.0);
        assert_eq!(n.data.at(&[0, 0, 1]), 1.0);
        assert_eq!(n.data.at(&[1, 0, 1]), 0.0);
        // frame 1: coincident joints -> zeros
        for d in 0..2 {
            for j in 0..2 {
                assert_eq!(n.data.at(&[d, 1, j]), 0.0);
            }
        }
    }

    #[test]
    fn split_fifty_fifty() {
        let clips: Vec<_> = (0..100)
            .map(|i| SkeletonClip {
                data: Tensor::scalar(i as f64),
                label: i % 2,
            })
            .collect();
        let (train, test) = split_dataset(clips.clone(), 0.9, 7).unwrap();
        assert_eq!((train.len(), test.len()), (90, 10));
        assert_eq!(train.iter().filter(|c| c.label == 0).count(), 45);
        assert_eq!(test.iter().filter(|c| c.label == 1).count(), 5);
        let (train2, test2) = split_dataset(clips, 0.9, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_six_classes() {
        let clips: Vec<_> = (0..6 * 20)
            .map(|i| SkeletonClip {
                data: Tensor::scalar(i as f64),
                label: i % 6,
            })
            .collect();
        let (train, test) = split_dataset(clips, 0.9, 1).unwrap();
        for c in 0..6 {
            assert_eq!(train.iter().filter(|x| x.label == c).count(), 18);
            assert_eq!(test.iter().filter(|x| x.label == c).count(), 2);
        }
    }

    #[test]
    fn split_singleton_class_errors() {
        let clips = vec![
            SkeletonClip {
                data: Tensor::scalar(0.0),
                label: 0,
            },
            SkeletonClip {
                data: Tensor::scalar(1.0),
                label: 0,
            },
            SkeletonClip {
                data: Tensor::scalar(2.0),
                label: 3,
            },
        ];
        let err = split_dataset(clips, 0.9, 0).unwrap_err();
        assert!(err.to_string().contains("class 3"), "{err}");
    }

    proptest! {
        #[test]
        fn window_count_formula(len in 1usize..200, clip_len in 2usize..80, stride in 1usize..50) {
            let clips = window_sequence(&seq_of(len, 2), clip_len, stride).unwrap();
            let expected = if len >= clip_len { (len - clip_len) / stride + 1 } else { 1 };
            prop_assert_eq!(clips.len(), expected);
            for c in &clips {
                prop_assert_eq!(c.frames(), clip_len);
                prop_assert_eq!(c.joints(), 2);
                prop_assert_eq!(c.label, 1);
            }
        }

        #[test]
        fn normalize_is_idempotent(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layout = JointLayout::coco18();
            let data: Vec<f64> = (0..2 * 4 * 18).map(|_| rng.random_range(-500.0..500.0)).collect();
            let clip = SkeletonClip { data: Tensor::new(vec![2, 4, 18], data).unwrap(), label: 0 };
            let once = normalize_clip(&clip, &layout);
            let twice = normalize_clip(&once, &layout);
            prop_assert!(once.data.max_abs_diff(&twice.data) <= 1e-12);
            prop_assert!(once.data.all_finite());
        }

        #[test]
        fn split_partitions(n0 in 2usize..30, n1 in 2usize..30, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let clips: Vec<_> = (0..n0 + n1)
                .map(|i| SkeletonClip { data: Tensor::scalar(i as f64), label: usize::from(i >= n0) })
                .collect();
            let (train, test) = split_dataset(clips, frac, seed).unwrap();
            let mut ids: Vec<i64> = train.iter().chain(&test).map(|c| c.data.data()[0] as i64).collect();
            ids.sort();
            prop_assert_eq!(ids, (0..(n0 + n1) as i64).collect::<Vec<_>>());
            for label in 0..2 {
                prop_assert!(train.iter().any(|c| c.label == label));
                prop_assert!(test.iter().any(|c| c.label == label));
            }
        }
    }
}
