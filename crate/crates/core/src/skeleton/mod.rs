//! Skeleton ingestion: layouts, sequence files, windowing, normalization
//! and dataset splits.

mod io;
mod layout;
mod sequence;

pub use io::{format_sequence, load_sequences, parse_sequence, DatasetManifest, ManifestEntry};
pub(crate) use layout::check_edges;
pub use layout::JointLayout;
pub use sequence::{
    drop_invalid_frames, normalize_clip, split_dataset, window_sequence, SkeletonClip, SkeletonFrame, SkeletonSequence,
    MIN_SCALE,
};
