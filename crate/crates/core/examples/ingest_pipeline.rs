//! Writes a small synthetic dataset to disk, then runs the ingest steps by
//! hand: load, drop failed frames, window, normalize, archive.
//!
//! cargo run --example ingest_pipeline -- [output dir]

use std::path::PathBuf;

use skelfall::archive::ClipArchive;
use skelfall::skeleton::{
    drop_invalid_frames, load_sequences, normalize_clip, window_sequence, DatasetManifest, JointLayout,
};
use skelfall::synthetic::{write_dataset, SyntheticConfig};

fn main() -> skelfall::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("skelfall-ingest"));
    let data = SyntheticConfig {
        frames: 48,
        invalid_rate: 0.05,
        ..Default::default()
    };
    write_dataset(&out.join("raw"), &data, 10, 7)?;

    let layout = JointLayout::coco18();
    let manifest = DatasetManifest::load(&out.join("raw/manifest.csv"), layout.name.clone())?;
    let mut clips = Vec::new();
    for seq in load_sequences(&manifest, &layout)? {
        let before = seq.frames.len();
        let seq = drop_invalid_frames(seq);
        let windows = window_sequence(&seq, 16, 8)?;
        println!(
            "{:<10} {:<5} frames {before:>3} kept {:>3} clips {}",
            seq.id,
            manifest.class_names[seq.label],
            seq.frames.len(),
            windows.len()
        );
        clips.extend(windows.iter().map(|c| normalize_clip(c, &layout)));
    }
    let archive = ClipArchive::new(layout.name.clone(), manifest.class_names.clone(), &clips)?;
    let path = out.join("clips.json");
    archive.save(&path)?;
    println!("{} clips -> {}", archive.len(), path.display());
    Ok(())
}
