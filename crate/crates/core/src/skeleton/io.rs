//! Sequence files and dataset manifests.
//!
//! A sequence file holds one JSON object:
//!
//! ```json
//! {
//!   "id": "subject01-trial03",
//!   "label": "fall",
//!   "frames": [
//!     [[312.0, 140.5], [310.2, 180.0], ...],
//!     {"valid": false},
//!     {"joints": [[311.0, 141.0], ...], "valid": true}
//!   ]
//! }
//! ```
//!
//! Each frame is either a bare array of joint coordinates (`[x, y]` or
//! `[x, y, z]`, in layout order) or an object with `joints` and an optional
//! `valid` flag (default `true`). A frame marked invalid may omit `joints`.
//!
//! A manifest is CSV with a header row naming the columns `path`, `label`
//! and `id`. Relative paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::layout::JointLayout;
use super::sequence::{SkeletonFrame, SkeletonSequence};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub layout: String,
    /// Sorted; a class index is a position in this list.
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn empty(layout: impl Into<String>) -> Self {
        DatasetManifest {
            entries: Vec::new(),
            layout: layout.into(),
            class_names: Vec::new(),
        }
    }

    pub fn load(path: &Path, layout: impl Into<String>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base, layout.into())
    }

    fn parse(text: &str, path: &Path, base: &Path, layout: String) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| parse_err(1, format!("header is missing column `{name}`")))
        };
        let (pc, lc, ic) = (column("path")?, column("label")?, column("id")?);

        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let field = |i: usize| record.get(i).unwrap_or("").to_string();
            let (p, l, id) = (field(pc), field(lc), field(ic));
            if p.is_empty() || l.is_empty() {
                return Err(parse_err(line, "empty path or label".into()));
            }
            rows.push((base.join(p), l, id));
        }
        let class_names: Vec<String> = rows
            .iter()
            .map(|r| r.1.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let entries = rows
            .into_iter()
            .map(|(path, label, id)| ManifestEntry {
                label: class_names.binary_search(&label).expect("collected above"),
                path,
                id,
            })
            .collect();
        Ok(DatasetManifest {
            entries,
            layout,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord<'a> {
    id: String,
    label: String,
    #[serde(borrow)]
    frames: Vec<&'a RawValue>,
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum RawFrame {
    Joints(Vec<Vec<f64>>),
    Tagged {
        #[serde(default)]
        joints: Vec<Vec<f64>>,
        #[serde(default = "yes")]
        valid: bool,
    },
}

fn yes() -> bool {
    true
}

fn line_of(source: &str, fragment: &str) -> usize {
    let offset = fragment.as_ptr() as usize - source.as_ptr() as usize;
    source[..offset].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses one sequence file. `label` is resolved against `class_names`.
pub fn parse_sequence(
    text: &str,
    path: &Path,
    layout: &JointLayout,
    class_names: &[String],
) -> Result<SkeletonSequence> {
    let record: RawRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let label = class_names
        .iter()
        .position(|c| *c == record.label)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("label `{}` is not one of {class_names:?}", record.label),
        })?;

    let mut frames = Vec::with_capacity(record.frames.len());
    let mut dims = None;
    for (index, raw) in record.frames.iter().enumerate() {
        let line = line_of(text, raw.get());
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let frame: RawFrame = serde_json::from_str(raw.get()).map_err(|e| parse_err(format!("frame {index}: {e}")))?;
        let (joints, valid) = match frame {
            RawFrame::Joints(j) => (j, true),
            RawFrame::Tagged { joints, valid } => (joints, valid),
        };
        if !valid && joints.is_empty() {
            frames.push(None);
            continue;
        }
        if joints.len() != layout.joint_count {
            return Err(Error::JointCount {
                path: path.to_path_buf(),
                line,
                frame: index,
                expected: layout.joint_count,
                found: joints.len(),
            });
        }
        let d = joints[0].len();
        if !(d == 2 || d == 3) || joints.iter().any(|j| j.len() != d) {
            return Err(parse_err(format!(
                "frame {index}: joints must all be [x, y] or [x, y, z]"
            )));
        }
        if *dims.get_or_insert(d) != d {
            return Err(parse_err(format!(
                "frame {index}: {d}-D joints in a {}-D sequence",
                dims.unwrap()
            )));
        }
        let coords: Vec<f64> = joints.into_iter().flatten().collect();
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(parse_err(format!("frame {index}: non-finite coordinate")));
        }
        frames.push(Some(SkeletonFrame { coords, dims: d, valid }));
    }
    let dims = dims.unwrap_or(2);
    let frames = frames
        .into_iter()
        .map(|f| f.unwrap_or_else(|| SkeletonFrame::invalid(layout.joint_count, dims)))
        .collect();
    Ok(SkeletonSequence {
        id: record.id,
        label,
        layout: layout.name.clone(),
        frames,
    })
}

/// Renders a sequence in the file format, one frame per line.
pub fn format_sequence(seq: &SkeletonSequence, class_names: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{{");
    let _ = writeln!(out, "  \"id\": {},", serde_json::to_string(&seq.id).unwrap());
    let _ = writeln!(
        out,
        "  \"label\": {},",
        serde_json::to_string(&class_names[seq.label]).unwrap()
    );
    let _ = writeln!(out, "  \"frames\": [");
    for (i, f) in seq.frames.iter().enumerate() {
        let joints: Vec<Vec<f64>> = f.coords.chunks(f.dims).map(<[f64]>::to_vec).collect();
        let frame = if f.valid {
            RawFrame::Joints(joints)
        } else {
            RawFrame::Tagged { joints, valid: false }
        };
        let sep = if i + 1 == seq.frames.len() { "" } else { "," };
        let _ = writeln!(out, "    {}{sep}", serde_json::to_string(&frame).unwrap());
    }
    let _ = writeln!(out, "  ]");
    let _ = writeln!(out, "}}");
    out
}

/// Loads every manifest entry, in manifest order.
pub fn load_sequences(manifest: &DatasetManifest, layout: &JointLayout) -> Result<Vec<SkeletonSequence>> {
    manifest
        .entries
        .iter()
        .map(|entry| {
            let text = std::fs::read_to_string(&entry.path).map_err(|e| Error::io(&entry.path, e))?;
            let seq = parse_sequence(&text, &entry.path, layout, &manifest.class_names)?;
            if seq.label != entry.label {
                return Err(Error::Parse {
                    path: entry.path.clone(),
                    line: 1,
                    message: format!(
                        "file label `{}` disagrees with manifest label `{}`",
                        manifest.class_names[seq.label], manifest.class_names[entry.label]
                    ),
                });
            }
            Ok(SkeletonSequence {
                id: if entry.id.is_empty() { seq.id } else { entry.id.clone() },
                ..seq
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> JointLayout {
        JointLayout::new("chain3", 3, vec![(0, 1), (1, 2)], 1).unwrap()
    }

    fn classes() -> Vec<String> {
        vec!["fall".into(), "walk".into()]
    }

    #[test]
    fn parses_bare_and_tagged_frames() {
        let text = r#"{"id": "a", "label": "walk", "frames": [
            [[0,0],[1,1],[2,2]],
            {"valid": false},
            {"joints": [[3,3],[4,4],[5,5]]}
        ]}"#;
        let seq = parse_sequence(text, Path::new("a.json"), &chain(), &classes()).unwrap();
        assert_eq!(seq.label, 1);
        assert_eq!(seq.frames.len(), 3);
        assert!(!seq.frames[1].valid);
        assert_eq!(seq.frames[1].coords.len(), 6);
        assert_eq!(seq.frames[2].joint(1), &[4.0, 4.0]);
    }

    #[test]
    fn joint_count_error_names_frame_and_line() {
        let text = "{\"id\": \"a\", \"label\": \"fall\", \"frames\": [\n[[0,0],[1,1],[2,2]],\n[[0,0],[1,1]]\n]}";
        let err = parse_sequence(text, Path::new("bad.json"), &chain(), &classes()).unwrap_err();
        match err {
            Error::JointCount {
                line,
                frame,
                expected,
                found,
                ..
            } => {
                assert_eq!((line, frame, expected, found), (3, 1, 3, 2));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = "{\"id\": \"a\",\n\"label\": \"fall\",\n\"frames\": [[[0,0]],,]}";
        let err = parse_sequence(text, Path::new("x.json"), &chain(), &classes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn round_trip() {
        let text = r#"{"id": "a", "label": "walk", "frames": [
            [[0.1,0.25,1.0],[1,1,1],[2,2,2]],
            {"joints": [[3,3,3],[4,4,4],[5,5,5]], "valid": false}
        ]}"#;
        let seq = parse_sequence(text, Path::new("a.json"), &chain(), &classes()).unwrap();
        let again = parse_sequence(
            &format_sequence(&seq, &classes()),
            Path::new("b.json"),
            &chain(),
            &classes(),
        )
        .unwrap();
        assert_eq!(seq, again);
    }

    #[test]
    fn manifest_parsing() {
        let m = DatasetManifest::parse(
            "path,label,id\na.json,walk,1\nb.json,fall,2\n",
            Path::new("m.csv"),
            Path::new("/data"),
            "chain3".into(),
        )
        .unwrap();
        assert_eq!(m.class_names, classes());
        assert_eq!(m.entries[0].label, 1);
        assert_eq!(m.entries[1].path, PathBuf::from("/data/b.json"));
        let missing = DatasetManifest::parse("path,label\na,b\n", Path::new("m.csv"), Path::new("."), "x".into());
        assert!(missing.is_err());
    }

    #[test]
    fn empty_manifest_loads_nothing() {
        let m = DatasetManifest::empty("chain3");
        assert!(load_sequences(&m, &chain()).unwrap().is_empty());
    }
}
