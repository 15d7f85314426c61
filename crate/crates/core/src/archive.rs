//! Clip archives: windowed, normalized clips ready for training or
//! evaluation, stored as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::skeleton::SkeletonClip;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredClip {
    label: usize,
    data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipArchive {
    pub layout: String,
    pub class_names: Vec<String>,
    pub dims: usize,
    pub clip_len: usize,
    pub joint_count: usize,
    clips: Vec<StoredClip>,
}

impl ClipArchive {
    /// All clips must share one `[dims, clip_len, joint_count]` shape.
    pub fn new(layout: impl Into<String>, class_names: Vec<String>, clips: &[SkeletonClip]) -> Result<Self> {
        let first = clips
            .first()
            .ok_or_else(|| Error::invalid("archive needs at least one clip"))?;
        let shape = first.data.shape().to_vec();
        let mut stored = Vec::with_capacity(clips.len());
        for c in clips {
            if c.data.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "archive",
                    lhs: shape,
                    rhs: c.data.shape().to_vec(),
                });
            }
            if c.label >= class_names.len() {
                return Err(Error::invalid(format!("label {} has no class name", c.label)));
            }
            stored.push(StoredClip {
                label: c.label,
                data: c.data.data().to_vec(),
            });
        }
        Ok(ClipArchive {
            layout: layout.into(),
            class_names,
            dims: shape[0],
            clip_len: shape[1],
            joint_count: shape[2],
            clips: stored,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> Result<Vec<SkeletonClip>> {
        let shape = vec![self.dims, self.clip_len, self.joint_count];
        self.clips
            .iter()
            .map(|c| {
                Ok(SkeletonClip {
                    data: Tensor::new(shape.clone(), c.data.clone())?,
                    label: c.label,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("archive serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let archive: ClipArchive = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        archive.clips().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}
