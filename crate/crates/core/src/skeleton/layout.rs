use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COCO18: &str = include_str!("../../layouts/coco18.toml");
const KINECT20: &str = include_str!("../../layouts/kinect20.toml");

/// Joint set and skeletal connectivity of a pose format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLayout {
    pub name: String,
    pub joint_count: usize,
    pub root_joint: usize,
    #[serde(default)]
    pub joint_names: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

impl JointLayout {
    /// Builds a layout and checks every invariant, including that the edge
    /// set connects all joints.
    pub fn new(
        name: impl Into<String>,
        joint_count: usize,
        edges: Vec<(usize, usize)>,
        root_joint: usize,
    ) -> Result<Self> {
        let layout = JointLayout {
            name: name.into(),
            joint_count,
            root_joint,
            joint_names: Vec::new(),
            edges,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn coco18() -> Self {
        Self::from_toml(COCO18).expect("bundled coco18 layout is valid")
    }

    pub fn kinect20() -> Self {
        Self::from_toml(KINECT20).expect("bundled kinect20 layout is valid")
    }

    /// Bundled layout by name (`coco18` or `kinect20`).
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "coco18" => Ok(Self::coco18()),
            "kinect20" => Ok(Self::kinect20()),
            other => Err(Error::invalid(format!(
                "unknown layout `{other}` (expected coco18 or kinect20)"
            ))),
        }
    }

    /// A bundled layout name, or else a path to a layout file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::builtin(name_or_path) {
            Ok(l) => Ok(l),
            Err(_) if Path::new(name_or_path).exists() => Self::load(Path::new(name_or_path)),
            Err(e) => Err(e),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let layout: JointLayout = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn degree(&self, joint: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == joint || b == joint).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joint_count;
        if n == 0 {
            return Err(Error::invalid(format!("layout `{}` has no joints", self.name)));
        }
        if self.root_joint >= n {
            return Err(Error::invalid(format!(
                "layout `{}`: root joint {} out of range",
                self.name, self.root_joint
            )));
        }
        if !self.joint_names.is_empty() && self.joint_names.len() != n {
            return Err(Error::invalid(format!(
                "layout `{}`: {} joint names for {n} joints",
                self.name,
                self.joint_names.len()
            )));
        }
        check_edges(n, &self.edges)?;
        if !is_connected(n, &self.edges) {
            return Err(Error::invalid(format!(
                "layout `{}`: edges do not connect every joint",
                self.name
            )));
        }
        Ok(())
    }
}

/// Index range, self-loop, and duplicate checks on an undirected edge list.
pub(crate) fn check_edges(joint_count: usize, edges: &[(usize, usize)]) -> Result<()> {
    let mut seen = HashSet::new();
    for &(a, b) in edges {
        if a >= joint_count || b >= joint_count {
            return Err(Error::invalid(format!(
                "edge ({a}, {b}) out of range for {joint_count} joints"
            )));
        }
        if a == b {
            return Err(Error::invalid(format!("self-edge on joint {a}")));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(Error::invalid(format!("duplicate edge ({a}, {b})")));
        }
    }
    Ok(())
}

pub(crate) fn is_connected(joint_count: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); joint_count];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; joint_count];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
