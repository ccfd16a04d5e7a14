//! Ordered text feature manifest.
//!
//! Each entry names one output feature, the style attribute it reads, how to
//! read it and the value used when the attribute is absent.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TEXT_FEATURE_COUNT: usize = 70;
pub const POSITIONAL_COUNT: usize = 5;

const DEFAULT_MANIFEST: &str = include_str!("../../assets/default_manifest.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    /// Distance to a viewport edge (`source_attr` = top/left/right/bottom) or `area`.
    Position,
    /// One channel (`component` = r/g/b/a) of a CSS color.
    Color,
    /// One side (`component` = top/left/right/bottom) of a box-spacing attribute.
    Space,
    /// A CSS length resolved to px.
    Length,
    /// A bare number.
    Number,
    /// Position of a keyword within `levels`.
    Ordinal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: ExtractorKind,
    pub source_attr: String,
    pub default_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub keywords: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub entries: Vec<ManifestEntry>,
}

impl Default for FeatureManifest {
    fn default() -> Self {
        let m: FeatureManifest =
            serde_json::from_str(DEFAULT_MANIFEST).expect("bundled manifest is valid json");
        m.validate().expect("bundled manifest passes validation");
        m
    }
}

impl FeatureManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: FeatureManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::schema("manifest", msg));
        if self.entries.len() != TEXT_FEATURE_COUNT {
            return bad(format!(
                "expected {TEXT_FEATURE_COUNT} entries, found {}",
                self.entries.len()
            ));
        }
        let expected = ["top", "left", "right", "bottom", "area"];
        for (i, edge) in expected.iter().enumerate() {
            let e = &self.entries[i];
            if e.kind != ExtractorKind::Position || e.source_attr != *edge {
                return bad(format!("entry {i} must be the positional `{edge}` feature"));
            }
        }
        let mut names = HashSet::new();
        let mut groups: BTreeMap<(&str, ExtractorKind), Vec<&str>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if !names.insert(e.name.as_str()) {
                return bad(format!("entry {i}: duplicate name {:?}", e.name));
            }
            if !e.default_value.is_finite() {
                return bad(format!("entry {i}: default_value must be finite"));
            }
            match e.kind {
                ExtractorKind::Position if i >= POSITIONAL_COUNT => {
                    return bad(format!("entry {i}: positional features must come first"));
                }
                ExtractorKind::Color | ExtractorKind::Space => {
                    let Some(c) = e.component.as_deref() else {
                        return bad(format!("entry {i}: {:?} needs a component", e.kind));
                    };
                    groups.entry((e.source_attr.as_str(), e.kind)).or_default().push(c);
                }
                ExtractorKind::Ordinal if e.levels.is_empty() => {
                    return bad(format!("entry {i}: ordinal needs levels"));
                }
                _ => {}
            }
        }
        for ((attr, kind), mut comps) in groups {
            comps.sort_unstable();
            let want: &[&str] = match kind {
                ExtractorKind::Color => &["a", "b", "g", "r"],
                _ => &["bottom", "left", "right", "top"],
            };
            if comps != want {
                return bad(format!(
                    "attribute `{attr}` must expand to exactly {:?}, found {:?}",
                    want, comps
                ));
            }
        }
        Ok(())
    }
}
