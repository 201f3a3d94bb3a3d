use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::CLASS_CHARS;
use crate::render::RenderedItem;

use super::{read_bytes, write_annotation, write_atomic, write_image, Label};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Rendered,
    Generated,
    Pseudolabeled { round: usize },
    HumanVerified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    /// Image path relative to the dataset root.
    pub image: String,
    /// Annotation path relative to the dataset root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub provenance: Provenance,
}

/// Dataset index stored as `manifest.json` at the dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub seed: u64,
    /// Class id (decimal string) to character.
    pub class_map: BTreeMap<String, String>,
    /// Split name to items, e.g. train / val / test.
    pub splits: BTreeMap<String, Vec<ManifestItem>>,
}

/// The fixed 24-class map: digits 0-9 then A B C E H I K M O P T X Y Z.
pub fn class_map() -> BTreeMap<String, String> {
    CLASS_CHARS
        .iter()
        .enumerate()
        .map(|(i, c)| (i.to_string(), c.to_string()))
        .collect()
}

impl Manifest {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        Manifest {
            name: name.into(),
            seed,
            class_map: class_map(),
            splits: BTreeMap::new(),
        }
    }

    pub fn items(&self) -> impl Iterator<Item = (&str, &ManifestItem)> {
        self.splits
            .iter()
            .flat_map(|(s, items)| items.iter().map(move |i| (s.as_str(), i)))
    }

    pub fn find(&self, id: &str) -> Option<&ManifestItem> {
        self.items().map(|(_, i)| i).find(|i| i.id == id)
    }

    /// Checks the class map, id uniqueness across splits, and that every
    /// referenced file exists under `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        if self.class_map != class_map() {
            return Err(Error::Format("manifest class map differs from the fixed 24-class order".into()));
        }
        let mut seen = HashSet::new();
        for (split, item) in self.items() {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Format(format!("item {} appears twice (split {split})", item.id)));
            }
            for rel in std::iter::once(&item.image).chain(item.label.as_ref()) {
                let p = resolve(root, rel)?;
                if !p.is_file() {
                    return Err(Error::Dangling(p));
                }
            }
            if matches!(item.provenance, Provenance::Rendered | Provenance::Pseudolabeled { .. }) && item.label.is_none() {
                return Err(Error::Format(format!("item {} has no annotation file", item.id)));
            }
        }
        Ok(())
    }

    /// Reads `root/manifest.json` and validates it.
    pub fn load(root: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(&read_bytes(&root.join(MANIFEST_FILE))?)?;
        m.validate(root)?;
        Ok(m)
    }

    /// Pretty JSON with keys in sorted order.
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        write_atomic(&root.join(MANIFEST_FILE), self.to_json()?.as_bytes())
    }
}

/// Joins a manifest-relative path, refusing absolute paths and `..`.
pub fn resolve(root: &Path, rel: &str) -> Result<PathBuf> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(Error::Format(format!("manifest path {rel:?} escapes the dataset root")));
    }
    Ok(root.join(p))
}

/// Writes rendered items as `images/<id>.ppm` and `labels/<id>.txt` into
/// `root`, assigning the first `val` items to the `val` split and the rest
/// to `train`, and saves the manifest.
pub fn write_rendered_dataset(root: &Path, name: &str, seed: u64, items: &[RenderedItem], val: usize) -> Result<Manifest> {
    let mut m = Manifest::new(name, seed);
    for (i, item) in items.iter().enumerate() {
        let id = format!("{i:06}");
        let image = format!("images/{id}.ppm");
        let label = format!("labels/{id}.txt");
        write_image(&root.join(&image), &item.raster)?;
        let labels: Vec<Label> = item
            .spec
            .chars()
            .iter()
            .zip(&item.boxes)
            .map(|(c, b)| Label {
                class_id: crate::grammar::class_of_char(*c).expect("plate characters have classes"),
                bbox: *b,
            })
            .collect();
        write_annotation(&root.join(&label), &labels)?;
        let split = if i < val { "val" } else { "train" };
        m.splits.entry(split.to_string()).or_default().push(ManifestItem {
            id,
            image,
            label: Some(label),
            text: Some(item.spec.text()),
            provenance: Provenance::Rendered,
        });
    }
    m.save(root)?;
    Ok(m)
}
