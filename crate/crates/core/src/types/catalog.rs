//! Class catalogs and dataset manifests.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassTag {
    Base,
    Novel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub modality: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<ClassTag>,
}

/// Ordered set of classes. Position in the catalog is the class index used
/// everywhere else; the order is the order of appearance and is never sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCatalog {
    classes: Vec<ClassEntry>,
    positions: HashMap<String, usize>,
}

impl ClassCatalog {
    pub fn new(classes: Vec<ClassEntry>) -> Result<Self> {
        let mut positions = HashMap::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            if c.name.trim().is_empty() {
                return Err(Error::Data(format!("class {i} has an empty name")));
            }
            if positions.insert(c.name.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate class name `{}`", c.name)));
            }
        }
        Ok(Self { classes, positions })
    }

    /// Convenience constructor with one shared modality.
    pub fn from_names<S: AsRef<str>>(names: &[S], modality: &str) -> Result<Self> {
        Self::new(
            names
                .iter()
                .map(|n| ClassEntry {
                    name: n.as_ref().to_string(),
                    modality: modality.to_string(),
                    tag: None,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.classes.iter().map(|c| c.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.positions.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.positions.contains_key(name)
    }

    /// Sub-catalog holding the given positions, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.classes[i].clone()).collect())
    }

    /// Parses `class_name<TAB>modality[<TAB>base|novel]` lines. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut classes = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let tag = match fields.get(2).map(|s| s.trim()) {
                None | Some("") => None,
                Some("base") => Some(ClassTag::Base),
                Some("novel") => Some(ClassTag::Novel),
                Some(other) => {
                    return Err(Error::Data(format!(
                        "catalog line {}: bad base/novel tag `{other}`",
                        n + 1
                    )))
                }
            };
            if fields.len() < 2 || fields.len() > 3 {
                return Err(Error::Data(format!(
                    "catalog line {}: expected `name<TAB>modality[<TAB>tag]`",
                    n + 1
                )));
            }
            classes.push(ClassEntry {
                name: fields[0].to_string(),
                modality: fields[1].to_string(),
                tag,
            });
        }
        Self::new(classes)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.classes {
            out.push_str(&c.name);
            out.push('\t');
            out.push_str(&c.modality);
            match c.tag {
                Some(ClassTag::Base) => out.push_str("\tbase"),
                Some(ClassTag::Novel) => out.push_str("\tnovel"),
                None => {}
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub item_id: String,
    pub class_name: String,
    pub split: Split,
}

/// Image records with their class and split, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// `(height, width)` in pixels. Metadata only.
    pub image_size: Option<(u32, u32)>,
}

const IMAGE_SIZE_PREFIX: &str = "#image_size\t";

impl DatasetManifest {
    /// Parses `item_id<TAB>class_name<TAB>split` lines against `catalog`.
    ///
    /// An optional `#image_size<TAB>H<TAB>W` line carries the image size;
    /// other `#` lines are comments.
    pub fn parse(text: &str, catalog: &ClassCatalog) -> Result<Self> {
        let mut manifest = DatasetManifest::default();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if let Some(rest) = line.strip_prefix(IMAGE_SIZE_PREFIX) {
                let dims: Vec<u32> = rest
                    .split('\t')
                    .map(|v| v.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Data(format!("manifest line {line_no}: bad image size")))?;
                match dims[..] {
                    [h, w] => manifest.image_size = Some((h, w)),
                    _ => {
                        return Err(Error::Data(format!(
                            "manifest line {line_no}: image size needs H and W"
                        )))
                    }
                }
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Data(format!(
                    "manifest line {line_no}: expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            if !catalog.contains(fields[1]) {
                return Err(Error::UnknownClass {
                    class: fields[1].to_string(),
                    line: line_no,
                });
            }
            let split = fields[2].trim().parse().map_err(|_| Error::InvalidSplit {
                value: fields[2].to_string(),
                line: line_no,
            })?;
            manifest.records.push(ManifestRecord {
                item_id: fields[0].to_string(),
                class_name: fields[1].to_string(),
                split,
            });
        }
        Ok(manifest)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some((h, w)) = self.image_size {
            out.push_str(&format!("{IMAGE_SIZE_PREFIX}{h}\t{w}\n"));
        }
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\n", r.item_id, r.class_name, r.split));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.split).or_insert(0) += 1;
        }
        counts
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> + '_ {
        self.records.iter().filter(move |r| r.split == split)
    }
}

pub fn load_manifest(path: &Path, catalog: &ClassCatalog) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::parse(&text, catalog)
}
