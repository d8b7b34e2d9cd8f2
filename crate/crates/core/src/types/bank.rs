use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::catalog::ClassCatalog;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    #[serde(default)]
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    /// Any further provider-specific fields, kept verbatim.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrompts {
    pub name: String,
    pub modality: String,
    pub prompts: Vec<String>,
}

/// LLM-generated descriptions, `N` per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBank {
    pub query_template: String,
    #[serde(default)]
    pub generator: GeneratorInfo,
    pub classes: Vec<ClassPrompts>,
}

impl PromptBank {
    pub fn class(&self, name: &str) -> Option<&ClassPrompts> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Prompts per class, if every class has the same count.
    pub fn prompts_per_class(&self) -> Option<usize> {
        let n = self.classes.first()?.prompts.len();
        self.classes.iter().all(|c| c.prompts.len() == n).then_some(n)
    }

    /// Enforces the structural invariants against `catalog`: every catalog
    /// class is present with exactly `n` non-empty prompts.
    pub fn check(&self, catalog: &ClassCatalog, n: usize) -> Result<()> {
        for entry in catalog.entries() {
            let class = self
                .class(&entry.name)
                .ok_or_else(|| Error::Data(format!("prompt bank lacks class `{}`", entry.name)))?;
            if class.prompts.len() != n {
                return Err(Error::Data(format!(
                    "class `{}` has {} prompts, expected {n}",
                    entry.name,
                    class.prompts.len()
                )));
            }
            if class.prompts.iter().any(|p| p.trim().is_empty()) {
                return Err(Error::Data(format!("class `{}` has an empty prompt", entry.name)));
            }
        }
        Ok(())
    }

    /// Prompts ordered to match `catalog`.
    pub fn ordered_prompts<'a>(&'a self, catalog: &ClassCatalog) -> Result<Vec<&'a [String]>> {
        catalog
            .names()
            .map(|name| {
                self.class(name)
                    .map(|c| c.prompts.as_slice())
                    .ok_or_else(|| Error::Data(format!("prompt bank lacks class `{name}`")))
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bank serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
