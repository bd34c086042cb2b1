//! Keyword rules and the official-class table, both read from the
//! `kind: item, item, ...` line format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kind::ComponentKind;

const DEFAULT_KEYWORDS: &str = include_str!("keywords.default.txt");
const DEFAULT_OFFICIAL: &str = include_str!("official.default.txt");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("rule for {0} has no keywords")]
    EmptyRule(ComponentKind),
    #[error("rule for {0} contains an empty keyword")]
    EmptyKeyword(ComponentKind),
}

/// Relaxed keyword matching configuration for one component kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordRule {
    kind: ComponentKind,
    /// Lowercased; matching is case-insensitive substring.
    keywords: Vec<String>,
}

impl KeywordRule {
    pub fn new<I, S>(kind: ComponentKind, keywords: I) -> Result<Self, RegistryError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for kw in keywords {
            let kw = kw.as_ref().trim().to_lowercase();
            if kw.is_empty() {
                return Err(RegistryError::EmptyKeyword(kind));
            }
            if !out.contains(&kw) {
                out.push(kw);
            }
        }
        if out.is_empty() {
            return Err(RegistryError::EmptyRule(kind));
        }
        Ok(Self { kind, keywords: out })
    }

    pub fn kind(&self) -> ComponentKind {
        self.kind
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    /// Returns a copy with one more keyword.
    pub fn with_keyword(&self, keyword: &str) -> Result<Self, RegistryError> {
        let mut all = self.keywords.clone();
        all.push(keyword.to_string());
        Self::new(self.kind, all)
    }
}

fn parse_lines(text: &str) -> Result<Vec<(ComponentKind, Vec<String>)>, RegistryError> {
    let mut out: Vec<(ComponentKind, Vec<String>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (kind_text, items) = line.split_once(':').ok_or_else(|| RegistryError::Syntax {
            line: line_no,
            message: "expected `kind: item, item, ...`".into(),
        })?;
        let kind: ComponentKind = kind_text.trim().parse().map_err(|e| RegistryError::Syntax {
            line: line_no,
            message: format!("{e}"),
        })?;
        if out.iter().any(|(k, _)| *k == kind) {
            return Err(RegistryError::Syntax {
                line: line_no,
                message: format!("duplicate entry for {kind}"),
            });
        }
        let items = items
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        out.push((kind, items));
    }
    Ok(out)
}

/// Ordered set of keyword rules, at most one per kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordRegistry {
    rules: Vec<KeywordRule>,
}

impl KeywordRegistry {
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let rules = parse_lines(text)?
            .into_iter()
            .map(|(kind, kws)| KeywordRule::new(kind, kws))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { rules })
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn from_rules(rules: Vec<KeywordRule>) -> Self {
        Self { rules }
    }

    pub fn rules(&self) -> &[KeywordRule] {
        &self.rules
    }

    pub fn rule(&self, kind: ComponentKind) -> Option<&KeywordRule> {
        self.rules.iter().find(|r| r.kind == kind)
    }

    /// Canonical text form, parseable by [`KeywordRegistry::parse`].
    pub fn to_text(&self) -> String {
        self.rules
            .iter()
            .map(|r| format!("{}: {}\n", r.kind, r.keywords.join(", ")))
            .collect()
    }
}

impl Default for KeywordRegistry {
    fn default() -> Self {
        Self::parse(DEFAULT_KEYWORDS).expect("bundled keyword registry parses")
    }
}

/// Fully qualified class names of the stock implementation of each kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfficialClasses {
    classes: BTreeMap<ComponentKind, Vec<String>>,
}

impl OfficialClasses {
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        Ok(Self {
            classes: parse_lines(text)?.into_iter().collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn for_kind(&self, kind: ComponentKind) -> &[String] {
        self.classes.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Exact match of the class or any ancestor against the stock names.
    pub fn is_official(&self, kind: ComponentKind, class_name: &str, ancestors: &[String]) -> bool {
        let names = self.for_kind(kind);
        names.iter().any(|n| n == class_name || ancestors.iter().any(|a| a == n))
    }
}

impl Default for OfficialClasses {
    fn default() -> Self {
        Self::parse(DEFAULT_OFFICIAL).expect("bundled official class table parses")
    }
}
