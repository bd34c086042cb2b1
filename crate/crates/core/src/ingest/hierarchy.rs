//! View-hierarchy documents: parsing, the node tree, and serialization back
//! to the corpus schema.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geometry::{Extent, Rect};

/// Maximum node nesting accepted by the parser.
pub const MAX_DEPTH: usize = 60;

const KEY_CLASS: &str = "class";
const KEY_ANCESTORS: &str = "ancestors";
const KEY_BOUNDS: &str = "bounds";
const KEY_VISIBLE: &str = "visible-to-user";
const KEY_CHILDREN: &str = "children";
const KEY_RESOURCE_ID: &str = "resource-id";

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("malformed hierarchy document at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("hierarchy exceeds {max} levels at {path}")]
    TooDeep { path: String, max: usize },
    #[error("screen {screen_id}: root bounds {bounds} give a non-positive coordinate space")]
    EmptyExtent { screen_id: String, bounds: Rect },
}

/// One element of a view hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewNode {
    pub class_name: String,
    /// Superclass chain, nearest superclass first.
    pub ancestors: Vec<String>,
    pub bounds: Rect,
    pub visible_to_user: bool,
    pub children: Vec<ViewNode>,
    pub resource_id: Option<String>,
    /// Set when the raw bounds were inverted and had to be swapped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub bounds_normalized: bool,
    /// Keys the analysis does not interpret, kept verbatim.
    #[serde(skip)]
    pub extra: BTreeMap<String, Value>,
}

impl ViewNode {
    /// Leaf node with no ancestors, extras or resource id.
    pub fn leaf(class_name: impl Into<String>, bounds: Rect, visible_to_user: bool) -> Self {
        Self {
            class_name: class_name.into(),
            ancestors: Vec::new(),
            bounds,
            visible_to_user,
            children: Vec::new(),
            resource_id: None,
            bounds_normalized: false,
            extra: BTreeMap::new(),
        }
    }

    /// Resolves a path of child indices starting at this node.
    pub fn descendant(&self, path: &[usize]) -> Option<&ViewNode> {
        path.iter()
            .try_fold(self, |node, &idx| node.children.get(idx))
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(ViewNode::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ViewNode::depth).max().unwrap_or(0)
    }

    /// Number of nodes whose bounds were swapped during parsing.
    pub fn normalized_count(&self) -> usize {
        usize::from(self.bounds_normalized)
            + self
                .children
                .iter()
                .map(ViewNode::normalized_count)
                .sum::<usize>()
    }

    /// Serializes this subtree back to the corpus schema.
    pub fn to_json(&self) -> Value {
        let mut obj: Map<String, Value> = self
            .extra
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        obj.insert(KEY_CLASS.into(), Value::String(self.class_name.clone()));
        obj.insert(
            KEY_ANCESTORS.into(),
            Value::Array(self.ancestors.iter().cloned().map(Value::String).collect()),
        );
        obj.insert(
            KEY_BOUNDS.into(),
            Value::Array(self.bounds.to_array().iter().map(|&v| Value::from(v)).collect()),
        );
        obj.insert(KEY_VISIBLE.into(), Value::Bool(self.visible_to_user));
        if let Some(id) = &self.resource_id {
            obj.insert(KEY_RESOURCE_ID.into(), Value::String(id.clone()));
        }
        if !self.children.is_empty() {
            obj.insert(
                KEY_CHILDREN.into(),
                Value::Array(self.children.iter().map(ViewNode::to_json).collect()),
            );
        }
        Value::Object(obj)
    }
}

/// Reference to a screenshot on disk with its decoded pixel size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenshotRef {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

impl ScreenshotRef {
    pub fn dims(&self) -> Extent {
        Extent::new(self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub screen_id: String,
    pub root: ViewNode,
    pub screenshot: ScreenshotRef,
    /// Size of the coordinate space the node bounds live in.
    pub virtual_extent: Extent,
}

impl Screen {
    /// Builds a screen whose coordinate space is inferred from the root bounds.
    pub fn new(
        screen_id: impl Into<String>,
        root: ViewNode,
        screenshot: ScreenshotRef,
    ) -> Result<Self, HierarchyError> {
        let screen_id = screen_id.into();
        let extent = infer_virtual_extent(&root.bounds).ok_or_else(|| HierarchyError::EmptyExtent {
            screen_id: screen_id.clone(),
            bounds: root.bounds,
        })?;
        Ok(Self {
            screen_id,
            root,
            screenshot,
            virtual_extent: extent,
        })
    }

    pub fn node_at(&self, path: &[usize]) -> Option<&ViewNode> {
        self.root.descendant(path)
    }
}

/// The root's far corner spans the coordinate space; the origin is always (0, 0).
pub fn infer_virtual_extent(root_bounds: &Rect) -> Option<Extent> {
    if root_bounds.right > 0 && root_bounds.bottom > 0 {
        Some(Extent::new(root_bounds.right as u32, root_bounds.bottom as u32))
    } else {
        None
    }
}

/// Parses one hierarchy document into its root node.
///
/// Accepts either a bare element object or the full-screen wrapper
/// (`{"activity": {"root": {...}}}`).
pub fn parse_view_hierarchy(raw_text: &str) -> Result<ViewNode, HierarchyError> {
    let doc: Value = serde_json::from_str(raw_text).map_err(|e| HierarchyError::Malformed {
        offset: byte_offset(raw_text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let root = locate_root(&doc)?;
    let mut path = String::from("root");
    convert_node(root, &mut path, 1)
}

fn locate_root(doc: &Value) -> Result<&Value, HierarchyError> {
    let obj = doc.as_object().ok_or_else(|| HierarchyError::Schema {
        path: "$".into(),
        message: "document is not an object".into(),
    })?;
    if obj.contains_key(KEY_CLASS) {
        return Ok(doc);
    }
    if let Some(root) = obj.get("activity").and_then(|a| a.get("root")) {
        return Ok(root);
    }
    if let Some(root) = obj.get("root") {
        return Ok(root);
    }
    Err(HierarchyError::Schema {
        path: "root".into(),
        message: format!("missing `{KEY_CLASS}` key"),
    })
}

fn convert_node(value: &Value, path: &mut String, depth: usize) -> Result<ViewNode, HierarchyError> {
    if depth > MAX_DEPTH {
        return Err(HierarchyError::TooDeep {
            path: path.clone(),
            max: MAX_DEPTH,
        });
    }
    let schema = |path: &str, message: String| HierarchyError::Schema {
        path: path.to_string(),
        message,
    };
    let obj = value
        .as_object()
        .ok_or_else(|| schema(path, "element is not an object".into()))?;

    let class_name = match obj.get(KEY_CLASS) {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(schema(path, format!("`{KEY_CLASS}` is not a string"))),
        None => return Err(schema(path, format!("missing `{KEY_CLASS}` key"))),
    };

    let ancestors = match obj.get(KEY_ANCESTORS) {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect(),
        Some(_) => return Err(schema(path, format!("`{KEY_ANCESTORS}` is not a list"))),
    };

    let (bounds, bounds_normalized) = match obj.get(KEY_BOUNDS) {
        None | Some(Value::Null) => (Rect::new(0, 0, 0, 0), false),
        Some(v) => parse_bounds(v)
            .ok_or_else(|| schema(path, format!("`{KEY_BOUNDS}` is not four integers")))?
            .normalized(),
    };

    let visible_to_user = match obj.get(KEY_VISIBLE) {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(schema(path, format!("`{KEY_VISIBLE}` is not a boolean"))),
    };

    let resource_id = obj
        .get(KEY_RESOURCE_ID)
        .and_then(Value::as_str)
        .map(str::to_string);

    let mut children = Vec::new();
    match obj.get(KEY_CHILDREN) {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for (i, child) in items.iter().enumerate() {
                // Rico emits `null` placeholders for dropped children.
                if child.is_null() {
                    continue;
                }
                let mark = path.len();
                path.push_str(&format!("/children[{i}]"));
                children.push(convert_node(child, path, depth + 1)?);
                path.truncate(mark);
            }
        }
        Some(_) => return Err(schema(path, format!("`{KEY_CHILDREN}` is not a list"))),
    }

    let extra = obj
        .iter()
        .filter(|(k, _)| {
            !matches!(
                k.as_str(),
                KEY_CLASS | KEY_ANCESTORS | KEY_BOUNDS | KEY_VISIBLE | KEY_CHILDREN | KEY_RESOURCE_ID
            )
        })
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    Ok(ViewNode {
        class_name,
        ancestors,
        bounds,
        visible_to_user,
        children,
        resource_id,
        bounds_normalized,
        extra,
    })
}

fn parse_bounds(v: &Value) -> Option<Rect> {
    let items = v.as_array()?;
    if items.len() != 4 {
        return None;
    }
    let mut out = [0i32; 4];
    for (slot, item) in out.iter_mut().zip(items) {
        let n = match item.as_i64() {
            Some(n) => n,
            None => {
                let f = item.as_f64()?;
                if f.fract() != 0.0 {
                    return None;
                }
                f as i64
            }
        };
        *slot = i32::try_from(n).ok()?;
    }
    Some(Rect::from(out))
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
