//! Candidate detection by relaxed keyword matching over class names and
//! ancestor chains.
//!
//! The traversal is a pre-order depth-first search. A node that is not
//! visible to the user never produces a detection, but its subtree is still
//! searched. Once a node matches a rule, that rule is not applied again
//! inside the node's subtree; other rules keep searching it.

mod kind;
mod registry;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::Rect;
use crate::ingest::{AppRecord, Screen, ViewNode};

pub use kind::{ComponentKind, UnknownKind};
pub use registry::{KeywordRegistry, KeywordRule, OfficialClasses, RegistryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchVia {
    ClassName,
    Ancestor,
}

impl MatchVia {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchVia::ClassName => "class",
            MatchVia::Ancestor => "ancestor",
        }
    }
}

/// A node that matched a keyword rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub package_id: String,
    pub screen_id: String,
    pub kind: ComponentKind,
    /// Child indices from the root.
    pub node_path: Vec<usize>,
    pub bounds: Rect,
    pub matched_via: MatchVia,
    pub matched_keyword: String,
}

impl Detection {
    /// `0/2/1`-style rendering of the node path; the root is the empty string.
    pub fn path_string(&self) -> String {
        format_path(&self.node_path)
    }
}

pub fn format_path(path: &[usize]) -> String {
    path.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn parse_path(text: &str) -> Option<Vec<usize>> {
    if text.is_empty() {
        return Some(Vec::new());
    }
    text.split('/').map(|p| p.parse().ok()).collect()
}

/// Matches one node against one rule. A class-name hit takes precedence
/// over an ancestor hit.
pub fn match_node(node: &ViewNode, rule: &KeywordRule) -> Option<(MatchVia, String)> {
    let class = node.class_name.to_lowercase();
    let ancestors: Vec<String> = node.ancestors.iter().map(|a| a.to_lowercase()).collect();
    match_lowered(&class, &ancestors, rule)
}

fn match_lowered(class: &str, ancestors: &[String], rule: &KeywordRule) -> Option<(MatchVia, String)> {
    if let Some(kw) = rule.keywords().iter().find(|kw| class.contains(kw.as_str())) {
        return Some((MatchVia::ClassName, kw.clone()));
    }
    rule.keywords()
        .iter()
        .find(|kw| ancestors.iter().any(|a| a.contains(kw.as_str())))
        .map(|kw| (MatchVia::Ancestor, kw.clone()))
}

/// All candidates in one screen, in traversal order.
pub fn detect_in_screen(package_id: &str, screen: &Screen, rules: &[KeywordRule]) -> Vec<Detection> {
    let mut out = Vec::new();
    let mut path = Vec::new();
    let active = vec![true; rules.len()];
    visit(&screen.root, &mut path, &active, rules, &mut |node, path, rule, (via, kw)| {
        out.push(Detection {
            package_id: package_id.to_string(),
            screen_id: screen.screen_id.clone(),
            kind: rule.kind(),
            node_path: path.to_vec(),
            bounds: node.bounds,
            matched_via: via,
            matched_keyword: kw,
        });
    });
    out
}

fn visit<F>(node: &ViewNode, path: &mut Vec<usize>, active: &[bool], rules: &[KeywordRule], emit: &mut F)
where
    F: FnMut(&ViewNode, &[usize], &KeywordRule, (MatchVia, String)),
{
    let mut child_active: Option<Vec<bool>> = None;
    if node.visible_to_user && active.iter().any(|a| *a) {
        let class = node.class_name.to_lowercase();
        let ancestors: Vec<String> = node.ancestors.iter().map(|a| a.to_lowercase()).collect();
        for (i, rule) in rules.iter().enumerate() {
            if !active[i] {
                continue;
            }
            if let Some(hit) = match_lowered(&class, &ancestors, rule) {
                emit(node, path, rule, hit);
                child_active.get_or_insert_with(|| active.to_vec())[i] = false;
            }
        }
    }
    let next = child_active.as_deref().unwrap_or(active);
    if !next.iter().any(|a| *a) {
        return;
    }
    for (idx, child) in node.children.iter().enumerate() {
        path.push(idx);
        visit(child, path, next, rules, emit);
        path.pop();
    }
}

/// Per-kind union of the screen detections of one app. Every kind is
/// present as a key; excluded apps yield only empty lists.
pub fn detect_in_app(app: &AppRecord, rules: &[KeywordRule]) -> BTreeMap<ComponentKind, Vec<Detection>> {
    let mut out: BTreeMap<ComponentKind, Vec<Detection>> =
        ComponentKind::ALL.iter().map(|k| (*k, Vec::new())).collect();
    if app.is_excluded() {
        return out;
    }
    for screen in &app.screens {
        for det in detect_in_screen(&app.package_id, screen, rules) {
            out.entry(det.kind).or_default().push(det);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_view_hierarchy, ScreenshotRef};

    fn fab_rule() -> KeywordRule {
        KeywordRule::new(ComponentKind::FloatingActionButton, ["float"]).unwrap()
    }

    fn node(class: &str, visible: bool, children: Vec<ViewNode>) -> ViewNode {
        let mut n = ViewNode::leaf(class, Rect::new(0, 0, 100, 100), visible);
        n.children = children;
        n
    }

    fn screen(root: ViewNode) -> Screen {
        let mut root = root;
        root.bounds = Rect::new(0, 0, 1440, 2560);
        Screen::new(
            "0",
            root,
            ScreenshotRef {
                path: "0.png".into(),
                width: 540,
                height: 960,
            },
        )
        .unwrap()
    }

    #[test]
    fn class_name_match() {
        let n = ViewNode::leaf("com.x.MyFloatButton", Rect::new(0, 0, 1, 1), true);
        assert_eq!(
            match_node(&n, &fab_rule()),
            Some((MatchVia::ClassName, "float".to_string()))
        );
    }

    #[test]
    fn ancestor_match() {
        let mut n = ViewNode::leaf("android.widget.ImageButton", Rect::new(0, 0, 1, 1), true);
        n.ancestors = vec![
            "android.support.design.widget.FloatingActionButton".into(),
            "android.view.View".into(),
        ];
        assert_eq!(
            match_node(&n, &fab_rule()),
            Some((MatchVia::Ancestor, "float".to_string()))
        );
    }

    #[test]
    fn no_match() {
        let mut n = ViewNode::leaf("android.widget.TextView", Rect::new(0, 0, 1, 1), true);
        n.ancestors = vec!["android.view.View".into(), "java.lang.Object".into()];
        assert_eq!(match_node(&n, &fab_rule()), None);
    }

    #[test]
    fn class_takes_precedence_over_ancestor() {
        let rule = KeywordRule::new(ComponentKind::AppBar, ["toolbar", "appbar"]).unwrap();
        let mut n = ViewNode::leaf("com.x.AppBarThing", Rect::new(0, 0, 1, 1), true);
        n.ancestors = vec!["android.widget.Toolbar".into()];
        assert_eq!(
            match_node(&n, &rule),
            Some((MatchVia::ClassName, "appbar".to_string()))
        );
    }

    #[test]
    fn invisible_listing_node_is_not_detected() {
        let text = r#"{"class": "android.widget.FrameLayout", "bounds": [0,0,1440,2560], "visible-to-user": true,
            "children": [{"class": "android.support.design.widget.FloatingActionButton",
                          "bounds": [1188, 2140, 1384, 2336], "visible-to-user": false}]}"#;
        let s = screen(parse_view_hierarchy(text).unwrap());
        assert!(detect_in_screen("p", &s, KeywordRegistry::default().rules()).is_empty());
    }

    #[test]
    fn grandchild_match_has_path_of_length_two() {
        let root = node(
            "android.widget.FrameLayout",
            true,
            vec![
                node("android.widget.TextView", true, vec![]),
                node(
                    "android.widget.LinearLayout",
                    true,
                    vec![node("com.x.FloatThing", true, vec![])],
                ),
            ],
        );
        let dets = detect_in_screen("p", &screen(root), &[fab_rule()]);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].node_path, vec![1, 0]);
        assert_eq!(dets[0].path_string(), "1/0");
        assert_eq!(parse_path("1/0"), Some(vec![1, 0]));
    }

    #[test]
    fn invisible_parent_still_searched() {
        let root = node(
            "android.widget.FrameLayout",
            true,
            vec![node("com.x.FloatHolder", false, vec![node("com.x.FloatBtn", true, vec![])])],
        );
        let dets = detect_in_screen("p", &screen(root), &[fab_rule()]);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].node_path, vec![0, 0]);
    }

    #[test]
    fn match_prunes_same_rule_but_not_others() {
        let registry = KeywordRegistry::default();
        let root = node(
            "android.widget.FrameLayout",
            true,
            vec![node(
                "android.support.design.widget.AppBarLayout",
                true,
                vec![
                    node("android.support.v7.widget.Toolbar", true, vec![]),
                    node("android.support.design.widget.TabLayout", true, vec![]),
                ],
            )],
        );
        let dets = detect_in_screen("p", &screen(root), registry.rules());
        let kinds: Vec<_> = dets.iter().map(|d| d.kind).collect();
        assert_eq!(kinds, [ComponentKind::AppBar, ComponentKind::TabLayout]);
        assert_eq!(dets[1].node_path, vec![0, 1]);
    }

    #[test]
    fn two_kinds_in_one_screen() {
        let root = node(
            "android.widget.FrameLayout",
            true,
            vec![
                node("com.x.FloatActionBtn", true, vec![]),
                node("com.x.SnackbarLayout", true, vec![]),
            ],
        );
        let dets = detect_in_screen("p", &screen(root), KeywordRegistry::default().rules());
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].kind, ComponentKind::FloatingActionButton);
        assert_eq!(dets[1].kind, ComponentKind::SnackBar);
    }

    #[test]
    fn app_union_and_empty_app() {
        let with_fab = |id: &str, fab: bool| {
            let children = if fab { vec![node("com.x.FloatBtn", true, vec![])] } else { vec![] };
            let mut s = screen(node("android.widget.FrameLayout", true, children));
            s.screen_id = id.into();
            s
        };
        let app = AppRecord {
            package_id: "p".into(),
            screens: vec![with_fab("0", true), with_fab("1", false), with_fab("2", true)],
            metadata: None,
            exclusion: None,
        };
        let rules = KeywordRegistry::default();
        let by_kind = detect_in_app(&app, rules.rules());
        assert_eq!(by_kind.len(), 6);
        assert_eq!(by_kind[&ComponentKind::FloatingActionButton].len(), 2);
        assert!(by_kind[&ComponentKind::SnackBar].is_empty());

        let empty = AppRecord {
            screens: vec![],
            ..app
        };
        assert!(detect_in_app(&empty, rules.rules()).values().all(Vec::is_empty));
    }
}
