use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The six design-pattern components the pipeline looks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    AppBar,
    FloatingActionButton,
    BottomNavigation,
    NavigationDrawer,
    SnackBar,
    TabLayout,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown component kind `{0}`")]
pub struct UnknownKind(pub String);

impl ComponentKind {
    pub const ALL: [ComponentKind; 6] = [
        ComponentKind::AppBar,
        ComponentKind::FloatingActionButton,
        ComponentKind::BottomNavigation,
        ComponentKind::NavigationDrawer,
        ComponentKind::SnackBar,
        ComponentKind::TabLayout,
    ];

    /// Stable identifier used in file names and CSV cells.
    pub fn as_str(&self) -> &'static str {
        match self {
            ComponentKind::AppBar => "AppBar",
            ComponentKind::FloatingActionButton => "FloatingActionButton",
            ComponentKind::BottomNavigation => "BottomNavigation",
            ComponentKind::NavigationDrawer => "NavigationDrawer",
            ComponentKind::SnackBar => "SnackBar",
            ComponentKind::TabLayout => "TabLayout",
        }
    }

    /// Human-readable label for chart titles.
    pub fn label(&self) -> &'static str {
        match self {
            ComponentKind::AppBar => "App Bar",
            ComponentKind::FloatingActionButton => "Floating Action Button",
            ComponentKind::BottomNavigation => "Bottom Navigation",
            ComponentKind::NavigationDrawer => "Navigation Drawer",
            ComponentKind::SnackBar => "Snack Bar",
            ComponentKind::TabLayout => "Tab Layout",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComponentKind {
    type Err = UnknownKind;

    /// Accepts the stable name, the label, or abbreviations like `fab`,
    /// ignoring case, spaces, dashes and underscores.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .collect::<String>()
            .to_ascii_lowercase();
        let kind = match key.as_str() {
            "appbar" => ComponentKind::AppBar,
            "floatingactionbutton" | "fab" => ComponentKind::FloatingActionButton,
            "bottomnavigation" | "bottomnav" => ComponentKind::BottomNavigation,
            "navigationdrawer" | "drawer" => ComponentKind::NavigationDrawer,
            "snackbar" => ComponentKind::SnackBar,
            "tablayout" | "tabs" => ComponentKind::TabLayout,
            _ => return Err(UnknownKind(s.to_string())),
        };
        Ok(kind)
    }
}
