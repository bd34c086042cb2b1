//! Marketplace metadata table (`package,avg_rating,installs,category`).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("cannot read metadata {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("metadata table: {0}")]
    Csv(#[from] csv::Error),
    #[error("metadata table: {0}")]
    Json(#[from] serde_json::Error),
    #[error("metadata table is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("duplicate package id `{0}` in metadata")]
    DuplicatePackage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppMetadata {
    /// Average user rating in [0, 5].
    pub avg_rating: f64,
    /// Lower bound of the marketplace install bucket.
    pub installs: u64,
    pub category: String,
}

/// A row that was skipped, with the 1-based record number and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub record: usize,
    pub package: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetadataTable {
    pub entries: BTreeMap<String, AppMetadata>,
    pub rejected: Vec<RejectedRow>,
}

impl MetadataTable {
    pub fn get(&self, package_id: &str) -> Option<&AppMetadata> {
        self.entries.get(package_id)
    }
}

/// Parses `"1,000,000+"`, `"500+"` or `"1000"` to the bucket lower bound.
pub fn parse_installs(raw: &str) -> Option<u64> {
    let trimmed = raw.trim();
    let trimmed = trimmed.strip_suffix('+').unwrap_or(trimmed).trim();
    if trimmed.is_empty() {
        return None;
    }
    let digits: String = trimmed.chars().filter(|c| *c != ',' && *c != '_').collect();
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Formats an install count the way the marketplace shows buckets.
pub fn format_installs(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3 + 1);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out.push('+');
    out
}

/// Loads a metadata table; `.json` files hold an array of row objects,
/// anything else is read as CSV.
pub fn load_metadata(path: &Path) -> Result<MetadataTable, MetadataError> {
    let io_err = |source| MetadataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        parse_metadata_json(file)
    } else {
        parse_metadata_csv(file)
    }
}

pub fn parse_metadata_csv<R: Read>(reader: R) -> Result<MetadataTable, MetadataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(MetadataError::MissingColumn(name))
    };
    let (c_pkg, c_rating, c_installs, c_cat) =
        (col("package")?, col("avg_rating")?, col("installs")?, col("category")?);

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        rows.push(RawRow {
            package: field(c_pkg),
            avg_rating: field(c_rating),
            installs: field(c_installs),
            category: field(c_cat),
        });
    }
    build_table(rows)
}

#[derive(Deserialize)]
struct JsonRow {
    package: String,
    avg_rating: serde_json::Value,
    installs: serde_json::Value,
    category: String,
}

pub fn parse_metadata_json<R: Read>(reader: R) -> Result<MetadataTable, MetadataError> {
    let rows: Vec<JsonRow> = serde_json::from_reader(reader)?;
    let scalar = |v: serde_json::Value| match v {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    };
    build_table(
        rows.into_iter()
            .map(|r| RawRow {
                package: r.package,
                avg_rating: scalar(r.avg_rating),
                installs: scalar(r.installs),
                category: r.category,
            })
            .collect(),
    )
}

struct RawRow {
    package: String,
    avg_rating: String,
    installs: String,
    category: String,
}

fn build_table(rows: Vec<RawRow>) -> Result<MetadataTable, MetadataError> {
    let mut table = MetadataTable::default();
    for (i, row) in rows.into_iter().enumerate() {
        let record = i + 1;
        let package = row.package.trim().to_string();
        let reject = |reason: String| RejectedRow {
            record,
            package: package.clone(),
            reason,
        };
        if package.is_empty() {
            table.rejected.push(reject("empty package id".into()));
            continue;
        }
        if table.entries.contains_key(&package) {
            return Err(MetadataError::DuplicatePackage(package));
        }
        let avg_rating = match row.avg_rating.trim().parse::<f64>() {
            Ok(r) if (0.0..=5.0).contains(&r) => r,
            Ok(r) => {
                table.rejected.push(reject(format!("rating {r} outside [0, 5]")));
                continue;
            }
            Err(_) => {
                table
                    .rejected
                    .push(reject(format!("unparseable rating `{}`", row.avg_rating)));
                continue;
            }
        };
        let Some(installs) = parse_installs(&row.installs) else {
            table
                .rejected
                .push(reject(format!("unparseable installs `{}`", row.installs)));
            continue;
        };
        let category = row.category.trim().to_string();
        if category.is_empty() {
            table.rejected.push(reject("empty category".into()));
            continue;
        }
        table.entries.insert(
            package,
            AppMetadata {
                avg_rating,
                installs,
                category,
            },
        );
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn install_bucket_lower_bounds() {
        assert_eq!(parse_installs("1,000,000+"), Some(1_000_000));
        assert_eq!(parse_installs("500+"), Some(500));
        assert_eq!(parse_installs("12345"), Some(12345));
        assert_eq!(parse_installs(" 10,000 + "), Some(10_000));
        assert_eq!(parse_installs("lots"), None);
        assert_eq!(parse_installs("+"), None);
        assert_eq!(parse_installs("-5"), None);
        assert_eq!(format_installs(1_000_000), "1,000,000+");
        assert_eq!(format_installs(500), "500+");
    }

    #[test]
    fn parses_quoted_bucket_strings() {
        let csv = "package,avg_rating,installs,category\ncom.a,4.16,\"1,000,000+\",Food & Drink\n";
        let table = parse_metadata_csv(csv.as_bytes()).unwrap();
        let meta = table.get("com.a").unwrap();
        assert_eq!(meta.installs, 1_000_000);
        assert_eq!(meta.avg_rating, 4.16);
        assert_eq!(meta.category, "Food & Drink");
        assert!(table.rejected.is_empty());
    }

    #[test]
    fn duplicate_package_is_an_error() {
        let csv = "package,avg_rating,installs,category\ncom.a,4,10+,X\ncom.a,3,10+,X\n";
        match parse_metadata_csv(csv.as_bytes()) {
            Err(MetadataError::DuplicatePackage(id)) => assert_eq!(id, "com.a"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_rating_is_rejected_and_loading_continues() {
        let csv = "package,avg_rating,installs,category\ncom.a,5.7,10+,X\ncom.b,4.5,junk,X\ncom.c,3.0,100+,Y\n";
        let table = parse_metadata_csv(csv.as_bytes()).unwrap();
        assert_eq!(table.entries.len(), 1);
        assert!(table.get("com.c").is_some());
        assert_eq!(table.rejected.len(), 2);
        assert_eq!(table.rejected[0].package, "com.a");
        assert_eq!(table.rejected[1].package, "com.b");
    }

    #[test]
    fn missing_column_is_reported() {
        let csv = "package,avg_rating,category\ncom.a,4,X\n";
        assert!(matches!(
            parse_metadata_csv(csv.as_bytes()),
            Err(MetadataError::MissingColumn("installs"))
        ));
    }

    #[test]
    fn json_rows() {
        let json = r#"[{"package": "com.a", "avg_rating": 4.2, "installs": "5,000+", "category": "Tools"},
                       {"package": "com.b", "avg_rating": "3.5", "installs": 100, "category": "Tools"}]"#;
        let table = parse_metadata_json(json.as_bytes()).unwrap();
        assert_eq!(table.get("com.a").unwrap().installs, 5000);
        assert_eq!(table.get("com.b").unwrap().avg_rating, 3.5);
    }
}
