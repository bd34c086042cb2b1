//! Corpus ingestion: view hierarchies, screenshots, marketplace metadata and
//! exclusion lists.

mod corpus;
mod hierarchy;
mod metadata;

pub use corpus::{
    assemble_corpus, load_exclusions, parse_exclusions, AppRecord, Corpus, CorpusError,
    CorpusSummary, ExclusionReason, IngestOptions,
};
pub use hierarchy::{
    infer_virtual_extent, parse_view_hierarchy, HierarchyError, Screen, ScreenshotRef, ViewNode,
    MAX_DEPTH,
};
pub use metadata::{
    format_installs, load_metadata, parse_installs, parse_metadata_csv, parse_metadata_json,
    AppMetadata, MetadataError, MetadataTable, RejectedRow,
};
