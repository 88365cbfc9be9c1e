//! Shared data model: class taxonomy, generator metadata and the manifest file.

mod manifest;
mod taxonomy;

use std::path::Path;

pub use manifest::{
    generator_ids, parse_manifest, read_manifest, validate_manifest, write_manifest, write_manifest_string, Manifest,
    ManifestEntry, Violation, ViolationRule, MANIFEST_VERSION,
};
pub use taxonomy::{ClassDescriptor, ClassKind, ClassTaxonomy, GeneratorFamily, GeneratorInfo, Manipulation};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: invalid {field}: {message}")]
    Parse { line: usize, field: String, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("field {field} cannot be serialized: {value:?}")]
    InvalidField { field: String, value: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
