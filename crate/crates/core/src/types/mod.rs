//! Domain types and file formats.

mod bank;
mod cache;
mod catalog;
mod config;
mod embedding;

pub use bank::{ClassPrompts, GeneratorInfo, PromptBank};
pub use cache::{
    decode_embedding_cache, encode_embedding_cache, read_embedding_cache, write_embedding_cache, CacheIndex,
    CACHE_HEADER_LEN, CACHE_MAGIC,
};
pub use catalog::{load_manifest, ClassCatalog, ClassEntry, ClassTag, DatasetManifest, ManifestRecord, Split};
pub use config::{Benchmark, RunConfig};
pub use embedding::{Axis, EmbeddingMatrix, EmbeddingVector, UNIT_NORM_TOLERANCE};
