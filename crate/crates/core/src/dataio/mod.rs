//! File formats: UEMB embeddings, checkpoints, manifests, qrels, example
//! records and the engine config.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod records;
pub mod uemb;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{load_config, parse_config, EngineConfig};
pub use manifest::{parse_manifest, parse_qrels, Metric, PoolMode, Qrels, TaskManifest};
pub use records::{parse_examples, ExampleRecord};
pub use uemb::{read_embeddings, write_embeddings, Dtype, Embeddings};
