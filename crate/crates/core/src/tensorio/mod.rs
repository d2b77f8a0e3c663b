//! On-disk interchange: the `PTNS` tensor container and the JSON scene manifest.

mod manifest;
mod tensor;

pub use manifest::{
    load_manifest, save_manifest, ManifestError, MatchsetEntry, PromptEntry, ProposalEntry, SceneManifest, ViewEntry,
    MANIFEST_VERSION,
};
pub use tensor::{read_tensor, write_tensor, DType, Tensor, TensorData, TensorError, FORMAT_VERSION, MAGIC, MAX_DIMS};
