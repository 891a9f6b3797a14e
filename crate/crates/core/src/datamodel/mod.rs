//! Class mapping, dataset manifests, train/validation splitting and the
//! preprocessing that turns an 8-bit image into network input.

mod label;
mod manifest;
mod preprocess;
mod split;

pub use label::{label_from_concentration, ClassLabel, CHARACTERIZED_MAX_MG_PER_L, DOMAIN_MAX_MG_PER_L};
pub use manifest::{build_manifest, DatasetManifest, ManifestRow, Split};
pub use preprocess::{preprocess_for_network, preprocess_rgb, resize_bilinear, ChannelMoments, PreprocessSpec};
pub use split::{split_manifest, SplitOptions, SplitStrategy};
