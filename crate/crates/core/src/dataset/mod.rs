//! Labels, manifests, splitting and image loading.

mod image;
mod labels;
mod manifest;
mod split;
mod synth;

pub use self::image::{decode_rgb, load_image, load_image_path, resize_bilinear, ImageTensor};
pub use labels::{
    fitzpatrick_to_tone, FitzpatrickType, GenderLabel, GroupKey, Origin, SkinTone, Split,
};
pub use manifest::{
    group_distribution, load_manifest, save_manifest, DatasetManifest, ImageRecord,
    MANIFEST_HEADER,
};
pub use split::{split_dataset, SplitFractions};
pub use synth::{generate_synthetic, synth_image, SynthConfig};
