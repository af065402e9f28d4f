//! Event streams to sparse voxel tensors.

pub mod augment;
pub mod container;
pub mod encode;
pub mod events;
pub mod labels;

pub use augment::{augment, Augmentation, AugmentationRegistry};
pub use container::{decode_container, encode_container, read_container, write_container};
pub use encode::{
    temporal_bin, voxelize_window, voxelize_with, EncoderRegistry, FeatureEncoder, HotPixelScope,
    RangeMode, VoxelizerConfig,
};
pub use events::{hot_pixel_filter, slice_windows, Event, EventStream, Polarity};
pub use labels::{parse_yolo_labels, read_yolo_labels};

use crate::error::Result;
use crate::tensor::SparseTensor3D;

/// Hot-pixel filtering and window slicing of a whole recording; each window
/// is re-based to its own start time.
pub fn prepare_windows(stream: &EventStream, config: &VoxelizerConfig) -> Result<Vec<EventStream>> {
    config.validate()?;
    let filter = |s: &EventStream| {
        if config.hot_pixel_factor > 0.0 {
            hot_pixel_filter(s, config.hot_pixel_factor).0
        } else {
            s.clone()
        }
    };
    Ok(match config.hot_pixel_scope {
        HotPixelScope::Recording => slice_windows(&filter(stream), config.window_us),
        HotPixelScope::Window => slice_windows(stream, config.window_us)
            .iter()
            .map(filter)
            .collect(),
    })
}

/// Hot-pixel filtering, window slicing and voxelization of a whole recording.
pub fn voxelize_stream(stream: &EventStream, config: &VoxelizerConfig) -> Result<Vec<SparseTensor3D>> {
    prepare_windows(stream, config)?
        .iter()
        .map(|w| voxelize_window(w, config))
        .collect()
}
