//! Image/mask datasets, nearest-neighbour resizing, synthetic lesions and
//! run configuration files.

mod config;
mod dataset;
mod synthetic;

pub use config::{load_config, parse_config, RunConfig, SyntheticSettings};
pub use dataset::{
    load_dataset, load_image, load_mask, resize, save_gray_png, save_rgb_png, stack_samples, Sample, IMAGE_DIR,
    MASK_DIR,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};
