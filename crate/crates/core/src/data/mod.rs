//! Synthetic long-tailed person-search data: scene generation, instance
//! cropping, augmentation and persistence.

mod augment;
mod config;
mod crop;
mod generic;
mod io;
mod scene;

pub use augment::{
    augment_flip, augment_random_erase, draw_erase_rect, flip_image, EraseFill, EraseParams, HorizontalFlip,
};
pub use config::DatasetConfig;
pub use crop::{crop_instances, resize_image, resize_region, scale_scene, CropSample};
pub use generic::{generic_classes, generic_dataset};
pub use io::{load_dataset, save_dataset, DATASET_FORMAT, DATASET_VERSION};
pub use scene::{generate_dataset, layout, zipf_pmf, Dataset, IdentityAppearance, Query, SceneSample, Split};
