//! Raster container, checkpoints, synthetic scenes and label previews.

pub mod checkpoint;
pub mod container;
pub mod preview;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use container::{decode, encode, load_raster, save_raster, write_atomic, Raster, RasterData};
pub use preview::{encode_label_png, save_label_png, PALETTE};
pub use synth::{synth_dataset, synth_scene, SceneConfig, BANDS, CLASS_NAMES, N_CLASSES};
