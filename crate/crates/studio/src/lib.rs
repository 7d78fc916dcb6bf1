//! Synthetic data generation for the clothed-avatar pipeline.
//!
//! Everything a training run consumes is manufactured here, deterministically
//! from a seed:
//! - [`subject`]: a procedural skinned humanoid wearing a tunic-style garment
//!   shell, with per-vertex ground-truth labels, colors and splat scales;
//! - [`motion`]: parametric joint-angle tracks (sway, walk, wave, spin);
//! - [`dynamics`]: the reference garment oscillator — an independent damped
//!   spring per cloth vertex driven by body acceleration and gravity, which
//!   makes ground-truth cloth motion depend on pose *history*;
//! - [`sequence`]: rendered ground-truth frames (RGB, normal, depth,
//!   silhouette, segmentation) through the same rasterizer the trainer uses;
//! - [`dataset`]: the on-disk layout (`subject_<seed>/…`) with a JSON
//!   manifest that makes every byte reproducible.

pub mod dataset;
pub mod dynamics;
pub mod motion;
pub mod sequence;
pub mod subject;

pub use dataset::{
    load_frame, load_manifest, load_track, load_views, subject_dir_name, write_dataset,
    DatasetManifest, DatasetPaths, LabelSets, RingView, SequenceSpec,
};
pub use dynamics::{ClothSim, GarmentParams};
pub use motion::{pose_track, pose_track_scaled, MotionSpec};
pub use sequence::{
    apply_map_noise, deformed_track, frame_camera, generate_sequence, offset_track, orbit_camera,
    render_frame, sequence_from_poses, FrameMaps, Sequence,
};
pub use subject::{body_surface_distance, generate_subject, StudioConfig, SubjectAsset};

/// Default scalar, matching the core crate's trainer precision.
pub type Scalar = draper_core::Scalar;
