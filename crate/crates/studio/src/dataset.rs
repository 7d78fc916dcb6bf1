//! On-disk dataset layout and generation.
//!
//! A dataset root holds one directory per subject
//! (`subject_<seed>/`). Each subject directory contains:
//!
//! - `manifest.json` — everything needed to regenerate the subject and
//!   sequence bit-for-bit (seeds, motion, sizes, studio configuration).
//! - `mesh.obj` / `mesh.json` — deformable template and skinning sidecar.
//! - `labels_gt.json` — ground-truth part assignment as per-part vertex
//!   index lists.
//! - `poses.json`, `camera.json` — the monocular track and its camera.
//! - `frames/NNNN.png|.flt` — clean RGB (PNG preview, float32 exact).
//! - `normal/NNNN.flt`, `depth/NNNN.flt` — estimated maps (noisy when the
//!   manifest says so), `sil/NNNN.flt` — exact soft silhouette.
//! - `seg/NNNN.png` — paletted segmentation label map.
//! - `views/` — a ring of static rest-pose views (segmentation, depth,
//!   camera) used to lift 2-D part labels onto the template.

use std::path::{Path, PathBuf};

use draper_core::body::{load_camera, load_pose_track, save_camera, save_mesh, save_pose_track, Camera, Pose};
use draper_core::error::{Error, Result};
use draper_core::img::{load_flt, load_png_labels, save_flt, save_png_labels, save_png_rgb};
use draper_core::parts::{partition, PartLabel};
use draper_core::render::RasterConfig;
use draper_core::scalar::Real;
use draper_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::motion::MotionSpec;
use crate::sequence::{
    apply_map_noise, frame_camera, orbit_camera, sequence_from_poses, FrameMaps,
};
use crate::subject::{generate_subject, StudioConfig, SubjectAsset};

pub const MANIFEST_VERSION: u32 = 1;

/// What to generate for one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    /// Subject identity seed (also names the directory).
    pub seed: u64,
    pub motion: MotionSpec,
    pub fps: f64,
    pub duration: f64,
    pub width: usize,
    pub height: usize,
    /// Additive noise on the estimated normal/depth maps, in map units.
    pub noise_sigma: f64,
    /// Number of rest-pose ring views for label lifting.
    pub views: usize,
    /// Resolution of the ring views (square).
    pub view_resolution: usize,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        SequenceSpec {
            seed: 0,
            motion: MotionSpec::Walk,
            fps: 30.0,
            duration: 20.0,
            width: 64,
            height: 64,
            noise_sigma: 0.05,
            views: 8,
            view_resolution: 128,
        }
    }
}

/// Everything needed to reproduce a subject directory bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub motion: MotionSpec,
    pub fps: f64,
    pub duration: f64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub views: usize,
    pub view_resolution: usize,
    pub studio: StudioConfig,
}

/// Paths inside one subject directory.
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    root: PathBuf,
}

pub fn subject_dir_name(seed: u64) -> String {
    format!("subject_{seed}")
}

impl DatasetPaths {
    /// `root` is the subject directory itself.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetPaths { root: root.into() }
    }

    /// The subject directory for `seed` under a dataset root.
    pub fn for_subject(dataset_root: &Path, seed: u64) -> Self {
        DatasetPaths { root: dataset_root.join(subject_dir_name(seed)) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    /// Stem path for the template mesh (`.obj` and `.json` are appended).
    pub fn mesh(&self) -> PathBuf {
        self.root.join("mesh")
    }
    pub fn labels(&self) -> PathBuf {
        self.root.join("labels_gt.json")
    }
    pub fn poses(&self) -> PathBuf {
        self.root.join("poses.json")
    }
    pub fn camera(&self) -> PathBuf {
        self.root.join("camera.json")
    }
    pub fn frame_png(&self, k: usize) -> PathBuf {
        self.root.join("frames").join(format!("{k:04}.png"))
    }
    pub fn frame_flt(&self, k: usize) -> PathBuf {
        self.root.join("frames").join(format!("{k:04}.flt"))
    }
    pub fn seg(&self, k: usize) -> PathBuf {
        self.root.join("seg").join(format!("{k:04}.png"))
    }
    pub fn normal(&self, k: usize) -> PathBuf {
        self.root.join("normal").join(format!("{k:04}.flt"))
    }
    pub fn depth(&self, k: usize) -> PathBuf {
        self.root.join("depth").join(format!("{k:04}.flt"))
    }
    pub fn sil(&self, k: usize) -> PathBuf {
        self.root.join("sil").join(format!("{k:04}.flt"))
    }
    pub fn view_seg(&self, k: usize) -> PathBuf {
        self.root.join("views").join(format!("seg_{k:02}.png"))
    }
    pub fn view_depth(&self, k: usize) -> PathBuf {
        self.root.join("views").join(format!("depth_{k:02}.flt"))
    }
    pub fn view_camera(&self, k: usize) -> PathBuf {
        self.root.join("views").join(format!("camera_{k:02}.json"))
    }
}

/// Ground-truth part assignment, stored as index lists per part.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSets {
    pub face: Vec<usize>,
    pub hands: Vec<usize>,
    pub cloth: Vec<usize>,
    pub body: Vec<usize>,
}

impl LabelSets {
    pub fn from_labels(labels: &[PartLabel]) -> Self {
        let p = partition(labels, None);
        LabelSets { face: p.face, hands: p.hands, cloth: p.cloth, body: p.body }
    }

    /// Back to a dense per-vertex label vector.
    pub fn to_labels(&self, num_vertices: usize) -> Result<Vec<PartLabel>> {
        let mut out = vec![None; num_vertices];
        for (label, set) in [
            (PartLabel::Face, &self.face),
            (PartLabel::Hands, &self.hands),
            (PartLabel::Cloth, &self.cloth),
            (PartLabel::Body, &self.body),
        ] {
            for &i in set {
                if i >= num_vertices {
                    return Err(Error::Contract(format!(
                        "label index {i} out of range for {num_vertices} vertices"
                    )));
                }
                if out[i].replace(label).is_some() {
                    return Err(Error::Contract(format!("vertex {i} labeled twice")));
                }
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::Contract(format!("vertex {i} has no label"))))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }
}

fn write_frame<T: Real>(paths: &DatasetPaths, k: usize, frame: &FrameMaps<T>, w: usize, h: usize) -> Result<()> {
    save_png_rgb(&frame.rgb, &paths.frame_png(k))?;
    save_flt(&frame.rgb, &paths.frame_flt(k))?;
    save_png_labels(&frame.seg, w, h, &paths.seg(k))?;
    save_flt(&frame.normal, &paths.normal(k))?;
    save_flt(&frame.depth, &paths.depth(k))?;
    save_flt(&frame.silhouette, &paths.sil(k))?;
    Ok(())
}

/// Generate one subject's directory under `dataset_root`. The noise seed is
/// derived from the subject seed so regeneration is exact.
pub fn write_dataset<T: Real>(
    dataset_root: &Path,
    studio: &StudioConfig,
    spec: &SequenceSpec,
) -> Result<DatasetManifest> {
    if spec.views == 0 || spec.view_resolution == 0 {
        return Err(Error::Config("need at least one ring view at nonzero resolution".into()));
    }
    let subject: SubjectAsset<T> = generate_subject(spec.seed, studio)?;
    let paths = DatasetPaths::for_subject(dataset_root, spec.seed);
    for sub in ["frames", "seg", "normal", "depth", "sil", "views"] {
        std::fs::create_dir_all(paths.root().join(sub))?;
    }

    let camera = frame_camera(&subject.mesh, spec.width, spec.height);
    let raster = RasterConfig::new(spec.width, spec.height);
    let seq = crate::sequence::generate_sequence(
        &subject, spec.motion, spec.fps, spec.duration, &camera, &raster,
    )?;
    let noise_seed = spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
    for (k, frame) in seq.frames.iter().enumerate() {
        let mut frame = frame.clone();
        apply_map_noise(&mut frame, spec.noise_sigma, noise_seed, k);
        write_frame(&paths, k, &frame, spec.width, spec.height)?;
    }
    save_pose_track(&seq.poses, &paths.poses())?;
    save_camera(&camera, &paths.camera())?;
    save_mesh(&subject.mesh, &paths.mesh())?;
    LabelSets::from_labels(&subject.gt_labels).save(&paths.labels())?;

    // Rest-pose ring views for label lifting: exact segmentation + depth.
    let rest = vec![Pose::rest(subject.mesh.num_joints(), T::zero())];
    let vres = spec.view_resolution;
    let vraster = RasterConfig::new(vres, vres);
    for k in 0..spec.views {
        let az = 2.0 * std::f64::consts::PI * k as f64 / spec.views as f64;
        let vcam = orbit_camera(&subject.mesh, vres, vres, az, 0.0);
        let vseq = sequence_from_poses(&subject, rest.clone(), spec.fps, &vcam, &vraster)?;
        let vframe = &vseq.frames[0];
        save_png_labels(&vframe.seg, vres, vres, &paths.view_seg(k))?;
        save_flt(&vframe.depth, &paths.view_depth(k))?;
        save_camera(&vcam, &paths.view_camera(k))?;
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: spec.seed,
        motion: spec.motion,
        fps: spec.fps,
        duration: spec.duration,
        frames: seq.frames.len(),
        width: spec.width,
        height: spec.height,
        noise_sigma: spec.noise_sigma,
        noise_seed,
        views: spec.views,
        view_resolution: spec.view_resolution,
        studio: studio.clone(),
    };
    let file = std::fs::File::create(paths.manifest())?;
    serde_json::to_writer_pretty(file, &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(subject_dir: &Path) -> Result<DatasetManifest> {
    let paths = DatasetPaths::new(subject_dir);
    let file = std::fs::File::open(paths.manifest())?;
    let manifest: DatasetManifest = serde_json::from_reader(file)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Contract(format!(
            "manifest version {} (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Load one frame's supervision maps (RGB from the exact float file).
pub fn load_frame<T: Real>(subject_dir: &Path, k: usize) -> Result<FrameMaps<T>> {
    let paths = DatasetPaths::new(subject_dir);
    let rgb = load_flt(&paths.frame_flt(k))?;
    let normal = load_flt(&paths.normal(k))?;
    let depth = load_flt(&paths.depth(k))?;
    let silhouette = load_flt(&paths.sil(k))?;
    let (seg, _, _) = load_png_labels(&paths.seg(k))?;
    Ok(FrameMaps { rgb, normal, depth, silhouette, seg })
}

/// One rest-pose ring view: segmentation labels, depth map, camera.
pub struct RingView<T: Real> {
    pub seg: Vec<u8>,
    pub width: usize,
    pub height: usize,
    pub depth: Tensor<T>,
    pub camera: Camera<T>,
}

pub fn load_views<T: Real>(subject_dir: &Path) -> Result<Vec<RingView<T>>> {
    let manifest = load_manifest(subject_dir)?;
    let paths = DatasetPaths::new(subject_dir);
    (0..manifest.views)
        .map(|k| {
            let (seg, width, height) = load_png_labels(&paths.view_seg(k))?;
            Ok(RingView {
                seg,
                width,
                height,
                depth: load_flt(&paths.view_depth(k))?,
                camera: load_camera(&paths.view_camera(k))?,
            })
        })
        .collect()
}

/// Load the monocular track (poses + camera) for a subject directory.
pub fn load_track<T: Real>(subject_dir: &Path) -> Result<(Vec<Pose<T>>, Camera<T>)> {
    let paths = DatasetPaths::new(subject_dir);
    Ok((load_pose_track(&paths.poses())?, load_camera(&paths.camera())?))
}
