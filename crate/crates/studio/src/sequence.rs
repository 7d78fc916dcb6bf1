//! Ground-truth sequence rendering.
//!
//! Frames are produced by the same splat rasterizer the trainer
//! differentiates through, applied to ground-truth geometry: skinned body
//! plus spring-simulated garment offsets, with per-vertex ground-truth
//! colors, scales and area-weighted normals. Targets per frame: RGB over a
//! white canvas, encoded normal map, depth map, soft silhouette, and a
//! winner-takes-front segmentation label map.

use draper_core::body::{lbs_deform_plain, vertex_normals_plain, Camera, Pose, SkinnedMesh};
use draper_core::error::{Error, Result};
use draper_core::graph::Graph;
use draper_core::render::{
    project_splats, rasterize_labels_plain, render_gaussians_plain, RasterConfig,
};
use draper_core::scalar::Real;
use draper_core::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::ClothSim;
use crate::motion::{pose_track, MotionSpec};
use crate::subject::SubjectAsset;

/// One frame's supervision maps.
#[derive(Clone, Debug)]
pub struct FrameMaps<T: Real> {
    /// `[H,W,3]` color over white.
    pub rgb: Tensor<T>,
    /// `[H,W,3]` alpha-normalized encoded normals, (n+1)/2.
    pub normal: Tensor<T>,
    /// `[H,W,1]` alpha-normalized camera-space depth.
    pub depth: Tensor<T>,
    /// `[H,W,1]` accumulated alpha.
    pub silhouette: Tensor<T>,
    /// `H·W` palette indices (0 = background).
    pub seg: Vec<u8>,
}

/// A rendered monocular sequence.
#[derive(Clone, Debug)]
pub struct Sequence<T: Real> {
    pub poses: Vec<Pose<T>>,
    pub camera: Camera<T>,
    pub fps: f64,
    pub frames: Vec<FrameMaps<T>>,
}

fn mesh_bounds<T: Real>(mesh: &SkinnedMesh<T>) -> ([f64; 3], [f64; 3]) {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for i in 0..mesh.num_vertices() {
        let v = mesh.vertex(i);
        for k in 0..3 {
            let c = v[k].to_f64c();
            min[k] = min[k].min(c);
            max[k] = max[k].max(c);
        }
    }
    (min, max)
}

fn framing<T: Real>(mesh: &SkinnedMesh<T>) -> ([f64; 3], f64) {
    let (min, max) = mesh_bounds(mesh);
    let center = [
        (min[0] + max[0]) / 2.0,
        (min[1] + max[1]) / 2.0,
        (min[2] + max[2]) / 2.0,
    ];
    let r = ((max[0] - min[0]) / 2.0).max((max[1] - min[1]) / 2.0).max(0.1);
    (center, r)
}

/// Fraction of the half-image the canonical subject fills.
const FILL: f64 = 0.85;
/// Camera distance in units of the subject's canonical half-extent.
const DISTANCE_FACTOR: f64 = 3.0;

/// Front-facing camera framing the canonical mesh.
pub fn frame_camera<T: Real>(mesh: &SkinnedMesh<T>, width: usize, height: usize) -> Camera<T> {
    orbit_camera(mesh, width, height, 0.0, 0.0)
}

/// Camera orbiting the canonical mesh center: `azimuth` (radians) around the
/// vertical axis, 0 = front; `elevation` tilts the eye upward.
pub fn orbit_camera<T: Real>(
    mesh: &SkinnedMesh<T>,
    width: usize,
    height: usize,
    azimuth: f64,
    elevation: f64,
) -> Camera<T> {
    let (center, r) = framing(mesh);
    let dist = DISTANCE_FACTOR * r;
    let eye = [
        center[0] + dist * azimuth.sin() * elevation.cos(),
        center[1] + dist * elevation.sin(),
        center[2] + dist * azimuth.cos() * elevation.cos(),
    ];
    let fx = FILL * (width.min(height) as f64 / 2.0) * dist / r;
    Camera::look_at(
        [T::from_f64c(eye[0]), T::from_f64c(eye[1]), T::from_f64c(eye[2])],
        [T::from_f64c(center[0]), T::from_f64c(center[1]), T::from_f64c(center[2])],
        T::from_f64c(fx),
        width,
        height,
    )
}

/// Value-only splat projection, via the differentiable path on constants.
fn project_plain<T: Real>(
    means3d: &Tensor<T>,
    scales: &Tensor<T>,
    camera: &Camera<T>,
    cfg: &RasterConfig<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let mut g = Graph::new();
    let m = g.constant(means3d.clone());
    let s = g.constant(scales.clone());
    let proj = project_splats(&mut g, m, s, camera, cfg);
    (g.value(proj.means2d).clone(), g.value(proj.sigmas).clone(), proj.depths)
}

/// Render one frame of ground truth from deformed vertex positions.
pub fn render_frame<T: Real>(
    subject: &SubjectAsset<T>,
    positions: &Tensor<T>,
    camera: &Camera<T>,
    raster: &RasterConfig<T>,
) -> FrameMaps<T> {
    let normals = vertex_normals_plain(positions, &subject.mesh.faces);
    let r = render_gaussians_plain(
        positions,
        &subject.gt_scales,
        &subject.gt_colors,
        &normals,
        camera,
        raster,
    );
    let (m2, sg, dp) = project_plain(positions, &subject.gt_scales, camera, raster);
    let labels: Vec<u8> = subject.gt_labels.iter().map(|l| l.palette_index()).collect();
    let seg = rasterize_labels_plain(&m2, &sg, &labels, &dp, raster);
    FrameMaps { rgb: r.rgb, normal: r.normal, depth: r.depth, silhouette: r.silhouette, seg }
}

/// Ground-truth world-space garment offsets per frame (zeros off the cloth).
pub fn offset_track<T: Real>(
    subject: &SubjectAsset<T>,
    poses: &[Pose<T>],
    fps: f64,
) -> Vec<Tensor<T>> {
    let n = subject.mesh.num_vertices();
    let zero = Tensor::zeros([n, 3]);
    let mut sim = ClothSim::new(&subject.garment, fps, subject.cloth_vertices());
    poses
        .iter()
        .map(|pose| {
            let skinned = lbs_deform_plain(&subject.mesh.vertices, &zero, pose, &subject.mesh);
            sim.step(&skinned)
        })
        .collect()
}

/// Ground-truth deformed vertex positions per frame: skinning plus the
/// garment oscillator's world-space offsets.
pub fn deformed_track<T: Real>(
    subject: &SubjectAsset<T>,
    poses: &[Pose<T>],
    fps: f64,
) -> Vec<Tensor<T>> {
    let n = subject.mesh.num_vertices();
    let zero = Tensor::zeros([n, 3]);
    let mut sim = ClothSim::new(&subject.garment, fps, subject.cloth_vertices());
    poses
        .iter()
        .map(|pose| {
            let skinned = lbs_deform_plain(&subject.mesh.vertices, &zero, pose, &subject.mesh);
            let off = sim.step(&skinned);
            skinned.zip_map(&off, |a, b| a + b)
        })
        .collect()
}

/// Render a full sequence from explicit poses (the cloth state is integrated
/// in pose order, so the track must be chronological).
pub fn sequence_from_poses<T: Real>(
    subject: &SubjectAsset<T>,
    poses: Vec<Pose<T>>,
    fps: f64,
    camera: &Camera<T>,
    raster: &RasterConfig<T>,
) -> Result<Sequence<T>> {
    if poses.is_empty() {
        return Err(Error::Config("sequence needs at least one pose".into()));
    }
    if fps <= 0.0 {
        return Err(Error::Config("frame rate must be positive".into()));
    }
    let frames = deformed_track(subject, &poses, fps)
        .iter()
        .map(|positions| render_frame(subject, positions, camera, raster))
        .collect();
    Ok(Sequence { poses, camera: camera.clone(), fps, frames })
}

/// Generate a motion's ground-truth sequence.
pub fn generate_sequence<T: Real>(
    subject: &SubjectAsset<T>,
    motion: MotionSpec,
    fps: f64,
    duration: f64,
    camera: &Camera<T>,
    raster: &RasterConfig<T>,
) -> Result<Sequence<T>> {
    let poses = pose_track::<T>(motion, fps, duration)?;
    sequence_from_poses(subject, poses, fps, camera, raster)
}

/// Degrade the estimated maps with additive Gaussian noise (σ in map units):
/// normals and depth — the channels a vision model would predict — while the
/// silhouette, segmentation and RGB stay exact. Frame `frame_idx` draws from
/// its own RNG stream, so noise is independent of generation order.
pub fn apply_map_noise<T: Real>(
    frame: &mut FrameMaps<T>,
    sigma: f64,
    seed: u64,
    frame_idx: usize,
) {
    if sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_idx as u64 + 1);
    for v in frame.normal.data_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += T::from_f64c(sigma * n);
    }
    for v in frame.depth.data_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += T::from_f64c(sigma * n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::pose_track_scaled;
    use crate::subject::{generate_subject, StudioConfig};
    use draper_core::Scalar;

    fn small_config() -> StudioConfig {
        StudioConfig {
            subdivision: 0,
            garment_segments: 8,
            garment_rings: 4,
            ..StudioConfig::default()
        }
    }

    fn max_abs_diff(a: &Tensor<Scalar>, b: &Tensor<Scalar>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_gain_sequence_equals_pure_skinning_renders() {
        let mut cfg = small_config();
        cfg.garment.drive_gain = 0.0;
        cfg.garment.gravity_gain = 0.0;
        let subject = generate_subject::<Scalar>(3, &cfg).unwrap();
        let camera = frame_camera(&subject.mesh, 32, 32);
        let raster = RasterConfig::new(32, 32);
        let seq =
            generate_sequence(&subject, MotionSpec::IdleSway, 10.0, 0.5, &camera, &raster)
                .unwrap();
        assert_eq!(seq.frames.len(), 5);

        let n = subject.mesh.num_vertices();
        let zero = Tensor::zeros([n, 3]);
        for (pose, frame) in seq.poses.iter().zip(&seq.frames) {
            let skinned =
                lbs_deform_plain(&subject.mesh.vertices, &zero, pose, &subject.mesh);
            let direct = render_frame(&subject, &skinned, &camera, &raster);
            assert!(max_abs_diff(&frame.rgb, &direct.rgb) <= 1e-9);
            assert!(max_abs_diff(&frame.normal, &direct.normal) <= 1e-9);
            assert_eq!(frame.seg, direct.seg);
        }
    }

    #[test]
    fn sequences_are_bitwise_deterministic() {
        let cfg = small_config();
        let subject = generate_subject::<Scalar>(8, &cfg).unwrap();
        let camera = frame_camera(&subject.mesh, 24, 24);
        let raster = RasterConfig::new(24, 24);
        let a = generate_sequence(&subject, MotionSpec::Walk, 12.0, 0.5, &camera, &raster)
            .unwrap();
        let b = generate_sequence(&subject, MotionSpec::Walk, 12.0, 0.5, &camera, &raster)
            .unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.rgb.data(), fb.rgb.data());
            assert_eq!(fa.normal.data(), fb.normal.data());
            assert_eq!(fa.depth.data(), fb.depth.data());
            assert_eq!(fa.silhouette.data(), fb.silhouette.data());
            assert_eq!(fa.seg, fb.seg);
        }
    }

    #[test]
    fn doubled_spin_speed_increases_peak_garment_lag() {
        let cfg = small_config();
        let subject = generate_subject::<Scalar>(5, &cfg).unwrap();
        let peak = |speed: f64| -> f64 {
            let poses = pose_track_scaled::<Scalar>(MotionSpec::Spin, 30.0, 2.0, speed).unwrap();
            offset_track(&subject, &poses, 30.0)
                .iter()
                .flat_map(|t| t.data().chunks(3))
                .map(|u| (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt())
                .fold(0.0, f64::max)
        };
        let slow = peak(1.0);
        let fast = peak(2.0);
        assert!(slow > 0.0, "spin produced no lag at all");
        assert!(fast > 1.15 * slow, "lag not monotonic in drive: {fast} vs {slow}");
    }

    #[test]
    fn same_final_pose_different_history_changes_the_cloth() {
        let cfg = small_config();
        let subject = generate_subject::<Scalar>(6, &cfg).unwrap();
        // Both tracks end at the rest pose with identical timestamps; B
        // passes through a sway cycle first (idle-sway at 0.4 Hz is back to
        // zero joint angles at t = 1.25 s).
        let fps = 16.0;
        let frames = 21;
        let rest: Vec<Pose<Scalar>> = (0..frames)
            .map(|k| Pose::rest(subject.mesh.num_joints(), k as f64 / fps))
            .collect();
        let sway = pose_track::<Scalar>(MotionSpec::IdleSway, fps, frames as f64 / fps).unwrap();
        let last = &sway[frames - 1];
        assert!(
            last.joint_rotations.iter().all(|r| r.iter().all(|v| v.abs() < 1e-9)),
            "constructed track must end at rest"
        );
        let a = deformed_track(&subject, &rest, fps);
        let b = deformed_track(&subject, &sway, fps);
        let gap = max_abs_diff(&a[frames - 1], &b[frames - 1]);
        assert!(gap > 1e-5, "history had no effect on the final cloth ({gap})");
    }

    #[test]
    fn map_noise_touches_only_normals_and_depth_at_the_right_level() {
        let cfg = small_config();
        let subject = generate_subject::<Scalar>(2, &cfg).unwrap();
        let camera = frame_camera(&subject.mesh, 48, 48);
        let raster = RasterConfig::new(48, 48);
        let seq = generate_sequence(&subject, MotionSpec::IdleSway, 8.0, 0.25, &camera, &raster)
            .unwrap();
        let clean = seq.frames[0].clone();

        // zero sigma: bitwise untouched
        let mut same = clean.clone();
        apply_map_noise(&mut same, 0.0, 99, 0);
        assert_eq!(same.normal.data(), clean.normal.data());
        assert_eq!(same.depth.data(), clean.depth.data());

        // σ = 0.05: folded-normal mean |ε| = σ·√(2/π) ≈ 0.0399, within 10%
        let mut noisy = clean.clone();
        apply_map_noise(&mut noisy, 0.05, 99, 0);
        let mad: f64 = noisy
            .normal
            .data()
            .iter()
            .zip(clean.normal.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / clean.normal.data().len() as f64;
        let expected = 0.05 * (2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (mad - expected).abs() <= 0.1 * expected,
            "normal-map MAD {mad} vs folded-normal mean {expected}"
        );
        // silhouette, segmentation and RGB stay exact
        assert_eq!(noisy.silhouette.data(), clean.silhouette.data());
        assert_eq!(noisy.seg, clean.seg);
        assert_eq!(noisy.rgb.data(), clean.rgb.data());
        // depth got its own noise
        assert!(max_abs_diff(&noisy.depth, &clean.depth) > 0.0);

        // per-frame streams: same seed, different frame, different noise
        let mut other = clean.clone();
        apply_map_noise(&mut other, 0.05, 99, 1);
        assert_ne!(other.normal.data(), noisy.normal.data());
    }

    #[test]
    fn orbit_camera_keeps_the_subject_in_frame() {
        let cfg = small_config();
        let subject = generate_subject::<Scalar>(12, &cfg).unwrap();
        for az in [0.0, 0.7, std::f64::consts::PI / 2.0, 3.0] {
            let cam = orbit_camera(&subject.mesh, 40, 40, az, 0.1);
            for i in 0..subject.mesh.num_vertices() {
                let ([u, v], z) = cam.project(subject.mesh.vertex(i));
                assert!(z > 0.0, "vertex behind the camera at azimuth {az}");
                assert!(
                    (-2.0..42.0).contains(&u) && (-2.0..42.0).contains(&v),
                    "vertex projects to ({u},{v}) at azimuth {az}"
                );
            }
        }
    }
}
