//! Two-stage training: stage 1 fits the shared decoder, heads, cloth module,
//! classifier, and one latent per subject across a subject set; stage 2
//! personalizes to a single subject starting from a stage-1 checkpoint (with
//! a freshly initialized latent) or from scratch. Every step draws its
//! subject and frame from a step-indexed stream, so a resumed run replays
//! exactly the schedule of an uninterrupted one.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use draper_core::body::Pose;
use draper_core::error::{Error, Result};
use draper_core::loss::{
    combine_terms, geometry_loss, magnitude_penalty, masked_l1, perceptual_loss, ssim_loss,
    temporal_loss, LossReport,
};
use draper_core::graph::{Graph, NodeId};
use draper_core::nn::{Adam, ParamId};
use draper_core::parts::PartLabel;
use draper_core::render::RasterConfig;
use draper_core::tensor::Tensor;
use draper_studio::subject_dir_name;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{coverage_mask, frame_window, part_mask, SubjectData};
use crate::model::{AvatarModel, ModelSpec};
use crate::Scalar;

/// Final checkpoint name inside the output directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
/// Checkpoint written when a step produces a non-finite loss, holding the
/// last parameters that evaluated cleanly.
pub const LAST_GOOD_FILE: &str = "checkpoint_last_good.bin";
/// Per-step loss log.
pub const LOG_FILE: &str = "train_log.csv";

const LOG_TERMS: [&str; 10] = [
    "rgb",
    "ssim",
    "perceptual",
    "cloth",
    "face_hands",
    "geo_normal",
    "geo_depth",
    "geo_silhouette",
    "temporal",
    "reg",
];

/// Stream `step + 1` of the run seed; stream 0 is reserved for parameter
/// initialization, so step draws never collide with init draws.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step + 1);
    rng
}

pub struct TrainOutcome {
    /// Steps executed in this invocation (a resume counts only its own).
    pub steps_run: u64,
    /// Total training steps completed overall.
    pub final_step: u64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    /// Per-step total loss for the steps this invocation ran.
    pub totals: Vec<Scalar>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: AvatarModel,
    pub adam: Adam<Scalar>,
    pub subjects: Vec<SubjectData>,
    trainable: Vec<Vec<usize>>,
    pub start_step: u64,
}

impl Trainer {
    /// Load data and build (or restore) the model per the configured stage.
    pub fn new(cfg: &TrainConfig, data_root: &Path) -> Result<Self> {
        cfg.validate()?;
        let (model, adam, start_step) = match cfg.stage {
            1 => match &cfg.checkpoint {
                None => {
                    let model = AvatarModel::new(ModelSpec::from_config(cfg))?;
                    (model, Adam::new(cfg.learning_rate), 0)
                }
                Some(path) => {
                    let ck = Checkpoint::load(path)?;
                    let mut want = cfg.subjects.clone();
                    want.sort_unstable();
                    want.dedup();
                    if ck.spec.subjects != want {
                        return Err(Error::Contract(format!(
                            "checkpoint was trained on subjects {:?}, run requests {:?}",
                            ck.spec.subjects, want
                        )));
                    }
                    if ck.config_hash != cfg.hash() {
                        log::warn!("resuming from a checkpoint written under a different config");
                    }
                    let model = AvatarModel::from_checkpoint(&ck)?;
                    let adam = model.restore_adam(&ck, cfg.learning_rate)?;
                    (model, adam, ck.step)
                }
            },
            2 => {
                let target = cfg.subjects[0];
                match &cfg.checkpoint {
                    None => {
                        // validated: from_scratch was requested explicitly
                        let mut solo = cfg.clone();
                        solo.subjects = vec![target];
                        let model = AvatarModel::new(ModelSpec::from_config(&solo))?;
                        (model, Adam::new(cfg.learning_rate), 0)
                    }
                    Some(path) => {
                        let ck = Checkpoint::load(path)?;
                        if ck.spec.subjects == vec![target] {
                            // continuation of an earlier single-subject run
                            let model = AvatarModel::from_checkpoint(&ck)?;
                            let adam = model.restore_adam(&ck, cfg.learning_rate)?;
                            (model, adam, ck.step)
                        } else {
                            // personalize: shared weights carry over, the
                            // target gets a fresh latent, optimizer resets
                            let model = AvatarModel::init_stage2(&ck, target, cfg.seed)?;
                            (model, Adam::new(cfg.learning_rate), 0)
                        }
                    }
                }
            }
            s => return Err(Error::Config(format!("unknown training stage {s}"))),
        };

        let mut subjects = Vec::with_capacity(model.spec.subjects.len());
        let mut trainable = Vec::with_capacity(model.spec.subjects.len());
        for &seed in &model.spec.subjects {
            let dir = data_root.join(subject_dir_name(seed));
            let sub = SubjectData::load(&dir)?;
            log::info!(
                "subject {seed}: {} frames, labels from {}",
                sub.num_frames(),
                sub.labels_source
            );
            let frames = sub.trainable_frames(&model.spec.cloth, cfg.holdout_every);
            if frames.is_empty() {
                return Err(Error::Config(format!(
                    "subject {seed} has no trainable frames (track shorter than the pose \
                     window, or every eligible frame held out)"
                )));
            }
            trainable.push(frames);
            subjects.push(sub);
        }
        Ok(Trainer { cfg: cfg.clone(), model, adam, subjects, trainable, start_step })
    }

    /// Run one optimization step. On a non-finite loss the parameters are
    /// left at their last clean values and the error is returned.
    pub fn train_step(&mut self, step: u64) -> Result<LossReport<Scalar>> {
        let mut rng = step_rng(self.cfg.seed, step);
        let si = rng.gen_range(0..self.subjects.len());
        let k = self.trainable[si][rng.gen_range(0..self.trainable[si].len())];
        let sub = &self.subjects[si];
        let t = sub.timestamps[k];

        let window = frame_window(&sub.timestamps, t, &self.model.spec.cloth)?;
        let wposes: Vec<&Pose<Scalar>> = window.indices.iter().map(|&i| &sub.poses[i]).collect();
        let raster = RasterConfig::new(sub.manifest.width, sub.manifest.height);

        let mut g = Graph::new();
        let bind = self.model.store.bind(&mut g);
        let (out, aux) = self.model.forward_frame(
            &mut g,
            &bind,
            sub.seed,
            &sub.geom,
            &wposes,
            window.alpha,
            &sub.poses[k],
            &sub.camera,
            &raster,
            None,
        )?;

        let maps = sub.frame(k)?;
        let (h, w) = (sub.manifest.height, sub.manifest.width);
        let cloth_mask = part_mask(&maps.seg, h, w, &[PartLabel::Cloth]);
        let fh_mask = part_mask(&maps.seg, h, w, &[PartLabel::Face, PartLabel::Hands]);
        let geo_mask = coverage_mask(&maps.silhouette);
        let weights = &self.cfg.weights;

        let rgb_t = g.constant(maps.rgb.clone());
        let rgb = g.l1(out.rgb, rgb_t);
        let ssim = ssim_loss(&mut g, out.rgb, rgb_t);
        let perceptual = perceptual_loss(&mut g, out.rgb, rgb_t);
        let cloth = masked_l1(&mut g, out.rgb, rgb_t, &cloth_mask);
        let face_hands = masked_l1(&mut g, out.rgb, rgb_t, &fh_mask);
        let geo = geometry_loss(
            &mut g,
            out.normal,
            out.depth,
            out.silhouette,
            &maps.normal,
            &maps.depth,
            &maps.silhouette,
            &geo_mask,
            weights,
        );

        let mut terms: Vec<(&'static str, NodeId, Scalar)> = vec![
            ("rgb", rgb, weights.rgb),
            ("ssim", ssim, weights.ssim),
            ("perceptual", perceptual, weights.perceptual),
            ("cloth", cloth, weights.cloth),
            ("face_hands", face_hands, weights.face_hands),
            ("geo_normal", geo.normal, weights.geo_normal),
            ("geo_depth", geo.depth, weights.geo_depth),
            ("geo_silhouette", geo.silhouette, weights.geo_silhouette),
        ];
        if aux.cloth_dx_steps.len() >= 2 {
            terms.push(("temporal", temporal_loss(&mut g, &aux.cloth_dx_steps), weights.temporal));
        }
        let reg_nodes: Vec<NodeId> = if sub.geom.num_cloth() > 0 {
            vec![aux.static_offsets, aux.dx]
        } else {
            vec![aux.static_offsets]
        };
        terms.push(("reg", magnitude_penalty(&mut g, &reg_nodes), weights.regularizer));

        let (total, report) = combine_terms(&mut g, &terms)?;
        let grads = g.backward(total);

        // keep a copy so a step that lands on non-finite values can roll back
        let snapshot: Vec<Tensor<Scalar>> =
            (0..self.model.store.len()).map(|i| self.model.store.get(ParamId(i)).clone()).collect();
        let adam_before = (self.adam.state().0.to_vec(), self.adam.state().1.to_vec(), self.adam.step_count());
        self.adam.step(&mut self.model.store, &bind, &grads);
        let finite = (0..self.model.store.len())
            .all(|i| self.model.store.get(ParamId(i)).data().iter().all(|v| v.is_finite()));
        if !finite {
            for (i, t) in snapshot.into_iter().enumerate() {
                self.model.store.set(ParamId(i), t);
            }
            self.adam.restore(adam_before.0, adam_before.1, adam_before.2);
            return Err(Error::NonFinite("parameter update".into()));
        }
        Ok(report)
    }

    /// Run the configured number of steps, logging per-step losses and
    /// writing the final checkpoint (plus periodic ones when configured).
    pub fn run(&mut self, out_dir: &Path) -> Result<TrainOutcome> {
        fs::create_dir_all(out_dir).map_err(Error::Io)?;
        let log_path = out_dir.join(LOG_FILE);
        let fresh_log = self.start_step == 0;
        let mut log = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(Error::Io)?;
        if fresh_log {
            writeln!(log, "step,total,{}", LOG_TERMS.join(",")).map_err(Error::Io)?;
        }

        let ck_path = out_dir.join(CHECKPOINT_FILE);
        let hash = self.cfg.hash();
        let total_steps = self.cfg.steps as u64;
        let ck_every = self.cfg.checkpoint_every as u64;
        let mut totals = Vec::new();
        let mut step = self.start_step;
        while step < total_steps {
            match self.train_step(step) {
                Ok(report) => {
                    totals.push(report.total);
                    let mut line = format!("{},{}", step, report.total);
                    for name in LOG_TERMS {
                        let v = report.term(name).map(|t| t.value).unwrap_or(0.0);
                        line.push_str(&format!(",{v}"));
                    }
                    writeln!(log, "{line}").map_err(Error::Io)?;
                    step += 1;
                    if ck_every > 0 && step.is_multiple_of(ck_every) && step < total_steps {
                        let ck = self.model.to_checkpoint(&self.adam, step, hash);
                        ck.save(&out_dir.join(format!("checkpoint_step{step}.bin")))?;
                    }
                    if step.is_multiple_of(25) || step == total_steps {
                        log::info!("step {step}/{total_steps}: loss {:.6}", report.total);
                    }
                }
                Err(Error::NonFinite(term)) => {
                    // parameters still hold the last clean state; save it
                    let ck = self.model.to_checkpoint(&self.adam, step, hash);
                    ck.save(&out_dir.join(LAST_GOOD_FILE))?;
                    return Err(Error::NonFinite(format!(
                        "step {step}: non-finite `{term}`; last clean parameters saved to {}",
                        out_dir.join(LAST_GOOD_FILE).display()
                    )));
                }
                Err(e) => return Err(e),
            }
        }

        let ck = self.model.to_checkpoint(&self.adam, step, hash);
        ck.save(&ck_path)?;
        Ok(TrainOutcome {
            steps_run: step - self.start_step,
            final_step: step,
            checkpoint: ck_path,
            log: log_path,
            totals,
        })
    }
}

/// End-to-end entry point used by the command line.
pub fn run_training(cfg: &TrainConfig, data_root: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, data_root)?;
    trainer.run(out_dir)
}
