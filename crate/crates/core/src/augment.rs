//! Corrective view-synthesis augmentation: train a radiance field per
//! demonstration, sample pose perturbations over the pre-grasp window,
//! relabel with corrective relative actions, render the perturbed views,
//! and splice the gripper region back from the original frames.
//!
//! Augmentation seeds are derived from (demo id, step, sample index), so
//! dataset content is identical no matter how work is scheduled across
//! workers.

use crate::align::{solve, world_to_sfm, AlignmentSolution, PosePair};
use crate::demo::{AugmentedTransition, Demonstration};
use crate::error::{CoreError, Result};
use crate::field::{
    frusta_bounds, render, train_field, Aabb, PosedImage, RadianceField, RenderConfig,
    TrainFieldConfig, TrainLog,
};
use crate::image::{psnr, Image, PixelMask};
use crate::se3::{camera_from_ee, corrective_action, perturb_pose, sample_perturbation, NoiseParams};
use crate::seeding::{derive_seed, hash_bytes, hash_dir, rng_for};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

/// Which steps of a demonstration to augment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentWindow {
    /// Every step before the first gripper close.
    PreGrasp,
    /// Inclusive step range [start, end].
    Range { start: usize, end: usize },
}

impl AugmentWindow {
    /// Resolve against a demo's pre-grasp segment; errors when a fixed
    /// range reaches past it.
    pub fn resolve(&self, demo: &Demonstration) -> Result<std::ops::Range<usize>> {
        let pre = demo.pre_grasp_segment();
        match *self {
            AugmentWindow::PreGrasp => Ok(pre),
            AugmentWindow::Range { start, end } => {
                let range = start..end + 1;
                if start > end || range.end > pre.end {
                    Err(CoreError::WindowOutOfRange {
                        start,
                        end: end + 1,
                        pre_grasp_end: pre.end,
                    })
                } else {
                    Ok(range)
                }
            }
        }
    }

    pub fn parse(s: &str) -> Option<AugmentWindow> {
        if s == "pre-grasp" {
            return Some(AugmentWindow::PreGrasp);
        }
        let (a, b) = s.split_once('-').or_else(|| s.split_once(".."))?;
        Some(AugmentWindow::Range {
            start: a.trim().parse().ok()?,
            end: b.trim().parse().ok()?,
        })
    }
}

impl std::fmt::Display for AugmentWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AugmentWindow::PreGrasp => write!(f, "pre-grasp"),
            AugmentWindow::Range { start, end } => write!(f, "{start}-{end}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub n_aug: usize,
    pub noise: NoiseParams,
    pub window: AugmentWindow,
    pub seed: u64,
    pub field: TrainFieldConfig,
    /// Workspace box intersected with the camera frusta for field bounds.
    pub workspace: Option<Aabb>,
}

impl AugmentConfig {
    /// Deterministic one-line echo for manifests and hashing.
    pub fn echo(&self) -> String {
        format!(
            "n_aug={} alpha={:.6e} beta_t={:.6e} window={} seed={} grid={} iters={} rays={} samples={} near={:.6e} far={:.6e}",
            self.n_aug,
            self.noise.alpha,
            self.noise.beta_t,
            self.window,
            self.seed,
            self.field.grid_size,
            self.field.iters,
            self.field.rays_per_step,
            self.field.render.samples_per_ray,
            self.field.render.near,
            self.field.render.far,
        )
    }
}

/// A trained per-demo field together with the frame it renders in.
pub struct DemoField {
    pub field: RadianceField,
    pub align: Option<AlignmentSolution>,
    pub render_cfg: RenderConfig,
    pub log: TrainLog,
}

/// Train a field on a demo's pre-grasp frames (gripper pixels masked).
///
/// Without reconstruction pairs the field lives in the world frame and
/// trains on calibrated camera poses. With pairs, the scale and per-step
/// frame transforms are estimated first and the field trains directly on
/// the reconstruction poses; rendering then goes through `world_to_sfm`.
pub fn train_demo_field(
    demo: &Demonstration,
    sfm_pairs: Option<&[PosePair]>,
    cfg: &AugmentConfig,
    demo_id: usize,
) -> Result<DemoField> {
    let pre = demo.pre_grasp_segment();
    if pre.len() < 3 {
        return Err(CoreError::InsufficientViews {
            required: 3,
            got: pre.len(),
        });
    }

    let world_cams: Vec<_> = demo.steps[pre.clone()]
        .iter()
        .map(|s| camera_from_ee(&s.w_t_e, &demo.e_t_c))
        .collect();

    let mut views: Vec<PosedImage> = Vec::new();
    let align;
    let render_cfg;
    match sfm_pairs {
        Some(pairs) => {
            if pairs.len() < pre.len() {
                return Err(CoreError::InsufficientViews {
                    required: pre.len(),
                    got: pairs.len(),
                });
            }
            let pairs = &pairs[..pre.len()];
            let sol = solve(pairs)?;
            // train directly on the reconstruction poses; distances scale
            // with the recovered factor
            render_cfg = RenderConfig::new(
                cfg.field.render.samples_per_ray,
                cfg.field.render.near * sol.scale_beta,
                cfg.field.render.far * sol.scale_beta,
            );
            for (k, step) in demo.steps[pre.clone()].iter().enumerate() {
                views.push(PosedImage {
                    image: step.image.clone(),
                    pose: pairs[k].sfm.as_transform(),
                    intrinsics: demo.intrinsics,
                });
            }
            align = Some(sol);
        }
        None => {
            render_cfg = cfg.field.render;
            for (k, step) in demo.steps[pre.clone()].iter().enumerate() {
                views.push(PosedImage {
                    image: step.image.clone(),
                    pose: world_cams[k],
                    intrinsics: demo.intrinsics,
                });
            }
            for (img, ee) in &demo.preroll {
                views.push(PosedImage {
                    image: img.clone(),
                    pose: camera_from_ee(ee, &demo.e_t_c),
                    intrinsics: demo.intrinsics,
                });
            }
            align = None;
        }
    }

    let workspace = match (&align, cfg.workspace) {
        (Some(sol), Some(ws)) => {
            // map the workspace box into the reconstruction frame
            let avg = sol.averaged_frame();
            let mapped = ws.transformed(&avg);
            Some(Aabb::new(
                mapped.lo * sol.scale_beta,
                mapped.hi * sol.scale_beta,
            ))
        }
        (None, ws) => ws,
        (Some(_), None) => None,
    };
    let pose_intr: Vec<_> = views.iter().map(|v| (v.pose, v.intrinsics)).collect();
    let bounds = frusta_bounds(
        &pose_intr,
        render_cfg.near,
        render_cfg.far,
        workspace.as_ref(),
    );

    let mut field_cfg = cfg.field;
    field_cfg.render = render_cfg;
    let seed = derive_seed(cfg.seed, "field", &[demo_id as u64]);
    let (field, log) = train_field(&views, &demo.mask, &field_cfg, bounds, seed)?;
    Ok(DemoField {
        field,
        align,
        render_cfg,
        log,
    })
}

/// Pixelwise select: gripper pixels from the original frame, everything
/// else from the render. Bit-exact on both sides.
pub fn splice_gripper(rendered: &Image, original: &Image, mask: &PixelMask) -> Result<Image> {
    if !rendered.same_size(original)
        || rendered.width != mask.width
        || rendered.height != mask.height
    {
        return Err(CoreError::DimensionMismatch(
            rendered.width,
            rendered.height,
            original.width,
            original.height,
        ));
    }
    let mut out = rendered.clone();
    for y in 0..out.height {
        for x in 0..out.width {
            if mask.get(x, y) {
                out.set(x, y, original.get(x, y));
            }
        }
    }
    Ok(out)
}

/// Generate the corrective transitions for one demo: |window| * n_aug
/// entries, each with a perturbed pose, a corrective relative action, a
/// rendered-then-spliced image, and the copied gripper bit.
pub fn augment_demo(
    demo: &Demonstration,
    demo_field: &DemoField,
    cfg: &AugmentConfig,
    demo_id: usize,
) -> Result<Vec<AugmentedTransition>> {
    let window = cfg.window.resolve(demo)?;
    let mut out = Vec::with_capacity(window.len() * cfg.n_aug);
    for k in window {
        let step = &demo.steps[k];
        for i in 0..cfg.n_aug {
            let mut rng = rng_for(cfg.seed, "aug", &[demo_id as u64, k as u64, i as u64]);
            let eps = sample_perturbation(&cfg.noise, &mut rng);
            let pose_tilde = perturb_pose(&step.w_t_e, &eps);
            let action_tilde = corrective_action(&eps, &step.action);
            let cam_tilde = camera_from_ee(&pose_tilde, &demo.e_t_c);
            let render_pose = match &demo_field.align {
                Some(sol) => world_to_sfm(&cam_tilde, sol, k)?.as_transform(),
                None => cam_tilde,
            };
            let jitter = derive_seed(cfg.seed, "augjitter", &[demo_id as u64, k as u64, i as u64]);
            let rendered = render(
                &demo_field.field,
                &render_pose,
                &demo.intrinsics,
                &demo_field.render_cfg,
                jitter,
            );
            let image = splice_gripper(&rendered, &step.image, &demo.mask)?;
            out.push(AugmentedTransition {
                image,
                w_t_e_tilde: pose_tilde,
                action_tilde,
                gripper_close: step.gripper_close,
                source: (demo_id, k, i),
            });
        }
    }
    Ok(out)
}

/// Per-demo outcome recorded in the manifest.
#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub demo_id: usize,
    pub count: usize,
    pub seed: u64,
    /// Render fidelity diagnostic: field render at the original pose vs
    /// the original frame, averaged over up to three window steps.
    pub diag_psnr: Option<f64>,
    pub error: Option<String>,
    pub dir_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AugmentManifest {
    pub config_echo: String,
    pub outcomes: Vec<DemoOutcome>,
    pub total: usize,
    pub content_hash: String,
}

impl AugmentManifest {
    pub fn format(&self) -> String {
        let mut s = format!("config {}\n", self.config_echo);
        for o in &self.outcomes {
            match &o.error {
                None => {
                    let psnr_txt = o
                        .diag_psnr
                        .map(|p| format!("{p:.3}"))
                        .unwrap_or_else(|| "-".into());
                    let _ = writeln!(
                        s,
                        "demo {} ok count={} seed={} diag_psnr={} hash={}",
                        o.demo_id,
                        o.count,
                        o.seed,
                        psnr_txt,
                        o.dir_hash.as_deref().unwrap_or("-")
                    );
                }
                Some(e) => {
                    let _ = writeln!(s, "demo {} failed error={:?}", o.demo_id, e);
                }
            }
        }
        let _ = writeln!(s, "total count={}", self.total);
        let _ = writeln!(s, "content_hash={}", self.content_hash);
        s
    }
}

fn diag_psnr(demo: &Demonstration, demo_field: &DemoField, cfg: &AugmentConfig) -> Option<f64> {
    let window = cfg.window.resolve(demo).ok()?;
    let mut vals = Vec::new();
    for k in window.take(3) {
        let step = &demo.steps[k];
        let cam = camera_from_ee(&step.w_t_e, &demo.e_t_c);
        let render_pose = match &demo_field.align {
            Some(sol) => world_to_sfm(&cam, sol, k).ok()?.as_transform(),
            None => cam,
        };
        let img = render(
            &demo_field.field,
            &render_pose,
            &demo.intrinsics,
            &demo_field.render_cfg,
            derive_seed(cfg.seed, "diag", &[k as u64]),
        );
        let spliced = splice_gripper(&img, &step.image, &demo.mask).ok()?;
        if let Ok(p) = psnr(&spliced, &step.image) {
            vals.push(p.min(99.0));
        }
    }
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Train fields and augment every demo, writing the dataset under
/// `out_dir` with a manifest. Per-demo failures are recorded and the rest
/// of the pipeline continues. Deterministic for a given config and seed,
/// regardless of `parallelism`.
pub fn build_augmented_dataset(
    demos: &[(Demonstration, Option<Vec<PosePair>>)],
    cfg: &AugmentConfig,
    parallelism: usize,
    out_dir: &Path,
) -> Result<AugmentManifest> {
    std::fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("worker pool");

    let outcomes: Vec<DemoOutcome> = pool.install(|| {
        demos
            .par_iter()
            .enumerate()
            .map(|(demo_id, (demo, sfm))| {
                let seed = derive_seed(cfg.seed, "demo-unit", &[demo_id as u64]);
                let run = || -> Result<(usize, Option<f64>, String)> {
                    let demo_field = train_demo_field(demo, sfm.as_deref(), cfg, demo_id)?;
                    let transitions = augment_demo(demo, &demo_field, cfg, demo_id)?;
                    let diag = diag_psnr(demo, &demo_field, cfg);
                    crate::demo::write_aug_demo(out_dir, demo_id, &transitions)?;
                    let hash = hash_dir(&out_dir.join(format!("aug_{demo_id:04}")))?;
                    Ok((transitions.len(), diag, hash))
                };
                match run() {
                    Ok((count, diag, hash)) => DemoOutcome {
                        demo_id,
                        count,
                        seed,
                        diag_psnr: diag,
                        error: None,
                        dir_hash: Some(hash),
                    },
                    Err(e) => DemoOutcome {
                        demo_id,
                        count: 0,
                        seed,
                        diag_psnr: None,
                        error: Some(e.to_string()),
                        dir_hash: None,
                    },
                }
            })
            .collect()
    });

    let total = outcomes.iter().map(|o| o.count).sum();
    let mut hash_input = String::new();
    for o in &outcomes {
        let _ = writeln!(
            hash_input,
            "{} {}",
            o.demo_id,
            o.dir_hash.as_deref().unwrap_or("failed")
        );
    }
    let manifest = AugmentManifest {
        config_echo: cfg.echo(),
        outcomes,
        total,
        content_hash: hash_bytes(hash_input.as_bytes()),
    };
    std::fs::write(out_dir.join("manifest"), manifest.format())?;
    Ok(manifest)
}

/// Read back just the content hash line of a manifest.
pub fn manifest_content_hash(dir: &Path) -> Result<String> {
    let text = std::fs::read_to_string(dir.join("manifest"))?;
    for line in text.lines() {
        if let Some(h) = line.strip_prefix("content_hash=") {
            return Ok(h.to_string());
        }
    }
    Err(CoreError::Parse {
        path: dir.join("manifest").display().to_string(),
        msg: "missing content_hash".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    #[test]
    fn splice_selects_per_pixel() {
        let rendered = Image::filled(4, 4, [0.1, 0.2, 0.3]);
        let original = Image::filled(4, 4, [0.9, 0.8, 0.7]);
        let mut mask = PixelMask::zeros(4, 4);

        let out = splice_gripper(&rendered, &original, &mask).unwrap();
        assert_eq!(out, rendered);

        for y in 0..4 {
            for x in 0..4 {
                mask.set(x, y, true);
            }
        }
        let out = splice_gripper(&rendered, &original, &mask).unwrap();
        assert_eq!(out, original);

        // checkerboard against a brute-force per-pixel select
        for y in 0..4 {
            for x in 0..4 {
                mask.set(x, y, (x + y) % 2 == 0);
            }
        }
        let out = splice_gripper(&rendered, &original, &mask).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = if (x + y) % 2 == 0 {
                    original.get(x, y)
                } else {
                    rendered.get(x, y)
                };
                assert_eq!(out.get(x, y), want);
            }
        }

        let small = Image::filled(3, 4, [0.0; 3]);
        assert!(splice_gripper(&small, &original, &mask).is_err());
    }

    #[test]
    fn window_resolution_and_parsing() {
        assert_eq!(AugmentWindow::parse("pre-grasp"), Some(AugmentWindow::PreGrasp));
        assert_eq!(
            AugmentWindow::parse("5-13"),
            Some(AugmentWindow::Range { start: 5, end: 13 })
        );
        assert_eq!(
            AugmentWindow::parse("5..13"),
            Some(AugmentWindow::Range { start: 5, end: 13 })
        );
        assert_eq!(AugmentWindow::parse("nope"), None);
    }
}
