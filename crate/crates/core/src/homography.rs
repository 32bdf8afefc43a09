//! Rotation-only view synthesis by homography warping: the baseline that
//! renders perturbed views without any radiance field. Valid only for
//! pure camera rotations; translation effects are what it cannot model.

use crate::camera::CameraIntrinsics;
use crate::demo::{AugmentedTransition, Demonstration};
use crate::error::Result;
use crate::image::{Image, PixelMask};
use crate::se3::{corrective_action, perturb_pose, sample_perturbation, NoiseParams, Rotation};
use crate::seeding::{derive_seed, hash_bytes, hash_dir, rng_for};
use crate::augment::{splice_gripper, AugmentManifest, AugmentWindow, DemoOutcome};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

/// 3x3 projective map on pixel coordinates, normalized so h[2][2] = 1
/// when that entry is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub h: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn new(mut h: [[f64; 3]; 3]) -> Self {
        let w = h[2][2];
        if w.abs() > 1e-12 {
            for row in h.iter_mut() {
                for v in row.iter_mut() {
                    *v /= w;
                }
            }
        }
        Homography { h }
    }

    pub fn det(&self) -> f64 {
        let m = &self.h;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn mul(&self, o: &Homography) -> Homography {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    r[i][j] += self.h[i][k] * o.h[k][j];
                }
            }
        }
        Homography::new(r)
    }

    pub fn inverse(&self) -> Homography {
        let m = &self.h;
        let det = self.det();
        debug_assert!(det.abs() > 1e-12, "homography must be invertible");
        let inv = 1.0 / det;
        Homography::new([
            [
                (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
            ],
            [
                (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
            ],
            [
                (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
            ],
        ])
    }

    /// Map a pixel coordinate; returns None near the plane at infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = &self.h;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if w.abs() < 1e-12 {
            return None;
        }
        Some((
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        ))
    }
}

/// Homography induced by rotating the camera by `r` about its center:
/// H = K R^T K^-1, mapping original pixel coordinates to the rotated
/// camera's pixel coordinates.
pub fn rotation_homography(intr: &CameraIntrinsics, r: &Rotation) -> Homography {
    let k = [
        [intr.fx, 0.0, intr.cx],
        [0.0, intr.fy, intr.cy],
        [0.0, 0.0, 1.0],
    ];
    let k_inv = [
        [1.0 / intr.fx, 0.0, -intr.cx / intr.fx],
        [0.0, 1.0 / intr.fy, -intr.cy / intr.fy],
        [0.0, 0.0, 1.0],
    ];
    let rt = r.transpose();
    let mut krt = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..3 {
                krt[i][j] += k[i][l] * rt.m[l][j];
            }
        }
    }
    let mut h = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..3 {
                h[i][j] += krt[i][l] * k_inv[l][j];
            }
        }
    }
    Homography::new(h)
}

/// Inverse-mapped bilinear resampling; out-of-bounds pixels take `fill`.
pub fn warp(image: &Image, h: &Homography, fill: [f32; 3]) -> Image {
    let inv = h.inverse();
    let mut out = Image::filled(image.width, image.height, fill);
    for py in 0..image.height {
        for px in 0..image.width {
            let Some((sx, sy)) = inv.apply(px as f64 + 0.5, py as f64 + 0.5) else {
                continue;
            };
            if let Some(c) = bilinear(image, sx - 0.5, sy - 0.5) {
                out.set(px, py, c);
            }
        }
    }
    out
}

/// Mask of warped pixels whose source lies fully inside the image.
pub fn warp_valid_mask(width: usize, height: usize, h: &Homography) -> PixelMask {
    let inv = h.inverse();
    let mut mask = PixelMask::zeros(width, height);
    for py in 0..height {
        for px in 0..width {
            if let Some((sx, sy)) = inv.apply(px as f64 + 0.5, py as f64 + 0.5) {
                let (x, y) = (sx - 0.5, sy - 0.5);
                if x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64 {
                    mask.set(px, py, true);
                }
            }
        }
    }
    mask
}

fn bilinear(img: &Image, x: f64, y: f64) -> Option<[f32; 3]> {
    if x < 0.0 || y < 0.0 || x > (img.width - 1) as f64 || y > (img.height - 1) as f64 {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let tx = (x - x0 as f64) as f32;
    let ty = (y - y0 as f64) as f32;
    let c00 = img.get(x0, y0);
    let c10 = img.get(x1, y0);
    let c01 = img.get(x0, y1);
    let c11 = img.get(x1, y1);
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let top = c00[c] * (1.0 - tx) + c10[c] * tx;
        let bot = c01[c] * (1.0 - tx) + c11[c] * tx;
        out[c] = top * (1.0 - ty) + bot * ty;
    }
    Some(out)
}

/// Rotation-only corrective transitions for one demo: perturbations are
/// sampled with the translation bound forced to zero and images come from
/// a homography warp of the original frame instead of a field render.
pub fn warp_augment_demo(
    demo: &Demonstration,
    cfg_noise: NoiseParams,
    n_aug: usize,
    window: AugmentWindow,
    seed: u64,
    demo_id: usize,
) -> Result<Vec<AugmentedTransition>> {
    let window = window.resolve(demo)?;
    let noise = cfg_noise.rotation_only();
    let r_ec = demo.e_t_c.rotation;
    let mut out = Vec::with_capacity(window.len() * n_aug);
    for k in window {
        let step = &demo.steps[k];
        let fill = step.image.border_mean();
        for i in 0..n_aug {
            let mut rng = rng_for(seed, "aug", &[demo_id as u64, k as u64, i as u64]);
            let eps = sample_perturbation(&noise, &mut rng);
            let pose_tilde = perturb_pose(&step.w_t_e, &eps);
            let action_tilde = corrective_action(&eps, &step.action);
            // conjugate the end-effector rotation into the camera frame
            let r_cam = r_ec.transpose().mul(&eps.rotation).mul(&r_ec);
            let h = rotation_homography(&demo.intrinsics, &r_cam);
            let warped = warp(&step.image, &h, fill);
            let image = splice_gripper(&warped, &step.image, &demo.mask)?;
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

/// Warp-based counterpart of the field pipeline's dataset builder; same
/// layout, same manifest shape.
pub fn build_warp_dataset(
    demos: &[Demonstration],
    noise: NoiseParams,
    n_aug: usize,
    window: AugmentWindow,
    seed: u64,
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
            .map(|(demo_id, demo)| {
                let unit_seed = derive_seed(seed, "demo-unit", &[demo_id as u64]);
                let run = || -> Result<(usize, String)> {
                    let transitions =
                        warp_augment_demo(demo, noise, n_aug, window, seed, demo_id)?;
                    crate::demo::write_aug_demo(out_dir, demo_id, &transitions)?;
                    let hash = hash_dir(&out_dir.join(format!("aug_{demo_id:04}")))?;
                    Ok((transitions.len(), hash))
                };
                match run() {
                    Ok((count, hash)) => DemoOutcome {
                        demo_id,
                        count,
                        seed: unit_seed,
                        diag_psnr: None,
                        error: None,
                        dir_hash: Some(hash),
                    },
                    Err(e) => DemoOutcome {
                        demo_id,
                        count: 0,
                        seed: unit_seed,
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
        config_echo: format!(
            "mode=warp n_aug={} alpha={:.6e} beta_t=0 window={} seed={}",
            n_aug, noise.alpha, window, seed
        ),
        outcomes,
        total,
        content_hash: hash_bytes(hash_input.as_bytes()),
    };
    std::fs::write(out_dir.join("manifest"), manifest.format())?;
    Ok(manifest)
}
