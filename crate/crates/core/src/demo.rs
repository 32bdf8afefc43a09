//! Demonstration records and the shared on-disk dataset layout.
//!
//! A demonstration directory holds:
//!
//! ```text
//! demo_0000/
//!   meta            key-value text: intrinsics, hand-eye transform, scene seed
//!   mask.png        binary gripper mask (8-bit gray, 255 = masked)
//!   frames          rows: k  pose(12)  action(12)  gripper(0|1)  image-file
//!   img_0000.png    8-bit RGB observation for step k
//!   preroll         optional rows: i  pose(12)  image-file
//!   pre_0000.png
//!   sfm             optional reconstruction poses: k  world(12)  sfm(12)
//! ```
//!
//! Poses and actions are row-major 3x4 (R | t) transforms, 12 floats.
//! Augmented datasets mirror the layout with rows keyed by (k, i).

use crate::align::{read_pose_pairs, PosePair};
use crate::camera::CameraIntrinsics;
use crate::error::{CoreError, Result};
use crate::image::{Image, PixelMask};
use crate::se3::Transform;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct DemoStep {
    pub image: Image,
    /// Measured end-effector pose at this step (world frame).
    pub w_t_e: Transform,
    /// Relative desired-pose action commanded from this step.
    pub action: Transform,
    pub gripper_close: bool,
}

#[derive(Debug, Clone)]
pub struct Demonstration {
    pub steps: Vec<DemoStep>,
    pub intrinsics: CameraIntrinsics,
    pub e_t_c: Transform,
    pub mask: PixelMask,
    /// Extra posed views used only for field training.
    pub preroll: Vec<(Image, Transform)>,
    pub scene_seed: u64,
}

impl Demonstration {
    /// Step range before the first close command: [0, first_close).
    pub fn pre_grasp_segment(&self) -> std::ops::Range<usize> {
        let end = self
            .steps
            .iter()
            .position(|s| s.gripper_close)
            .unwrap_or(self.steps.len());
        0..end
    }
}

fn fmt_floats(out: &mut String, vals: &[f64]) {
    for v in vals {
        let _ = write!(out, " {v:.17e}");
    }
}

fn parse_floats(fields: &[&str], path: &Path) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|s| {
            s.parse::<f64>().map_err(|e| CoreError::Parse {
                path: path.display().to_string(),
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_demo(dir: &Path, demo: &Demonstration) -> Result<()> {
    fs::create_dir_all(dir)?;
    let intr = &demo.intrinsics;
    let mut meta = String::new();
    let _ = writeln!(meta, "width {}", intr.width);
    let _ = writeln!(meta, "height {}", intr.height);
    let _ = writeln!(
        meta,
        "intrinsics {:.17e} {:.17e} {:.17e} {:.17e}",
        intr.fx, intr.fy, intr.cx, intr.cy
    );
    let mut etc = String::from("e_T_c");
    fmt_floats(&mut etc, &demo.e_t_c.to_row_major());
    let _ = writeln!(meta, "{etc}");
    let _ = writeln!(meta, "scene_seed {}", demo.scene_seed);
    fs::write(dir.join("meta"), meta)?;

    demo.mask.save_png(&dir.join("mask.png"))?;

    let mut frames = String::new();
    for (k, step) in demo.steps.iter().enumerate() {
        let name = format!("img_{k:04}.png");
        step.image.save_png(&dir.join(&name))?;
        let mut row = format!("{k}");
        fmt_floats(&mut row, &step.w_t_e.to_row_major());
        fmt_floats(&mut row, &step.action.to_row_major());
        let _ = write!(row, " {} {name}", step.gripper_close as u8);
        frames.push_str(&row);
        frames.push('\n');
    }
    fs::write(dir.join("frames"), frames)?;

    if !demo.preroll.is_empty() {
        let mut rows = String::new();
        for (i, (img, pose)) in demo.preroll.iter().enumerate() {
            let name = format!("pre_{i:04}.png");
            img.save_png(&dir.join(&name))?;
            let mut row = format!("{i}");
            fmt_floats(&mut row, &pose.to_row_major());
            let _ = write!(row, " {name}");
            rows.push_str(&row);
            rows.push('\n');
        }
        fs::write(dir.join("preroll"), rows)?;
    }
    Ok(())
}

fn take_transform(fields: &[f64]) -> Transform {
    let mut arr = [0.0; 12];
    arr.copy_from_slice(&fields[..12]);
    Transform::from_row_major(&arr)
}

pub fn read_demo(dir: &Path) -> Result<Demonstration> {
    let meta_path = dir.join("meta");
    let meta = fs::read_to_string(&meta_path)?;
    let mut width = 0usize;
    let mut height = 0usize;
    let mut intr_vals = [0.0f64; 4];
    let mut e_t_c = Transform::identity();
    let mut scene_seed = 0u64;
    for line in meta.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("width") => width = it.next().unwrap_or("0").parse().unwrap_or(0),
            Some("height") => height = it.next().unwrap_or("0").parse().unwrap_or(0),
            Some("intrinsics") => {
                let vals = parse_floats(&it.collect::<Vec<_>>(), &meta_path)?;
                intr_vals.copy_from_slice(&vals[..4]);
            }
            Some("e_T_c") => {
                let vals = parse_floats(&it.collect::<Vec<_>>(), &meta_path)?;
                e_t_c = take_transform(&vals);
            }
            Some("scene_seed") => scene_seed = it.next().unwrap_or("0").parse().unwrap_or(0),
            _ => {}
        }
    }
    if width == 0 || height == 0 {
        return Err(CoreError::Parse {
            path: meta_path.display().to_string(),
            msg: "missing image dimensions".into(),
        });
    }
    let intrinsics = CameraIntrinsics::new(
        intr_vals[0],
        intr_vals[1],
        intr_vals[2],
        intr_vals[3],
        width,
        height,
    );
    let mask = PixelMask::load_png(&dir.join("mask.png"))?;

    let frames_path = dir.join("frames");
    let frames = fs::read_to_string(&frames_path)?;
    let mut steps = Vec::new();
    for line in frames.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 27 {
            return Err(CoreError::Parse {
                path: frames_path.display().to_string(),
                msg: format!("expected 27 fields per frame row, got {}", fields.len()),
            });
        }
        let nums = parse_floats(&fields[1..25], &frames_path)?;
        let gripper_close = fields[25] == "1";
        let image = Image::load_png(&dir.join(fields[26]))?;
        steps.push(DemoStep {
            image,
            w_t_e: take_transform(&nums[..12]),
            action: take_transform(&nums[12..24]),
            gripper_close,
        });
    }

    let mut preroll = Vec::new();
    let preroll_path = dir.join("preroll");
    if preroll_path.exists() {
        for line in fs::read_to_string(&preroll_path)?.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let nums = parse_floats(&fields[1..13], &preroll_path)?;
            let image = Image::load_png(&dir.join(fields[13]))?;
            preroll.push((image, take_transform(&nums)));
        }
    }

    Ok(Demonstration {
        steps,
        intrinsics,
        e_t_c,
        mask,
        preroll,
        scene_seed,
    })
}

/// Reconstruction pose pairs for a demo, if present.
pub fn read_demo_sfm(dir: &Path) -> Result<Option<Vec<PosePair>>> {
    let path = dir.join("sfm");
    if path.exists() {
        Ok(Some(read_pose_pairs(&path)?))
    } else {
        Ok(None)
    }
}

/// List demo_* directories under a dataset root, sorted by index.
pub fn list_demo_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .map_or(false, |n| n.starts_with("demo_"))
        })
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// One augmented transition ready for the dataset writer.
#[derive(Debug, Clone)]
pub struct AugmentedTransition {
    pub image: Image,
    pub w_t_e_tilde: Transform,
    pub action_tilde: Transform,
    pub gripper_close: bool,
    /// (demo id, step k, sample i)
    pub source: (usize, usize, usize),
}

/// Write one demo's augmented transitions as `aug_{id:04}` under `root`.
/// The directory is built in a staging location and atomically renamed in.
pub fn write_aug_demo(root: &Path, demo_id: usize, transitions: &[AugmentedTransition]) -> Result<()> {
    let final_dir = root.join(format!("aug_{demo_id:04}"));
    let staging = root.join(format!(".tmp_aug_{demo_id:04}"));
    let _ = fs::remove_dir_all(&staging);
    fs::create_dir_all(&staging)?;
    let mut rows = String::new();
    for tr in transitions {
        let (_, k, i) = tr.source;
        let name = format!("img_{k:04}_{i:04}.png");
        tr.image.save_png(&staging.join(&name))?;
        let mut row = format!("{k} {i}");
        fmt_floats(&mut row, &tr.w_t_e_tilde.to_row_major());
        fmt_floats(&mut row, &tr.action_tilde.to_row_major());
        let _ = write!(row, " {} {name}", tr.gripper_close as u8);
        rows.push_str(&row);
        rows.push('\n');
    }
    fs::write(staging.join("frames"), rows)?;
    let _ = fs::remove_dir_all(&final_dir);
    fs::rename(&staging, &final_dir)?;
    Ok(())
}

/// Load augmented transitions from one `aug_*` directory.
pub fn read_aug_demo(dir: &Path, demo_id: usize) -> Result<Vec<AugmentedTransition>> {
    let frames_path = dir.join("frames");
    let frames = fs::read_to_string(&frames_path)?;
    let mut out = Vec::new();
    for line in frames.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 28 {
            return Err(CoreError::Parse {
                path: frames_path.display().to_string(),
                msg: format!("expected 28 fields per aug row, got {}", fields.len()),
            });
        }
        let k: usize = fields[0].parse().unwrap_or(0);
        let i: usize = fields[1].parse().unwrap_or(0);
        let nums = parse_floats(&fields[2..26], &frames_path)?;
        let gripper_close = fields[26] == "1";
        let image = Image::load_png(&dir.join(fields[27]))?;
        out.push(AugmentedTransition {
            image,
            w_t_e_tilde: take_transform(&nums[..12]),
            action_tilde: take_transform(&nums[12..24]),
            gripper_close,
            source: (demo_id, k, i),
        });
    }
    Ok(out)
}

/// List aug_* directories under an augmented dataset root, sorted.
pub fn list_aug_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .map_or(false, |n| n.starts_with("aug_"))
        })
        .collect();
    dirs.sort();
    Ok(dirs)
}
