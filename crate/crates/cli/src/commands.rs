use crate::config::{Method, RunConfig};
use anyhow::{bail, Context, Result};
use spartn_core::augment::{build_augmented_dataset, AugmentConfig, AugmentWindow};
use spartn_core::demo;
use spartn_core::field::{Aabb, RenderConfig, TrainFieldConfig};
use spartn_core::homography::build_warp_dataset;
use spartn_core::policy;
use spartn_core::se3::NoiseParams;
use spartn_core::seeding::{derive_seed, hash_dir};
use spartn_core::sim::GraspSim;
use spartn_core::Vec3;
use std::fs;
use std::path::Path;

/// Workspace box for field bounds: generous enough to cover everything a
/// wrist camera sees over the table.
fn workspace_box() -> Aabb {
    Aabb::new(Vec3::new(-0.45, -0.45, -0.02), Vec3::new(0.45, 0.45, 0.45))
}

/// Replace `dir` with freshly generated content, built in a staging
/// directory and renamed into place.
fn replace_dir(dir: &Path, build: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = dir.parent().context("target dir has a parent")?;
    fs::create_dir_all(parent)?;
    let staging = parent.join(format!(
        ".staging_{}",
        dir.file_name().unwrap().to_string_lossy()
    ));
    let _ = fs::remove_dir_all(&staging);
    fs::create_dir_all(&staging)?;
    build(&staging)?;
    let _ = fs::remove_dir_all(dir);
    fs::rename(&staging, dir)?;
    Ok(())
}

pub fn gen_demos(cfg: &RunConfig) -> Result<()> {
    let method = cfg.method()?;
    let source = method.demo_source();
    let sim = GraspSim::new(cfg.sim_config());
    let dart_noise = match method {
        Method::Dart => Some(NoiseParams::new(cfg.dart.alpha, cfg.dart.beta_t)),
        _ => None,
    };

    for &seed in &cfg.run.seeds {
        let dir = cfg.demos_dir(source, seed);
        replace_dir(&dir, |staging| {
            let mut collected = 0usize;
            let mut attempt = 0u64;
            let mut skipped = 0usize;
            while collected < cfg.env.n_demos {
                let demo_seed = derive_seed(seed, "demo", &[attempt]);
                attempt += 1;
                if attempt > (cfg.env.n_demos as u64) * 20 {
                    bail!(
                        "could not collect {} demos after {} attempts",
                        cfg.env.n_demos,
                        attempt
                    );
                }
                match sim.collect_demo(demo_seed, dart_noise, None) {
                    Ok(d) => {
                        demo::write_demo(&staging.join(format!("demo_{collected:04}")), &d)?;
                        collected += 1;
                    }
                    Err(_) => skipped += 1,
                }
            }
            if skipped > 0 {
                eprintln!("seed {seed}: skipped {skipped} failed episodes");
            }
            Ok(())
        })?;
        let hash = hash_dir(&dir)?;
        println!(
            "gen-demos method={} seed={seed} demos={} content-hash={hash}",
            method.name(),
            cfg.env.n_demos
        );
    }
    Ok(())
}

pub fn augment(cfg: &RunConfig) -> Result<()> {
    let method = cfg.method()?;
    if !method.uses_augmentation() {
        bail!(
            "method '{}' has nothing to augment (only ha and spartn build augmented datasets)",
            method.name()
        );
    }
    let window = AugmentWindow::parse(&cfg.augment.window)
        .with_context(|| format!("bad augment.window '{}'", cfg.augment.window))?;

    let mut any_ok = false;
    for &seed in &cfg.run.seeds {
        let demo_root = cfg.demos_dir("expert", seed);
        if !demo_root.exists() {
            bail!(
                "no demonstrations at {} (run gen-demos first)",
                demo_root.display()
            );
        }
        let dirs = demo::list_demo_dirs(&demo_root)?;
        let out_dir = cfg.aug_dir(method, seed);
        let aug_seed = derive_seed(seed, "augment", &[]);

        let manifest = match method {
            Method::Spartn => {
                let mut demos = Vec::with_capacity(dirs.len());
                for d in &dirs {
                    let demo = demo::read_demo(d)?;
                    let sfm = demo::read_demo_sfm(d)?;
                    demos.push((demo, sfm));
                }
                let aug_cfg = AugmentConfig {
                    n_aug: cfg.augment.n_aug,
                    noise: NoiseParams::new(cfg.augment.alpha, cfg.augment.beta_t),
                    window,
                    seed: aug_seed,
                    field: TrainFieldConfig {
                        grid_size: cfg.augment.grid,
                        iters: cfg.augment.field_steps,
                        rays_per_step: cfg.augment.rays_per_step,
                        render: RenderConfig::new(cfg.augment.samples_per_ray, 0.02, 1.0),
                        ..Default::default()
                    },
                    workspace: Some(workspace_box()),
                };
                let mut built = None;
                replace_dir(&out_dir, |staging| {
                    built = Some(build_augmented_dataset(
                        &demos,
                        &aug_cfg,
                        cfg.augment.parallelism,
                        staging,
                    )?);
                    Ok(())
                })?;
                built.unwrap()
            }
            Method::Ha => {
                let mut demos = Vec::with_capacity(dirs.len());
                for d in &dirs {
                    demos.push(demo::read_demo(d)?);
                }
                let mut built = None;
                replace_dir(&out_dir, |staging| {
                    built = Some(build_warp_dataset(
                        &demos,
                        NoiseParams::new(cfg.augment.alpha, cfg.augment.beta_t),
                        cfg.augment.n_aug,
                        window,
                        aug_seed,
                        cfg.augment.parallelism,
                        staging,
                    )?);
                    Ok(())
                })?;
                built.unwrap()
            }
            _ => unreachable!(),
        };

        let failures = manifest.outcomes.iter().filter(|o| o.error.is_some()).count();
        if failures < manifest.outcomes.len() {
            any_ok = true;
        }
        for o in manifest.outcomes.iter().filter(|o| o.error.is_some()) {
            eprintln!(
                "seed {seed}: demo {} failed: {}",
                o.demo_id,
                o.error.as_deref().unwrap_or("?")
            );
        }
        println!(
            "augment method={} seed={seed} transitions={} failures={failures} content-hash={}",
            method.name(),
            manifest.total,
            manifest.content_hash
        );
    }
    if !any_ok {
        bail!("augmentation failed for every demo");
    }
    Ok(())
}

fn load_demo_dataset(
    cfg: &RunConfig,
    source: &str,
    seed: u64,
    spec: &policy::PolicySpec,
) -> Result<policy::Dataset> {
    let root = cfg.demos_dir(source, seed);
    if !root.exists() {
        bail!(
            "no demonstrations at {} (run gen-demos first)",
            root.display()
        );
    }
    let mut demos = Vec::new();
    for d in demo::list_demo_dirs(&root)? {
        demos.push(demo::read_demo(&d)?);
    }
    let ds = policy::dataset_from_demos(&demos, spec);
    if ds.clamp_warnings > 0 {
        eprintln!(
            "seed {seed}: {} action components clamped to bounds at load",
            ds.clamp_warnings
        );
    }
    Ok(ds)
}

fn load_aug_dataset(
    cfg: &RunConfig,
    method: Method,
    seed: u64,
    spec: &policy::PolicySpec,
) -> Result<policy::Dataset> {
    let root = cfg.aug_dir(method, seed);
    if !root.exists() {
        bail!(
            "no augmented dataset at {} (run augment first)",
            root.display()
        );
    }
    let mut transitions = Vec::new();
    for (id, d) in demo::list_aug_dirs(&root)?.iter().enumerate() {
        transitions.extend(demo::read_aug_demo(d, id)?);
    }
    if transitions.is_empty() {
        bail!("augmented dataset at {} is empty", root.display());
    }
    let ds = policy::dataset_from_transitions(&transitions, spec);
    if ds.clamp_warnings > 0 {
        eprintln!(
            "seed {seed}: {} augmented action components clamped to bounds at load",
            ds.clamp_warnings
        );
    }
    Ok(ds)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let method = cfg.method()?;
    let spec = cfg.policy_spec();
    for &seed in &cfg.run.seeds {
        let original = load_demo_dataset(cfg, method.demo_source(), seed, &spec)?;
        let augmented = if method.uses_augmentation() {
            Some(load_aug_dataset(cfg, method, seed, &spec)?)
        } else {
            None
        };
        let train_cfg = policy::TrainConfig {
            steps: cfg.train.steps,
            batch: cfg.train.batch,
            lr: cfg.train.lr,
            mix_ratio: if augmented.is_some() {
                cfg.train.mix_ratio
            } else {
                0.0
            },
            seed: derive_seed(seed, "train", &[]),
        };
        let (net, losses) = policy::train(&original, augmented.as_ref(), &train_cfg, &spec)?;

        let dir = cfg.policy_dir(method, seed);
        replace_dir(&dir, |staging| {
            policy::save_policy(&net, &staging.join("policy.ckpt"))?;
            let mut csv = String::from("step,loss\n");
            for (i, l) in losses.iter().enumerate() {
                csv.push_str(&format!("{i},{l:.9e}\n"));
            }
            fs::write(staging.join("loss.csv"), csv)?;
            Ok(())
        })?;
        let hash = hash_dir(&dir)?;
        println!(
            "train method={} seed={seed} steps={} final-loss={:.4e} content-hash={hash}",
            method.name(),
            cfg.train.steps,
            losses.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let method = cfg.method()?;
    let sim = GraspSim::new(cfg.sim_config());
    for &seed in &cfg.run.seeds {
        let ckpt = cfg.policy_dir(method, seed).join("policy.ckpt");
        if !ckpt.exists() {
            bail!("no checkpoint at {} (run train first)", ckpt.display());
        }
        let net = policy::load_policy(&ckpt)?;
        let report = policy::evaluate(
            &net,
            &sim,
            cfg.eval.episodes,
            derive_seed(seed, "eval", &[]),
        );
        let dir = cfg.eval_dir(method, seed);
        replace_dir(&dir, |staging| {
            fs::write(staging.join("report.csv"), report.to_csv())?;
            fs::write(
                staging.join("summary"),
                format!(
                    "success_rate {:.4}\nci95 {:.4} {:.4}\nepisodes {}\n",
                    report.success_rate,
                    report.ci95.0,
                    report.ci95.1,
                    report.rows.len()
                ),
            )?;
            Ok(())
        })?;
        let hash = hash_dir(&dir)?;
        println!(
            "eval method={} seed={seed} success={:.3} ci95=[{:.3},{:.3}] content-hash={hash}",
            method.name(),
            report.success_rate,
            report.ci95.0,
            report.ci95.1
        );
    }
    Ok(())
}
