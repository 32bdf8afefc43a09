//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line. Criteria cover the SE(3) algebra, frame alignment, volume
//! rendering, augmentation fidelity and counting, the end-to-end method
//! comparison at desk scale, and whole-pipeline determinism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spartn_core::align::{estimate_scale, solve, world_to_sfm, PosePair, ScaledTransform};
use spartn_core::augment::{
    augment_demo, build_augmented_dataset, splice_gripper, train_demo_field, AugmentConfig,
    AugmentWindow,
};
use spartn_core::camera::CameraIntrinsics;
use spartn_core::demo::Demonstration;
use spartn_core::field::{
    batch_loss_and_grad, frusta_bounds, ray_weights, render, render_ray, Aabb, RadianceField,
    RenderConfig, TrainFieldConfig,
};
use spartn_core::image::{psnr_masked, Image, PixelMask};
use spartn_core::se3::{
    camera_from_ee, compose, corrective_action, from_euler, inverse, perturb_pose,
    sample_perturbation, to_euler, EulerAngles, NoiseParams, Rotation, Transform,
};
use spartn_core::seeding::derive_seed;
use spartn_core::sim::{GraspSim, SimConfig};
use spartn_core::vec3::Vec3;
use std::time::Instant;

fn random_transform(rng: &mut ChaCha8Rng) -> Transform {
    let e = EulerAngles::new(
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-1.4..1.4),
        rng.gen_range(-3.0..3.0),
    );
    Transform::new(
        from_euler(e),
        Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ),
    )
}

fn pass(line: &str) {
    println!("[PASS] {line}");
}

#[test]
fn criterion_1_geometry_suite() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE55);
    let n = 100_000;
    let id = Transform::identity();
    for i in 0..n {
        let a = random_transform(&mut rng);
        let b = random_transform(&mut rng);
        let c = random_transform(&mut rng);

        // group laws
        let assoc_l = compose(&compose(&a, &b), &c);
        let assoc_r = compose(&a, &compose(&b, &c));
        assert!(assoc_l.max_abs_diff(&assoc_r) < 1e-12, "associativity @{i}");
        assert!(compose(&a, &id).max_abs_diff(&a) < 1e-12, "identity @{i}");
        assert!(
            compose(&a, &inverse(&a)).max_abs_diff(&id) < 1e-12,
            "inverse @{i}"
        );

        // Euler round-trip away from gimbal lock
        let e = EulerAngles::new(
            rng.gen_range(-3.1..3.1),
            rng.gen_range(-1.47..1.47),
            rng.gen_range(-3.1..3.1),
        );
        let r = from_euler(e);
        let r2 = from_euler(to_euler(&r));
        let mut max_d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                max_d = max_d.max((r.m[i][j] - r2.m[i][j]).abs());
            }
        }
        assert!(max_d < 1e-12, "euler round trip @{i}: {max_d}");

        // corrective invariance (T eps)(eps^-1 a) = T a
        let t = a;
        let eps = b;
        let act = c;
        let lhs = compose(&perturb_pose(&t, &eps), &corrective_action(&eps, &act));
        let rhs = compose(&t, &act);
        assert!(lhs.max_abs_diff(&rhs) < 1e-12, "corrective invariance @{i}");
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "geometry suite took {dt:.1}s (budget 10s)");
    pass(&format!(
        "criterion 1: geometry suite, {n} instances within 1e-12 in {dt:.1}s"
    ));
}

#[test]
fn criterion_2_alignment_suite() {
    let t0 = Instant::now();
    let truth = Transform::new(
        from_euler(EulerAngles::new(0.4, -0.3, 1.2)),
        Vec3::new(0.5, -0.1, 0.8),
    );

    let make_pairs = |beta: f64, noise: f64, n: usize, rng: &mut ChaCha8Rng| -> Vec<PosePair> {
        (0..n)
            .map(|k| {
                let ang = 0.35 * k as f64;
                let world = Transform::new(
                    from_euler(EulerAngles::new(
                        0.12 * (k as f64).sin(),
                        0.2 * ang.cos(),
                        0.17 * ang,
                    )),
                    Vec3::new(0.25 * ang.cos(), 0.25 * ang.sin(), 0.1 + 0.03 * k as f64),
                );
                let v_t_c = compose(&truth, &world);
                let mut t = v_t_c.translation * beta;
                if noise > 0.0 {
                    for c in [&mut t.x, &mut t.y, &mut t.z] {
                        let u1: f64 = rng.gen_range(1e-12..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        *c += noise
                            * (-2.0 * u1.ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos();
                    }
                }
                PosePair {
                    world,
                    sfm: ScaledTransform::new(v_t_c.rotation, t),
                }
            })
            .collect()
    };

    // noiseless: exact recovery
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let beta_true = 2.4;
    let pairs = make_pairs(beta_true, 0.0, 12, &mut rng);
    let sol = solve(&pairs).unwrap();
    assert!(
        (sol.scale_beta - beta_true).abs() < 1e-9,
        "noiseless beta {}",
        sol.scale_beta
    );
    for (k, t) in sol.v_t_w.iter().enumerate() {
        assert!(t.max_abs_diff(&truth) < 1e-9, "frame @{k}");
    }
    for (k, p) in pairs.iter().enumerate() {
        let back = world_to_sfm(&p.world, &sol, k).unwrap();
        assert!(
            back.as_transform().max_abs_diff(&p.sfm.as_transform()) < 1e-9,
            "pose map @{k}"
        );
    }

    // sigma = 1e-3 translation noise, 20 poses: beta within 1%
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let pairs = make_pairs(beta_true, 1e-3, 20, &mut rng);
        let beta = estimate_scale(&pairs).unwrap();
        worst = worst.max((beta - beta_true).abs() / beta_true);
    }
    assert!(worst < 0.01, "noisy beta worst rel err {worst}");
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 5.0, "alignment suite took {dt:.1}s (budget 5s)");
    pass(&format!(
        "criterion 2: alignment recovery exact noiseless, {:.2}% worst error under noise, {dt:.1}s",
        worst * 100.0
    ));
}

#[test]
fn criterion_3_rendering_suite() {
    // transmittance conservation
    let bounds = Aabb::new(Vec3::new(-0.5, -0.5, -0.5), Vec3::new(0.5, 0.5, 0.5));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut field = RadianceField::new(12, bounds, [0.3; 3]);
    for node in field.data.chunks_exact_mut(4) {
        node[0] = rng.gen_range(0.0..8.0);
        node[1] = rng.gen();
        node[2] = rng.gen();
        node[3] = rng.gen();
    }
    let cfg = RenderConfig::new(64, 0.05, 2.0);
    for trial in 0..50u64 {
        let dir = Vec3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(0.3..1.0),
        )
        .normalized();
        let mut jrng = ChaCha8Rng::seed_from_u64(trial);
        let (w, t_final) = ray_weights(&field, Vec3::new(0.0, 0.0, -1.4), dir, &cfg, &mut jrng);
        let total = w.iter().sum::<f64>() + t_final;
        assert!((total - 1.0).abs() < 1e-6, "conservation: {total}");
    }

    // homogeneous closed form at 256 samples
    let sigma = 2.5;
    let color = [0.7, 0.2, 0.4];
    let mut homog = RadianceField::new(8, bounds, [0.1, 0.9, 0.5]);
    for node in homog.data.chunks_exact_mut(4) {
        node[0] = sigma;
        node[1] = color[0];
        node[2] = color[1];
        node[3] = color[2];
    }
    let cfg = RenderConfig::new(256, 0.05, 0.9);
    let mut jrng = ChaCha8Rng::seed_from_u64(7);
    let got = render_ray(
        &homog,
        Vec3::new(0.0, 0.0, -0.45),
        Vec3::new(0.0, 0.0, 1.0),
        &cfg,
        &mut jrng,
    );
    let trans = (-sigma * (0.9 - 0.05)).exp();
    let mut worst_hom: f64 = 0.0;
    for c in 0..3 {
        let want = color[c] * (1.0 - trans) + homog.background[c] * trans;
        worst_hom = worst_hom.max((got[c] - want).abs());
    }
    assert!(worst_hom < 1e-3, "homogeneous medium error {worst_hom}");

    // analytic voxel gradients vs central differences on an 8^3 grid
    let mut grad_field = RadianceField::new(8, bounds, [0.4, 0.2, 0.1]);
    for node in grad_field.data.chunks_exact_mut(4) {
        node[0] = rng.gen_range(0.5..3.0);
        node[1] = rng.gen_range(0.2..0.8);
        node[2] = rng.gen_range(0.2..0.8);
        node[3] = rng.gen_range(0.2..0.8);
    }
    let gcfg = RenderConfig::new(24, 0.1, 2.2);
    let rays: Vec<(Vec3, Vec3, [f64; 3])> = (0..8)
        .map(|_| {
            (
                Vec3::new(0.0, 0.0, -1.1),
                Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 1.0).normalized(),
                [rng.gen(), rng.gen(), rng.gen()],
            )
        })
        .collect();
    let (_, grad, _) = batch_loss_and_grad(&grad_field, &rays, &gcfg, 55);
    let mut order: Vec<usize> = (0..grad.len()).collect();
    order.sort_by(|&a, &b| grad[b].abs().partial_cmp(&grad[a].abs()).unwrap());
    let h = 1e-5;
    let mut worst_rel: f64 = 0.0;
    let mut checked = 0;
    for &i in order.iter().take(48) {
        if grad[i].abs() < 1e-8 {
            continue;
        }
        let orig = grad_field.data[i];
        grad_field.data[i] = orig + h;
        let (lp, _, _) = batch_loss_and_grad(&grad_field, &rays, &gcfg, 55);
        grad_field.data[i] = orig - h;
        let (lm, _, _) = batch_loss_and_grad(&grad_field, &rays, &gcfg, 55);
        grad_field.data[i] = orig;
        let fd = (lp - lm) / (2.0 * h) * rays.len() as f64;
        worst_rel = worst_rel.max((fd - grad[i]).abs() / grad[i].abs().max(1e-10));
        checked += 1;
    }
    assert!(checked >= 24, "only {checked} gradient entries probed");
    assert!(worst_rel < 1e-4, "gradient check worst rel {worst_rel}");

    // trained field on the standard scene: held-out PSNR >= 25 dB,
    // single-threaded, within 5 minutes
    let budget = Instant::now();
    let sim = GraspSim::new(SimConfig::default());
    let demo = sim.collect_demo(101, None, None).unwrap();
    let pre = demo.pre_grasp_segment();
    assert!(pre.len() >= 6);
    let hold: Vec<usize> = pre.clone().filter(|k| k % 4 == 2).collect();
    let train_demo = Demonstration {
        steps: demo
            .steps
            .iter()
            .enumerate()
            .filter(|(k, _)| !hold.contains(k))
            .map(|(_, s)| s.clone())
            .collect(),
        ..demo.clone()
    };
    let aug_cfg = desk_augment_config(derive_seed(0, "criterion3", &[]));
    let df = train_demo_field(&train_demo, None, &aug_cfg, 0).unwrap();
    let open = invert_mask(&demo.mask);
    let mut min_psnr = f64::INFINITY;
    for &k in &hold {
        let cam = camera_from_ee(&demo.steps[k].w_t_e, &demo.e_t_c);
        let img = render(&df.field, &cam, &demo.intrinsics, &df.render_cfg, 1);
        let p = psnr_masked(&img, &demo.steps[k].image, &open).unwrap();
        min_psnr = min_psnr.min(p);
    }
    let dt = budget.elapsed().as_secs_f64();
    assert!(
        min_psnr >= 25.0,
        "held-out PSNR {min_psnr:.2} dB below 25 dB"
    );
    assert!(dt < 300.0, "field training took {dt:.0}s (budget 300s)");
    pass(&format!(
        "criterion 3: conservation 1e-6, homogeneous {worst_hom:.1e}, gradcheck {worst_rel:.1e}, held-out PSNR {min_psnr:.1} dB in {dt:.0}s"
    ));
}

fn invert_mask(mask: &PixelMask) -> PixelMask {
    let mut out = PixelMask::zeros(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            out.set(x, y, !mask.get(x, y));
        }
    }
    out
}

fn workspace_box() -> Aabb {
    Aabb::new(Vec3::new(-0.45, -0.45, -0.02), Vec3::new(0.45, 0.45, 0.45))
}

fn desk_augment_config(seed: u64) -> AugmentConfig {
    AugmentConfig {
        n_aug: 8,
        noise: NoiseParams::new(0.08, 0.008),
        window: AugmentWindow::PreGrasp,
        seed,
        field: TrainFieldConfig {
            grid_size: 64,
            iters: 1500,
            rays_per_step: 2048,
            render: RenderConfig::new(48, 0.02, 1.0),
            ..Default::default()
        },
        workspace: Some(workspace_box()),
    }
}

#[test]
fn criterion_4_augmentation_fidelity() {
    // paper noise levels: alpha = 0.2 rad, beta = 3 mm
    let sim = GraspSim::new(SimConfig::default());
    let demo = sim.collect_demo(101, None, None).unwrap();
    let state = sim.reset(101).unwrap();
    let mut cfg = desk_augment_config(derive_seed(0, "criterion4", &[]));
    cfg.noise = NoiseParams::new(0.2, 0.003);
    cfg.n_aug = 3;
    let df = train_demo_field(&demo, None, &cfg, 0).unwrap();
    let transitions = augment_demo(&demo, &df, &cfg, 0).unwrap();

    let open = invert_mask(&demo.mask);
    let mut mean = 0.0;
    for tr in &transitions {
        let cam = camera_from_ee(&tr.w_t_e_tilde, &demo.e_t_c);
        let gt = sim.render_at_camera_pose(&state, &cam, true);
        mean += psnr_masked(&tr.image, &gt, &open).unwrap();
    }
    mean /= transitions.len() as f64;
    assert!(
        mean >= 20.0,
        "mean perturbed-view PSNR {mean:.2} dB below 20 dB"
    );

    // splicing is bit-exact on masked pixels
    for tr in transitions.iter().take(10) {
        let (_, k, _) = tr.source;
        let original = &demo.steps[k].image;
        for y in 0..demo.mask.height {
            for x in 0..demo.mask.width {
                if demo.mask.get(x, y) {
                    assert_eq!(
                        tr.image.get(x, y),
                        original.get(x, y),
                        "masked pixel ({x},{y}) not bit-exact"
                    );
                }
            }
        }
    }
    pass(&format!(
        "criterion 4: mean perturbed-view PSNR {mean:.1} dB at alpha=0.2 beta=3mm over {} renders; splice bit-exact",
        transitions.len()
    ));
}

#[test]
fn criterion_5_counting_protocol() {
    // a 20-step demo whose gripper first closes at step 16, augmented with
    // the n_aug=100 / window 5-13 preset, must yield exactly 900 transitions
    let intr = CameraIntrinsics::square(16, 1.0);
    let img = Image::filled(16, 16, [0.5, 0.5, 0.5]);
    let steps: Vec<spartn_core::demo::DemoStep> = (0..20)
        .map(|k| spartn_core::demo::DemoStep {
            image: img.clone(),
            w_t_e: Transform::new(
                Rotation::about_x(std::f64::consts::PI),
                Vec3::new(0.001 * k as f64, 0.0, 0.3 - 0.01 * k as f64),
            ),
            action: Transform::from_translation(Vec3::new(0.0, 0.0, 0.005)),
            gripper_close: k >= 16,
        })
        .collect();
    let demo = Demonstration {
        steps,
        intrinsics: intr,
        e_t_c: Transform::identity(),
        mask: PixelMask::zeros(16, 16),
        preroll: Vec::new(),
        scene_seed: 0,
    };
    let cfg = AugmentConfig {
        n_aug: 100,
        noise: NoiseParams::new(0.2, 0.003),
        window: AugmentWindow::Range { start: 5, end: 13 },
        seed: 9,
        field: TrainFieldConfig {
            grid_size: 8,
            iters: 5,
            rays_per_step: 64,
            render: RenderConfig::new(8, 0.02, 1.0),
            ..Default::default()
        },
        workspace: Some(workspace_box()),
    };
    let df = train_demo_field(&demo, None, &cfg, 0).unwrap();
    let transitions = augment_demo(&demo, &df, &cfg, 0).unwrap();
    assert_eq!(transitions.len(), 900, "9 window steps x 100 samples");

    // every transition preserves the desired world pose exactly
    for tr in &transitions {
        let (_, k, _) = tr.source;
        let step = &demo.steps[k];
        let lhs = compose(&tr.w_t_e_tilde, &tr.action_tilde);
        let rhs = compose(&step.w_t_e, &step.action);
        assert!(lhs.max_abs_diff(&rhs) < 1e-12, "desired-pose preservation");
        assert_eq!(tr.gripper_close, step.gripper_close);
    }

    // dataset-level counting: 2 demos, n_aug=1, window width 3 -> 6 rows
    let dir = std::env::temp_dir().join(format!("count-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let mut small = cfg.clone();
    small.n_aug = 1;
    small.window = AugmentWindow::Range { start: 2, end: 4 };
    let demos = vec![(demo.clone(), None), (demo, None)];
    let manifest = build_augmented_dataset(&demos, &small, 2, &dir).unwrap();
    assert_eq!(manifest.total, 6);
    let _ = std::fs::remove_dir_all(&dir);
    pass("criterion 5: 4.3-preset counting = 900 per 20-step demo; per-transition pose preservation within 1e-12");
}

#[test]
fn criterion_8_determinism() {
    // identical config + seed at every stage must reproduce identical
    // content hashes; exercised on a miniature pipeline
    use spartn_core::policy::{self, PolicySpec, TrainConfig};
    use spartn_core::seeding::hash_dir;

    let mut sim_cfg = SimConfig::default();
    sim_cfg.horizon = 30;
    let sim = GraspSim::new(sim_cfg);
    let base = std::env::temp_dir().join(format!("determinism-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);

    let gen = |tag: &str| -> (String, Vec<Demonstration>) {
        let dir = base.join(tag).join("demos");
        std::fs::create_dir_all(&dir).unwrap();
        let mut demos = Vec::new();
        let mut attempt = 0u64;
        while demos.len() < 2 {
            let s = derive_seed(7, "demo", &[attempt]);
            attempt += 1;
            if let Ok(d) = sim.collect_demo(s, None, None) {
                spartn_core::demo::write_demo(
                    &dir.join(format!("demo_{:04}", demos.len())),
                    &d,
                )
                .unwrap();
                demos.push(d);
            }
        }
        (hash_dir(&dir).unwrap().to_string(), demos)
    };
    let (h1, demos) = gen("a");
    let (h2, _) = gen("b");
    assert_eq!(h1, h2, "demo generation hash mismatch");

    // augmentation stage, run twice with different parallelism
    let mut aug_cfg = desk_augment_config(11);
    aug_cfg.field.grid_size = 16;
    aug_cfg.field.iters = 30;
    aug_cfg.field.rays_per_step = 256;
    aug_cfg.n_aug = 2;
    let pairs: Vec<(Demonstration, Option<Vec<PosePair>>)> =
        demos.iter().map(|d| (d.clone(), None)).collect();
    let d1 = base.join("aug1");
    let d2 = base.join("aug2");
    let m1 = build_augmented_dataset(&pairs, &aug_cfg, 1, &d1).unwrap();
    let m2 = build_augmented_dataset(&pairs, &aug_cfg, 4, &d2).unwrap();
    assert_eq!(
        m1.content_hash, m2.content_hash,
        "augment hash changes with parallelism"
    );
    assert_eq!(hash_dir(&d1).unwrap(), hash_dir(&d2).unwrap());

    // training + checkpoint stage
    let spec = PolicySpec {
        src_width: 64,
        src_height: 64,
        input_size: 32,
        bounds: [0.2, 0.2, 0.2, 0.03, 0.03, 0.03],
    };
    let ds = policy::dataset_from_demos(&demos, &spec);
    let tc = TrainConfig {
        steps: 30,
        batch: 8,
        lr: 1e-3,
        mix_ratio: 0.0,
        seed: 3,
    };
    let save = |tag: &str| -> String {
        let (net, _) = policy::train(&ds, None, &tc, &spec).unwrap();
        let dir = base.join(tag);
        std::fs::create_dir_all(&dir).unwrap();
        policy::save_policy(&net, &dir.join("policy.ckpt")).unwrap();
        hash_dir(&dir).unwrap()
    };
    assert_eq!(save("p1"), save("p2"), "training hash mismatch");

    // evaluation stage
    let (net, _) = policy::train(&ds, None, &tc, &spec).unwrap();
    let r1 = policy::evaluate(&net, &sim, 5, 77);
    let r2 = policy::evaluate(&net, &sim, 5, 77);
    assert_eq!(r1.to_csv(), r2.to_csv(), "evaluation rows mismatch");

    let _ = std::fs::remove_dir_all(&base);
    pass("criterion 8: demo/augment/train/eval stages hash-identical across re-runs and parallelism");
}
