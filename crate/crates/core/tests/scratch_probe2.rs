// temporary tuning probe for the e2e comparison; deleted before final
use spartn_core::augment::*;
use spartn_core::demo::Demonstration;
use spartn_core::field::*;
use spartn_core::policy::{self, PolicySpec, TrainConfig};
use spartn_core::se3::NoiseParams;
use spartn_core::seeding::derive_seed;
use spartn_core::sim::{GraspSim, GripperCmd, SimConfig};
use spartn_core::Vec3;
use std::time::Instant;

fn desk_sim() -> GraspSim {
    let mut cfg = SimConfig::default();
    cfg.spherical_targets = true;
    cfg.start_yaw = 0.35;
    GraspSim::new(cfg)
}

fn collect(sim: &GraspSim, seed: u64, n: usize) -> Vec<Demonstration> {
    let mut demos = Vec::new();
    let mut attempt = 0u64;
    while demos.len() < n {
        let s = derive_seed(seed, "demo", &[attempt]);
        attempt += 1;
        if let Ok(d) = sim.collect_demo(s, None, None) {
            demos.push(d);
        }
    }
    demos
}

fn spec() -> PolicySpec {
    PolicySpec {
        src_width: 64,
        src_height: 64,
        input_size: 32,
        bounds: [0.2, 0.2, 0.2, 0.03, 0.03, 0.03],
    }
}

/// success plus failure-mode counts: (success, never_closed, closed_missed, other)
fn eval_modes(sim: &GraspSim, net: &policy::PolicyNet, n: usize, seed: u64) -> (f64, usize, usize, usize) {
    let mut success = 0;
    let mut never_closed = 0;
    let mut closed_missed = 0;
    let mut other = 0;
    for ep in 0..n {
        let s = derive_seed(seed, "eval-ep", &[ep as u64]);
        let mut st = sim.reset(s).unwrap();
        let mut obs = sim.observe(&st);
        let mut ok = false;
        let mut ever_closed = false;
        for _ in 0..sim.cfg.horizon {
            let a = policy::forward(net, &obs).unwrap();
            if a.gripper == GripperCmd::Close {
                ever_closed = true;
            }
            let (nx, o) = sim.step(&st, &a);
            st = nx;
            obs = o;
            if sim.success(&st) {
                ok = true;
                break;
            }
        }
        if ok {
            success += 1;
        } else if !ever_closed {
            never_closed += 1;
        } else if st.grasped.is_none() {
            closed_missed += 1;
        } else {
            other += 1;
        }
    }
    (success as f64 / n as f64, never_closed, closed_missed, other)
}

#[test]
#[ignore]
fn probe_variants() {
    let sim = desk_sim();
    let seed = 0u64;
    let demos = collect(&sim, seed, 25);
    let spec = spec();
    let original = policy::dataset_from_demos(&demos, &spec);
    let train_cfg = TrainConfig {
        steps: 3500,
        batch: 48,
        lr: 2e-3,
        mix_ratio: 0.5,
        seed: derive_seed(seed, "train", &[]),
    };

    // train fields once
    let t0 = Instant::now();
    let base_aug = AugmentConfig {
        n_aug: 8,
        noise: NoiseParams::new(0.08, 0.008),
        window: AugmentWindow::PreGrasp,
        seed: derive_seed(seed, "augment", &[]),
        field: TrainFieldConfig {
            grid_size: 64,
            iters: 1200,
            rays_per_step: 2048,
            render: RenderConfig::new(48, 0.02, 1.0),
            ..Default::default()
        },
        workspace: Some(Aabb::new(
            Vec3::new(-0.45, -0.45, -0.02),
            Vec3::new(0.45, 0.45, 0.45),
        )),
    };
    let fields: Vec<DemoField> = demos
        .iter()
        .enumerate()
        .map(|(id, d)| train_demo_field(d, None, &base_aug, id).unwrap())
        .collect();
    println!("fields trained in {:.0}s", t0.elapsed().as_secs_f64());

    // BC baseline with the same train budget
    let mut bc_cfg = train_cfg;
    bc_cfg.mix_ratio = 0.0;
    let (bc_net, _) = policy::train(&original, None, &bc_cfg, &spec).unwrap();
    let (bc_sr, nc, cm, ot) = eval_modes(&sim, &bc_net, 100, derive_seed(seed, "eval", &[]));
    println!("bc: sr {bc_sr:.2} never_closed {nc} closed_missed {cm} other {ot}");

    for (label, alpha, beta, n_aug) in [
        ("a08_b008_n8", 0.08, 0.008, 8usize),
        ("a02_b010_n8", 0.02, 0.010, 8),
        ("a05_b012_n12", 0.05, 0.012, 12),
    ] {
        let t1 = Instant::now();
        let mut cfg = base_aug.clone();
        cfg.noise = NoiseParams::new(alpha, beta);
        cfg.n_aug = n_aug;
        let mut transitions = Vec::new();
        for (id, d) in demos.iter().enumerate() {
            transitions.extend(augment_demo(d, &fields[id], &cfg, id).unwrap());
        }
        let augmented = policy::dataset_from_transitions(&transitions, &spec);
        let (net, losses) = policy::train(&original, Some(&augmented), &train_cfg, &spec).unwrap();
        let (sr, nc, cm, ot) = eval_modes(&sim, &net, 100, derive_seed(seed, "eval", &[]));
        println!(
            "spartn {label}: sr {sr:.2} never_closed {nc} closed_missed {cm} other {ot} n_trans {} loss {:.2e} ({:.0}s)",
            transitions.len(),
            losses.last().unwrap(),
            t1.elapsed().as_secs_f64()
        );
    }
}
