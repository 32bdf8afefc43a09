//! Quasi-static eye-in-hand grasping environment over procedural primitive
//! scenes, with an analytic ray-traced wrist camera that doubles as the
//! ground-truth view oracle for the radiance field.
//!
//! The world frame has +z up, the table at z = table_height. The
//! end-effector frame has +z pointing along the approach axis (down when
//! the gripper faces the table); the wrist camera is rigidly mounted via a
//! fixed hand-eye transform and looks along the end-effector z axis.
//! Control is Cartesian-kinematic: a step composes the commanded relative
//! pose onto the current pose (a perfect stabilizing controller), so the
//! scene only changes when the gripper deliberately grasps or releases.

use crate::camera::CameraIntrinsics;
use crate::demo::{DemoStep, Demonstration};
use crate::error::{CoreError, Result};
use crate::image::{Image, PixelMask};
use crate::se3::{
    camera_from_ee, compose, from_euler, inverse, sample_perturbation, to_euler, EulerAngles,
    NoiseParams, Rotation, Transform,
};
use crate::seeding::rng_for;
use crate::vec3::Vec3;
use rand::Rng;

/// Primitive shapes, in a canonical centered object frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half: Vec3 },
    Cylinder { radius: f64, half_height: f64 },
}

impl Shape {
    /// Distance from the table plane to the resting center height.
    fn rest_height(&self) -> f64 {
        match self {
            Shape::Sphere { radius } => *radius,
            Shape::Box { half } => half.z,
            Shape::Cylinder { half_height, .. } => *half_height,
        }
    }

    /// Conservative horizontal footprint radius for placement checks.
    fn footprint_radius(&self) -> f64 {
        match self {
            Shape::Sphere { radius } => *radius,
            Shape::Box { half } => (half.x * half.x + half.y * half.y).sqrt(),
            Shape::Cylinder { radius, .. } => *radius,
        }
    }

}

#[derive(Debug, Clone, Copy)]
pub struct SceneObject {
    pub shape: Shape,
    pub pose: Transform,
    pub color: [f32; 3],
    pub is_target: bool,
}

impl SceneObject {
    /// Lowest point of the object in world z.
    pub fn lowest_point(&self) -> f64 {
        let c = self.pose.translation.z;
        match self.shape {
            Shape::Sphere { radius } => c - radius,
            // boxes and cylinders stay axis-aligned in z (yaw-only poses);
            // when carried by the gripper this is approximate but only the
            // sign of the lift matters
            Shape::Box { half } => c - half.z,
            Shape::Cylinder { half_height, .. } => c - half_height,
        }
    }

    /// Signed distance from a world point to the object surface
    /// (negative inside). Exact for spheres and boxes, exact for
    /// cylinders up to the edge rounding.
    pub fn surface_distance(&self, p_world: Vec3) -> f64 {
        let p = inverse(&self.pose).apply(p_world);
        match self.shape {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Box { half } => {
                let q = Vec3::new(p.x.abs() - half.x, p.y.abs() - half.y, p.z.abs() - half.z);
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let dr = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let dz = p.z.abs() - half_height;
                let outside = Vec3::new(dr.max(0.0), dz.max(0.0), 0.0).norm();
                let inside = dr.max(dz).min(0.0);
                outside + inside
            }
        }
    }

    /// Grasp site in world coordinates: sphere top, box top-face center,
    /// cylinder top rim (object +x side).
    pub fn grasp_site(&self) -> Vec3 {
        let local = match self.shape {
            Shape::Sphere { radius } => Vec3::new(0.0, 0.0, radius),
            Shape::Box { half } => Vec3::new(0.0, 0.0, half.z),
            Shape::Cylinder {
                radius,
                half_height,
            } => Vec3::new(radius, 0.0, half_height),
        };
        self.pose.apply(local)
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub table_height: f64,
    pub seed: u64,
}

impl Scene {
    pub fn target_index(&self) -> usize {
        self.objects
            .iter()
            .position(|o| o.is_target)
            .expect("scene has a target")
    }

    pub fn target(&self) -> &SceneObject {
        &self.objects[self.target_index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripperCmd {
    Open,
    Close,
}

/// Relative desired pose plus the gripper command.
#[derive(Debug, Clone)]
pub struct EnvAction {
    pub delta: Transform,
    pub gripper: GripperCmd,
}

impl EnvAction {
    pub fn noop() -> Self {
        EnvAction {
            delta: Transform::identity(),
            gripper: GripperCmd::Open,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub scene: Scene,
    pub ee_pose: Transform,
    pub gripper_open: bool,
    pub grasped: Option<usize>,
    /// Object pose relative to the end-effector while grasped.
    pub grasp_rel: Option<Transform>,
    pub step_count: usize,
    /// Sticky flag: the gripper body touched a non-grasped object.
    pub collided: bool,
    /// The last action had to be clamped to the action bounds.
    pub last_action_clamped: bool,
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub image: Image,
    pub ee_pose: Transform,
    pub gripper_open: bool,
}

/// Per-dimension action bounds (radians / meters).
#[derive(Debug, Clone, Copy)]
pub struct ActionBounds {
    pub rot: f64,
    pub trans: f64,
}

impl ActionBounds {
    /// Six-vector form: three Euler bounds then three translation bounds.
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.rot, self.rot, self.rot, self.trans, self.trans, self.trans,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub intrinsics: CameraIntrinsics,
    /// Hand-eye transform; the camera sits behind the fingertip along -z.
    pub e_t_c: Transform,
    pub table_height: f64,
    /// Placement region for the target object center (xy half-extent).
    pub target_region: f64,
    /// Placement region for distractors.
    pub distractor_region: f64,
    pub distractors_min: usize,
    pub distractors_max: usize,
    /// Start-pose sampling: xy half-extent and z range for the fingertip.
    pub start_region_xy: f64,
    pub start_z: (f64, f64),
    pub start_yaw: f64,
    pub start_tilt: f64,
    pub bounds: ActionBounds,
    pub grasp_radius: f64,
    pub gripper_body_radius: f64,
    pub lift_height: f64,
    pub horizon: usize,
    /// Restrict the target to spheres (distractors keep all shapes).
    pub spherical_targets: bool,
    /// Expert servo gains and limits.
    pub expert_kp: f64,
    pub expert_max_step: f64,
    pub expert_approach_height: f64,
    /// Close when the fingertip is within this fraction of grasp_radius.
    pub expert_close_frac: f64,
    pub preroll_views: usize,
    pub background: [f32; 3],
    pub table_color: [f32; 3],
    pub light_dir: Vec3,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            intrinsics: CameraIntrinsics::square(64, 1.05),
            e_t_c: Transform::from_translation(Vec3::new(0.0, -0.055, -0.12)),
            table_height: 0.0,
            target_region: 0.07,
            distractor_region: 0.11,
            distractors_min: 0,
            distractors_max: 2,
            start_region_xy: 0.06,
            start_z: (0.20, 0.26),
            start_yaw: 0.5,
            start_tilt: 0.04,
            bounds: ActionBounds {
                rot: 0.2,
                trans: 0.03,
            },
            grasp_radius: 0.015,
            gripper_body_radius: 0.010,
            lift_height: 0.10,
            horizon: 40,
            spherical_targets: false,
            expert_kp: 0.8,
            expert_max_step: 0.02,
            expert_approach_height: 0.05,
            expert_close_frac: 0.4,
            preroll_views: 0,
            background: [0.72, 0.78, 0.84],
            table_color: [0.46, 0.40, 0.34],
            light_dir: Vec3 {
                x: 0.35,
                y: 0.25,
                z: 0.9,
            },
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 1000;
const TARGET_COLOR: [f32; 3] = [0.85, 0.10, 0.10];
const DISTRACTOR_COLORS: [[f32; 3]; 4] = [
    [0.12, 0.25, 0.80],
    [0.10, 0.65, 0.25],
    [0.85, 0.75, 0.12],
    [0.55, 0.20, 0.70],
];

pub struct GraspSim {
    pub cfg: SimConfig,
}

impl GraspSim {
    pub fn new(cfg: SimConfig) -> Self {
        GraspSim { cfg }
    }

    /// Orientation with the approach axis pointing straight down and the
    /// given yaw about the world z axis.
    pub fn down_orientation(yaw: f64) -> Rotation {
        Rotation::about_z(yaw).mul(&Rotation::about_x(std::f64::consts::PI))
    }

    fn sample_shape<R: Rng>(&self, rng: &mut R) -> Shape {
        match rng.gen_range(0..3u32) {
            0 => Shape::Sphere {
                radius: rng.gen_range(0.018..0.028),
            },
            1 => Shape::Box {
                half: Vec3::new(
                    rng.gen_range(0.015..0.028),
                    rng.gen_range(0.015..0.028),
                    rng.gen_range(0.015..0.028),
                ),
            },
            _ => Shape::Cylinder {
                radius: rng.gen_range(0.012..0.020),
                half_height: rng.gen_range(0.020..0.034),
            },
        }
    }

    /// Place objects without interpenetration and sample a start pose.
    pub fn reset(&self, seed: u64) -> Result<EnvState> {
        let cfg = &self.cfg;
        let mut rng = rng_for(seed, "reset", &[]);
        let mut objects: Vec<SceneObject> = Vec::new();

        let n_distractors = rng.gen_range(cfg.distractors_min..=cfg.distractors_max);
        for i in 0..=n_distractors {
            let is_target = i == 0;
            let shape = if is_target && cfg.spherical_targets {
                Shape::Sphere {
                    radius: rng.gen_range(0.018..0.028),
                }
            } else {
                self.sample_shape(&mut rng)
            };
            let region = if is_target {
                cfg.target_region
            } else {
                cfg.distractor_region
            };
            let mut placed = false;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let x = rng.gen_range(-region..region);
                let y = rng.gen_range(-region..region);
                let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let ok = objects.iter().all(|o| {
                    let dx = o.pose.translation.x - x;
                    let dy = o.pose.translation.y - y;
                    let min_sep =
                        o.shape.footprint_radius() + shape.footprint_radius() + 0.005;
                    dx * dx + dy * dy > min_sep * min_sep
                });
                if ok {
                    let pose = Transform::new(
                        Rotation::about_z(yaw),
                        Vec3::new(x, y, cfg.table_height + shape.rest_height()),
                    );
                    let color = if is_target {
                        TARGET_COLOR
                    } else {
                        DISTRACTOR_COLORS[rng.gen_range(0..DISTRACTOR_COLORS.len())]
                    };
                    objects.push(SceneObject {
                        shape,
                        pose,
                        color,
                        is_target,
                    });
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(CoreError::PlacementFailure(PLACEMENT_ATTEMPTS));
            }
        }

        let x = rng.gen_range(-cfg.start_region_xy..cfg.start_region_xy);
        let y = rng.gen_range(-cfg.start_region_xy..cfg.start_region_xy);
        let z = rng.gen_range(cfg.start_z.0..cfg.start_z.1);
        let yaw = rng.gen_range(-cfg.start_yaw..cfg.start_yaw);
        let tilt_a = rng.gen_range(-cfg.start_tilt..cfg.start_tilt);
        let tilt_b = rng.gen_range(-cfg.start_tilt..cfg.start_tilt);
        let orientation = Self::down_orientation(yaw)
            .mul(&Rotation::about_x(tilt_a))
            .mul(&Rotation::about_y(tilt_b));
        let ee_pose = Transform::new(orientation, Vec3::new(x, y, cfg.table_height + z));

        Ok(EnvState {
            scene: Scene {
                objects,
                table_height: cfg.table_height,
                seed,
            },
            ee_pose,
            gripper_open: true,
            grasped: None,
            grasp_rel: None,
            step_count: 0,
            collided: false,
            last_action_clamped: false,
        })
    }

    /// Clamp a relative pose to the per-dimension action bounds.
    pub fn clamp_action(&self, delta: &Transform) -> (Transform, bool) {
        let e = to_euler(&delta.rotation);
        let b = &self.cfg.bounds;
        let ce = EulerAngles::new(
            e.phi.clamp(-b.rot, b.rot),
            e.theta.clamp(-b.rot, b.rot),
            e.varphi.clamp(-b.rot, b.rot),
        );
        let t = delta.translation;
        let ct = Vec3::new(
            t.x.clamp(-b.trans, b.trans),
            t.y.clamp(-b.trans, b.trans),
            t.z.clamp(-b.trans, b.trans),
        );
        let clamped_rot = (ce.phi - e.phi).abs() > 1e-12
            || (ce.theta - e.theta).abs() > 1e-12
            || (ce.varphi - e.varphi).abs() > 1e-12;
        let clamped_t = (ct - t).norm() > 1e-12;
        if clamped_rot || clamped_t {
            (Transform::new(from_euler(ce), ct), true)
        } else {
            (*delta, false)
        }
    }

    /// Fingertip point; the end-effector origin is the grasp point.
    pub fn fingertip(&self, state: &EnvState) -> Vec3 {
        state.ee_pose.translation
    }

    pub fn step(&self, state: &EnvState, action: &EnvAction) -> (EnvState, Observation) {
        let (delta, clamped) = self.clamp_action(&action.delta);
        let mut next = state.clone();
        next.step_count += 1;
        next.last_action_clamped = clamped;
        next.ee_pose = compose(&state.ee_pose, &delta);

        // grasped object rides with the gripper
        if let (Some(idx), Some(rel)) = (next.grasped, next.grasp_rel) {
            next.scene.objects[idx].pose = compose(&next.ee_pose, &rel);
        }

        match action.gripper {
            GripperCmd::Close if next.gripper_open => {
                next.gripper_open = false;
                let tip = self.fingertip(&next);
                let mut best: Option<(usize, f64)> = None;
                for (i, obj) in next.scene.objects.iter().enumerate() {
                    let d = (obj.grasp_site() - tip).norm();
                    if d <= self.cfg.grasp_radius && best.map_or(true, |(_, bd)| d < bd) {
                        best = Some((i, d));
                    }
                }
                if let Some((idx, _)) = best {
                    next.grasped = Some(idx);
                    next.grasp_rel =
                        Some(compose(&inverse(&next.ee_pose), &next.scene.objects[idx].pose));
                }
            }
            GripperCmd::Open if !next.gripper_open => {
                next.gripper_open = true;
                if let Some(idx) = next.grasped.take() {
                    next.grasp_rel = None;
                    // released object settles straight down onto the table
                    let obj = &mut next.scene.objects[idx];
                    let drop = obj.lowest_point() - next.scene.table_height;
                    obj.pose.translation.z -= drop;
                }
            }
            _ => {}
        }

        // collision bookkeeping against non-grasped objects
        let tip = self.fingertip(&next);
        for (i, obj) in next.scene.objects.iter().enumerate() {
            if Some(i) == next.grasped {
                continue;
            }
            if obj.surface_distance(tip) < self.cfg.gripper_body_radius {
                next.collided = true;
            }
        }

        let obs = self.observe(&next);
        (next, obs)
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        Observation {
            image: self.render_camera(state),
            ee_pose: state.ee_pose,
            gripper_open: state.gripper_open,
        }
    }

    /// True iff the grasped object is the target and its lowest point is
    /// at least `lift_height` above the table.
    pub fn success(&self, state: &EnvState) -> bool {
        match state.grasped {
            Some(idx) => {
                let obj = &state.scene.objects[idx];
                obj.is_target
                    && obj.lowest_point() >= state.scene.table_height + self.cfg.lift_height
            }
            None => false,
        }
    }

    /// Proportional servo toward the target's grasp site; closes when the
    /// fingertip is within half the grasp radius, then lifts vertically.
    pub fn scripted_expert(&self, state: &EnvState) -> EnvAction {
        let cfg = &self.cfg;
        let target_idx = state.scene.target_index();

        if let Some(idx) = state.grasped {
            if idx == target_idx {
                // lift straight up in the world frame
                let world_step = Vec3::new(0.0, 0.0, cfg.expert_max_step);
                let delta_t = state.ee_pose.rotation.transpose().apply(world_step);
                return EnvAction {
                    delta: Transform::from_translation(delta_t),
                    gripper: GripperCmd::Close,
                };
            }
            // grasped a distractor: give up the grasp
            return EnvAction {
                delta: Transform::identity(),
                gripper: GripperCmd::Open,
            };
        }
        if !state.gripper_open {
            // closed on nothing: reopen and continue the approach
            return EnvAction {
                delta: Transform::identity(),
                gripper: GripperCmd::Open,
            };
        }

        let target = &state.scene.objects[target_idx];
        let site = target.grasp_site();
        let tip = self.fingertip(state);

        let yaw_goal = match target.shape {
            Shape::Sphere { .. } => to_euler(&state.ee_pose.rotation).varphi,
            _ => to_euler(&target.pose.rotation).varphi,
        };
        let r_goal = Self::down_orientation_from_yaw_of(state, yaw_goal);

        let lateral = {
            let dx = tip.x - site.x;
            let dy = tip.y - site.y;
            (dx * dx + dy * dy).sqrt()
        };
        let goal_pos = if lateral > 0.012 {
            site + Vec3::new(0.0, 0.0, cfg.expert_approach_height)
        } else {
            site
        };

        let err_world = goal_pos - tip;
        let mut step_world = err_world * cfg.expert_kp;
        let norm = step_world.norm();
        if norm > cfg.expert_max_step {
            step_world = step_world * (cfg.expert_max_step / norm);
        }
        let delta_t = state.ee_pose.rotation.transpose().apply(step_world);

        let r_err = state.ee_pose.rotation.transpose().mul(&r_goal);
        let e = to_euler(&r_err);
        let lim = cfg.bounds.rot * 0.8;
        let scaled = EulerAngles::new(
            (e.phi * cfg.expert_kp).clamp(-lim, lim),
            (e.theta * cfg.expert_kp).clamp(-lim, lim),
            (e.varphi * cfg.expert_kp).clamp(-lim, lim),
        );
        let delta_r = from_euler(scaled);

        let dist = (site - tip).norm();
        let angle_err = state.ee_pose.rotation.angle_to(&r_goal);
        if dist < cfg.grasp_radius * cfg.expert_close_frac && angle_err < 0.2 {
            return EnvAction {
                delta: Transform::new(delta_r, delta_t),
                gripper: GripperCmd::Close,
            };
        }
        EnvAction {
            delta: Transform::new(delta_r, delta_t),
            gripper: GripperCmd::Open,
        }
    }

    fn down_orientation_from_yaw_of(_state: &EnvState, yaw: f64) -> Rotation {
        Self::down_orientation(yaw)
    }

    /// Apply a state-space perturbation directly to the executed pose
    /// (noise injection during demonstration collection).
    pub fn teleport(&self, state: &EnvState, eps: &Transform) -> EnvState {
        let mut next = state.clone();
        next.ee_pose = compose(&state.ee_pose, eps);
        if let (Some(idx), Some(rel)) = (next.grasped, next.grasp_rel) {
            next.scene.objects[idx].pose = compose(&next.ee_pose, &rel);
        }
        next
    }

    /// Roll out the scripted expert and record a demonstration. With
    /// `dart_noise`, every executed pre-grasp pose is post-perturbed while
    /// the recorded labels stay the expert's corrective actions.
    pub fn collect_demo(
        &self,
        seed: u64,
        dart_noise: Option<NoiseParams>,
        dart_window: Option<(usize, usize)>,
    ) -> Result<Demonstration> {
        let cfg = &self.cfg;
        let mut state = self.reset(seed)?;
        let mut noise_rng = rng_for(seed, "dart", &[]);
        let mut steps: Vec<DemoStep> = Vec::new();
        let mut closed_seen = false;
        let mut succeeded = false;

        let preroll = self.capture_preroll(&state, seed);

        for k in 0..cfg.horizon {
            let action = self.scripted_expert(&state);
            if action.gripper == GripperCmd::Open && closed_seen {
                return Err(CoreError::EpisodeFailed(
                    "gripper reopened; demonstration not monotone".into(),
                ));
            }
            if action.gripper == GripperCmd::Close {
                closed_seen = true;
            }
            let image = self.render_camera(&state);
            steps.push(DemoStep {
                image,
                w_t_e: state.ee_pose,
                action: action.delta,
                gripper_close: action.gripper == GripperCmd::Close,
            });
            let (mut next, _) = self.step(&state, &action);
            if let Some(noise) = dart_noise {
                let in_window = dart_window.map_or(true, |(a, b)| k >= a && k <= b);
                if next.gripper_open && next.grasped.is_none() && in_window {
                    let eps = sample_perturbation(&noise, &mut noise_rng);
                    next = self.teleport(&next, &eps);
                }
            }
            state = next;
            if self.success(&state) {
                succeeded = true;
                break;
            }
        }
        if !succeeded {
            return Err(CoreError::EpisodeFailed("horizon exhausted".into()));
        }
        Ok(Demonstration {
            steps,
            intrinsics: cfg.intrinsics,
            e_t_c: cfg.e_t_c,
            mask: self.gripper_mask(),
            preroll,
            scene_seed: seed,
        })
    }

    /// Extra posed views captured from scripted offsets around the start
    /// pose, used only to enrich field training.
    fn capture_preroll(&self, state: &EnvState, seed: u64) -> Vec<(Image, Transform)> {
        let n = self.cfg.preroll_views;
        let mut out = Vec::with_capacity(n);
        let mut rng = rng_for(seed, "preroll", &[]);
        for _ in 0..n {
            let offset = Transform::new(
                from_euler(EulerAngles::new(
                    rng.gen_range(-0.15..0.15),
                    rng.gen_range(-0.15..0.15),
                    rng.gen_range(-0.3..0.3),
                )),
                Vec3::new(
                    rng.gen_range(-0.03..0.03),
                    rng.gen_range(-0.03..0.03),
                    rng.gen_range(-0.03..0.03),
                ),
            );
            let ee = compose(&state.ee_pose, &offset);
            let cam = camera_from_ee(&ee, &self.cfg.e_t_c);
            let img = self.render_at_camera_pose(state, &cam, true);
            out.push((img, ee));
        }
        out
    }

    // ------------------------------------------------------------------
    // analytic renderer
    // ------------------------------------------------------------------

    /// Wrist-camera view with the gripper overlay composited.
    pub fn render_camera(&self, state: &EnvState) -> Image {
        let cam = camera_from_ee(&state.ee_pose, &self.cfg.e_t_c);
        self.render_at_camera_pose(state, &cam, true)
    }

    /// Render the scene from an arbitrary camera pose. This is the
    /// ground-truth oracle for field renders; `overlay` composites the
    /// fixed gripper texture into the masked region.
    pub fn render_at_camera_pose(
        &self,
        state: &EnvState,
        cam_pose: &Transform,
        overlay: bool,
    ) -> Image {
        let intr = &self.cfg.intrinsics;
        let mut img = Image::filled(intr.width, intr.height, self.cfg.background);
        let light = self.cfg.light_dir.normalized();
        for py in 0..intr.height {
            for px in 0..intr.width {
                let (o, d) = intr.pixel_ray(cam_pose, px, py);
                let color = self.trace(o, d, &state.scene, light);
                img.set(px, py, color);
            }
        }
        if overlay {
            self.apply_gripper_overlay(&mut img);
        }
        img
    }

    /// Closest-hit ray trace with Lambertian shading under a fixed
    /// directional light.
    fn trace(&self, origin: Vec3, dir: Vec3, scene: &Scene, light: Vec3) -> [f32; 3] {
        let mut best_t = f64::INFINITY;
        let mut best: Option<([f32; 3], Vec3)> = None;

        // table plane z = table_height
        if dir.z < -1e-12 {
            let t = (scene.table_height - origin.z) / dir.z;
            if t > 1e-9 {
                best_t = t;
                best = Some((self.cfg.table_color, Vec3::new(0.0, 0.0, 1.0)));
            }
        }

        for obj in &scene.objects {
            if let Some((t, normal)) = intersect(obj, origin, dir) {
                if t < best_t {
                    best_t = t;
                    best = Some((obj.color, normal));
                }
            }
        }

        match best {
            Some((albedo, normal)) => {
                let diffuse = normal.dot(light).max(0.0);
                let shade = (0.35 + 0.65 * diffuse) as f32;
                [albedo[0] * shade, albedo[1] * shade, albedo[2] * shade]
            }
            None => self.cfg.background,
        }
    }

    /// The gripper occupies a constant image region: two dark finger bars
    /// in the bottom quarter. Deterministic function of pixel coordinates.
    pub fn apply_gripper_overlay(&self, img: &mut Image) {
        let (w, h) = (img.width, img.height);
        for y in 0..h {
            for x in 0..w {
                if Self::overlay_hit(w, h, x, y) {
                    let edge = (x * 31 / w) % 3 == 0;
                    let c = if edge {
                        [0.22, 0.22, 0.25]
                    } else {
                        [0.12, 0.12, 0.14]
                    };
                    img.set(x, y, c);
                }
            }
        }
    }

    fn overlay_hit(w: usize, h: usize, x: usize, y: usize) -> bool {
        let y_top = h * 3 / 4;
        if y < y_top {
            return false;
        }
        let bar_w = w * 3 / 32;
        let left_start = w * 5 / 32;
        let right_start = w - w * 5 / 32 - bar_w;
        (x >= left_start && x < left_start + bar_w)
            || (x >= right_start && x < right_start + bar_w)
    }

    /// Binary mask of the overlay region.
    pub fn gripper_mask(&self) -> PixelMask {
        let intr = &self.cfg.intrinsics;
        let mut mask = PixelMask::zeros(intr.width, intr.height);
        for y in 0..intr.height {
            for x in 0..intr.width {
                mask.set(x, y, Self::overlay_hit(intr.width, intr.height, x, y));
            }
        }
        mask
    }
}

/// Ray-primitive intersection in world space: returns (t, world normal)
/// of the nearest hit with t > 0.
fn intersect(obj: &SceneObject, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3)> {
    let inv = inverse(&obj.pose);
    let o = inv.apply(origin);
    let d = inv.rotation.apply(dir);
    let hit = match obj.shape {
        Shape::Sphere { radius } => ray_sphere(o, d, radius),
        Shape::Box { half } => ray_box(o, d, half),
        Shape::Cylinder {
            radius,
            half_height,
        } => ray_cylinder(o, d, radius, half_height),
    };
    hit.map(|(t, n_local)| (t, obj.pose.rotation.apply(n_local)))
}

fn ray_sphere(o: Vec3, d: Vec3, r: f64) -> Option<(f64, Vec3)> {
    let b = o.dot(d);
    let c = o.dot(o) - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let t = if -b - sqrt_disc > 1e-9 {
        -b - sqrt_disc
    } else if -b + sqrt_disc > 1e-9 {
        -b + sqrt_disc
    } else {
        return None;
    };
    let p = o + d * t;
    Some((t, p / r))
}

fn ray_box(o: Vec3, d: Vec3, half: Vec3) -> Option<(f64, Vec3)> {
    let mut t_near = -f64::INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0usize;
    for axis in 0..3 {
        let oa = o.component(axis);
        let da = d.component(axis);
        let ha = half.component(axis);
        if da.abs() < 1e-12 {
            if oa.abs() > ha {
                return None;
            }
            continue;
        }
        let mut t0 = (-ha - oa) / da;
        let mut t1 = (ha - oa) / da;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            near_axis = axis;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    let t = if t_near > 1e-9 { t_near } else { t_far };
    if t <= 1e-9 || t_near > t_far {
        return None;
    }
    let p = o + d * t;
    let mut n = Vec3::ZERO;
    let sign = if p.component(near_axis) > 0.0 { 1.0 } else { -1.0 };
    match near_axis {
        0 => n.x = sign,
        1 => n.y = sign,
        _ => n.z = sign,
    }
    Some((t, n))
}

fn ray_cylinder(o: Vec3, d: Vec3, r: f64, hh: f64) -> Option<(f64, Vec3)> {
    let mut best: Option<(f64, Vec3)> = None;
    // lateral surface
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-12 {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / a, (-b + sq) / a] {
                if t > 1e-9 {
                    let p = o + d * t;
                    if p.z.abs() <= hh && best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, Vec3::new(p.x / r, p.y / r, 0.0)));
                    }
                }
            }
        }
    }
    // caps
    if d.z.abs() > 1e-12 {
        for (cap_z, n) in [(hh, Vec3::new(0.0, 0.0, 1.0)), (-hh, Vec3::new(0.0, 0.0, -1.0))] {
            let t = (cap_z - o.z) / d.z;
            if t > 1e-9 {
                let p = o + d * t;
                if p.x * p.x + p.y * p.y <= r * r && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, n));
                }
            }
        }
    }
    best
}
