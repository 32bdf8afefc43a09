//! Image-only behavior-cloning policy: a small affine network over a
//! downsampled wrist image with a tanh-bounded 6-DoF delta-pose head and
//! a gripper logit, trained with mixed original/augmented batches and
//! evaluated closed-loop in the grasping environment.
//!
//! Checkpoint layout (little endian): magic "POLN0001", u32 source image
//! width/height, u32 network input size, u32 layer count, per layer
//! u32 (in, out), f32 action bounds (6), then the flat f32 parameter
//! array (per layer: weights row-major [out][in], then bias).

use crate::demo::{AugmentedTransition, Demonstration};
use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::optim::RmsState;
use crate::se3::{from_euler, to_euler, EulerAngles, Transform};
use crate::sim::{EnvAction, EnvState, GraspSim, GripperCmd, Observation};
use crate::seeding::{derive_seed, rng_for};
use crate::vec3::Vec3;
use rand::Rng;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

/// Network geometry and action bounds; everything needed to build a
/// policy and to turn demonstrations into training samples.
#[derive(Debug, Clone, Copy)]
pub struct PolicySpec {
    /// Expected observation resolution.
    pub src_width: usize,
    pub src_height: usize,
    /// Side of the square downsampled input fed to the network.
    pub input_size: usize,
    /// Per-dimension bounds: three Euler radians, three meters.
    pub bounds: [f64; 6],
}

impl PolicySpec {
    pub fn input_dim(&self) -> usize {
        self.input_size * self.input_size * 3
    }
}

const HEAD_OUT: usize = 7;
const GRIPPER_LOSS_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub spec: PolicySpec,
    /// (in, out) per layer; ReLU between all layers, linear final.
    pub layers: Vec<(usize, usize)>,
    pub params: Vec<f64>,
}

impl PolicyNet {
    /// Patch-flatten encoder (two hidden affine layers to a 128-vector)
    /// followed by a three-layer head to 6 pose parameters + 1 logit.
    pub fn init(spec: PolicySpec, seed: u64) -> Self {
        let d = spec.input_dim();
        let layers = vec![(d, 128), (128, 128), (128, 64), (64, 32), (32, HEAD_OUT)];
        let n_params: usize = layers.iter().map(|(i, o)| i * o + o).sum();
        let mut params = vec![0.0f64; n_params];
        let mut rng = rng_for(seed, "policy-init", &[]);
        let mut offset = 0;
        for &(fan_in, fan_out) in &layers {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in params[offset..offset + fan_in * fan_out].iter_mut() {
                *w = rng.gen_range(-s..s);
            }
            offset += fan_in * fan_out + fan_out; // biases stay zero
        }
        PolicyNet {
            spec,
            layers,
            params,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for &(i, o) in &self.layers {
            out.push((offset, offset + i * o));
            offset += i * o + o;
        }
        out
    }

    /// Raw head outputs plus all post-activation layer inputs (cached for
    /// the backward pass).
    fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        debug_assert_eq!(input.len(), self.layers[0].0);
        let offsets = self.layer_offsets();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let mut x = input.to_vec();
        for (li, &(fan_in, fan_out)) in self.layers.iter().enumerate() {
            let (w0, b0) = offsets[li];
            let w = &self.params[w0..w0 + fan_in * fan_out];
            let b = &self.params[b0..b0 + fan_out];
            let mut y = vec![0.0f64; fan_out];
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = 0.0;
                for (wk, xk) in row.iter().zip(x.iter()) {
                    acc += wk * xk;
                }
                *yo = acc + b[o];
            }
            let last = li + 1 == self.layers.len();
            if !last {
                for v in y.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(y.clone());
            x = y;
        }
        let raw = acts.last().unwrap().clone();
        (raw, acts)
    }

    /// Bounded pose parameters and gripper logit for a prepared input.
    pub fn predict(&self, input: &[f64]) -> ([f64; 6], f64) {
        let (raw, _) = self.forward_cached(input);
        let mut pose = [0.0; 6];
        for d in 0..6 {
            pose[d] = self.spec.bounds[d] * raw[d].tanh();
        }
        (pose, raw[6])
    }

    /// Flatten an observation image into the network input vector.
    pub fn prepare_input(&self, image: &Image) -> Result<Vec<f64>> {
        if image.width != self.spec.src_width || image.height != self.spec.src_height {
            return Err(CoreError::ResolutionMismatch(
                image.width,
                image.height,
                self.spec.src_width,
                self.spec.src_height,
            ));
        }
        Ok(flatten_image(image, self.spec.input_size))
    }
}

fn flatten_image(image: &Image, input_size: usize) -> Vec<f64> {
    let factor = image.width / input_size;
    let small = if factor > 1 {
        image.downsample(factor)
    } else {
        image.clone()
    };
    let mut out = Vec::with_capacity(small.width * small.height * 3);
    for px in &small.data {
        for c in 0..3 {
            out.push(px[c] as f64 - 0.5);
        }
    }
    out
}

/// Deterministic action from an observation: bounded pose delta, gripper
/// closes iff the logit is positive.
pub fn forward(p: &PolicyNet, obs: &Observation) -> Result<EnvAction> {
    let input = p.prepare_input(&obs.image)?;
    let (pose, logit) = p.predict(&input);
    let delta = Transform::new(
        from_euler(EulerAngles::new(pose[0], pose[1], pose[2])),
        Vec3::new(pose[3], pose[4], pose[5]),
    );
    Ok(EnvAction {
        delta,
        gripper: if logit > 0.0 {
            GripperCmd::Close
        } else {
            GripperCmd::Open
        },
    })
}

/// One supervised example: prepared input, six pose parameters (clamped
/// to bounds) and the gripper bit.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: [f64; 7],
    /// Measured pose at the source step; diagnostics only, never fed to
    /// the network.
    pub pose: Transform,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Count of pose-parameter components clamped into bounds at load.
    pub clamp_warnings: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn action_to_target(
    action: &Transform,
    gripper_close: bool,
    bounds: &[f64; 6],
    clamps: &mut usize,
) -> [f64; 7] {
    let e = to_euler(&action.rotation);
    let t = action.translation;
    let raw = [e.phi, e.theta, e.varphi, t.x, t.y, t.z];
    let mut out = [0.0; 7];
    for d in 0..6 {
        let c = raw[d].clamp(-bounds[d], bounds[d]);
        if (c - raw[d]).abs() > 1e-12 {
            *clamps += 1;
        }
        out[d] = c;
    }
    out[6] = gripper_close as u8 as f64;
    out
}

pub fn dataset_from_demos(demos: &[Demonstration], spec: &PolicySpec) -> Dataset {
    let mut ds = Dataset::default();
    for demo in demos {
        for step in &demo.steps {
            let target =
                action_to_target(&step.action, step.gripper_close, &spec.bounds, &mut ds.clamp_warnings);
            ds.samples.push(Sample {
                input: flatten_image(&step.image, spec.input_size),
                target,
                pose: step.w_t_e,
            });
        }
    }
    ds
}

pub fn dataset_from_transitions(transitions: &[AugmentedTransition], spec: &PolicySpec) -> Dataset {
    let mut ds = Dataset::default();
    for tr in transitions {
        let target = action_to_target(
            &tr.action_tilde,
            tr.gripper_close,
            &spec.bounds,
            &mut ds.clamp_warnings,
        );
        ds.samples.push(Sample {
            input: flatten_image(&tr.image, spec.input_size),
            target,
            pose: tr.w_t_e_tilde,
        });
    }
    ds
}

#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub samples: Vec<&'a Sample>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Fraction of each batch drawn from the augmented set.
    pub mix_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 4000,
            batch: 64,
            lr: 1e-3,
            mix_ratio: 0.5,
            seed: 0,
        }
    }
}

const GRAD_CHUNKS: usize = 8;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        (1.0 + z.exp()).ln()
    }
}

/// Loss and full parameter gradient for a batch. The pose term is the
/// mean squared error of the tanh outputs against bound-normalized
/// targets; the gripper term is binary cross-entropy on the logit,
/// weighted 1 : 0.1. Both use mean reduction, so duplicated rows leave
/// the loss unchanged.
pub fn loss_and_grad(p: &PolicyNet, batch: &Batch) -> (f64, f64, Vec<f64>) {
    assert!(!batch.samples.is_empty(), "batch must be nonempty");
    let n = batch.samples.len();
    let chunk_size = n.div_ceil(GRAD_CHUNKS);
    let chunks: Vec<&[&Sample]> = batch.samples.chunks(chunk_size).collect();
    let results: Vec<(f64, f64, Vec<f64>)> = chunks
        .par_iter()
        .map(|chunk| {
            let mut grad = vec![0.0f64; p.n_params()];
            let mut pose_loss = 0.0;
            let mut grip_loss = 0.0;
            for sample in chunk.iter() {
                let (pl, gl) = sample_grad(p, sample, n, &mut grad);
                pose_loss += pl;
                grip_loss += gl;
            }
            (pose_loss, grip_loss, grad)
        })
        .collect();

    let mut grad = vec![0.0f64; p.n_params()];
    let mut pose_loss = 0.0;
    let mut grip_loss = 0.0;
    for (pl, gl, g) in results {
        pose_loss += pl;
        grip_loss += gl;
        for (acc, v) in grad.iter_mut().zip(g.iter()) {
            *acc += v;
        }
    }
    let loss = pose_loss + GRIPPER_LOSS_WEIGHT * grip_loss;
    (loss, pose_loss, grad)
}

/// Per-sample backward pass; gradients are scaled by the batch-mean
/// reduction factors so the accumulated result matches the loss.
fn sample_grad(p: &PolicyNet, sample: &Sample, batch_n: usize, grad: &mut [f64]) -> (f64, f64) {
    let (raw, acts) = p.forward_cached(&sample.input);
    let mut d_raw = vec![0.0f64; HEAD_OUT];
    let mut pose_loss = 0.0;
    for d in 0..6 {
        let yhat = raw[d].tanh();
        let t_norm = sample.target[d] / p.spec.bounds[d];
        let diff = yhat - t_norm;
        pose_loss += diff * diff / (6.0 * batch_n as f64);
        d_raw[d] = 2.0 * diff * (1.0 - yhat * yhat) / (6.0 * batch_n as f64);
    }
    let z = raw[6];
    let y = sample.target[6];
    let grip_loss = (softplus(z) - z * y) / batch_n as f64;
    d_raw[6] = GRIPPER_LOSS_WEIGHT * (sigmoid(z) - y) / batch_n as f64;

    // backpropagate through the affine stack
    let offsets = p.layer_offsets();
    let mut delta = d_raw;
    for li in (0..p.layers.len()).rev() {
        let (fan_in, fan_out) = p.layers[li];
        let (w0, b0) = offsets[li];
        let x = &acts[li];
        let last = li + 1 == p.layers.len();
        if !last {
            // ReLU derivative on this layer's output
            let out = &acts[li + 1];
            for (d, o) in delta.iter_mut().zip(out.iter()) {
                if *o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let w = &p.params[w0..w0 + fan_in * fan_out];
        let mut d_prev = vec![0.0f64; fan_in];
        for o in 0..fan_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let row_grad = &mut grad[w0 + o * fan_in..w0 + (o + 1) * fan_in];
            for (((rg, dp), wk), xk) in row_grad
                .iter_mut()
                .zip(d_prev.iter_mut())
                .zip(row.iter())
                .zip(x.iter())
            {
                *rg += d * xk;
                *dp += d * wk;
            }
            grad[b0 + o] += d;
        }
        delta = d_prev;
    }
    (pose_loss, grip_loss)
}

/// Index plan for one batch: (from_augmented, index).
pub fn sample_batch_indices<R: Rng>(
    rng: &mut R,
    n_original: usize,
    n_augmented: Option<usize>,
    mix_ratio: f64,
    batch: usize,
) -> Vec<(bool, usize)> {
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        match n_augmented {
            Some(na) if na > 0 && rng.gen::<f64>() < mix_ratio => {
                out.push((true, rng.gen_range(0..na)));
            }
            _ => out.push((false, rng.gen_range(0..n_original))),
        }
    }
    out
}

/// Train by adaptive SGD with mixed batches. Without an augmented set the
/// mix ratio is forced to zero. Deterministic per seed.
pub fn train(
    original: &Dataset,
    augmented: Option<&Dataset>,
    cfg: &TrainConfig,
    spec: &PolicySpec,
) -> Result<(PolicyNet, Vec<f64>)> {
    if original.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let augmented = match augmented {
        Some(a) if !a.is_empty() => Some(a),
        _ => None,
    };
    let mut policy = PolicyNet::init(*spec, derive_seed(cfg.seed, "policy-init", &[]));
    let mut rms = RmsState::new(policy.n_params());
    let mut batch_rng = rng_for(cfg.seed, "batch", &[]);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let plan = sample_batch_indices(
            &mut batch_rng,
            original.len(),
            augmented.map(|a| a.len()),
            cfg.mix_ratio,
            cfg.batch,
        );
        let batch = Batch {
            samples: plan
                .iter()
                .map(|&(aug, ix)| {
                    if aug {
                        &augmented.unwrap().samples[ix]
                    } else {
                        &original.samples[ix]
                    }
                })
                .collect(),
        };
        let (loss, _, grad) = loss_and_grad(&policy, &batch);
        rms.apply(
            &mut policy.params,
            &grad,
            crate::optim::cosine_decay(cfg.lr, step, cfg.steps),
        );
        losses.push(loss);
    }
    Ok((policy, losses))
}

#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub episode: usize,
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub collided: bool,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub success_rate: f64,
    /// 95% binomial confidence interval (normal approximation).
    pub ci95: (f64, f64),
    pub rows: Vec<EpisodeRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,episode,success,steps,collided\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.seed, r.episode, r.success as u8, r.steps, r.collided as u8
            ));
        }
        s
    }
}

/// Closed-loop evaluation of an arbitrary policy function.
pub fn evaluate_with<F>(sim: &GraspSim, n_episodes: usize, seed: u64, policy: F) -> EvalReport
where
    F: Fn(&EnvState, &Observation) -> EnvAction + Sync,
{
    assert!(n_episodes >= 1);
    let rows: Vec<EpisodeRow> = (0..n_episodes)
        .into_par_iter()
        .map(|ep| {
            let ep_seed = derive_seed(seed, "eval-ep", &[ep as u64]);
            let mut state = match sim.reset(ep_seed) {
                Ok(s) => s,
                Err(_) => {
                    return EpisodeRow {
                        episode: ep,
                        seed: ep_seed,
                        success: false,
                        steps: 0,
                        collided: false,
                    }
                }
            };
            let mut obs = sim.observe(&state);
            let mut success = false;
            let mut steps = 0;
            for _ in 0..sim.cfg.horizon {
                let action = policy(&state, &obs);
                let (next, next_obs) = sim.step(&state, &action);
                state = next;
                obs = next_obs;
                steps += 1;
                if sim.success(&state) {
                    success = true;
                    break;
                }
            }
            EpisodeRow {
                episode: ep,
                seed: ep_seed,
                success,
                steps,
                collided: state.collided,
            }
        })
        .collect();

    let n = rows.len() as f64;
    let p = rows.iter().filter(|r| r.success).count() as f64 / n;
    let half = 1.96 * (p * (1.0 - p) / n).sqrt();
    EvalReport {
        success_rate: p,
        ci95: ((p - half).max(0.0), (p + half).min(1.0)),
        rows,
    }
}

/// Closed-loop success rate of a trained policy.
pub fn evaluate(p: &PolicyNet, sim: &GraspSim, n_episodes: usize, seed: u64) -> EvalReport {
    evaluate_with(sim, n_episodes, seed, |_, obs| {
        forward(p, obs).expect("observation resolution matches policy")
    })
}

const POLICY_MAGIC: &[u8; 8] = b"POLN0001";

pub fn save_policy(p: &PolicyNet, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(POLICY_MAGIC)?;
    for v in [
        p.spec.src_width,
        p.spec.src_height,
        p.spec.input_size,
        p.layers.len(),
    ] {
        f.write_all(&(v as u32).to_le_bytes())?;
    }
    for &(i, o) in &p.layers {
        f.write_all(&(i as u32).to_le_bytes())?;
        f.write_all(&(o as u32).to_le_bytes())?;
    }
    for b in p.spec.bounds {
        f.write_all(&(b as f32).to_le_bytes())?;
    }
    for v in &p.params {
        f.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyNet> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != POLICY_MAGIC {
        return Err(CoreError::Checkpoint("bad policy magic".into()));
    }
    let read_u32 = |f: &mut dyn Read| -> Result<u32> {
        let mut b = [0u8; 4];
        f.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let src_width = read_u32(&mut f)? as usize;
    let src_height = read_u32(&mut f)? as usize;
    let input_size = read_u32(&mut f)? as usize;
    let n_layers = read_u32(&mut f)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let i = read_u32(&mut f)? as usize;
        let o = read_u32(&mut f)? as usize;
        layers.push((i, o));
    }
    let read_f32 = |f: &mut dyn Read| -> Result<f64> {
        let mut b = [0u8; 4];
        f.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b) as f64)
    };
    let mut bounds = [0.0f64; 6];
    for b in bounds.iter_mut() {
        *b = read_f32(&mut f)?;
    }
    let n_params: usize = layers.iter().map(|(i, o)| i * o + o).sum();
    let mut params = vec![0.0f64; n_params];
    let mut buf = vec![0u8; n_params * 4];
    f.read_exact(&mut buf)?;
    for (i, chunk) in buf.chunks_exact(4).enumerate() {
        params[i] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok(PolicyNet {
        spec: PolicySpec {
            src_width,
            src_height,
            input_size,
            bounds,
        },
        layers,
        params,
    })
}
