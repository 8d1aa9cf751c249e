use std::f64::consts::TAU;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::pose::AgentPose;
use super::seeding::rng_for;
use super::world::Environment;
use super::Task;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub feat_dim: usize,
    /// Times the `(cosθ, sinθ, cosφ, sinφ)` block is tiled.
    pub rep_factor: usize,
    /// Per-component std of the per-view noise added to landmark features.
    pub view_noise: f64,
    /// Seeds the landmark and object-class prototypes; shared across
    /// environments so grounding transfers between them.
    pub prototype_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            feat_dim: 32,
            rep_factor: 4,
            view_noise: 0.05,
            prototype_seed: 17,
        }
    }
}

impl FeatureConfig {
    pub fn dir_dim(&self) -> usize {
        4 * self.rep_factor
    }

    /// Length of a scene token `[f; d]`.
    pub fn scene_dim(&self) -> usize {
        self.feat_dim + self.dir_dim()
    }
}

/// `(cosθ, sinθ, cosφ, sinφ)` tiled `rep_factor` times.
pub fn directional_encoding(heading: f64, elevation: f64, rep_factor: usize) -> Vec<f64> {
    let block = [
        heading.cos(),
        heading.sin(),
        elevation.cos(),
        elevation.sin(),
    ];
    block.iter().copied().cycle().take(4 * rep_factor).collect()
}

fn unit_gaussian(dim: usize, parts: &[u64]) -> Vec<f64> {
    let mut rng = rng_for(parts);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

/// Unit-norm prototype feature of a landmark.
pub fn landmark_prototype(cfg: &FeatureConfig, landmark: usize) -> Vec<f64> {
    unit_gaussian(cfg.feat_dim, &[cfg.prototype_seed, 0x1A4D, landmark as u64])
}

/// Unit-norm prototype feature of an object class.
pub fn object_prototype(cfg: &FeatureConfig, class: usize) -> Vec<f64> {
    unit_gaussian(cfg.feat_dim, &[cfg.prototype_seed, 0x0B1E, class as u64])
}

fn with_noise(mut base: Vec<f64>, sigma: f64, parts: &[u64]) -> Vec<f64> {
    if sigma > 0.0 {
        let mut rng = rng_for(parts);
        for x in &mut base {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += sigma * z;
        }
    }
    base
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// One navigable direction at the current viewpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub node: usize,
    /// Heading relative to the agent, in `[0, 2π)`.
    pub heading: f64,
    pub elevation: f64,
    /// Directional encoding `d^i`.
    pub direction: Vec<f64>,
    /// `[f^v; d^i]`.
    pub feature: Vec<f64>,
}

/// Raw descriptor of a visible object; the model projects `position`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectToken {
    pub object_id: usize,
    pub class: usize,
    pub feature: Vec<f64>,
    pub position: [f64; 5],
    pub direction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub task: Task,
    pub candidates: Vec<Candidate>,
    pub objects: Vec<ObjectToken>,
    scene_dim: usize,
}

impl Observation {
    pub fn new(
        task: Task,
        candidates: Vec<Candidate>,
        objects: Vec<ObjectToken>,
        cfg: &FeatureConfig,
    ) -> Self {
        Self {
            task,
            candidates,
            objects,
            scene_dim: cfg.scene_dim(),
        }
    }

    /// Scene tokens in order; in R2R the zero stop vector is appended.
    pub fn scene_tokens(&self) -> Vec<Vec<f64>> {
        let mut rows: Vec<Vec<f64>> = self.candidates.iter().map(|c| c.feature.clone()).collect();
        if self.task == Task::R2r {
            rows.push(vec![0.0; self.scene_dim]);
        }
        rows
    }

    pub fn n_scene_tokens(&self) -> usize {
        self.candidates.len() + usize::from(self.task == Task::R2r)
    }

    /// Navigation actions: one per candidate plus stop.
    pub fn n_actions(&self) -> usize {
        self.candidates.len() + 1
    }

    pub fn stop_index(&self) -> usize {
        self.candidates.len()
    }

    /// Directional features of an action; zero for stop.
    pub fn action_direction(&self, action: usize) -> Vec<f64> {
        match self.candidates.get(action) {
            Some(c) => c.direction.clone(),
            None => vec![0.0; self.candidates.first().map_or(0, |c| c.direction.len())],
        }
    }

    pub fn action_node(&self, action: usize) -> Option<usize> {
        self.candidates.get(action).map(|c| c.node)
    }

    /// Candidate index leading to `node`.
    pub fn action_for_node(&self, node: usize) -> Option<usize> {
        self.candidates.iter().position(|c| c.node == node)
    }
}

/// Candidate scene tokens at `pose`, with directions relative to the agent.
pub fn scene_features(
    env: &Environment,
    pose: &AgentPose,
    task: Task,
    cfg: &FeatureConfig,
) -> Observation {
    let here = env.node(pose.node).position;
    let candidates = env
        .neighbors(pose.node)
        .iter()
        .map(|&v| {
            let there = env.node(v).position;
            let (dx, dy, dz) = (there[0] - here[0], there[1] - here[1], there[2] - here[2]);
            let heading = wrap_angle(dy.atan2(dx) - pose.heading);
            let elevation = dz.atan2((dx * dx + dy * dy).sqrt()) - pose.elevation;
            let direction = directional_encoding(heading, elevation, cfg.rep_factor);
            let base = landmark_prototype(cfg, env.node(v).landmark);
            let mut feature = with_noise(
                base,
                cfg.view_noise,
                &[cfg.prototype_seed, env.seed(), pose.node as u64, v as u64],
            );
            feature.extend_from_slice(&direction);
            Candidate {
                node: v,
                heading,
                elevation,
                direction,
                feature,
            }
        })
        .collect();
    let objects = if task == Task::Reverie {
        object_features(env, pose, cfg)
    } else {
        Vec::new()
    };
    Observation::new(task, candidates, objects, cfg)
}

/// Objects visible from the current viewpoint.
pub fn object_features(
    env: &Environment,
    pose: &AgentPose,
    cfg: &FeatureConfig,
) -> Vec<ObjectToken> {
    env.node(pose.node)
        .objects
        .iter()
        .map(|o| {
            let heading = wrap_angle(o.heading - pose.heading);
            let feature = with_noise(
                object_prototype(cfg, o.class),
                cfg.view_noise,
                &[cfg.prototype_seed, env.seed(), 0x0B1E, o.id as u64],
            );
            ObjectToken {
                object_id: o.id,
                class: o.class,
                feature,
                position: o.bbox.position_vector(),
                direction: directional_encoding(
                    heading,
                    o.elevation - pose.elevation,
                    cfg.rep_factor,
                ),
            }
        })
        .collect()
}
