use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::features::wrap_angle;
use super::world::Environment;
use crate::error::{Error, Result};

/// Allowed camera elevations.
pub const ELEVATIONS: [f64; 3] = [-PI / 6.0, 0.0, PI / 6.0];

/// `⟨C_t, θ_t, φ_t⟩`: viewpoint, heading in `[0, 2π)` and elevation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub node: usize,
    pub heading: f64,
    pub elevation: f64,
}

impl AgentPose {
    pub fn new(node: usize, heading: f64) -> Self {
        Self {
            node,
            heading: wrap_angle(heading),
            elevation: 0.0,
        }
    }

    pub fn validate(&self, env: &Environment) -> Result<()> {
        if self.node >= env.n_nodes() {
            return Err(Error::Index {
                what: "pose node",
                index: self.node,
                len: env.n_nodes(),
            });
        }
        if !(0.0..std::f64::consts::TAU).contains(&self.heading) {
            return Err(Error::Contract(format!(
                "heading {} outside [0, 2π)",
                self.heading
            )));
        }
        if !ELEVATIONS
            .iter()
            .any(|e| (e - self.elevation).abs() < 1e-12)
        {
            return Err(Error::Contract(format!(
                "elevation {} not one of -30/0/+30 degrees",
                self.elevation
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Stop,
    /// Move to this neighboring viewpoint.
    Move(usize),
}

/// Apply an action; moving turns the agent to face along the traversed edge.
pub fn take_action(env: &Environment, pose: &AgentPose, action: Action) -> Result<AgentPose> {
    match action {
        Action::Stop => Ok(*pose),
        Action::Move(to) => {
            if env.edge_length(pose.node, to).is_none() {
                return Err(Error::Contract(format!(
                    "viewpoint {to} is not navigable from {}",
                    pose.node
                )));
            }
            let (a, b) = (env.node(pose.node).position, env.node(to).position);
            Ok(AgentPose::new(to, (b[1] - a[1]).atan2(b[0] - a[0])))
        }
    }
}

/// Geodesic distance from the pose to the goal viewpoint, in meters.
pub fn distance_to_goal(env: &Environment, pose: &AgentPose, goal: usize) -> f64 {
    env.geodesic(pose.node, goal)
}

/// Teacher action: next hop on a shortest path, or stop at the goal.
pub fn teacher_action(env: &Environment, pose: &AgentPose, goal: usize) -> Result<Action> {
    if goal >= env.n_nodes() {
        return Err(Error::Index {
            what: "goal node",
            index: goal,
            len: env.n_nodes(),
        });
    }
    if !env.geodesic(pose.node, goal).is_finite() {
        return Err(Error::Contract(format!(
            "goal {goal} unreachable from {}",
            pose.node
        )));
    }
    Ok(env
        .next_hop(pose.node, goal)
        .map_or(Action::Stop, Action::Move))
}
