//! Per-tick goal proposal: classify moving scene points, repel a virtual
//! joint-space goal away from the closest one, pull the repulsion back
//! through the point Jacobian, blend it with a goal attractor, and
//! integrate the virtual goal forward.
//!
//! The virtual goal is its own second-order particle: the attractor pulls
//! it home to the original goal while the repulsor deflects it. The
//! downstream policy only ever sees the resulting modified goal, so the
//! proposer is agnostic to whatever policy consumes it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kinematics::{JointState, RobotModel, NUM_JOINTS};
use crate::perception::{
    build_tree, closest_dynamic_to_robot_at, extract_dynamic_with_tree, DynamicPointSet, KdTree,
    PointCloud,
};
use crate::rmp::{attractor, combine, euler_integrate, pullback, repulsor_task, RmpParams};
use crate::Vector7;

/// Default dynamic-classification threshold (m): above simulated sensor
/// jitter, below per-frame motion of the benchmark obstacles.
pub const DEFAULT_TAU_DYN: f64 = 0.01;

/// State carried across control ticks of one episode.
pub struct GoalProposalState {
    pub q_mg: Vector7,
    pub qdot_mg: Vector7,
    prev: Option<KdTree>,
    prev_x_r: Option<f64>,
}

/// Optional per-tick debug record (serialized as JSONL by the replay tool).
#[derive(Clone, Debug, Serialize)]
pub struct ProposeDebug {
    pub tick: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xdot_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_r: Option<f64>,
    pub n_dynamic: usize,
    pub q_mg: [f64; 7],
}

/// Fresh state at episode start: the virtual goal sits at the original goal.
pub fn reset(q_g: &Vector7) -> GoalProposalState {
    GoalProposalState {
        q_mg: *q_g,
        qdot_mg: Vector7::zeros(),
        prev: None,
        prev_x_r: None,
    }
}

impl GoalProposalState {
    pub fn has_prev_frame(&self) -> bool {
        self.prev.is_some()
    }
}

/// One tick of the goal proposer. Returns the modified goal and a debug
/// record; the state is updated in place.
#[allow(clippy::too_many_arguments)]
pub fn propose_goal(
    state: &mut GoalProposalState,
    scene: &PointCloud,
    model: &RobotModel,
    robot_state: &JointState,
    q_g: &Vector7,
    params: &RmpParams,
    tau_dyn: f64,
    dt_tick: f64,
) -> Result<(Vector7, ProposeDebug)> {
    if scene.is_empty() {
        return Err(Error::invalid("scene cloud must be non-empty"));
    }
    if dt_tick <= 0.0 {
        return Err(Error::invalid("dt_tick must be positive"));
    }

    // 1. Dynamic points relative to the previous frame (empty on tick 0).
    let dynamic = match &state.prev {
        Some(tree) => extract_dynamic_with_tree(tree, scene, tau_dyn),
        None => DynamicPointSet::default(),
    };

    // 2. Repulsor from the dynamic point closest to the robot surface.
    let frames = model.forward_kinematics(&robot_state.q)?;
    let mut debug = ProposeDebug {
        tick: scene.stamp,
        x_r: None,
        xdot_r: None,
        m_r: None,
        n_dynamic: dynamic.len(),
        q_mg: [0.0; 7],
    };
    let repulsor_joint = match closest_dynamic_to_robot_at(&dynamic, model, &frames) {
        Some((x_obs, x_p, _)) => {
            let diff = x_p.position - x_obs;
            let x_r = diff.norm_squared();
            let j_p = model.point_jacobian_at(&frames, &x_p)?;
            let j_r: Vector7 = (2.0 * diff.transpose() * j_p).transpose();
            let xdot_r = match state.prev_x_r {
                Some(prev) => (x_r - prev) / dt_tick,
                None => 0.0,
            };
            let (f_r, m_r) = repulsor_task(x_r, xdot_r, params);
            state.prev_x_r = Some(x_r);
            debug.x_r = Some(x_r);
            debug.xdot_r = Some(xdot_r);
            debug.m_r = Some(m_r);
            pullback(f_r, m_r, &j_r)
        }
        None => {
            state.prev_x_r = None;
            pullback(0.0, 0.0, &Vector7::zeros())
        }
    };

    // 3.-4. Attractor at the virtual goal state, metric-weighted blend.
    let attract = attractor(&state.q_mg, &state.qdot_mg, q_g, params);
    let qddot = combine(&[repulsor_joint, attract]);
    if !qddot.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("goal-proposal acceleration diverged".into()));
    }

    // 5. Integrate the virtual particle, clamp to joint limits; a clamped
    // joint has its virtual velocity zeroed to avoid limit-pumping.
    let (q_new, qdot_new) = euler_integrate(&state.q_mg, &state.qdot_mg, &qddot, params);
    if !q_new.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("goal-proposal state diverged".into()));
    }
    let clamped = model.clamp_to_limits(&q_new);
    state.qdot_mg = qdot_new;
    for i in 0..NUM_JOINTS {
        if clamped[i] != q_new[i] {
            state.qdot_mg[i] = 0.0;
        }
    }
    state.q_mg = clamped;
    debug.q_mg = state.q_mg.into();

    // 6. Current frame becomes the reference for the next tick. Keep the
    // tree when the scene has not changed at all.
    let reuse = state
        .prev
        .as_ref()
        .is_some_and(|t| t.points() == scene.points());
    if !reuse {
        state.prev = Some(build_tree(scene)?);
    }

    Ok((state.q_mg, debug))
}
