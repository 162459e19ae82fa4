//! Downstream global-policy interface and two non-learned baselines.
//!
//! A policy sees only point clouds, the current joints and a goal — never
//! ground-truth obstacle poses — and answers with a fixed-length chunk of
//! delta joint actions. The executor consumes the first delta of each chunk
//! and re-plans every tick.

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::perception::{KdTree, PointCloud};
use crate::rmp::{combine, pullback, repulsor_task, RmpParams};
use crate::Vector7;

/// Default action-chunk length.
pub const CHUNK_LEN: usize = 10;

/// Fixed-length sequence of delta joint-position commands (rad).
#[derive(Clone, Debug)]
pub struct ActionChunk {
    pub deltas: Vec<Vector7>,
}

impl ActionChunk {
    /// Every delta must respect the per-tick step bound.
    pub fn respects_bound(&self, step_limit: f64) -> bool {
        self.deltas
            .iter()
            .all(|d| d.amax() <= step_limit + 1e-12)
    }
}

/// Everything a policy is allowed to observe.
pub struct PolicyInput<'a> {
    pub scene_cloud: &'a PointCloud,
    pub robot_cloud: &'a PointCloud,
    pub q_c: Vector7,
    pub q_goal: Vector7,
}

impl PolicyInput<'_> {
    pub fn validate(&self, n_s: usize, n_r: usize) -> Result<()> {
        if self.scene_cloud.len() != n_s {
            return Err(Error::invalid(format!(
                "scene cloud has {} points, expected {}",
                self.scene_cloud.len(),
                n_s
            )));
        }
        if self.robot_cloud.len() != n_r {
            return Err(Error::invalid(format!(
                "robot cloud has {} points, expected {}",
                self.robot_cloud.len(),
                n_r
            )));
        }
        Ok(())
    }
}

pub trait Policy: Send {
    fn name(&self) -> &'static str;
    fn plan_chunk(&mut self, input: &PolicyInput) -> Result<ActionChunk>;
}

/// Straight joint-space interpolation toward the goal, each step scaled to
/// the per-tick limit. Ignores the clouds entirely.
pub struct Interpolator {
    pub step_limit: f64,
    pub chunk_len: usize,
}

/// One straight-line step from `from` toward `to`, scaled so the step's
/// max component is at most `limit`.
fn clipped_step(from: &Vector7, to: &Vector7, limit: f64) -> Vector7 {
    let d = to - from;
    let m = d.amax();
    if m <= limit || m == 0.0 {
        d
    } else {
        d * (limit / m)
    }
}

impl Policy for Interpolator {
    fn name(&self) -> &'static str {
        "interpolator"
    }

    fn plan_chunk(&mut self, input: &PolicyInput) -> Result<ActionChunk> {
        let mut cur = input.q_c;
        let mut deltas = Vec::with_capacity(self.chunk_len);
        for _ in 0..self.chunk_len {
            let d = clipped_step(&cur, &input.q_goal, self.step_limit);
            cur += d;
            deltas.push(d);
        }
        Ok(ActionChunk { deltas })
    }
}

/// Goal seeking with a repulsive correction away from the K scene points
/// nearest the robot surface. The correction reuses the repulsor/pullback
/// forms with zero task velocity, so it shapes clearance around static
/// geometry rather than chasing moving obstacles.
pub struct RepulsiveBaseline {
    pub model: RobotModel,
    pub params: RmpParams,
    pub step_limit: f64,
    pub chunk_len: usize,
    pub k_nearest: usize,
    pub dt_tick: f64,
}

impl RepulsiveBaseline {
    /// K scene points with the smallest surface distance to the robot.
    /// Candidates come from per-sphere k-NN queries; with one query per
    /// collision sphere the true closest point is always among them.
    fn near_points(&self, scene: &PointCloud, q: &Vector7) -> Result<Vec<Point3<f64>>> {
        if scene.is_empty() {
            return Ok(Vec::new());
        }
        let tree = KdTree::new(scene.points().to_vec());
        let frames = self.model.forward_kinematics(q)?;
        let mut candidates: Vec<usize> = Vec::new();
        for s in &self.model.spheres {
            let c = frames.links[s.link] * Point3::from(s.center);
            candidates.extend(tree.knn(&c, 3).into_iter().map(|(i, _)| i));
        }
        candidates.sort_unstable();
        candidates.dedup();
        let mut scored: Vec<(f64, usize)> = candidates
            .into_iter()
            .map(|i| {
                let p = &scene.points()[i];
                let sp = self.model.closest_surface_point_at(&frames, p);
                ((p - sp.position).norm(), i)
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        scored.truncate(self.k_nearest);
        Ok(scored
            .into_iter()
            .map(|(_, i)| scene.points()[i])
            .collect())
    }
}

impl Policy for RepulsiveBaseline {
    fn name(&self) -> &'static str {
        "repulsive"
    }

    fn plan_chunk(&mut self, input: &PolicyInput) -> Result<ActionChunk> {
        let near = self.near_points(input.scene_cloud, &input.q_c)?;

        // Nominal straight-line positions plus an integrated repulsive
        // correction; obstacle-free scenes reduce exactly to the
        // interpolator.
        let mut nominal = input.q_c;
        let mut corr = Vector7::zeros();
        let mut corr_vel = Vector7::zeros();
        let mut actual = input.q_c;
        let mut deltas = Vec::with_capacity(self.chunk_len);
        for _ in 0..self.chunk_len {
            nominal += clipped_step(&nominal, &input.q_goal, self.step_limit);
            if !near.is_empty() {
                let q_v = actual;
                let frames = self.model.forward_kinematics(&q_v)?;
                let rmps: Vec<_> = near
                    .iter()
                    .map(|p| {
                        let sp = self.model.closest_surface_point_at(&frames, p);
                        let diff = sp.position - p;
                        let x_r = diff.norm_squared();
                        let j_p = self.model.point_jacobian_at(&frames, &sp)?;
                        let j_r: Vector7 = (2.0 * diff.transpose() * j_p).transpose();
                        let (f_r, m_r) = repulsor_task(x_r, 0.0, &self.params);
                        Ok(pullback(f_r, m_r, &j_r))
                    })
                    .collect::<Result<_>>()?;
                let qddot = combine(&rmps);
                corr_vel += qddot * self.dt_tick;
                corr += corr_vel * self.dt_tick;
            }
            let target = nominal + corr;
            let d = clipped_step(&actual, &target, self.step_limit);
            actual += d;
            deltas.push(d);
        }
        Ok(ActionChunk { deltas })
    }
}

/// Instantiate a policy by its run-config name.
pub fn make_policy(
    name: &str,
    model: &RobotModel,
    params: &RmpParams,
    dt_tick: f64,
    chunk_len: usize,
) -> Result<Box<dyn Policy>> {
    let step_limit = per_tick_step_limit(model, dt_tick);
    match name {
        "interpolator" => Ok(Box::new(Interpolator {
            step_limit,
            chunk_len,
        })),
        "repulsive" => Ok(Box::new(RepulsiveBaseline {
            model: model.clone(),
            params: RmpParams { k_p: 24.0, mu_r: 12.0, r: 0.09, ell_p: 0.05, ell_d: 0.05, ell_m: 0.05, ..*params },
            step_limit,
            chunk_len,
            k_nearest: 8,
            dt_tick,
        })),
        other => Err(Error::invalid(format!("unknown policy '{other}'"))),
    }
}

/// Scalar per-tick step bound: slowest joint's velocity limit times the
/// tick duration.
pub fn per_tick_step_limit(model: &RobotModel, dt_tick: f64) -> f64 {
    model
        .limits
        .vel
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        * dt_tick
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::CollisionSphere;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn empty_cloud() -> PointCloud {
        PointCloud::new(vec![], 0)
    }

    fn input<'a>(scene: &'a PointCloud, robot: &'a PointCloud, q_c: Vector7, q_goal: Vector7) -> PolicyInput<'a> {
        PolicyInput {
            scene_cloud: scene,
            robot_cloud: robot,
            q_c,
            q_goal,
        }
    }

    #[test]
    fn interpolator_at_goal_is_all_zero() {
        let mut p = Interpolator {
            step_limit: 0.04,
            chunk_len: CHUNK_LEN,
        };
        let scene = empty_cloud();
        let robot = empty_cloud();
        let q = Vector7::from_element(0.3);
        let chunk = p.plan_chunk(&input(&scene, &robot, q, q)).unwrap();
        assert_eq!(chunk.deltas.len(), CHUNK_LEN);
        assert!(chunk.deltas.iter().all(|d| *d == Vector7::zeros()));
    }

    #[test]
    fn interpolator_one_step_goal_is_exact() {
        let mut p = Interpolator {
            step_limit: 0.04,
            chunk_len: CHUNK_LEN,
        };
        let scene = empty_cloud();
        let robot = empty_cloud();
        let q = Vector7::zeros();
        let mut goal = Vector7::zeros();
        goal[2] = 0.03;
        let chunk = p.plan_chunk(&input(&scene, &robot, q, goal)).unwrap();
        assert_eq!(chunk.deltas[0], goal - q);
        assert!(chunk.deltas[1..].iter().all(|d| *d == Vector7::zeros()));
    }

    #[test]
    fn interpolator_far_goal_saturates_until_remainder() {
        let limit = 0.04;
        let mut p = Interpolator {
            step_limit: limit,
            chunk_len: CHUNK_LEN,
        };
        let scene = empty_cloud();
        let robot = empty_cloud();
        let q = Vector7::zeros();
        let goal = Vector7::from_element(1.0);
        let chunk = p.plan_chunk(&input(&scene, &robot, q, goal)).unwrap();
        // 1.0 / 0.04 = 25 full steps; all chunk steps saturate here.
        for d in &chunk.deltas {
            assert_relative_eq!(d.amax(), limit, epsilon = 1e-12);
        }
        assert!(chunk.respects_bound(limit));
        // Closed-form clipped interpolation: position after i steps.
        let mut expect = q;
        for d in &chunk.deltas {
            expect += d;
        }
        assert_relative_eq!(expect, Vector7::from_element(limit * 10.0), epsilon = 1e-12);
    }

    fn repulsive(model: &RobotModel) -> RepulsiveBaseline {
        RepulsiveBaseline {
            model: model.clone(),
            params: RmpParams::default(),
            step_limit: per_tick_step_limit(model, 0.02),
            chunk_len: CHUNK_LEN,
            k_nearest: 8,
            dt_tick: 0.02,
        }
    }

    #[test]
    fn repulsive_empty_scene_equals_interpolator() {
        let model = RobotModel::default_panda();
        let mut rep = repulsive(&model);
        let mut interp = Interpolator {
            step_limit: rep.step_limit,
            chunk_len: CHUNK_LEN,
        };
        let scene = empty_cloud();
        let robot = empty_cloud();
        let q = Vector7::from_column_slice(&[0.0, -0.6, 0.0, -2.0, 0.0, 1.6, 0.8]);
        let goal = Vector7::from_column_slice(&[0.5, -0.3, 0.3, -1.6, 0.2, 1.2, 0.5]);
        let a = rep.plan_chunk(&input(&scene, &robot, q, goal)).unwrap();
        let b = interp.plan_chunk(&input(&scene, &robot, q, goal)).unwrap();
        for (da, db) in a.deltas.iter().zip(b.deltas.iter()) {
            assert!((da - db).amax() < 1e-6);
        }
    }

    #[test]
    fn symmetric_points_cancel_along_mirror_axis() {
        // Model whose spheres all sit in the xz-plane at q = 0, plus two
        // scene points mirrored across that plane. The joint-1 (world z)
        // component of the correction must cancel.
        let mut model = RobotModel::default_panda();
        model.spheres = model
            .spheres
            .into_iter()
            .filter(|s| !(s.link == 5 && s.center.y != 0.0))
            .collect::<Vec<CollisionSphere>>();
        let mut rep = repulsive(&model);
        let q = Vector7::zeros();
        let frames = model.forward_kinematics(&q).unwrap();
        let anchor = frames.links[4].translation.vector;
        let scene = PointCloud::new(
            vec![
                Point3::from(anchor + Vector3::new(0.12, 0.1, 0.0)),
                Point3::from(anchor + Vector3::new(0.12, -0.1, 0.0)),
            ],
            0,
        );
        let robot = empty_cloud();
        // Goal at the current configuration: deltas are pure correction.
        let chunk = rep.plan_chunk(&input(&scene, &robot, q, q)).unwrap();
        assert!(
            chunk.deltas[0].norm() > 0.0,
            "symmetric pair still repels overall"
        );
        assert!(chunk.deltas[0][0].abs() < 1e-10);
    }

    #[test]
    fn single_near_point_repels_first_delta() {
        let model = RobotModel::default_panda();
        let mut rep = repulsive(&model);
        let q = Vector7::from_column_slice(&[0.0, -0.6, 0.0, -2.0, 0.0, 1.6, 0.8]);
        let frames = model.forward_kinematics(&q).unwrap();
        let ee = frames.ee.translation.vector;
        let obs = Point3::from(ee + Vector3::new(0.12, 0.0, 0.0));
        let scene = PointCloud::new(vec![obs], 0);
        let robot = empty_cloud();
        let chunk = rep.plan_chunk(&input(&scene, &robot, q, q)).unwrap();
        let sp = model.closest_surface_point(&q, &obs).unwrap();
        let diff = sp.position - obs;
        let j_p = model.point_jacobian(&q, &sp).unwrap();
        let j_r: Vector7 = (2.0 * diff.transpose() * j_p).transpose();
        assert!(chunk.deltas[0].dot(&j_r) > 0.0);
        assert!(chunk.respects_bound(rep.step_limit));
    }

    #[test]
    fn make_policy_rejects_unknown_name() {
        let model = RobotModel::default_panda();
        assert!(make_policy("magic", &model, &RmpParams::default(), 0.02, 10).is_err());
    }

    #[test]
    fn input_validation_checks_cloud_sizes() {
        let scene = PointCloud::new(vec![Point3::origin(); 4], 0);
        let robot = PointCloud::new(vec![Point3::origin(); 2], 0);
        let inp = input(&scene, &robot, Vector7::zeros(), Vector7::zeros());
        assert!(inp.validate(4, 2).is_ok());
        assert!(inp.validate(8, 2).is_err());
    }
}
