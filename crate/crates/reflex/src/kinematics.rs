//! Forward kinematics, point Jacobians and the sphere surface model for a
//! 7-DoF revolute serial arm.
//!
//! The model is URDF-style: each joint carries a fixed parent-to-joint
//! transform plus a unit rotation axis in the joint frame. The robot surface
//! is a union of collision spheres attached to link frames, which gives
//! closed-form closest points and cheap collision tests.

use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::PointCloud;
use crate::{Jacobian, Vector7};

pub const NUM_JOINTS: usize = 7;
/// Link frames 0..=7; link 0 is the fixed base.
pub const NUM_LINKS: usize = 8;

const DEFAULT_MODEL_JSON: &str = include_str!("../assets/panda.json");

/// One revolute joint: fixed parent-to-joint transform plus rotation axis.
#[derive(Clone, Debug)]
pub struct JointDesc {
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: [f64; NUM_JOINTS],
    pub upper: [f64; NUM_JOINTS],
    pub vel: [f64; NUM_JOINTS],
    pub acc: [f64; NUM_JOINTS],
}

/// Collision sphere rigidly attached to a link frame.
#[derive(Clone, Debug)]
pub struct CollisionSphere {
    pub link: usize,
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Kinematic chain plus sphere surface model.
#[derive(Clone, Debug)]
pub struct RobotModel {
    joints: Vec<JointDesc>,
    flange: Isometry3<f64>,
    pub limits: JointLimits,
    pub spheres: Vec<CollisionSphere>,
}

/// Joint positions and velocities.
#[derive(Clone, Copy, Debug)]
pub struct JointState {
    pub q: Vector7,
    pub qdot: Vector7,
}

impl JointState {
    pub fn at_rest(q: Vector7) -> Self {
        JointState {
            q,
            qdot: Vector7::zeros(),
        }
    }
}

/// A point on the robot's sphere surface, with its owning link and sphere.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePoint {
    pub position: Point3<f64>,
    pub link: usize,
    pub sphere: usize,
}

/// World-frame link frames (link 0 = base) plus the end-effector frame.
#[derive(Clone, Debug)]
pub struct FkFrames {
    pub links: [Isometry3<f64>; NUM_LINKS],
    pub ee: Isometry3<f64>,
}

// --- model file schema ------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct JointFile {
    origin_xyz: [f64; 3],
    origin_quat_wxyz: [f64; 4],
    axis: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct FlangeFile {
    origin_xyz: [f64; 3],
    origin_quat_wxyz: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct SphereFile {
    link: usize,
    center: [f64; 3],
    radius: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    joints: Vec<JointFile>,
    flange: FlangeFile,
    limits: JointLimits,
    spheres: Vec<SphereFile>,
}

fn isometry_from(xyz: &[f64; 3], quat_wxyz: &[f64; 4]) -> Isometry3<f64> {
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        quat_wxyz[0],
        quat_wxyz[1],
        quat_wxyz[2],
        quat_wxyz[3],
    ));
    Isometry3::from_parts(Translation3::new(xyz[0], xyz[1], xyz[2]), q)
}

impl RobotModel {
    /// The default 7-DoF model shipped with the crate (Franka Panda
    /// kinematic parameters).
    pub fn default_panda() -> Self {
        Self::from_json_str(DEFAULT_MODEL_JSON).expect("bundled model must be valid")
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.joints.len() != NUM_JOINTS {
            return Err(Error::Model(format!(
                "expected {} joints, got {}",
                NUM_JOINTS,
                file.joints.len()
            )));
        }
        let mut joints = Vec::with_capacity(NUM_JOINTS);
        for (i, j) in file.joints.iter().enumerate() {
            let axis = Vector3::new(j.axis[0], j.axis[1], j.axis[2]);
            if (axis.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Model(format!("joint {i} axis is not unit-norm")));
            }
            joints.push(JointDesc {
                origin: isometry_from(&j.origin_xyz, &j.origin_quat_wxyz),
                axis: Unit::new_unchecked(axis),
            });
        }
        for i in 0..NUM_JOINTS {
            if file.limits.lower[i] >= file.limits.upper[i] {
                return Err(Error::Model(format!("joint {i} limits are inverted")));
            }
        }
        let mut spheres = Vec::with_capacity(file.spheres.len());
        for (i, s) in file.spheres.iter().enumerate() {
            if s.link >= NUM_LINKS {
                return Err(Error::Model(format!("sphere {i} link index out of range")));
            }
            if s.radius <= 0.0 {
                return Err(Error::Model(format!("sphere {i} radius must be positive")));
            }
            spheres.push(CollisionSphere {
                link: s.link,
                center: Vector3::new(s.center[0], s.center[1], s.center[2]),
                radius: s.radius,
            });
        }
        Ok(RobotModel {
            joints,
            flange: isometry_from(&file.flange.origin_xyz, &file.flange.origin_quat_wxyz),
            limits: file.limits,
            spheres,
        })
    }

    pub fn joints(&self) -> &[JointDesc] {
        &self.joints
    }

    pub fn flange(&self) -> &Isometry3<f64> {
        &self.flange
    }

    /// World-frame frames of all links plus the end-effector.
    pub fn forward_kinematics(&self, q: &Vector7) -> Result<FkFrames> {
        if !q.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite joint position"));
        }
        Ok(self.fk_unchecked(q))
    }

    pub(crate) fn fk_unchecked(&self, q: &Vector7) -> FkFrames {
        let mut links = [Isometry3::identity(); NUM_LINKS];
        let mut t = Isometry3::identity();
        for (i, joint) in self.joints.iter().enumerate() {
            let spin = UnitQuaternion::from_axis_angle(&joint.axis, q[i]);
            t *= joint.origin * Isometry3::from_parts(Translation3::identity(), spin);
            links[i + 1] = t;
        }
        FkFrames {
            links,
            ee: t * self.flange,
        }
    }

    /// 3x7 Jacobian of the world position of a surface point. Columns for
    /// joints distal to the owning link are zero.
    pub fn point_jacobian(&self, q: &Vector7, p: &SurfacePoint) -> Result<Jacobian> {
        let frames = self.forward_kinematics(q)?;
        self.point_jacobian_at(&frames, p)
    }

    /// Same as [`point_jacobian`](Self::point_jacobian) with FK reused.
    pub fn point_jacobian_at(&self, frames: &FkFrames, p: &SurfacePoint) -> Result<Jacobian> {
        if p.link >= NUM_LINKS {
            return Err(Error::invalid("surface point link index out of range"));
        }
        let mut jac = Jacobian::zeros();
        // 1-based joint j drives links >= j.
        for j in 1..=p.link.min(NUM_JOINTS) {
            let frame = &frames.links[j];
            let axis_w = frame.rotation * self.joints[j - 1].axis.into_inner();
            let origin = frame.translation.vector;
            let col = axis_w.cross(&(p.position.coords - origin));
            jac.set_column(j - 1, &col);
        }
        Ok(jac)
    }

    /// Closest point on the union of collision spheres to `x_obs`.
    ///
    /// A query that lands on a sphere center (distance < 1e-12) resolves
    /// deterministically along world +z from that center.
    pub fn closest_surface_point(&self, q: &Vector7, x_obs: &Point3<f64>) -> Result<SurfacePoint> {
        let frames = self.forward_kinematics(q)?;
        Ok(self.closest_surface_point_at(&frames, x_obs))
    }

    pub fn closest_surface_point_at(&self, frames: &FkFrames, x_obs: &Point3<f64>) -> SurfacePoint {
        debug_assert!(!self.spheres.is_empty());
        let mut best: Option<(f64, SurfacePoint)> = None;
        for (si, s) in self.spheres.iter().enumerate() {
            let center = frames.links[s.link] * Point3::from(s.center);
            let to_obs = x_obs - center;
            let d = to_obs.norm();
            let dir = if d < 1e-12 {
                Vector3::z()
            } else {
                to_obs / d
            };
            let candidate = center + dir * s.radius;
            let dist = (d - s.radius).abs();
            if best.map_or(true, |(b, _)| dist < b) {
                best = Some((
                    dist,
                    SurfacePoint {
                        position: candidate,
                        link: s.link,
                        sphere: si,
                    },
                ));
            }
        }
        best.expect("model has at least one sphere").1
    }

    /// `n` points area-uniform over the union of sphere surfaces, in world
    /// frame at configuration `q`. Deterministic per seed.
    pub fn robot_point_cloud(&self, q: &Vector7, n: usize, seed: u64) -> Result<PointCloud> {
        if n < 1 {
            return Err(Error::invalid("point count must be >= 1"));
        }
        let frames = self.forward_kinematics(q)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> = self.spheres.iter().map(|s| s.radius * s.radius).collect();
        let total: f64 = weights.iter().sum();
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let mut pick = rng.gen_range(0.0..total);
            let mut idx = 0;
            for (i, w) in weights.iter().enumerate() {
                if pick < *w || i == weights.len() - 1 {
                    idx = i;
                    break;
                }
                pick -= w;
            }
            let s = &self.spheres[idx];
            let center = frames.links[s.link] * Point3::from(s.center);
            points.push(center + uniform_on_sphere(&mut rng) * s.radius);
        }
        Ok(PointCloud::new(points, 0))
    }

    /// Component-wise clamp to joint position limits.
    pub fn clamp_to_limits(&self, q: &Vector7) -> Vector7 {
        let mut out = *q;
        for i in 0..NUM_JOINTS {
            out[i] = out[i].clamp(self.limits.lower[i], self.limits.upper[i]);
        }
        out
    }

    pub fn within_limits(&self, q: &Vector7) -> bool {
        (0..NUM_JOINTS).all(|i| q[i] >= self.limits.lower[i] && q[i] <= self.limits.upper[i])
    }
}

fn uniform_on_sphere(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(s * phi.cos(), s * phi.sin(), z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// Independent straight-line FK oracle: naive 4x4 homogeneous matrix
    /// products, written before the implementation above.
    fn fk_oracle(model: &RobotModel, q: &Vector7) -> Vec<nalgebra::Matrix4<f64>> {
        let mut t = nalgebra::Matrix4::identity();
        let mut out = vec![t];
        for (i, j) in model.joints().iter().enumerate() {
            let origin = j.origin.to_homogeneous();
            let spin = nalgebra::Rotation3::from_axis_angle(&j.axis, q[i]).to_homogeneous();
            t = t * origin * spin;
            out.push(t);
        }
        out.push(t * model.flange().to_homogeneous());
        out
    }

    fn random_q(rng: &mut impl Rng, model: &RobotModel) -> Vector7 {
        Vector7::from_fn(|i, _| rng.gen_range(model.limits.lower[i]..model.limits.upper[i]))
    }

    #[test]
    fn fk_zero_matches_fixed_transform_composition() {
        let model = RobotModel::default_panda();
        let frames = model.forward_kinematics(&Vector7::zeros()).unwrap();
        let mut t = Isometry3::identity();
        for j in model.joints() {
            t *= j.origin;
        }
        t *= model.flange();
        assert_relative_eq!(
            frames.ee.to_homogeneous(),
            t.to_homogeneous(),
            epsilon = 1e-12
        );
        // Known Panda end-effector position at q = 0.
        assert_relative_eq!(frames.ee.translation.vector.x, 0.088, epsilon = 1e-9);
        assert_relative_eq!(frames.ee.translation.vector.z, 0.926, epsilon = 1e-9);
    }

    #[test]
    fn rotating_joint_one_keeps_link_one_origin_fixed() {
        let model = RobotModel::default_panda();
        let mut q = Vector7::zeros();
        let before = model.forward_kinematics(&q).unwrap().links[1].translation;
        q[0] = std::f64::consts::PI;
        let after = model.forward_kinematics(&q).unwrap().links[1].translation;
        assert_relative_eq!(before.vector, after.vector, epsilon = 1e-12);
    }

    #[test]
    fn fk_matches_independent_oracle() {
        let model = RobotModel::default_panda();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = random_q(&mut rng, &model);
            let frames = model.forward_kinematics(&q).unwrap();
            let oracle = fk_oracle(&model, &q);
            for i in 0..NUM_LINKS {
                assert_relative_eq!(frames.links[i].to_homogeneous(), oracle[i], epsilon = 1e-10);
            }
            assert_relative_eq!(frames.ee.to_homogeneous(), oracle[8], epsilon = 1e-10);
        }
    }

    #[test]
    fn fk_rejects_non_finite() {
        let model = RobotModel::default_panda();
        let mut q = Vector7::zeros();
        q[3] = f64::NAN;
        assert!(model.forward_kinematics(&q).is_err());
    }

    #[test]
    fn base_point_has_zero_jacobian() {
        let model = RobotModel::default_panda();
        let p = SurfacePoint {
            position: Point3::new(0.0, 0.0, 0.16),
            link: 0,
            sphere: 0,
        };
        let jac = model.point_jacobian(&Vector7::zeros(), &p).unwrap();
        assert_eq!(jac, Jacobian::zeros());
    }

    #[test]
    fn distal_columns_are_zero() {
        let model = RobotModel::default_panda();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let q = random_q(&mut rng, &model);
            let frames = model.forward_kinematics(&q).unwrap();
            let s = &model.spheres[8]; // a link-2 sphere
            let p = SurfacePoint {
                position: frames.links[s.link] * Point3::from(s.center + Vector3::z() * s.radius),
                link: s.link,
                sphere: 8,
            };
            let jac = model.point_jacobian_at(&frames, &p).unwrap();
            for col in s.link..NUM_JOINTS {
                assert_eq!(jac.column(col).norm(), 0.0);
            }
        }
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let model = RobotModel::default_panda();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eps = 1e-6;
        for _ in 0..30 {
            let q = random_q(&mut rng, &model);
            let si = rng.gen_range(0..model.spheres.len());
            let s = model.spheres[si].clone();
            // A fixed point on the sphere surface, expressed in link frame.
            let local = Point3::from(s.center + uniform_on_sphere(&mut rng) * s.radius);
            let world_at = |qq: &Vector7| model.fk_unchecked(qq).links[s.link] * local;
            let p = SurfacePoint {
                position: world_at(&q),
                link: s.link,
                sphere: si,
            };
            let jac = model.point_jacobian(&q, &p).unwrap();
            for j in 0..NUM_JOINTS {
                let mut qp = q;
                let mut qm = q;
                qp[j] += eps;
                qm[j] -= eps;
                let fd = (world_at(&qp) - world_at(&qm)) / (2.0 * eps);
                assert_relative_eq!(jac.column(j).into_owned(), fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn jacobian_rejects_bad_link() {
        let model = RobotModel::default_panda();
        let p = SurfacePoint {
            position: Point3::origin(),
            link: 9,
            sphere: 0,
        };
        assert!(model.point_jacobian(&Vector7::zeros(), &p).is_err());
    }

    #[test]
    fn closest_point_single_sphere_geometry() {
        let mut model = RobotModel::default_panda();
        model.spheres = vec![CollisionSphere {
            link: 0,
            center: Vector3::new(0.0, 0.0, 0.2),
            radius: 0.1,
        }];
        let x = Point3::new(0.5, 0.0, 0.2);
        let p = model.closest_surface_point(&Vector7::zeros(), &x).unwrap();
        assert_relative_eq!((x - p.position).norm(), 0.4, epsilon = 1e-12);

        // Query exactly on the surface.
        let on = Point3::new(0.1, 0.0, 0.2);
        let p = model.closest_surface_point(&Vector7::zeros(), &on).unwrap();
        assert_relative_eq!((on - p.position).norm(), 0.0, epsilon = 1e-12);

        // Degenerate query at the center resolves along +z.
        let c = Point3::new(0.0, 0.0, 0.2);
        let p = model.closest_surface_point(&Vector7::zeros(), &c).unwrap();
        assert_relative_eq!(p.position, Point3::new(0.0, 0.0, 0.3), epsilon = 1e-12);
    }

    #[test]
    fn closest_point_matches_brute_force() {
        let model = RobotModel::default_panda();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let q = random_q(&mut rng, &model);
        let frames = model.forward_kinematics(&q).unwrap();
        for _ in 0..200 {
            let x = Point3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.5..1.5),
            );
            let got = model.closest_surface_point_at(&frames, &x);
            let best = model
                .spheres
                .iter()
                .map(|s| {
                    let c = frames.links[s.link] * Point3::from(s.center);
                    ((x - c).norm() - s.radius).abs()
                })
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!((x - got.position).norm(), best, epsilon = 1e-9);
        }
    }

    #[test]
    fn robot_cloud_points_lie_on_sphere_surfaces() {
        let model = RobotModel::default_panda();
        let q = Vector7::zeros();
        let frames = model.forward_kinematics(&q).unwrap();
        let cloud = model.robot_point_cloud(&q, 256, 5).unwrap();
        assert_eq!(cloud.len(), 256);
        for p in cloud.points() {
            let on_surface = model.spheres.iter().any(|s| {
                let c = frames.links[s.link] * Point3::from(s.center);
                ((p - c).norm() - s.radius).abs() < 1e-9
            });
            assert!(on_surface);
        }
        // Same seed, same bits.
        let again = model.robot_point_cloud(&q, 256, 5).unwrap();
        assert_eq!(cloud.points(), again.points());
        // n = 1 works.
        assert_eq!(model.robot_point_cloud(&q, 1, 0).unwrap().len(), 1);
        assert!(model.robot_point_cloud(&q, 0, 0).is_err());
    }

    #[test]
    fn single_sphere_sampling_is_centered() {
        let mut model = RobotModel::default_panda();
        model.spheres = vec![CollisionSphere {
            link: 0,
            center: Vector3::new(0.1, -0.2, 0.3),
            radius: 0.05,
        }];
        let n = 100_000;
        let cloud = model.robot_point_cloud(&Vector7::zeros(), n, 9).unwrap();
        let mean = cloud
            .points()
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords)
            / n as f64;
        // Per-axis std of a point on a radius-r sphere is r/sqrt(3).
        let sigma_mean = 0.05 / 3.0_f64.sqrt() / (n as f64).sqrt();
        for (i, c) in [0.1, -0.2, 0.3].iter().enumerate() {
            assert!((mean[i] - c).abs() < 3.0 * sigma_mean, "axis {i} off-center");
        }
    }

    #[test]
    fn fk_is_continuous() {
        let model = RobotModel::default_panda();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let q = random_q(&mut rng, &model);
            let mut q2 = q;
            for i in 0..NUM_JOINTS {
                q2[i] += 1e-8;
            }
            let a = model.forward_kinematics(&q).unwrap();
            let b = model.forward_kinematics(&q2).unwrap();
            let d = (a.ee.translation.vector - b.ee.translation.vector).norm();
            assert!(d < 1e-6);
        }
    }
}
