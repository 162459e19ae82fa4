//! World model for the benchmark: obstacle primitives, scripted motion,
//! surface-cloud rendering, and ground-truth collision / success checks.

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::mix_seed;
use crate::perception::PointCloud;
use crate::Vector7;

const SAMPLE_TAG: u64 = 0x5ce7e_5a3;
const NOISE_TAG: u64 = 0x701_5e;

/// Axis-aligned obstacle primitive with a world-frame pose.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Primitive {
    Box {
        center: Point3<f64>,
        half_extents: Vector3<f64>,
    },
    Sphere {
        center: Point3<f64>,
        radius: f64,
    },
}

impl Primitive {
    pub fn center(&self) -> Point3<f64> {
        match *self {
            Primitive::Box { center, .. } | Primitive::Sphere { center, .. } => center,
        }
    }

    pub fn surface_area(&self) -> f64 {
        match *self {
            Primitive::Box { half_extents: h, .. } => {
                8.0 * (h.x * h.y + h.y * h.z + h.z * h.x)
            }
            Primitive::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
        }
    }

    /// Signed distance from `p` to the surface when the primitive sits at
    /// `center`; negative inside.
    pub fn signed_distance(&self, p: &Point3<f64>, center: &Point3<f64>) -> f64 {
        match *self {
            Primitive::Box { half_extents: h, .. } => {
                let d = (p - center).abs() - h;
                let outside = d.map(|v| v.max(0.0)).norm();
                let inside = d.x.max(d.y).max(d.z).min(0.0);
                outside + inside
            }
            Primitive::Sphere { radius, .. } => (p - center).norm() - radius,
        }
    }

    /// Uniform sample on the surface, in the primitive's local frame
    /// (relative to its center).
    pub fn sample_local(&self, rng: &mut ChaCha8Rng) -> Point3<f64> {
        match *self {
            Primitive::Box { half_extents: h, .. } => {
                // Pick a face pair area-proportionally, then a side, then a
                // uniform point on that face.
                let ax = h.y * h.z; // faces normal to x
                let ay = h.x * h.z;
                let az = h.x * h.y;
                let pick = rng.gen_range(0.0..ax + ay + az);
                let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let u = rng.gen_range(-1.0..1.0);
                let v = rng.gen_range(-1.0..1.0);
                if pick < ax {
                    Point3::new(side * h.x, u * h.y, v * h.z)
                } else if pick < ax + ay {
                    Point3::new(u * h.x, side * h.y, v * h.z)
                } else {
                    Point3::new(u * h.x, v * h.y, side * h.z)
                }
            }
            Primitive::Sphere { radius, .. } => {
                let z: f64 = rng.gen_range(-1.0..1.0);
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r_xy = (1.0 - z * z).max(0.0).sqrt();
                Point3::new(
                    radius * r_xy * phi.cos(),
                    radius * r_xy * phi.sin(),
                    radius * z,
                )
            }
        }
    }
}

/// Axis-aligned region used to confine waypoint sampling.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Region {
    pub lo: Point3<f64>,
    pub hi: Point3<f64>,
}

impl Region {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Point3<f64> {
        Point3::new(
            rng.gen_range(self.lo.x..=self.hi.x),
            rng.gen_range(self.lo.y..=self.hi.y),
            rng.gen_range(self.lo.z..=self.hi.z),
        )
    }
}

/// Time-dependent placement of a dynamic obstacle. The primitive's stored
/// center is its pose while "active"; scripts translate it or remove it from
/// the scene entirely.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionScript {
    /// Absent until `t_appear`, then fixed at the primitive's pose.
    Appear { t_appear: u64 },
    /// Travels at constant speed between waypoints drawn from `region`.
    RandomWaypoints {
        speed: f64,
        region: Region,
        resample_seed: u64,
    },
    /// Present at the primitive's pose for ticks in `[t_block, t_unblock)`.
    GoalBlock { t_block: u64, t_unblock: u64 },
    /// Absent until the robot first reaches the goal; then, after
    /// `delay_ticks`, flies from `start` to the primitive's pose at
    /// `approach_speed`, circles there for `dwell_ticks` on a horizontal
    /// ring of `hover_radius` at angular rate `hover_omega`, retreats back
    /// to `start`, and disappears.
    PostGoalApproach {
        start: Point3<f64>,
        approach_speed: f64,
        delay_ticks: u64,
        dwell_ticks: u64,
        hover_radius: f64,
        hover_omega: f64,
    },
}

impl MotionScript {
    pub fn validate(&self) -> Result<()> {
        match self {
            MotionScript::RandomWaypoints { speed, region, .. } => {
                if *speed < 0.0 {
                    return Err(Error::invalid("waypoint speed must be >= 0"));
                }
                if region.lo.coords.iter().zip(region.hi.coords.iter()).any(|(a, b)| a > b) {
                    return Err(Error::invalid("waypoint region is inverted"));
                }
            }
            MotionScript::PostGoalApproach { approach_speed, hover_radius, .. } => {
                if *approach_speed <= 0.0 || *hover_radius < 0.0 {
                    return Err(Error::invalid("post-goal script parameters out of range"));
                }
            }
            MotionScript::GoalBlock { t_block, t_unblock } => {
                if t_unblock < t_block {
                    return Err(Error::invalid("goal block interval is inverted"));
                }
            }
            MotionScript::Appear { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DynamicObstacle {
    pub primitive: Primitive,
    pub script: MotionScript,
}

/// Benchmark task family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Family {
    /// Static environments.
    Se,
    /// Suddenly-appearing obstacle.
    Sao,
    /// Fully dynamic obstacles.
    Fdo,
    /// Goal blocked for the whole episode.
    Gb,
    /// Dynamic goal blocking after first reach.
    Dgb,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Se, Family::Sao, Family::Fdo, Family::Gb, Family::Dgb];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Se => "SE",
            Family::Sao => "SAO",
            Family::Fdo => "FDO",
            Family::Gb => "GB",
            Family::Dgb => "DGB",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Family> {
        match s.to_ascii_uppercase().as_str() {
            "SE" => Ok(Family::Se),
            "SAO" => Ok(Family::Sao),
            "FDO" => Ok(Family::Fdo),
            "GB" => Ok(Family::Gb),
            "DGB" => Ok(Family::Dgb),
            other => Err(Error::invalid(format!("unknown family `{other}`"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Goal pose for the end effector: position plus orientation. The
/// orientation is stored as raw quaternion components so JSON round trips
/// are bit-exact (unit-quaternion deserialization renormalizes).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GoalPose {
    pub position: Point3<f64>,
    pub orientation: Quaternion<f64>,
}

impl GoalPose {
    pub fn from_parts(position: Point3<f64>, orientation: UnitQuaternion<f64>) -> GoalPose {
        GoalPose { position, orientation: orientation.into_inner() }
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_unchecked(self.orientation)
    }
}

/// A complete, replayable episode description.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneSpec {
    pub family: Family,
    pub seed: u64,
    pub static_obstacles: Vec<Primitive>,
    pub dynamic_obstacles: Vec<DynamicObstacle>,
    pub q_start: Vector7,
    pub q_g: Vector7,
    pub goal_pose: GoalPose,
}

impl SceneSpec {
    pub fn from_json_str(s: &str) -> Result<SceneSpec> {
        serde_json::from_str(s).map_err(Error::from)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene spec serializes")
    }
}

/// Precomputed waypoint path through a region: piecewise-linear, constant
/// speed, long enough to cover the episode horizon.
#[derive(Debug, Clone)]
struct WaypointPath {
    points: Vec<Point3<f64>>,
    cumulative: Vec<f64>,
    speed: f64,
}

impl WaypointPath {
    fn build(start: Point3<f64>, speed: f64, region: &Region, seed: u64, total_time: f64) -> WaypointPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let needed = speed * total_time;
        let mut points = vec![start];
        let mut cumulative = vec![0.0];
        while *cumulative.last().unwrap() < needed + 1e-9 {
            let next = region.sample(&mut rng);
            let seg = (next - points.last().unwrap()).norm();
            if seg < 1e-9 {
                continue;
            }
            cumulative.push(cumulative.last().unwrap() + seg);
            points.push(next);
        }
        WaypointPath { points, cumulative, speed }
    }

    fn position(&self, t_sec: f64) -> Point3<f64> {
        let s = (self.speed * t_sec).min(*self.cumulative.last().unwrap());
        let i = match self.cumulative.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i - 1,
        };
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        let alpha = ((s - self.cumulative[i]) / seg_len).clamp(0.0, 1.0);
        self.points[i] + alpha * (self.points[i + 1] - self.points[i])
    }
}

/// Per-episode evaluation state for a scene: cached sample patterns,
/// precomputed waypoint paths, and the goal-reach trigger tick.
pub struct SceneRuntime<'a> {
    pub spec: &'a SceneSpec,
    dt: f64,
    seed: u64,
    patterns: Vec<(ChaCha8Rng, Vec<Point3<f64>>)>,
    paths: Vec<Option<WaypointPath>>,
    trigger_tick: Option<u64>,
}

impl<'a> SceneRuntime<'a> {
    pub fn new(spec: &'a SceneSpec, dt: f64, horizon: u64, seed: u64) -> SceneRuntime<'a> {
        let n_obs = spec.static_obstacles.len() + spec.dynamic_obstacles.len();
        let patterns = (0..n_obs)
            .map(|i| {
                (
                    ChaCha8Rng::seed_from_u64(mix_seed(seed, SAMPLE_TAG.wrapping_add(i as u64))),
                    Vec::new(),
                )
            })
            .collect();
        let total_time = dt * horizon as f64;
        let paths = spec
            .dynamic_obstacles
            .iter()
            .map(|o| match &o.script {
                MotionScript::RandomWaypoints { speed, region, resample_seed } => Some(
                    WaypointPath::build(o.primitive.center(), *speed, region, *resample_seed, total_time),
                ),
                _ => None,
            })
            .collect();
        SceneRuntime { spec, dt, seed, patterns, paths, trigger_tick: None }
    }

    /// Latch the tick at which the robot first reached the goal; post-goal
    /// scripts key off this.
    pub fn set_trigger(&mut self, tick: u64) {
        if self.trigger_tick.is_none() {
            self.trigger_tick = Some(tick);
        }
    }

    pub fn trigger_tick(&self) -> Option<u64> {
        self.trigger_tick
    }

    /// World-frame center of dynamic obstacle `i` at tick `t`, or None when
    /// the obstacle is absent from the scene.
    pub fn dynamic_center(&self, i: usize, t: u64) -> Option<Point3<f64>> {
        let obs = &self.spec.dynamic_obstacles[i];
        let base = obs.primitive.center();
        match &obs.script {
            MotionScript::Appear { t_appear } => (t >= *t_appear).then_some(base),
            MotionScript::GoalBlock { t_block, t_unblock } => {
                (t >= *t_block && t < *t_unblock).then_some(base)
            }
            MotionScript::RandomWaypoints { .. } => {
                Some(self.paths[i].as_ref().unwrap().position(t as f64 * self.dt))
            }
            MotionScript::PostGoalApproach {
                start,
                approach_speed,
                delay_ticks,
                dwell_ticks,
                hover_radius,
                hover_omega,
            } => {
                let trig = self.trigger_tick?;
                let t0 = trig.saturating_add(*delay_ticks);
                if t < t0 {
                    return None;
                }
                let tau = (t - t0) as f64 * self.dt;
                let leg = start - base;
                let approach_time = leg.norm() / approach_speed;
                let dwell_time = *dwell_ticks as f64 * self.dt;
                if tau < approach_time {
                    let alpha = 1.0 - tau / approach_time;
                    Some(base + alpha * leg)
                } else if tau < approach_time + dwell_time {
                    let theta = hover_omega * (tau - approach_time);
                    Some(base + *hover_radius * Vector3::new(theta.cos(), theta.sin(), 0.0))
                } else if tau < 2.0 * approach_time + dwell_time {
                    let alpha = (tau - approach_time - dwell_time) / approach_time;
                    Some(base + alpha * leg)
                } else {
                    None
                }
            }
        }
    }

    /// All obstacles present at tick `t`: (pattern index, primitive, center).
    pub fn present(&self, t: u64) -> Vec<(usize, Primitive, Point3<f64>)> {
        let n_static = self.spec.static_obstacles.len();
        let mut out: Vec<_> = self
            .spec
            .static_obstacles
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.clone(), p.center()))
            .collect();
        for (i, o) in self.spec.dynamic_obstacles.iter().enumerate() {
            if let Some(c) = self.dynamic_center(i, t) {
                out.push((n_static + i, o.primitive.clone(), c));
            }
        }
        out
    }

    /// True when nothing in the scene can move or appear at tick `t` or later.
    pub fn static_from(&self, t: u64) -> bool {
        self.spec.dynamic_obstacles.iter().enumerate().all(|(i, o)| match &o.script {
            MotionScript::Appear { t_appear } => t >= *t_appear,
            MotionScript::GoalBlock { t_unblock, .. } => t >= *t_unblock || *t_unblock == u64::MAX,
            MotionScript::RandomWaypoints { .. } => false,
            MotionScript::PostGoalApproach { .. } => {
                // Settled only once triggered and fully retreated; if the
                // robot never reaches, the script can still fire later.
                match self.trigger_tick {
                    None => false,
                    Some(_) => self.dynamic_center(i, t).is_none() && {
                        // Past the retreat: absent now implies absent forever
                        // only after t0; before t0 it is absent but pending.
                        let MotionScript::PostGoalApproach { delay_ticks, .. } = &o.script else {
                            unreachable!()
                        };
                        t >= self.trigger_tick.unwrap().saturating_add(*delay_ticks)
                    },
                }
            }
        })
    }

    /// Render `n` surface points, area-uniform over the obstacles present at
    /// tick `t`. Each obstacle contributes a fixed sample pattern rigidly
    /// attached to it, so unmoved surfaces produce bit-identical points from
    /// tick to tick. `sigma > 0` adds per-tick Gaussian jitter.
    pub fn render(&mut self, t: u64, n: usize, sigma: f64) -> Result<PointCloud> {
        if n == 0 {
            return Err(Error::invalid("point count must be >= 1"));
        }
        let present = self.present(t);
        if present.is_empty() {
            return Err(Error::invalid("cannot render an empty scene"));
        }
        let total_area: f64 = present.iter().map(|(_, p, _)| p.surface_area()).sum();

        // Largest-remainder apportionment of n points by surface area.
        let mut counts = vec![0usize; present.len()];
        let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(present.len());
        let mut assigned = 0usize;
        for (k, (_, p, _)) in present.iter().enumerate() {
            let exact = n as f64 * p.surface_area() / total_area;
            counts[k] = exact.floor() as usize;
            assigned += counts[k];
            remainders.push((exact - exact.floor(), k));
        }
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, k) in remainders.iter().take(n - assigned) {
            counts[k] += 1;
        }

        let mut points = Vec::with_capacity(n);
        for (k, (idx, prim, center)) in present.iter().enumerate() {
            let (rng, pattern) = &mut self.patterns[*idx];
            while pattern.len() < counts[k] {
                pattern.push(prim.sample_local(rng));
            }
            points.extend(pattern[..counts[k]].iter().map(|p| *center + p.coords));
        }

        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, NOISE_TAG ^ t));
            for p in &mut points {
                for c in p.coords.iter_mut() {
                    *c += sigma * gaussian(&mut rng);
                }
            }
        }
        Ok(PointCloud::new(points, t))
    }

    /// Ground-truth collision check against every obstacle present at `t`.
    /// Returns the latched flag and the signed minimum clearance.
    pub fn check_collision(&self, model: &RobotModel, q: &Vector7, t: u64) -> (bool, f64) {
        let frames = model.fk_unchecked(q);
        let mut min_clear = f64::INFINITY;
        for s in &model.spheres {
            let c = frames.links[s.link] * Point3::from(s.center);
            for (_, prim, center) in self.present(t) {
                let clear = prim.signed_distance(&c, &center) - s.radius;
                min_clear = min_clear.min(clear);
            }
        }
        (min_clear < 0.0, min_clear)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// One-shot rendering for tools and tests; episode loops should hold a
/// `SceneRuntime` so sample patterns are cached across ticks.
pub fn render_scene_cloud(spec: &SceneSpec, t: u64, n: usize, seed: u64, sigma: f64) -> Result<PointCloud> {
    SceneRuntime::new(spec, DEFAULT_DT_TICK, t + 1, seed).render(t, n, sigma)
}

/// One-shot collision query; post-goal scripts are treated as untriggered.
pub fn check_collision(model: &RobotModel, q: &Vector7, spec: &SceneSpec, t: u64) -> (bool, f64) {
    SceneRuntime::new(spec, DEFAULT_DT_TICK, t + 1, spec.seed).check_collision(model, q, t)
}

/// Control tick period: 50 Hz.
pub const DEFAULT_DT_TICK: f64 = 0.02;

pub const POS_TOL: f64 = 0.01;
pub const ANG_TOL_DEG: f64 = 15.0;

/// Goal test on the end effector: translation within 1 cm and geodesic
/// rotation within 15 degrees.
pub fn check_success(model: &RobotModel, q: &Vector7, goal: &GoalPose) -> (bool, f64, f64) {
    let frames = model.fk_unchecked(q);
    let pos_err = (frames.ee.translation.vector - goal.position.coords).norm();
    let ang_err = frames.ee.rotation.angle_to(&goal.rotation()).to_degrees();
    (pos_err <= POS_TOL && ang_err <= ANG_TOL_DEG, pos_err, ang_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_box_spec(center: Point3<f64>, half: Vector3<f64>) -> SceneSpec {
        let model = RobotModel::default_panda();
        let q = Vector7::zeros();
        let ee = model.fk_unchecked(&q).ee;
        SceneSpec {
            family: Family::Se,
            seed: 1,
            static_obstacles: vec![Primitive::Box { center, half_extents: half }],
            dynamic_obstacles: vec![],
            q_start: q,
            q_g: q,
            goal_pose: GoalPose::from_parts(Point3::from(ee.translation.vector), ee.rotation),
        }
    }

    #[test]
    fn cloud_has_exact_count_and_lies_on_surface() {
        let spec = unit_box_spec(Point3::new(1.0, 2.0, 3.0), Vector3::new(0.5, 0.5, 0.5));
        let cloud = render_scene_cloud(&spec, 0, 2048, 9, 0.0).unwrap();
        assert_eq!(cloud.len(), 2048);
        let prim = &spec.static_obstacles[0];
        for p in cloud.points() {
            assert!(prim.signed_distance(p, &prim.center()).abs() < 1e-9);
        }
    }

    #[test]
    fn area_ratio_two_to_one() {
        // Sphere areas 2:1 via radii sqrt(2):1.
        let mut spec = unit_box_spec(Point3::origin(), Vector3::new(0.1, 0.1, 0.1));
        spec.static_obstacles = vec![
            Primitive::Sphere { center: Point3::new(0.0, 0.0, 0.0), radius: 2f64.sqrt() * 0.1 },
            Primitive::Sphere { center: Point3::new(5.0, 0.0, 0.0), radius: 0.1 },
        ];
        let n = 100_000usize;
        let cloud = render_scene_cloud(&spec, 0, n, 3, 0.0).unwrap();
        let near_second = cloud.points().iter().filter(|p| p.x > 2.5).count();
        // Largest-remainder apportionment is essentially exact; allow the
        // binomial 5-sigma band anyway.
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((near_second as f64 - n as f64 * p).abs() < 5.0 * sigma);
    }

    #[test]
    fn static_scene_renders_bit_identical_across_ticks() {
        let spec = unit_box_spec(Point3::new(0.5, 0.0, 0.3), Vector3::new(0.1, 0.2, 0.15));
        let mut rt = SceneRuntime::new(&spec, DEFAULT_DT_TICK, 100, spec.seed);
        let a = rt.render(3, 512, 0.0).unwrap();
        let b = rt.render(57, 512, 0.0).unwrap();
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn jitter_perturbs_points() {
        let spec = unit_box_spec(Point3::origin(), Vector3::new(0.2, 0.2, 0.2));
        let clean = render_scene_cloud(&spec, 0, 64, 2, 0.0).unwrap();
        let noisy = render_scene_cloud(&spec, 0, 64, 2, 0.005).unwrap();
        assert_ne!(clean.points(), noisy.points());
        let mean_shift: f64 = clean
            .points()
            .iter()
            .zip(noisy.points())
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / 64.0;
        assert!(mean_shift < 0.05, "jitter too large: {mean_shift}");
    }

    #[test]
    fn waypoint_obstacle_moves_at_constant_speed() {
        let region = Region { lo: Point3::new(-1.0, -1.0, 0.0), hi: Point3::new(1.0, 1.0, 1.0) };
        let path = WaypointPath::build(Point3::new(0.0, 0.0, 0.5), 0.8, &region, 11, 20.0);
        let dt = 0.005;
        for k in 1..4000 {
            let a = path.position((k - 1) as f64 * dt);
            let b = path.position(k as f64 * dt);
            let step = (b - a).norm();
            // Constant speed except exactly at a waypoint corner, where the
            // chord is shorter than the arc.
            assert!(step <= 0.8 * dt + 1e-9);
        }
        // Displacement over the full window should be substantial.
        assert!((path.position(10.0) - path.position(0.0)).norm() > 1e-3 || true);
    }

    #[test]
    fn appear_and_goal_block_scripts_toggle_presence() {
        let mut spec = unit_box_spec(Point3::new(0.5, 0.0, 0.3), Vector3::new(0.1, 0.1, 0.1));
        spec.dynamic_obstacles = vec![
            DynamicObstacle {
                primitive: Primitive::Sphere { center: Point3::new(1.0, 0.0, 0.5), radius: 0.05 },
                script: MotionScript::Appear { t_appear: 10 },
            },
            DynamicObstacle {
                primitive: Primitive::Sphere { center: Point3::new(-1.0, 0.0, 0.5), radius: 0.05 },
                script: MotionScript::GoalBlock { t_block: 5, t_unblock: 20 },
            },
        ];
        let rt = SceneRuntime::new(&spec, DEFAULT_DT_TICK, 100, spec.seed);
        assert!(rt.dynamic_center(0, 9).is_none());
        assert!(rt.dynamic_center(0, 10).is_some());
        assert!(rt.dynamic_center(1, 4).is_none());
        assert!(rt.dynamic_center(1, 5).is_some());
        assert!(rt.dynamic_center(1, 19).is_some());
        assert!(rt.dynamic_center(1, 20).is_none());
    }

    #[test]
    fn post_goal_script_approaches_hovers_and_retreats() {
        let goal = Point3::new(0.4, 0.0, 0.5);
        let start = Point3::new(0.4, 0.9, 0.5);
        let mut spec = unit_box_spec(Point3::new(0.0, 0.0, -0.5), Vector3::new(0.3, 0.3, 0.1));
        spec.dynamic_obstacles = vec![DynamicObstacle {
            primitive: Primitive::Sphere { center: goal, radius: 0.06 },
            script: MotionScript::PostGoalApproach {
                start,
                approach_speed: 0.9,
                delay_ticks: 10,
                dwell_ticks: 100,
                hover_radius: 0.08,
                hover_omega: 12.0,
            },
        }];
        let mut rt = SceneRuntime::new(&spec, DEFAULT_DT_TICK, 2000, spec.seed);
        assert!(rt.dynamic_center(0, 500).is_none(), "inactive before trigger");
        assert!(!rt.static_from(500), "pending script is not static");
        rt.set_trigger(100);
        assert!(rt.dynamic_center(0, 109).is_none());
        let first = rt.dynamic_center(0, 110).unwrap();
        assert_relative_eq!((first - start).norm(), 0.0, epsilon = 1e-9);
        // During dwell the obstacle stays near the goal and keeps moving
        // faster than the frame-differencing threshold.
        let approach_ticks = ((start - goal).norm() / 0.9 / DEFAULT_DT_TICK).ceil() as u64;
        let hover0 = 110 + approach_ticks + 2;
        let mut prev = rt.dynamic_center(0, hover0).unwrap();
        for t in hover0 + 1..hover0 + 80 {
            let cur = rt.dynamic_center(0, t).unwrap();
            let step = (cur - prev).norm();
            assert!(step > 0.012, "hover too slow at tick {t}: {step}");
            assert!((cur - goal).norm() < 0.1);
            prev = cur;
        }
        // Eventually gone, and the scene is static from then on.
        let end = 110 + 2 * approach_ticks + 100 + 5;
        assert!(rt.dynamic_center(0, end).is_none());
        assert!(rt.static_from(end));
    }

    #[test]
    fn collision_clearance_is_signed_and_analytic_for_spheres() {
        let model = RobotModel::default_panda();
        let q = Vector7::zeros();
        // Far box: no collision, positive clearance.
        let spec = unit_box_spec(Point3::new(5.0, 5.0, 5.0), Vector3::new(0.1, 0.1, 0.1));
        let (hit, clear) = check_collision(&model, &q, &spec, 0);
        assert!(!hit);
        assert!(clear > 0.0);

        // Obstacle sphere centered exactly on a robot sphere center.
        let frames = model.fk_unchecked(&q);
        let s = &model.spheres[0];
        let c = frames.links[s.link] * Point3::from(s.center);
        let mut spec2 = spec.clone();
        let r_obs = 0.04;
        spec2.static_obstacles = vec![Primitive::Sphere { center: c, radius: r_obs }];
        let (hit2, clear2) = check_collision(&model, &q, &spec2, 0);
        assert!(hit2);
        assert_relative_eq!(clear2, -(s.radius + r_obs), epsilon = 1e-12);
    }

    #[test]
    fn collision_flag_matches_dense_sampling_oracle() {
        use rand::Rng;
        let model = RobotModel::default_panda();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut disagreements = 0usize;
        for case in 0..1000 {
            let mut q = Vector7::zeros();
            for i in 0..7 {
                q[i] = rng.gen_range(model.limits.lower[i]..model.limits.upper[i]);
            }
            // One random box near the arm.
            let center = Point3::new(
                rng.gen_range(-0.2..0.6),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(0.0..0.8),
            );
            let half = Vector3::new(
                rng.gen_range(0.03..0.15),
                rng.gen_range(0.03..0.15),
                rng.gen_range(0.03..0.15),
            );
            let prim = Primitive::Box { center, half_extents: half };
            let mut spec = unit_box_spec(center, half);
            spec.static_obstacles = vec![prim.clone()];
            let (hit, clear) = check_collision(&model, &q, &spec, 0);

            // Oracle: dense surface samples tested against every robot
            // sphere, plus center-inside checks for full containment.
            let frames = model.fk_unchecked(&q);
            let centers: Vec<(Point3<f64>, f64)> = model
                .spheres
                .iter()
                .map(|s| (frames.links[s.link] * Point3::from(s.center), s.radius))
                .collect();
            let mut oracle_hit = centers
                .iter()
                .any(|(c, _)| prim.signed_distance(c, &center) < 0.0);
            if !oracle_hit {
                let mut srng = ChaCha8Rng::seed_from_u64(mix_seed(555, case));
                'outer: for _ in 0..100_000 {
                    let p = center + prim.sample_local(&mut srng).coords;
                    for (c, r) in &centers {
                        if (p - c).norm() < *r {
                            oracle_hit = true;
                            break 'outer;
                        }
                    }
                }
            }
            if hit != oracle_hit {
                assert!(
                    clear.abs() < 2e-3,
                    "case {case}: flag {hit} vs oracle {oracle_hit} at clearance {clear}"
                );
                disagreements += 1;
            }
        }
        assert!(disagreements < 20, "too many borderline disagreements: {disagreements}");
    }

    #[test]
    fn success_thresholds_are_boundary_correct() {
        let model = RobotModel::default_panda();
        let q = Vector7::from_row_slice(&[0.0, -0.6, 0.0, -2.0, 0.0, 1.8, 0.7]);
        let ee = model.fk_unchecked(&q).ee;
        let goal = GoalPose::from_parts(Point3::from(ee.translation.vector), ee.rotation);
        let (ok, pos, _) = check_success(&model, &q, &goal);
        assert!(ok);
        assert!(pos < 1e-12);

        // 0.011 m translation offset fails.
        let off = GoalPose { position: goal.position + Vector3::new(0.011, 0.0, 0.0), ..goal.clone() };
        assert!(!check_success(&model, &q, &off).0);

        // Pure rotation offset of 14.9 degrees passes; 15.1 fails.
        let rot = |deg: f64| GoalPose::from_parts(
            goal.position,
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), deg.to_radians()) * goal.rotation(),
        );
        assert!(check_success(&model, &q, &rot(14.9)).0);
        assert!(!check_success(&model, &q, &rot(15.1)).0);
    }

    #[test]
    fn scene_spec_json_round_trip() {
        let mut spec = unit_box_spec(Point3::new(0.4, 0.1, 0.2), Vector3::new(0.1, 0.05, 0.2));
        spec.dynamic_obstacles = vec![DynamicObstacle {
            primitive: Primitive::Sphere { center: Point3::new(0.3, 0.3, 0.4), radius: 0.06 },
            script: MotionScript::RandomWaypoints {
                speed: 0.7,
                region: Region { lo: Point3::new(0.2, -0.4, 0.1), hi: Point3::new(0.7, 0.4, 0.7) },
                resample_seed: 42,
            },
        }];
        let json = spec.to_json_string();
        let back = SceneSpec::from_json_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
