//! Seeded scenario generators for the five benchmark families, plus the
//! joint-space RRT oracle used to certify that generated tasks are solvable.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::mix_seed;
use crate::policy::per_tick_step_limit;
use crate::sim::scene::{
    DynamicObstacle, Family, GoalPose, MotionScript, Primitive, Region, SceneSpec,
    DEFAULT_DT_TICK,
};
use crate::Vector7;

/// Knobs for scenario difficulty; the defaults match the shipped benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Difficulty {
    /// Static box count range for SE.
    pub se_boxes: (usize, usize),
    /// Static box count range for SAO / GB bases.
    pub base_boxes: (usize, usize),
    /// Extra off-path boxes for FDO / DGB.
    pub clutter_boxes: (usize, usize),
    /// Moving sphere count range for FDO.
    pub fdo_spheres: (usize, usize),
    /// Moving sphere radius range.
    pub sphere_radius: (f64, f64),
    /// Waypoint travel speed range, m/s.
    pub sphere_speed: (f64, f64),
    /// Half-extent range for appear / goal-block boxes.
    pub blocker_half: (f64, f64),
    /// Minimum start-to-goal end-effector distance, m.
    pub min_goal_dist: f64,
}

impl Default for Difficulty {
    fn default() -> Difficulty {
        Difficulty {
            se_boxes: (3, 8),
            base_boxes: (1, 4),
            clutter_boxes: (0, 2),
            fdo_spheres: (1, 2),
            sphere_radius: (0.05, 0.075),
            sphere_speed: (0.9, 1.3),
            blocker_half: (0.05, 0.08),
            min_goal_dist: 0.3,
        }
    }
}

const GEN_TAG: u64 = 0x9e_a51e;
const MAX_RESAMPLES: usize = 100;
const CONFIG_TRIES: usize = 2000;
const CLEAR_MARGIN: f64 = 0.02;
const PATH_MARGIN: f64 = 0.03;

/// Work surface under the reachable volume; top face at z = -0.07, leaving
/// room under the robot's base collision spheres.
pub fn table() -> Primitive {
    Primitive::Box {
        center: Point3::new(0.35, 0.0, -0.1),
        half_extents: Vector3::new(0.45, 0.55, 0.03),
    }
}

fn min_clearance(model: &RobotModel, prims: &[Primitive], q: &Vector7) -> f64 {
    let frames = model.fk_unchecked(q);
    let mut min = f64::INFINITY;
    for s in &model.spheres {
        let c = frames.links[s.link] * Point3::from(s.center);
        for p in prims {
            min = min.min(p.signed_distance(&c, &p.center()) - s.radius);
        }
    }
    min
}

fn segment_free(model: &RobotModel, prims: &[Primitive], a: &Vector7, b: &Vector7, margin: f64) -> bool {
    let span = (b - a).amax();
    let steps = (span / 0.05).ceil().max(1.0) as usize;
    (0..=steps).all(|k| {
        let q = a + (k as f64 / steps as f64) * (b - a);
        min_clearance(model, prims, &q) > margin
    })
}

fn workspace_ok(p: &Point3<f64>) -> bool {
    (0.25..=0.7).contains(&p.x) && p.y.abs() <= 0.45 && (0.15..=0.7).contains(&p.z)
}

fn sample_config(
    model: &RobotModel,
    prims: &[Primitive],
    rng: &mut ChaCha8Rng,
) -> Option<Vector7> {
    for _ in 0..CONFIG_TRIES {
        let mut q = Vector7::zeros();
        for i in 0..7 {
            q[i] = rng.gen_range(model.limits.lower[i]..=model.limits.upper[i]);
        }
        let ee = model.fk_unchecked(&q).ee;
        if !workspace_ok(&Point3::from(ee.translation.vector)) {
            continue;
        }
        if min_clearance(model, prims, &q) > CLEAR_MARGIN {
            return Some(q);
        }
    }
    None
}

fn sample_pair(
    model: &RobotModel,
    prims: &[Primitive],
    rng: &mut ChaCha8Rng,
    diff: &Difficulty,
) -> Option<(Vector7, Vector7)> {
    let q_start = sample_config(model, prims, rng)?;
    let start_ee = model.fk_unchecked(&q_start).ee.translation.vector;
    for _ in 0..20 {
        let q_g = sample_config(model, prims, rng)?;
        let goal_ee = model.fk_unchecked(&q_g).ee.translation.vector;
        if (goal_ee - start_ee).norm() >= diff.min_goal_dist {
            return Some((q_start, q_g));
        }
    }
    None
}

/// Brute-force feasibility oracle: goal-biased joint-space RRT with exact
/// segment collision checks. Returns true when a collision-free path from
/// `q_start` to `q_g` is found.
pub fn rrt_feasible(
    model: &RobotModel,
    prims: &[Primitive],
    q_start: &Vector7,
    q_g: &Vector7,
    seed: u64,
) -> bool {
    if min_clearance(model, prims, q_g) <= 0.0 {
        return false;
    }
    if segment_free(model, prims, q_start, q_g, 0.0) {
        return true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<Vector7> = vec![*q_start];
    const STEP: f64 = 0.35;
    for _ in 0..4000 {
        let target = if rng.gen::<f64>() < 0.1 {
            *q_g
        } else {
            let mut t = Vector7::zeros();
            for i in 0..7 {
                t[i] = rng.gen_range(model.limits.lower[i]..=model.limits.upper[i]);
            }
            t
        };
        let near = *nodes
            .iter()
            .min_by(|a, b| {
                (target - *a).amax().partial_cmp(&(target - *b).amax()).unwrap()
            })
            .unwrap();
        let delta = target - near;
        let span = delta.amax();
        if span < 1e-9 {
            continue;
        }
        let new = near + delta * (STEP / span).min(1.0);
        if !segment_free(model, prims, &near, &new, 0.0) {
            continue;
        }
        if (new - q_g).amax() < 1.0 && segment_free(model, prims, &new, q_g, 0.0) {
            return true;
        }
        nodes.push(new);
    }
    false
}

fn random_box(rng: &mut ChaCha8Rng) -> Primitive {
    let center = Point3::new(
        rng.gen_range(0.25..0.75),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(0.05..0.75),
    );
    let half = if rng.gen::<f64>() < 0.4 {
        // Shelf-like slab: one thin axis.
        let thin = rng.gen_range(0..3usize);
        let mut h = Vector3::new(
            rng.gen_range(0.08..0.2),
            rng.gen_range(0.08..0.2),
            rng.gen_range(0.08..0.2),
        );
        h[thin] = rng.gen_range(0.01..0.02);
        h
    } else {
        Vector3::new(
            rng.gen_range(0.03..0.08),
            rng.gen_range(0.03..0.08),
            rng.gen_range(0.03..0.08),
        )
    };
    Primitive::Box { center, half_extents: half }
}

/// End-effector positions along the straight joint-space line, used to keep
/// clutter away from the nominal path and to place appear-obstacles on it.
fn nominal_ee_path(model: &RobotModel, a: &Vector7, b: &Vector7, samples: usize) -> Vec<Point3<f64>> {
    (0..=samples)
        .map(|k| {
            let q = a + (k as f64 / samples as f64) * (b - a);
            Point3::from(model.fk_unchecked(&q).ee.translation.vector)
        })
        .collect()
}

fn goal_pose_of(model: &RobotModel, q_g: &Vector7) -> GoalPose {
    let ee = model.fk_unchecked(q_g).ee;
    GoalPose::from_parts(Point3::from(ee.translation.vector), ee.rotation)
}

struct Ctx<'a> {
    model: &'a RobotModel,
    diff: &'a Difficulty,
}

/// Deterministically generate one episode of the given family. Fails with a
/// generation error if no feasible layout is found within 100 resamples.
pub fn generate_scenario(
    family: Family,
    seed: u64,
    diff: &Difficulty,
    model: &RobotModel,
) -> Result<SceneSpec> {
    let ctx = Ctx { model, diff };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, GEN_TAG ^ family as u64));
    for attempt in 0..MAX_RESAMPLES {
        let oracle_seed = mix_seed(seed, 0xa11ce ^ attempt as u64);
        let spec = match family {
            Family::Se => gen_se(&ctx, seed, &mut rng, oracle_seed),
            Family::Sao => gen_sao(&ctx, seed, &mut rng, oracle_seed),
            Family::Fdo => gen_fdo(&ctx, seed, &mut rng),
            Family::Gb => gen_gb(&ctx, seed, &mut rng, oracle_seed),
            Family::Dgb => gen_dgb(&ctx, seed, &mut rng),
        };
        if let Some(spec) = spec {
            debug_assert!(min_clearance(model, &spec.static_obstacles, &spec.q_start) > 0.0);
            return Ok(spec);
        }
        let _ = attempt;
    }
    Err(Error::Generation {
        seed,
        reason: format!("no feasible {family} layout after {MAX_RESAMPLES} resamples"),
    })
}

fn finish(
    family: Family,
    seed: u64,
    model: &RobotModel,
    statics: Vec<Primitive>,
    dynamics: Vec<DynamicObstacle>,
    q_start: Vector7,
    q_g: Vector7,
) -> SceneSpec {
    SceneSpec {
        family,
        seed,
        static_obstacles: statics,
        dynamic_obstacles: dynamics,
        q_start,
        q_g,
        goal_pose: goal_pose_of(model, &q_g),
    }
}

fn gen_se(ctx: &Ctx, seed: u64, rng: &mut ChaCha8Rng, oracle_seed: u64) -> Option<SceneSpec> {
    let n = rng.gen_range(ctx.diff.se_boxes.0..=ctx.diff.se_boxes.1);
    let mut statics = vec![table()];
    statics.extend((0..n).map(|_| random_box(rng)));
    let (q_start, q_g) = sample_pair(ctx.model, &statics, rng, ctx.diff)?;
    if !rrt_feasible(ctx.model, &statics, &q_start, &q_g, oracle_seed) {
        return None;
    }
    Some(finish(Family::Se, seed, ctx.model, statics, vec![], q_start, q_g))
}

/// Base layout whose straight joint-space line is collision-free: clutter is
/// resampled until it stays `keep_out` away from the nominal path.
fn gen_clear_path_base(
    ctx: &Ctx,
    rng: &mut ChaCha8Rng,
    n_boxes: usize,
    keep_out: f64,
) -> Option<(Vec<Primitive>, Vector7, Vector7, Vec<Point3<f64>>)> {
    let base = vec![table()];
    let (q_start, q_g) = sample_pair(ctx.model, &base, rng, ctx.diff)?;
    if !segment_free(ctx.model, &base, &q_start, &q_g, PATH_MARGIN) {
        return None;
    }
    let path = nominal_ee_path(ctx.model, &q_start, &q_g, 40);
    let mut statics = base;
    for _ in 0..n_boxes {
        for _ in 0..50 {
            let b = random_box(rng);
            let clear_of_path = path
                .iter()
                .all(|p| b.signed_distance(p, &b.center()) > keep_out);
            if clear_of_path && min_clearance(ctx.model, &[b.clone()], &q_start) > CLEAR_MARGIN {
                // The whole straight line must stay free of the new box too.
                let mut trial = statics.clone();
                trial.push(b.clone());
                if segment_free(ctx.model, &trial, &q_start, &q_g, PATH_MARGIN) {
                    statics.push(b);
                    break;
                }
            }
        }
    }
    Some((statics, q_start, q_g, path))
}

fn gen_sao(ctx: &Ctx, seed: u64, rng: &mut ChaCha8Rng, oracle_seed: u64) -> Option<SceneSpec> {
    let n = rng.gen_range(ctx.diff.base_boxes.0..=ctx.diff.base_boxes.1);
    let (statics, q_start, q_g, path) = gen_clear_path_base(ctx, rng, n, 0.15)?;

    // Box centered on the end-effector's halfway point, appearing when the
    // interpolator would be ~30% of the way there.
    let mid = path[path.len() / 2];
    let goal_ee = *path.last().unwrap();
    let start_ee = path[0];
    let h = rng.gen_range(ctx.diff.blocker_half.0..=ctx.diff.blocker_half.1);
    let prim = Primitive::Box { center: mid, half_extents: Vector3::new(h, h, h) };
    if prim.signed_distance(&goal_ee, &mid) < 0.08 || prim.signed_distance(&start_ee, &mid) < 0.08 {
        return None;
    }
    // A detour around the appeared box must exist.
    let mut with_box = statics.clone();
    with_box.push(prim.clone());
    if !rrt_feasible(ctx.model, &with_box, &q_start, &q_g, oracle_seed) {
        return None;
    }
    let step = per_tick_step_limit(ctx.model, DEFAULT_DT_TICK);
    let total_ticks = ((q_g - q_start).amax() / step).ceil() as u64;
    let t_appear = (total_ticks * 3) / 10;
    let dynamics = vec![DynamicObstacle { primitive: prim, script: MotionScript::Appear { t_appear } }];
    Some(finish(Family::Sao, seed, ctx.model, statics, dynamics, q_start, q_g))
}

fn gen_fdo(ctx: &Ctx, seed: u64, rng: &mut ChaCha8Rng) -> Option<SceneSpec> {
    let n = rng.gen_range(ctx.diff.clutter_boxes.0..=ctx.diff.clutter_boxes.1);
    let (statics, q_start, q_g, _path) = gen_clear_path_base(ctx, rng, n, 0.3)?;
    // Spheres roam the whole arena: encounters are transient, so the arm can
    // still settle at the goal between passes.
    let region = Region {
        lo: Point3::new(0.35, -0.5, 0.2),
        hi: Point3::new(0.8, 0.5, 0.8),
    };
    let n_sph = rng.gen_range(ctx.diff.fdo_spheres.0..=ctx.diff.fdo_spheres.1);
    let mut dynamics = Vec::new();
    for i in 0..n_sph {
        let radius = rng.gen_range(ctx.diff.sphere_radius.0..=ctx.diff.sphere_radius.1);
        let mut center = None;
        for _ in 0..50 {
            let c = region.sample(rng);
            let prim = Primitive::Sphere { center: c, radius };
            if min_clearance(ctx.model, &[prim], &q_start) > 0.45 {
                center = Some(c);
                break;
            }
        }
        let center = center?;
        dynamics.push(DynamicObstacle {
            primitive: Primitive::Sphere { center, radius },
            script: MotionScript::RandomWaypoints {
                speed: rng.gen_range(ctx.diff.sphere_speed.0..=ctx.diff.sphere_speed.1),
                region: region.clone(),
                resample_seed: mix_seed(seed, 0xfd0 ^ i as u64),
            },
        });
    }
    Some(finish(Family::Fdo, seed, ctx.model, statics, dynamics, q_start, q_g))
}

fn gen_gb(ctx: &Ctx, seed: u64, rng: &mut ChaCha8Rng, oracle_seed: u64) -> Option<SceneSpec> {
    let n = rng.gen_range(ctx.diff.base_boxes.0..=ctx.diff.base_boxes.1);
    let mut statics = vec![table()];
    statics.extend((0..n).map(|_| random_box(rng)));
    let (q_start, q_g) = sample_pair(ctx.model, &statics, rng, ctx.diff)?;
    if !rrt_feasible(ctx.model, &statics, &q_start, &q_g, oracle_seed) {
        return None;
    }
    let goal_ee = Point3::from(ctx.model.fk_unchecked(&q_g).ee.translation.vector);
    let h = rng.gen_range(ctx.diff.blocker_half.0..=ctx.diff.blocker_half.1);
    let blocker = Primitive::Box { center: goal_ee, half_extents: Vector3::new(h, h, h) };
    debug_assert!(blocker.signed_distance(&goal_ee, &blocker.center()) < 0.0);
    if min_clearance(ctx.model, &[blocker.clone()], &q_start) < CLEAR_MARGIN {
        return None;
    }
    let dynamics = vec![DynamicObstacle {
        primitive: blocker,
        script: MotionScript::GoalBlock { t_block: 0, t_unblock: u64::MAX },
    }];
    Some(finish(Family::Gb, seed, ctx.model, statics, dynamics, q_start, q_g))
}

fn gen_dgb(ctx: &Ctx, seed: u64, rng: &mut ChaCha8Rng) -> Option<SceneSpec> {
    let n = rng.gen_range(ctx.diff.clutter_boxes.0..=ctx.diff.clutter_boxes.1);
    let (statics, q_start, q_g, path) = gen_clear_path_base(ctx, rng, n, 0.3)?;
    let goal_ee = *path.last().unwrap();
    let radius = rng.gen_range(ctx.diff.sphere_radius.0..=ctx.diff.sphere_radius.1);
    let azim = rng.gen_range(0.0..std::f64::consts::TAU);
    let start = Point3::new(
        goal_ee.x + 0.7 * azim.cos(),
        goal_ee.y + 0.7 * azim.sin(),
        (goal_ee.z + 0.15).min(0.85),
    );
    let prim = Primitive::Sphere { center: goal_ee, radius };
    // Staging point must be clear of the robot along its nominal path.
    let start_prim = Primitive::Sphere { center: start, radius };
    if min_clearance(ctx.model, &[start_prim], &q_start) < 0.1 {
        return None;
    }
    let dynamics = vec![DynamicObstacle {
        primitive: prim,
        script: MotionScript::PostGoalApproach {
            start,
            approach_speed: rng.gen_range(0.7..0.9),
            delay_ticks: 15,
            dwell_ticks: 150,
            hover_radius: 0.08,
            hover_omega: rng.gen_range(13.0..16.0),
        },
    }];
    Some(finish(Family::Dgb, seed, ctx.model, statics, dynamics, q_start, q_g))
}
