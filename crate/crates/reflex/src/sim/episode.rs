//! Episode harness: closed-loop tick simulation, executor dynamics, and
//! result aggregation with JSONL / CSV serialization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dcp::{self, GoalProposalState, ProposeDebug, DEFAULT_TAU_DYN};
use crate::error::{Error, Result};
use crate::kinematics::{JointState, RobotModel};
use crate::mix_seed;
use crate::policy::{make_policy, per_tick_step_limit, ActionChunk, Policy, PolicyInput, CHUNK_LEN};
use crate::rmp::RmpParams;
use crate::sim::generate::{generate_scenario, Difficulty};
use crate::sim::scene::{check_success, Family, SceneRuntime, SceneSpec};
use crate::Vector7;

const ROBOT_CLOUD_TAG: u64 = 0x40b07;

/// Simulation-loop parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Control ticks per second.
    pub tick_rate: f64,
    /// Episode length in ticks.
    pub horizon: u64,
    /// Scene cloud size per tick.
    pub n_scene: usize,
    /// Robot cloud size per tick.
    pub n_robot: usize,
    /// Std-dev of Gaussian jitter on scene points, m.
    pub noise_sigma: f64,
    /// Frame-differencing displacement threshold, m.
    pub tau_dyn: f64,
    /// Record per-tick joint positions in the report.
    pub log_trajectory: bool,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            tick_rate: 50.0,
            horizon: 800,
            n_scene: 2048,
            n_robot: 256,
            noise_sigma: 0.0,
            tau_dyn: DEFAULT_TAU_DYN,
            log_trajectory: false,
        }
    }
}

impl SimConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tick_rate > 0.0) || self.horizon < 1 {
            return Err(Error::invalid("tick rate must be > 0 and horizon >= 1"));
        }
        if self.n_scene < 1 || self.n_robot < 1 {
            return Err(Error::invalid("cloud sizes must be >= 1"));
        }
        if self.noise_sigma < 0.0 || self.tau_dyn <= 0.0 {
            return Err(Error::invalid("noise sigma must be >= 0 and tau_dyn > 0"));
        }
        Ok(())
    }
}

/// Velocity/acceleration-limited joint integrator that tracks commanded
/// per-tick steps. Braking uses the chunk's remaining displacement so the
/// arm can always stop without overshooting a converged target.
pub struct Executor {
    pub q: Vector7,
    pub qdot: Vector7,
}

impl Executor {
    pub fn new(q: Vector7) -> Executor {
        Executor { q, qdot: Vector7::zeros() }
    }

    pub fn step(&mut self, chunk: &ActionChunk, model: &RobotModel, dt: f64) {
        let first = chunk.deltas[0];
        let remaining: Vector7 = chunk.deltas.iter().sum();
        for i in 0..7 {
            let vmax = model.limits.vel[i];
            let a = model.limits.acc[i];
            // Discrete-time stopping bound: a speed respecting it can shed
            // a*dt per tick and come to rest within the remaining distance.
            let half = 0.5 * a * dt;
            let brake = (half * half + 2.0 * a * remaining[i].abs()).sqrt() - half;
            let v_des = (first[i] / dt).clamp(-vmax, vmax).clamp(-brake, brake);
            let dv = (v_des - self.qdot[i]).clamp(-a * dt, a * dt);
            self.qdot[i] += dv;
            self.q[i] += self.qdot[i] * dt;
            if self.q[i] < model.limits.lower[i] {
                self.q[i] = model.limits.lower[i];
                self.qdot[i] = 0.0;
            } else if self.q[i] > model.limits.upper[i] {
                self.q[i] = model.limits.upper[i];
                self.qdot[i] = 0.0;
            }
        }
    }
}

/// Outcome of one simulated episode. Field names are stable: these records
/// are the JSONL interchange format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpisodeReport {
    pub family: Family,
    pub seed: u64,
    pub policy: String,
    pub dcp_rmp: bool,
    pub reached: bool,
    pub collided: bool,
    pub success: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub faulted: Option<String>,
    pub min_clearance: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ticks_to_reach: Option<u64>,
    pub ticks_simulated: u64,
    pub final_pos_err: f64,
    pub final_ang_err: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trajectory: Option<Vec<[f64; 7]>>,
}

impl EpisodeReport {
    fn faulted(spec_id: (Family, u64), policy: &str, dcp: bool, reason: String) -> EpisodeReport {
        EpisodeReport {
            family: spec_id.0,
            seed: spec_id.1,
            policy: policy.to_string(),
            dcp_rmp: dcp,
            reached: false,
            collided: false,
            success: false,
            faulted: Some(reason),
            min_clearance: f64::INFINITY,
            ticks_to_reach: None,
            ticks_simulated: 0,
            final_pos_err: f64::NAN,
            final_ang_err: f64::NAN,
            trajectory: None,
        }
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_jsonl(line: &str) -> Result<EpisodeReport> {
        serde_json::from_str(line).map_err(Error::from)
    }
}

/// Per-tick state handed to a trace sink during replay.
#[derive(Debug, Clone, Serialize)]
pub struct TickTrace {
    pub tick: u64,
    pub q: [f64; 7],
    pub qdot: [f64; 7],
    pub q_goal: [f64; 7],
    pub clearance: f64,
    pub reached: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposer: Option<ProposeDebug>,
}

pub fn run_episode(
    spec: &SceneSpec,
    model: &RobotModel,
    policy: &mut dyn Policy,
    use_dcp_rmp: bool,
    params: &RmpParams,
    cfg: &SimConfig,
) -> EpisodeReport {
    run_episode_traced(spec, model, policy, use_dcp_rmp, params, cfg, |_| {})
}

/// Full episode loop; `on_tick` observes every simulated tick (used by the
/// replay command for debug output).
#[allow(clippy::too_many_arguments)]
pub fn run_episode_traced(
    spec: &SceneSpec,
    model: &RobotModel,
    policy: &mut dyn Policy,
    use_dcp_rmp: bool,
    params: &RmpParams,
    cfg: &SimConfig,
    mut on_tick: impl FnMut(&TickTrace),
) -> EpisodeReport {
    let dt = cfg.dt();
    let step_limit = per_tick_step_limit(model, dt);
    let mut rt = SceneRuntime::new(spec, dt, cfg.horizon, spec.seed);
    let mut exec = Executor::new(spec.q_start);
    let mut proposer: GoalProposalState = dcp::reset(&spec.q_g);

    let mut report = EpisodeReport {
        family: spec.family,
        seed: spec.seed,
        policy: policy.name().to_string(),
        dcp_rmp: use_dcp_rmp,
        reached: false,
        collided: false,
        success: false,
        faulted: None,
        min_clearance: f64::INFINITY,
        ticks_to_reach: None,
        ticks_simulated: 0,
        final_pos_err: f64::NAN,
        final_ang_err: f64::NAN,
        trajectory: cfg.log_trajectory.then(Vec::new),
    };

    let mut at_goal_now = false;
    let mut quiet_ticks = 0u32;

    for t in 0..cfg.horizon {
        report.ticks_simulated = t + 1;

        let scene_cloud = match rt.render(t, cfg.n_scene, cfg.noise_sigma) {
            Ok(c) => c,
            Err(e) => {
                report.faulted = Some(format!("render: {e}"));
                break;
            }
        };
        let robot_cloud = match model.robot_point_cloud(
            &exec.q,
            cfg.n_robot,
            mix_seed(mix_seed(spec.seed, ROBOT_CLOUD_TAG), t),
        ) {
            Ok(c) => c,
            Err(e) => {
                report.faulted = Some(format!("robot cloud: {e}"));
                break;
            }
        };

        let mut debug = None;
        let q_goal = if use_dcp_rmp {
            let robot_state = JointState { q: exec.q, qdot: exec.qdot };
            match dcp::propose_goal(
                &mut proposer,
                &scene_cloud,
                model,
                &robot_state,
                &spec.q_g,
                params,
                cfg.tau_dyn,
                dt,
            ) {
                Ok((q_mg, d)) => {
                    debug = Some(d);
                    q_mg
                }
                Err(e) => {
                    report.faulted = Some(format!("goal proposer: {e}"));
                    break;
                }
            }
        } else {
            spec.q_g
        };

        let input = PolicyInput {
            scene_cloud: &scene_cloud,
            robot_cloud: &robot_cloud,
            q_c: exec.q,
            q_goal,
        };
        let chunk = match policy.plan_chunk(&input) {
            Ok(c) => c,
            Err(e) => {
                report.faulted = Some(format!("policy: {e}"));
                break;
            }
        };
        if chunk.deltas.is_empty() || !chunk.respects_bound(step_limit) {
            report.faulted = Some("policy violated the per-tick step bound".into());
            break;
        }

        exec.step(&chunk, model, dt);
        if exec.q.iter().any(|v| !v.is_finite()) {
            report.faulted = Some("non-finite joint state".into());
            break;
        }

        let (hit, clearance) = rt.check_collision(model, &exec.q, t);
        report.collided |= hit;
        report.min_clearance = report.min_clearance.min(clearance);

        let (reach, pos_err, ang_err) = check_success(model, &exec.q, &spec.goal_pose);
        at_goal_now = reach;
        report.final_pos_err = pos_err;
        report.final_ang_err = ang_err;
        if reach && report.ticks_to_reach.is_none() {
            report.ticks_to_reach = Some(t);
        }
        if reach {
            report.reached = true;
            rt.set_trigger(t);
        }

        if let Some(traj) = report.trajectory.as_mut() {
            traj.push(exec.q.into());
        }
        on_tick(&TickTrace {
            tick: t,
            q: exec.q.into(),
            qdot: exec.qdot.into(),
            q_goal: q_goal.into(),
            clearance,
            reached: reach,
            proposer: debug,
        });

        // Frozen-state shortcut: once the scene can no longer change and the
        // arm has settled on an exactly-repeating command, every remaining
        // tick is identical, so latched results are already final. Skipped
        // when the goal proposer is active, since its virtual state keeps
        // relaxing toward the goal.
        if !use_dcp_rmp
            && rt.static_from(t + 1)
            && exec.qdot.iter().all(|v| *v == 0.0)
            && chunk.deltas[0].iter().all(|v| *v == 0.0)
        {
            quiet_ticks += 1;
            if quiet_ticks >= 3 {
                break;
            }
        } else {
            quiet_ticks = 0;
        }
    }

    if report.faulted.is_none() {
        report.success = report.reached
            && !report.collided
            && (spec.family != Family::Dgb || at_goal_now);
        // DGB demands a safe return: being away from the goal at the end
        // cancels the reach credit for success, not the reach flag itself.
    }
    report
}

/// Generate the scene for `seed` and run one episode; generation failures
/// become faulted reports so suite accounting can proceed.
#[allow(clippy::too_many_arguments)]
pub fn run_seed(
    family: Family,
    seed: u64,
    model: &RobotModel,
    policy_name: &str,
    use_dcp_rmp: bool,
    params: &RmpParams,
    diff: &Difficulty,
    cfg: &SimConfig,
) -> EpisodeReport {
    let spec = match generate_scenario(family, seed, diff, model) {
        Ok(s) => s,
        Err(e) => {
            return EpisodeReport::faulted((family, seed), policy_name, use_dcp_rmp, e.to_string())
        }
    };
    let mut policy = match make_policy(policy_name, model, params, cfg.dt(), CHUNK_LEN) {
        Ok(p) => p,
        Err(e) => {
            return EpisodeReport::faulted((family, seed), policy_name, use_dcp_rmp, e.to_string())
        }
    };
    run_episode(&spec, model, policy.as_mut(), use_dcp_rmp, params, cfg)
}

/// Run seeds `base..base + episodes`, optionally fanning out over a rayon
/// pool. Reports come back ordered by seed regardless of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_suite(
    family: Family,
    base_seed: u64,
    episodes: u64,
    model: &RobotModel,
    policy_name: &str,
    use_dcp_rmp: bool,
    params: &RmpParams,
    diff: &Difficulty,
    cfg: &SimConfig,
    parallel: bool,
) -> Vec<EpisodeReport> {
    let seeds: Vec<u64> = (base_seed..base_seed + episodes).collect();
    let run = |&seed: &u64| {
        run_seed(family, seed, model, policy_name, use_dcp_rmp, params, diff, cfg)
    };
    let mut reports: Vec<EpisodeReport> = if parallel {
        seeds.par_iter().map(run).collect()
    } else {
        seeds.iter().map(run).collect()
    };
    reports.sort_by_key(|r| r.seed);
    reports
}

/// Aggregate metrics over one batch of reports. Rates are percentages over
/// non-faulted episodes; faulted episodes are only counted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub family: Family,
    pub policy: String,
    pub dcp_rmp: bool,
    pub episodes: u64,
    pub reach_rate: f64,
    pub collision_rate: f64,
    pub success_rate: f64,
    pub mean_min_clearance: f64,
    pub faults: u64,
}

pub const SUMMARY_CSV_HEADER: &str =
    "family,policy,dcp_rmp,episodes,reach_rate,collision_rate,success_rate,mean_min_clearance,faults";

impl Summary {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.2},{:.2},{:.2},{:.4},{}",
            self.family,
            self.policy,
            self.dcp_rmp,
            self.episodes,
            self.reach_rate,
            self.collision_rate,
            self.success_rate,
            self.mean_min_clearance,
            self.faults
        )
    }
}

pub fn aggregate(reports: &[EpisodeReport]) -> Result<Summary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate zero reports"))?;
    let valid: Vec<&EpisodeReport> = reports.iter().filter(|r| r.faulted.is_none()).collect();
    let faults = (reports.len() - valid.len()) as u64;
    let n = valid.len() as f64;
    let rate = |f: fn(&EpisodeReport) -> bool| {
        if valid.is_empty() {
            0.0
        } else {
            100.0 * valid.iter().filter(|r| f(r)).count() as f64 / n
        }
    };
    let mean_clear = if valid.is_empty() {
        f64::NAN
    } else {
        valid.iter().map(|r| r.min_clearance).sum::<f64>() / n
    };
    Ok(Summary {
        family: first.family,
        policy: first.policy.clone(),
        dcp_rmp: first.dcp_rmp,
        episodes: reports.len() as u64,
        reach_rate: rate(|r| r.reached),
        collision_rate: rate(|r| r.collided),
        success_rate: rate(|r| r.success),
        mean_min_clearance: mean_clear,
        faults,
    })
}
