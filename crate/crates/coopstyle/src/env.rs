//! Kinematic 2D feeding task. A 2-link caregiver arm carries a spoon at its
//! end-effector; the care-receiver shifts and tilts a head whose mouth is the
//! target. Both agents act each step and share one reward. Dynamics are
//! velocity integration, fully deterministic given actions.

use rand::Rng;

use crate::{Error, Result};

pub const OBS_G_DIM: usize = 9;
pub const OBS_R_DIM: usize = 8;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub dt: f64,
    pub episode_len: usize,
    pub l1: f64,
    pub l2: f64,
    /// Joint-speed scale for caregiver actions (rad/s per unit action).
    pub omega_max: f64,
    pub head_nominal: [f64; 2],
    /// Mouth position in the head frame; rotates with pitch.
    pub mouth_offset: [f64; 2],
    pub x_offset_range: [f64; 2],
    pub pitch_range: [f64; 2],
    /// Speed scales for the care-receiver action: (m/s, rad/s) per unit action.
    pub x_speed: f64,
    pub pitch_speed: f64,
    pub success_radius: f64,
    pub success_bonus: f64,
    pub action_cost: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.05,
            episode_len: 200,
            l1: 0.5,
            l2: 0.5,
            omega_max: 1.0,
            head_nominal: [0.7, 0.4],
            mouth_offset: [-0.15, 0.0],
            x_offset_range: [-0.3, 0.3],
            pitch_range: [-0.6, 0.6],
            x_speed: 0.5,
            pitch_speed: 1.0,
            success_radius: 0.05,
            success_bonus: 10.0,
            action_cost: 0.01,
        }
    }
}

impl EnvConfig {
    // Negated comparisons are deliberate: NaN fails every comparison, so
    // `!(v > 0.0)` rejects NaN values that `v <= 0.0` would let through.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.episode_len != 200 {
            return Err(Error::invalid("env.episode_len", "must be exactly 200"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("env.dt", "must be positive"));
        }
        for (name, r) in [
            ("env.x_offset_range", self.x_offset_range),
            ("env.pitch_range", self.pitch_range),
        ] {
            if !(r[0] < r[1]) {
                return Err(Error::invalid(name, "range is empty"));
            }
        }
        for (name, v) in [
            ("env.l1", self.l1),
            ("env.l2", self.l2),
            ("env.omega_max", self.omega_max),
            ("env.x_speed", self.x_speed),
            ("env.pitch_speed", self.pitch_speed),
            ("env.success_radius", self.success_radius),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }

    /// Conservative reward interval implied by the geometry: distance can
    /// never exceed arm reach plus the farthest mouth position, action cost
    /// is at most 2 * cost * dim.
    pub fn reward_bounds(&self) -> (f64, f64) {
        let reach = self.l1 + self.l2;
        let head_x_max = self.head_nominal[0]
            + self.x_offset_range[0]
                .abs()
                .max(self.x_offset_range[1].abs());
        let mouth_norm_max =
            (head_x_max * head_x_max + self.head_nominal[1] * self.head_nominal[1]).sqrt()
                + (self.mouth_offset[0] * self.mouth_offset[0]
                    + self.mouth_offset[1] * self.mouth_offset[1])
                    .sqrt();
        let d_max = reach + mouth_norm_max;
        let cost_max = self.action_cost * 2.0 * ACTION_DIM as f64;
        (-(d_max + cost_max), self.success_bonus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub q1: f64,
    pub q2: f64,
    pub head_x_offset: f64,
    pub pitch: f64,
    pub step: usize,
}

/// End-effector (spoon) position of the 2-link arm.
pub fn spoon_pos(cfg: &EnvConfig, q1: f64, q2: f64) -> [f64; 2] {
    [
        cfg.l1 * q1.cos() + cfg.l2 * (q1 + q2).cos(),
        cfg.l1 * q1.sin() + cfg.l2 * (q1 + q2).sin(),
    ]
}

pub fn head_center(cfg: &EnvConfig, state: &EnvState) -> [f64; 2] {
    [
        cfg.head_nominal[0] + state.head_x_offset,
        cfg.head_nominal[1],
    ]
}

/// Mouth position: head center plus the mouth offset rotated by pitch.
pub fn mouth_pos(cfg: &EnvConfig, state: &EnvState) -> [f64; 2] {
    let c = head_center(cfg, state);
    let (sp, cp) = state.pitch.sin_cos();
    [
        c[0] + cp * cfg.mouth_offset[0] - sp * cfg.mouth_offset[1],
        c[1] + sp * cfg.mouth_offset[0] + cp * cfg.mouth_offset[1],
    ]
}

pub fn reset<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    rng: &mut R,
) -> (EnvState, [f64; OBS_G_DIM], [f64; OBS_R_DIM]) {
    use std::f64::consts::PI;
    let state = EnvState {
        q1: rng.random_range(PI / 3.0..=2.0 * PI / 3.0),
        q2: rng.random_range(-PI / 6.0..=PI / 6.0),
        head_x_offset: rng.random_range(-0.2..=0.2),
        pitch: rng.random_range(-0.3..=0.3),
        step: 0,
    };
    let (obs_g, obs_r) = observe(cfg, &state);
    (state, obs_g, obs_r)
}

/// Fixed start used by tests and traces: arm straight up, head centered.
pub fn reset_deterministic(cfg: &EnvConfig) -> (EnvState, [f64; OBS_G_DIM], [f64; OBS_R_DIM]) {
    let state = EnvState {
        q1: std::f64::consts::FRAC_PI_2,
        q2: 0.0,
        head_x_offset: 0.0,
        pitch: 0.0,
        step: 0,
    };
    let (obs_g, obs_r) = observe(cfg, &state);
    (state, obs_g, obs_r)
}

pub fn observe(cfg: &EnvConfig, state: &EnvState) -> ([f64; OBS_G_DIM], [f64; OBS_R_DIM]) {
    let spoon = spoon_pos(cfg, state.q1, state.q2);
    let mouth = mouth_pos(cfg, state);
    let frac = state.step as f64 / cfg.episode_len as f64;
    let obs_g = [
        state.q1,
        state.q2,
        spoon[0],
        spoon[1],
        state.head_x_offset,
        state.pitch,
        mouth[0],
        mouth[1],
        frac,
    ];
    let obs_r = [
        state.head_x_offset,
        state.pitch,
        spoon[0],
        spoon[1],
        mouth[0],
        mouth[1],
        spoon[0] - mouth[0],
        spoon[1] - mouth[1],
    ];
    (obs_g, obs_r)
}

pub struct StepOut {
    pub state: EnvState,
    pub obs_g: [f64; OBS_G_DIM],
    pub obs_r: [f64; OBS_R_DIM],
    pub reward: f64,
    pub done: bool,
}

fn clamp_action(a: [f64; 2], what: &'static str) -> Result<[f64; 2]> {
    for v in a {
        if !v.is_finite() {
            return Err(Error::invalid(what, format!("non-finite component {v}")));
        }
    }
    Ok([a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)])
}

/// Advance one step. Actions are clamped to [-1, 1] componentwise before both
/// the integration and the action cost, so out-of-range commands behave like
/// saturated ones. Episodes always run to exactly `episode_len` steps.
pub fn step(cfg: &EnvConfig, state: &EnvState, a_g: [f64; 2], a_r: [f64; 2]) -> Result<StepOut> {
    let a_g = clamp_action(a_g, "caregiver action")?;
    let a_r = clamp_action(a_r, "care-receiver action")?;
    debug_assert!(state.step < cfg.episode_len, "step past episode end");

    let next = EnvState {
        q1: state.q1 + cfg.omega_max * cfg.dt * a_g[0],
        q2: state.q2 + cfg.omega_max * cfg.dt * a_g[1],
        head_x_offset: (state.head_x_offset + cfg.x_speed * cfg.dt * a_r[0])
            .clamp(cfg.x_offset_range[0], cfg.x_offset_range[1]),
        pitch: (state.pitch + cfg.pitch_speed * cfg.dt * a_r[1])
            .clamp(cfg.pitch_range[0], cfg.pitch_range[1]),
        step: state.step + 1,
    };

    let spoon = spoon_pos(cfg, next.q1, next.q2);
    let mouth = mouth_pos(cfg, &next);
    let d = ((spoon[0] - mouth[0]).powi(2) + (spoon[1] - mouth[1]).powi(2)).sqrt();
    let cost = cfg.action_cost * (a_g[0] * a_g[0] + a_g[1] * a_g[1])
        + cfg.action_cost * (a_r[0] * a_r[0] + a_r[1] * a_r[1]);
    let bonus = if d < cfg.success_radius {
        cfg.success_bonus
    } else {
        0.0
    };
    let reward = -d - cost + bonus;

    let (obs_g, obs_r) = observe(cfg, &next);
    let done = next.step >= cfg.episode_len;
    Ok(StepOut {
        state: next,
        obs_g,
        obs_r,
        reward,
        done,
    })
}

/// One agent's view of a step.
#[derive(Debug, Clone)]
pub struct AgentRecord {
    pub obs: Vec<f64>,
    pub action: [f64; 2],
    pub obs_next: Vec<f64>,
    pub reward: f64,
}

/// Paired records of one environment step. Constructed through `new` so the
/// shared-reward invariant cannot be violated.
#[derive(Debug, Clone)]
pub struct Transition {
    pub caregiver: AgentRecord,
    pub receiver: AgentRecord,
    /// Care-receiver style latent, constant within an episode; None when the
    /// care-receiver is latent-free.
    pub z: Option<[f64; 2]>,
}

impl Transition {
    pub fn new(caregiver: AgentRecord, receiver: AgentRecord, z: Option<[f64; 2]>) -> Self {
        assert!(
            caregiver.reward == receiver.reward,
            "records of one step must share the reward"
        );
        Transition {
            caregiver,
            receiver,
            z,
        }
    }
}
