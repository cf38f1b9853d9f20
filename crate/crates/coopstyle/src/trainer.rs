//! On-policy training loop for the caregiver and care-receiver pair.
//!
//! Each epoch collects whole episodes into a flat buffer, runs one update
//! round (discriminator, intrinsic reward, advantage estimation, both
//! policies), then empties the buffer. Episode i of epoch e draws from an
//! RNG stream derived from (seed, e, i), so results do not depend on how
//! episodes are scheduled across workers.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::algo::{
    compute_gae, mi_bonus, update_actor, update_critic, update_discriminator, ActorBatch,
    ActorUpdate, AgentPolicy, AlgoConfig, CriticBatch, CriticUpdate, DiscBatch, Discriminator,
    PolicyOptim, Rows,
};
use crate::checkpoint::Checkpoint;
use crate::env::{self, EnvConfig, ACTION_DIM, OBS_G_DIM, OBS_R_DIM};
use crate::nn::AdamState;
use crate::styles::{sample_style, LatentStyle, StyleSamplerConfig, LATENT_DIM};
use crate::{Error, Result};

/// Exact column list of metrics.csv.
pub const METRICS_HEADER: &str = "epoch, env_steps, mean_return, std_return, actor_kl_g, actor_iters_g, actor_kl_r, actor_iters_r, critic_loss_g, critic_loss_r, disc_loglik, adv_fraction, mean_selected_value";

/// Training variant. The variant pins both the care-receiver's latent
/// dimension and the adversarial mixing rate; they are not free knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Plain self-play, latent-free care-receiver.
    PpoPpo,
    /// Latent-conditioned care-receiver with the information bonus,
    /// styles always drawn from the prior.
    PpoLppo,
    /// As PPO-LPPO, with half the episodes using adversarially chosen styles.
    PpoLppoAdv,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::PpoPpo => "PPO-PPO",
            Variant::PpoLppo => "PPO-LPPO",
            Variant::PpoLppoAdv => "PPO-LPPO-adv",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "PPO-PPO" => Some(Variant::PpoPpo),
            "PPO-LPPO" => Some(Variant::PpoLppo),
            "PPO-LPPO-adv" => Some(Variant::PpoLppoAdv),
            _ => None,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Variant::PpoPpo => 0,
            _ => LATENT_DIM,
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Variant::PpoLppoAdv => 0.5,
            _ => 0.0,
        }
    }

    pub const ALL: [Variant; 3] = [Variant::PpoPpo, Variant::PpoLppo, Variant::PpoLppoAdv];
}

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Periodic checkpoint interval in epochs; a final checkpoint is always
    /// written regardless.
    pub ckpt_every: usize,
    pub variant: Variant,
    pub env: EnvConfig,
    pub algo: AlgoConfig,
    pub styles: StyleSamplerConfig,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.algo.validate()?;
        self.styles.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("run config", "epochs must be positive"));
        }
        if self.ckpt_every == 0 {
            return Err(Error::invalid("run config", "ckpt_every must be positive"));
        }
        if !self
            .algo
            .steps_per_epoch
            .is_multiple_of(self.env.episode_len)
        {
            return Err(Error::invalid(
                "run config",
                format!(
                    "steps_per_epoch {} must be a multiple of episode_len {}",
                    self.algo.steps_per_epoch, self.env.episode_len
                ),
            ));
        }
        if self.styles.epsilon != self.variant.epsilon() {
            return Err(Error::invalid(
                "run config",
                format!(
                    "variant {} requires epsilon {}, config has {}",
                    self.variant.name(),
                    self.variant.epsilon(),
                    self.styles.epsilon
                ),
            ));
        }
        Ok(())
    }

    pub fn episodes_per_epoch(&self) -> usize {
        self.algo.steps_per_epoch / self.env.episode_len
    }
}

/// One agent's slice of the epoch buffer. There is deliberately no latent
/// field here; style latents live next to the care-receiver arrays only.
#[derive(Debug, Clone, Default)]
pub struct Track {
    pub obs_dim: usize,
    pub obs: Vec<f64>,
    pub act: Vec<f64>,
    pub logp: Vec<f64>,
    pub rew: Vec<f64>,
    pub val: Vec<f64>,
}

impl Track {
    fn new(obs_dim: usize) -> Self {
        Track {
            obs_dim,
            ..Track::default()
        }
    }

    pub fn len(&self) -> usize {
        self.logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp.is_empty()
    }

    fn clear(&mut self) {
        self.obs.clear();
        self.act.clear();
        self.logp.clear();
        self.rew.clear();
        self.val.clear();
    }

    fn check_aligned(&self) -> bool {
        let n = self.len();
        self.obs.len() == n * self.obs_dim
            && self.act.len() == n * ACTION_DIM
            && self.rew.len() == n
            && self.val.len() == n
    }
}

/// Flat storage for one epoch of experience. Filled by `collect_epoch`,
/// consumed and emptied by `update_agents`; data is never reused across
/// updates.
#[derive(Debug, Clone, Default)]
pub struct EpochBuffer {
    pub caregiver: Track,
    pub receiver: Track,
    /// Per-step style latent rows, empty for the latent-free variant.
    pub z: Vec<f64>,
    /// Start index of each episode in the step arrays.
    pub episode_starts: Vec<usize>,
    /// Undiscounted return of each episode, environment reward only.
    pub episode_returns: Vec<f64>,
    /// Episodes whose style came from the adversarial branch.
    pub adv_picks: usize,
    /// Sum of the critic values of adversarially selected styles.
    pub adv_value_sum: f64,
}

impl EpochBuffer {
    fn new(latent_dim: usize) -> Self {
        let _ = latent_dim;
        EpochBuffer {
            caregiver: Track::new(OBS_G_DIM),
            receiver: Track::new(OBS_R_DIM),
            ..EpochBuffer::default()
        }
    }

    pub fn len(&self) -> usize {
        self.caregiver.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0 && self.episode_starts.is_empty()
    }

    fn clear(&mut self) {
        self.caregiver.clear();
        self.receiver.clear();
        self.z.clear();
        self.episode_starts.clear();
        self.episode_returns.clear();
        self.adv_picks = 0;
        self.adv_value_sum = 0.0;
    }

    fn episode_bounds(&self, k: usize) -> (usize, usize) {
        let s = self.episode_starts[k];
        let e = self
            .episode_starts
            .get(k + 1)
            .copied()
            .unwrap_or(self.len());
        (s, e)
    }

    /// Structural invariants checked right before an update.
    fn check(&self, latent_dim: usize, want_len: usize) -> Result<()> {
        let n = self.len();
        if n != want_len {
            return Err(Error::invalid(
                "epoch buffer",
                format!("update expects {want_len} steps, buffer holds {n}"),
            ));
        }
        if self.receiver.len() != n
            || !self.caregiver.check_aligned()
            || !self.receiver.check_aligned()
            || self.z.len() != n * latent_dim
        {
            return Err(Error::invalid("epoch buffer", "track arrays out of step"));
        }
        // Rewards are the shared team signal at insertion time; the
        // care-receiver copy only diverges once the style bonus is added.
        debug_assert_eq!(self.caregiver.rew, self.receiver.rew);
        // Within an episode the style latent never changes.
        if latent_dim > 0 {
            for k in 0..self.episode_starts.len() {
                let (s, e) = self.episode_bounds(k);
                let first = &self.z[s * latent_dim..(s + 1) * latent_dim];
                for i in s..e {
                    let row = &self.z[i * latent_dim..(i + 1) * latent_dim];
                    if row != first {
                        return Err(Error::invalid(
                            "epoch buffer",
                            format!("style latent changed inside episode {k}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scalars reported once per epoch; the CSV column order matches
/// `METRICS_HEADER`. Quantities without a defined value that epoch
/// (discriminator log-likelihood without a discriminator, selected style
/// value without adversarial picks) are NaN.
#[derive(Debug, Clone, Copy)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub env_steps: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub actor_kl_g: f64,
    pub actor_iters_g: usize,
    pub actor_kl_r: f64,
    pub actor_iters_r: usize,
    pub critic_loss_g: f64,
    pub critic_loss_r: f64,
    pub disc_loglik: f64,
    pub adv_fraction: f64,
    pub mean_selected_value: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{}, {}, {:.8e}, {:.8e}, {:.8e}, {}, {:.8e}, {}, {:.8e}, {:.8e}, {:.8e}, {:.8e}, {:.8e}",
            self.epoch,
            self.env_steps,
            self.mean_return,
            self.std_return,
            self.actor_kl_g,
            self.actor_iters_g,
            self.actor_kl_r,
            self.actor_iters_r,
            self.critic_loss_g,
            self.critic_loss_r,
            self.disc_loglik,
            self.adv_fraction,
            self.mean_selected_value,
        )
    }
}

/// Per-update scalars returned by `update_agents`.
#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub actor_g: ActorUpdate,
    pub actor_r: ActorUpdate,
    pub critic_g: CriticUpdate,
    pub critic_r: CriticUpdate,
    /// Mean posterior log-likelihood after the discriminator update; NaN for
    /// the latent-free variant.
    pub disc_loglik: f64,
}

/// RNG stream for episode `idx` of epoch `epoch`. Stream 0 of the master
/// seed is reserved for parameter initialization, so episode streams start
/// above 2^32.
fn episode_rng(seed: u64, epoch: usize, idx: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64 + 1) << 32) | (idx as u64 + 1));
    rng
}

/// Experience of a single episode, produced independently per RNG stream so
/// episodes can be collected in any order or in parallel.
struct EpisodeData {
    obs_g: Vec<f64>,
    act_g: Vec<f64>,
    logp_g: Vec<f64>,
    val_g: Vec<f64>,
    obs_r: Vec<f64>,
    act_r: Vec<f64>,
    logp_r: Vec<f64>,
    val_r: Vec<f64>,
    rew: Vec<f64>,
    z: Option<LatentStyle>,
    adversarial: bool,
    selected_value: Option<f64>,
    ep_return: f64,
}

fn collect_episode(
    cfg: &RunConfig,
    caregiver: &AgentPolicy,
    receiver: &AgentPolicy,
    pool: &[f64],
    epoch: usize,
    idx: usize,
) -> Result<EpisodeData> {
    let mut rng = episode_rng(cfg.seed, epoch, idx);
    let steps = cfg.env.episode_len;
    let latent = cfg.variant.latent_dim();

    let pick = if latent > 0 {
        // Dimensions are fixed at construction, so a critic evaluation can
        // only fail on a programming error; surface that loudly.
        let mut value_fn = |s: &[f64], style: &LatentStyle| {
            receiver
                .value(s, Some(style.as_slice()))
                .expect("latent critic evaluation")
        };
        Some(sample_style(
            &cfg.styles,
            &mut value_fn,
            Rows::new(pool, OBS_R_DIM),
            &mut rng,
        )?)
    } else {
        None
    };
    let z = pick.as_ref().map(|p| p.style);
    let z_slice = z.as_ref().map(|s| s.as_slice());

    let (mut state, mut obs_g, mut obs_r) = env::reset(&cfg.env, &mut rng);
    let mut data = EpisodeData {
        obs_g: Vec::with_capacity(steps * OBS_G_DIM),
        act_g: Vec::with_capacity(steps * ACTION_DIM),
        logp_g: Vec::with_capacity(steps),
        val_g: Vec::with_capacity(steps),
        obs_r: Vec::with_capacity(steps * OBS_R_DIM),
        act_r: Vec::with_capacity(steps * ACTION_DIM),
        logp_r: Vec::with_capacity(steps),
        val_r: Vec::with_capacity(steps),
        rew: Vec::with_capacity(steps),
        z,
        adversarial: pick.as_ref().is_some_and(|p| p.adversarial),
        selected_value: pick.as_ref().and_then(|p| p.value),
        ep_return: 0.0,
    };

    for _ in 0..steps {
        let (a_g, logp_g) = caregiver.sample_action(&obs_g, None, &mut rng)?;
        let (a_r, logp_r) = receiver.sample_action(&obs_r, z_slice, &mut rng)?;
        let v_g = caregiver.value(&obs_g, None)?;
        let v_r = receiver.value(&obs_r, z_slice)?;

        data.obs_g.extend_from_slice(&obs_g);
        data.obs_r.extend_from_slice(&obs_r);
        data.act_g.extend_from_slice(&a_g);
        data.act_r.extend_from_slice(&a_r);
        data.logp_g.push(logp_g);
        data.logp_r.push(logp_r);
        data.val_g.push(v_g);
        data.val_r.push(v_r);

        let out = env::step(&cfg.env, &state, [a_g[0], a_g[1]], [a_r[0], a_r[1]])?;
        data.rew.push(out.reward);
        data.ep_return += out.reward;
        state = out.state;
        obs_g = out.obs_g;
        obs_r = out.obs_r;
        if out.done {
            break;
        }
    }
    debug_assert_eq!(data.rew.len(), steps, "episodes run to the fixed horizon");
    Ok(data)
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub caregiver: AgentPolicy,
    pub receiver: AgentPolicy,
    pub disc: Option<Discriminator>,
    pub optim_g: PolicyOptim,
    pub optim_r: PolicyOptim,
    pub optim_d: Option<AdamState>,
    pub buffer: EpochBuffer,
    /// Care-receiver observations of the previous epoch, feeding the
    /// adversarial style search.
    pub pool: Vec<f64>,
    pub completed_epochs: usize,
    /// Per-epoch progress lines on stderr when set.
    pub verbose: bool,
    workers: usize,
    thread_pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    /// Fresh trainer. Parameter initialization draws from stream 0 of the
    /// master seed in a fixed order: caregiver, care-receiver, then the
    /// discriminator when the variant has one.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let latent = cfg.variant.latent_dim();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let caregiver = AgentPolicy::init(OBS_G_DIM, ACTION_DIM, 0, &mut rng)?;
        let receiver = AgentPolicy::init(OBS_R_DIM, ACTION_DIM, latent, &mut rng)?;
        let (disc, optim_d) = if latent > 0 {
            let d = Discriminator::init(OBS_R_DIM, ACTION_DIM, latent, &mut rng)?;
            let o = AdamState::new(&d.net, cfg.algo.disc_lr);
            (Some(d), Some(o))
        } else {
            (None, None)
        };
        let optim_g = PolicyOptim::new(&caregiver, &cfg.algo);
        let optim_r = PolicyOptim::new(&receiver, &cfg.algo);
        Self::assemble(
            cfg,
            caregiver,
            receiver,
            disc,
            optim_g,
            optim_r,
            optim_d,
            Vec::new(),
            0,
        )
    }

    /// Resume from a checkpoint. The checkpoint must come from a run with
    /// the same variant and master seed, otherwise the continuation would
    /// silently diverge from the run it claims to extend.
    pub fn from_checkpoint(cfg: RunConfig, ckpt: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ckpt.variant != cfg.variant {
            return Err(Error::invalid(
                "resume",
                format!(
                    "checkpoint variant {} does not match configured {}",
                    ckpt.variant.name(),
                    cfg.variant.name()
                ),
            ));
        }
        if ckpt.master_seed != cfg.seed {
            return Err(Error::invalid(
                "resume",
                format!(
                    "checkpoint seed {} does not match configured {}",
                    ckpt.master_seed, cfg.seed
                ),
            ));
        }
        if ckpt.epoch >= cfg.epochs {
            return Err(Error::invalid(
                "resume",
                format!(
                    "checkpoint already has {} epochs, run wants {}",
                    ckpt.epoch, cfg.epochs
                ),
            ));
        }
        let epoch = ckpt.epoch;
        Self::assemble(
            cfg,
            ckpt.caregiver,
            ckpt.receiver,
            ckpt.disc,
            ckpt.optim_g,
            ckpt.optim_r,
            ckpt.optim_d,
            ckpt.pool,
            epoch,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: RunConfig,
        caregiver: AgentPolicy,
        receiver: AgentPolicy,
        disc: Option<Discriminator>,
        optim_g: PolicyOptim,
        optim_r: PolicyOptim,
        optim_d: Option<AdamState>,
        pool: Vec<f64>,
        completed_epochs: usize,
    ) -> Result<Self> {
        let latent = cfg.variant.latent_dim();
        let mut t = Trainer {
            buffer: EpochBuffer::new(latent),
            cfg,
            caregiver,
            receiver,
            disc,
            optim_g,
            optim_r,
            optim_d,
            pool,
            completed_epochs,
            verbose: false,
            workers: crate::worker_count(),
            thread_pool: None,
        };
        t.set_workers(t.workers)?;
        Ok(t)
    }

    /// Worker count for episode collection. Results are identical for any
    /// count because each episode has its own RNG stream and the merge is
    /// in episode order.
    pub fn set_workers(&mut self, workers: usize) -> Result<()> {
        self.workers = workers.max(1);
        self.thread_pool = if self.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(self.workers)
                    .build()
                    .map_err(|e| Error::invalid("thread pool", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let adversarial = self.cfg.styles.epsilon > 0.0;
        Checkpoint {
            variant: self.cfg.variant,
            master_seed: self.cfg.seed,
            epoch: self.completed_epochs,
            caregiver: self.caregiver.clone(),
            receiver: self.receiver.clone(),
            disc: self.disc.clone(),
            optim_g: self.optim_g.clone(),
            optim_r: self.optim_r.clone(),
            optim_d: self.optim_d.clone(),
            pool: if adversarial {
                self.pool.clone()
            } else {
                Vec::new()
            },
            pool_dim: if adversarial { OBS_R_DIM } else { 0 },
        }
    }

    /// Roll out one epoch of episodes into the buffer. Any episode error
    /// aborts the whole epoch and leaves the buffer empty.
    pub fn collect_epoch(&mut self, epoch: usize) -> Result<()> {
        if !self.buffer.is_empty() {
            return Err(Error::invalid(
                "collect",
                "buffer still holds unconsumed data",
            ));
        }
        let episodes = self.cfg.episodes_per_epoch();
        let cfg = &self.cfg;
        let caregiver = &self.caregiver;
        let receiver = &self.receiver;
        let pool = &self.pool;

        let run = |i: usize| collect_episode(cfg, caregiver, receiver, pool, epoch, i);
        let collected: Result<Vec<EpisodeData>> = match &self.thread_pool {
            Some(tp) => tp.install(|| (0..episodes).into_par_iter().map(run).collect()),
            None => (0..episodes).map(run).collect(),
        };
        let collected = collected?;

        let latent = self.cfg.variant.latent_dim();
        let buf = &mut self.buffer;
        for ep in collected {
            buf.episode_starts.push(buf.caregiver.len());
            buf.episode_returns.push(ep.ep_return);
            let steps = ep.rew.len();
            buf.caregiver.obs.extend_from_slice(&ep.obs_g);
            buf.caregiver.act.extend_from_slice(&ep.act_g);
            buf.caregiver.logp.extend_from_slice(&ep.logp_g);
            buf.caregiver.val.extend_from_slice(&ep.val_g);
            buf.caregiver.rew.extend_from_slice(&ep.rew);
            buf.receiver.obs.extend_from_slice(&ep.obs_r);
            buf.receiver.act.extend_from_slice(&ep.act_r);
            buf.receiver.logp.extend_from_slice(&ep.logp_r);
            buf.receiver.val.extend_from_slice(&ep.val_r);
            buf.receiver.rew.extend_from_slice(&ep.rew);
            if latent > 0 {
                let z = ep.z.expect("latent variant episode carries a style");
                for _ in 0..steps {
                    buf.z.extend_from_slice(z.as_slice());
                }
            }
            if ep.adversarial {
                buf.adv_picks += 1;
                buf.adv_value_sum += ep
                    .selected_value
                    .expect("adversarial pick carries its value");
            }
        }
        Ok(())
    }

    /// Add the style information bonus to the care-receiver's stored
    /// rewards. The caregiver's rewards are never touched; with a zero
    /// bonus coefficient the added term is exactly zero.
    fn apply_style_bonus(&mut self) -> Result<()> {
        let Some(disc) = &self.disc else {
            return Ok(());
        };
        let latent = self.cfg.variant.latent_dim();
        let alpha = self.cfg.algo.alpha;
        let buf = &mut self.buffer;
        for i in 0..buf.receiver.len() {
            let s = &buf.receiver.obs[i * OBS_R_DIM..(i + 1) * OBS_R_DIM];
            let a = &buf.receiver.act[i * ACTION_DIM..(i + 1) * ACTION_DIM];
            let z = &buf.z[i * latent..(i + 1) * latent];
            buf.receiver.rew[i] += mi_bonus(disc, s, a, z, alpha)?;
        }
        Ok(())
    }

    /// Advantages and value targets for one track, episode by episode. Every
    /// episode ends at the fixed horizon, so the bootstrap value is zero.
    fn gae_for_track(&self, track: &Track) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = track.len();
        let mut adv = Vec::with_capacity(n);
        let mut ret = Vec::with_capacity(n);
        let mut vals = Vec::with_capacity(self.cfg.env.episode_len + 1);
        for k in 0..self.buffer.episode_starts.len() {
            let (s, e) = self.buffer.episode_bounds(k);
            vals.clear();
            vals.extend_from_slice(&track.val[s..e]);
            vals.push(0.0);
            let (a, r) = compute_gae(
                &track.rew[s..e],
                &vals,
                self.cfg.algo.gamma,
                self.cfg.algo.lam,
            )?;
            adv.extend(a);
            ret.extend(r);
        }
        Ok((adv, ret))
    }

    /// One full update round, in order: discriminator on the collected
    /// care-receiver steps, style bonus onto the care-receiver rewards,
    /// advantage estimation for both agents, actor and critic updates for
    /// the care-receiver then the caregiver, and finally the buffer empties
    /// and the state pool is replaced by this epoch's care-receiver
    /// observations.
    pub fn update_agents(&mut self) -> Result<UpdateStats> {
        let latent = self.cfg.variant.latent_dim();
        self.buffer.check(latent, self.cfg.algo.steps_per_epoch)?;

        let disc_loglik = match (self.disc.as_mut(), self.optim_d.as_mut()) {
            (Some(disc), Some(opt)) => {
                let batch = DiscBatch {
                    obs: Rows::new(&self.buffer.receiver.obs, OBS_R_DIM),
                    act: Rows::new(&self.buffer.receiver.act, ACTION_DIM),
                    z: Rows::new(&self.buffer.z, latent),
                };
                update_discriminator(disc, opt, &batch, &self.cfg.algo)?
            }
            _ => f64::NAN,
        };

        self.apply_style_bonus()?;

        let (adv_r, ret_r) = self.gae_for_track(&self.buffer.receiver)?;
        let (adv_g, ret_g) = self.gae_for_track(&self.buffer.caregiver)?;

        let z_rows = (latent > 0).then(|| Rows::new(&self.buffer.z, latent));
        let actor_r = update_actor(
            &mut self.receiver,
            &mut self.optim_r,
            &ActorBatch {
                obs: Rows::new(&self.buffer.receiver.obs, OBS_R_DIM),
                z: z_rows,
                act: Rows::new(&self.buffer.receiver.act, ACTION_DIM),
                old_logp: &self.buffer.receiver.logp,
                adv: &adv_r,
            },
            &self.cfg.algo,
        )?;
        let critic_r = update_critic(
            &mut self.receiver,
            &mut self.optim_r,
            &CriticBatch {
                obs: Rows::new(&self.buffer.receiver.obs, OBS_R_DIM),
                z: z_rows,
                returns: &ret_r,
            },
            &self.cfg.algo,
        )?;
        let actor_g = update_actor(
            &mut self.caregiver,
            &mut self.optim_g,
            &ActorBatch {
                obs: Rows::new(&self.buffer.caregiver.obs, OBS_G_DIM),
                z: None,
                act: Rows::new(&self.buffer.caregiver.act, ACTION_DIM),
                old_logp: &self.buffer.caregiver.logp,
                adv: &adv_g,
            },
            &self.cfg.algo,
        )?;
        let critic_g = update_critic(
            &mut self.caregiver,
            &mut self.optim_g,
            &CriticBatch {
                obs: Rows::new(&self.buffer.caregiver.obs, OBS_G_DIM),
                z: None,
                returns: &ret_g,
            },
            &self.cfg.algo,
        )?;

        self.pool.clear();
        self.pool.extend_from_slice(&self.buffer.receiver.obs);
        self.buffer.clear();

        Ok(UpdateStats {
            actor_g,
            actor_r,
            critic_g,
            critic_r,
            disc_loglik,
        })
    }

    /// Run the configured number of epochs, appending one metrics row per
    /// epoch and writing periodic plus final checkpoints under the output
    /// directory. Partial outputs survive an abort; every row and
    /// checkpoint is flushed as soon as it exists.
    pub fn train(&mut self) -> Result<()> {
        std::fs::create_dir_all(&self.cfg.out_dir).map_err(|e| Error::io(&self.cfg.out_dir, e))?;
        let metrics_path = self.cfg.out_dir.join("metrics.csv");
        let resuming = self.completed_epochs > 0 && metrics_path.exists();
        let mut metrics = std::fs::OpenOptions::new()
            .create(true)
            .append(resuming)
            .write(true)
            .truncate(!resuming)
            .open(&metrics_path)
            .map_err(|e| Error::io(&metrics_path, e))?;
        if !resuming {
            writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
        }

        while self.completed_epochs < self.cfg.epochs {
            let epoch = self.completed_epochs;
            self.collect_epoch(epoch)?;

            let returns = &self.buffer.episode_returns;
            let n_ep = returns.len() as f64;
            let mean_return = returns.iter().sum::<f64>() / n_ep;
            let var = returns
                .iter()
                .map(|r| (r - mean_return).powi(2))
                .sum::<f64>()
                / n_ep;
            let std_return = var.sqrt();
            let adv_fraction = self.buffer.adv_picks as f64 / n_ep;
            let mean_selected_value = if self.buffer.adv_picks > 0 {
                self.buffer.adv_value_sum / self.buffer.adv_picks as f64
            } else {
                f64::NAN
            };

            let stats = self.update_agents()?;
            self.completed_epochs = epoch + 1;

            let row = EpochMetrics {
                epoch: self.completed_epochs,
                env_steps: self.completed_epochs as u64 * self.cfg.algo.steps_per_epoch as u64,
                mean_return,
                std_return,
                actor_kl_g: stats.actor_g.kl,
                actor_iters_g: stats.actor_g.iters,
                actor_kl_r: stats.actor_r.kl,
                actor_iters_r: stats.actor_r.iters,
                critic_loss_g: stats.critic_g.loss_before,
                critic_loss_r: stats.critic_r.loss_before,
                disc_loglik: stats.disc_loglik,
                adv_fraction,
                mean_selected_value,
            };
            writeln!(metrics, "{}", row.csv_row()).map_err(|e| Error::io(&metrics_path, e))?;
            metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
            if self.verbose {
                eprintln!(
                    "epoch {}/{} mean_return {:.3} kl_g {:.4} kl_r {:.4}",
                    self.completed_epochs,
                    self.cfg.epochs,
                    mean_return,
                    row.actor_kl_g,
                    row.actor_kl_r
                );
            }

            if self.completed_epochs.is_multiple_of(self.cfg.ckpt_every) {
                let path = self
                    .cfg
                    .out_dir
                    .join(format!("ckpt_epoch_{}.txt", self.completed_epochs));
                self.checkpoint().save(&path)?;
            }
        }

        let final_path = self.cfg.out_dir.join("final.txt");
        self.checkpoint().save(&final_path)?;
        Ok(())
    }
}

/// Helper for other modules and tests: the metrics file of a run directory.
pub fn metrics_path(out_dir: &Path) -> PathBuf {
    out_dir.join("metrics.csv")
}
