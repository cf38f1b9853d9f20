//! PPO-style learners for both agents: GAE advantages, clipped surrogate
//! with approximate-KL early stopping, MSE critic regression, and for the
//! style-conditioned care-receiver a variational discriminator whose
//! log-likelihood becomes an intrinsic mutual-information reward.

use rand::Rng;

use crate::nn::{
    self, gaussian_logprob, gaussian_logprob_grads, mlp_backward_scratch, mlp_forward_scratch,
    AdamState, AdamVec, GaussianHead, ParamSet, Scratch,
};
use crate::{Error, Result};

pub const DISC_LOG_STD_MIN: f64 = -4.0;
pub const DISC_LOG_STD_MAX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub target_kl: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub steps_per_epoch: usize,
    /// Weight of the care-receiver's information bonus.
    pub alpha: f64,
    pub actor_iters: usize,
    pub critic_iters: usize,
    pub disc_lr: f64,
    pub disc_iters: usize,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            target_kl: 0.01,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            steps_per_epoch: 4000,
            alpha: 0.2,
            actor_iters: 80,
            critic_iters: 80,
            disc_lr: 1e-3,
            disc_iters: 40,
        }
    }
}

impl AlgoConfig {
    // Negated comparisons are deliberate: NaN fails every comparison, so
    // `!(v > 0.0)` rejects NaN values that `v <= 0.0` would let through.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("algo.gamma", self.gamma), ("algo.lam", self.lam)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, "must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("algo.clip", self.clip),
            ("algo.target_kl", self.target_kl),
            ("algo.actor_lr", self.actor_lr),
            ("algo.critic_lr", self.critic_lr),
            ("algo.disc_lr", self.disc_lr),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.alpha < 0.0 {
            return Err(Error::invalid("algo.alpha", "must be nonnegative"));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::invalid("algo.steps_per_epoch", "must be positive"));
        }
        Ok(())
    }
}

/// Hidden widths depend on whether the policy is style-conditioned.
pub fn hidden_sizes(latent_dim: usize) -> [usize; 2] {
    if latent_dim == 0 {
        [64, 64]
    } else {
        [128, 64]
    }
}

/// Gaussian actor plus value critic for one agent. When `latent_dim > 0`
/// both networks consume the observation concatenated with the style latent;
/// the caregiver has `latent_dim = 0` and never sees a latent anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPolicy {
    pub actor: ParamSet,
    pub head: GaussianHead,
    pub critic: ParamSet,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
}

impl AgentPolicy {
    pub fn init<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let [h1, h2] = hidden_sizes(latent_dim);
        let input = obs_dim + latent_dim;
        Ok(AgentPolicy {
            actor: ParamSet::init(&[input, h1, h2, action_dim], rng)?,
            head: GaussianHead::new(action_dim),
            critic: ParamSet::init(&[input, h1, h2, 1], rng)?,
            obs_dim,
            action_dim,
            latent_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.latent_dim
    }

    /// Writes obs (and z when the policy is latent-conditioned) into `buf`.
    pub fn write_input(&self, obs: &[f64], z: Option<&[f64]>, buf: &mut Vec<f64>) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        buf.clear();
        buf.extend_from_slice(obs);
        if self.latent_dim > 0 {
            let z = z.expect("latent-conditioned policy needs z");
            debug_assert_eq!(z.len(), self.latent_dim);
            buf.extend_from_slice(z);
        }
        debug_assert_eq!(buf.len(), self.input_dim());
    }

    pub fn action_mean(&self, obs: &[f64], z: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut buf = Vec::with_capacity(self.input_dim());
        self.write_input(obs, z, &mut buf);
        nn::mlp_forward(&self.actor, &buf)
    }

    pub fn value(&self, obs: &[f64], z: Option<&[f64]>) -> Result<f64> {
        let mut buf = Vec::with_capacity(self.input_dim());
        self.write_input(obs, z, &mut buf);
        Ok(nn::mlp_forward(&self.critic, &buf)?[0])
    }

    /// Samples an action and returns its log-probability under the current
    /// policy, as stored in rollout buffers.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        z: Option<&[f64]>,
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        let mean = self.action_mean(obs, z)?;
        let action = self.head.sample(&mean, rng);
        let logp = self.head.log_prob(&mean, &action)?;
        Ok((action, logp))
    }
}

/// Adam state for one agent's actor (params + log-stds) and critic.
#[derive(Debug, Clone)]
pub struct PolicyOptim {
    pub actor: AdamState,
    pub log_std: AdamVec,
    pub critic: AdamState,
}

impl PolicyOptim {
    pub fn new(policy: &AgentPolicy, cfg: &AlgoConfig) -> Self {
        PolicyOptim {
            actor: AdamState::new(&policy.actor, cfg.actor_lr),
            log_std: AdamVec::new(policy.action_dim, cfg.actor_lr),
            critic: AdamState::new(&policy.critic, cfg.critic_lr),
        }
    }
}

/// Variational posterior over the style latent: maps (s_r, a_r) to the mean
/// and log-std of a diagonal Gaussian over z. Log-stds are clamped to
/// [DISC_LOG_STD_MIN, DISC_LOG_STD_MAX] after the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: ParamSet,
    pub latent_dim: usize,
}

impl Discriminator {
    pub fn init<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Discriminator {
            net: ParamSet::init(&[obs_dim + action_dim, 64, 64, 2 * latent_dim], rng)?,
            latent_dim,
        })
    }

    /// (mean, clamped log_std) of the posterior at one (s, a) pair.
    pub fn posterior(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut input = Vec::with_capacity(s.len() + a.len());
        input.extend_from_slice(s);
        input.extend_from_slice(a);
        let out = nn::mlp_forward(&self.net, &input)?;
        let mean = out[..self.latent_dim].to_vec();
        let log_std = out[self.latent_dim..]
            .iter()
            .map(|v| v.clamp(DISC_LOG_STD_MIN, DISC_LOG_STD_MAX))
            .collect();
        Ok((mean, log_std))
    }

    pub fn log_likelihood(&self, s: &[f64], a: &[f64], z: &[f64]) -> Result<f64> {
        let (mean, log_std) = self.posterior(s, a)?;
        gaussian_logprob(&mean, &log_std, z)
    }
}

/// Intrinsic reward of one step: alpha times the posterior log-likelihood of
/// the episode's style latent. Added to the care-receiver's stored reward
/// before advantage estimation; caregiver rewards never include it.
pub fn mi_bonus(
    disc: &Discriminator,
    s_r: &[f64],
    a_r: &[f64],
    z_r: &[f64],
    alpha: f64,
) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(0.0);
    }
    Ok(alpha * disc.log_likelihood(s_r, a_r, z_r)?)
}

/// Generalized advantage estimation. `values` carries one trailing bootstrap
/// entry (zero at a true episode end). Returns (advantages, returns) where
/// returns_t = A_t + v_t is the critic regression target.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::Shape {
            context: "gae values",
            expected: rewards.len() + 1,
            got: values.len(),
        });
    }
    let t_len = rewards.len();
    let mut adv = vec![0.0; t_len];
    let mut acc = 0.0;
    for t in (0..t_len).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lam * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Clipped surrogate objective for one sample: min(r A, clip(r, 1-c, 1+c) A).
pub fn clip_surrogate(ratio: f64, advantage: f64, c: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - c, 1.0 + c);
    (ratio * advantage).min(clipped * advantage)
}

/// Sample estimate of KL(old || new) from stored log-probabilities.
pub fn approx_kl(old_logp: &[f64], new_logp: &[f64]) -> f64 {
    debug_assert_eq!(old_logp.len(), new_logp.len());
    if old_logp.is_empty() {
        return 0.0;
    }
    let sum: f64 = old_logp.iter().zip(new_logp).map(|(o, n)| o - n).sum();
    sum / old_logp.len() as f64
}

/// Borrowed row-major matrix view: row `i` is `data[i*dim .. (i+1)*dim]`.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    pub data: &'a [f64],
    pub dim: usize,
}

impl<'a> Rows<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "ragged row data");
        Rows { data, dim }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// One agent's on-policy batch for an update. `z` rows pair with `obs` rows
/// when the policy is latent-conditioned, and must be None otherwise.
#[derive(Debug, Clone, Copy)]
pub struct ActorBatch<'a> {
    pub obs: Rows<'a>,
    pub z: Option<Rows<'a>>,
    pub act: Rows<'a>,
    pub old_logp: &'a [f64],
    pub adv: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct CriticBatch<'a> {
    pub obs: Rows<'a>,
    pub z: Option<Rows<'a>>,
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct DiscBatch<'a> {
    pub obs: Rows<'a>,
    pub act: Rows<'a>,
    pub z: Rows<'a>,
}

#[derive(Debug, Clone, Copy)]
pub struct ActorUpdate {
    /// Gradient steps actually applied.
    pub iters: usize,
    /// KL at the stopping check (early stop) or after the last step.
    pub kl: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CriticUpdate {
    pub loss_before: f64,
    pub loss_after: f64,
}

fn check_batch(n: usize, what: &'static str, sizes: &[usize]) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty { what });
    }
    if sizes.iter().any(|&s| s != n) {
        return Err(Error::invalid(what, "batch arrays disagree in length"));
    }
    Ok(())
}

/// Zero-mean unit-variance copy; degenerate batches (constant advantage)
/// keep their centered values so a zero advantage stays exactly zero.
fn normalize(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let scale = if var.sqrt() > 1e-8 {
        1.0 / var.sqrt()
    } else {
        1.0
    };
    adv.iter().map(|a| (a - mean) * scale).collect()
}

fn build_input(obs: &[f64], z: Option<&[f64]>, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(obs);
    if let Some(z) = z {
        buf.extend_from_slice(z);
    }
}

/// Ascends the clipped surrogate with Adam, full batch, at most
/// `cfg.actor_iters` steps, stopping before any step that would land beyond
/// 1.5x target KL. Ratios are measured against the frozen `old_logp`, so at
/// iteration zero every ratio is exactly one and the first KL check is zero.
#[allow(clippy::needless_range_loop)] // sample index addresses several parallel row sets
pub fn update_actor(
    policy: &mut AgentPolicy,
    opt: &mut PolicyOptim,
    batch: &ActorBatch,
    cfg: &AlgoConfig,
) -> Result<ActorUpdate> {
    let n = batch.obs.len();
    check_batch(
        n,
        "actor batch",
        &[
            batch.act.len(),
            batch.old_logp.len(),
            batch.adv.len(),
            batch.z.map_or(n, |z| z.len()),
        ],
    )?;
    if (policy.latent_dim > 0) != batch.z.is_some() {
        return Err(Error::invalid(
            "actor batch",
            "latent rows do not match policy latent_dim",
        ));
    }

    let adv = normalize(batch.adv);
    let inv_n = 1.0 / n as f64;
    let k = policy.action_dim;
    let mut scratch = Scratch::for_params(&policy.actor);
    let mut input = Vec::with_capacity(policy.input_dim());
    let mut d_mean = vec![0.0; k];
    let mut d_ls = vec![0.0; k];
    let mut upstream = vec![0.0; k];

    let mut iters = 0;
    for _ in 0..cfg.actor_iters {
        let mut grads = policy.actor.zeros_like();
        let mut grad_ls = vec![0.0; k];
        let mut kl_sum = 0.0;
        let mut surr_sum = 0.0;
        for i in 0..n {
            build_input(batch.obs.row(i), batch.z.map(|z| z.row(i)), &mut input);
            mlp_forward_scratch(&policy.actor, &input, &mut scratch);
            let mean = scratch.output();
            let logp = gaussian_logprob(mean, &policy.head.log_std, batch.act.row(i))?;
            kl_sum += batch.old_logp[i] - logp;

            let ratio = (logp - batch.old_logp[i]).exp();
            let a = adv[i];
            surr_sum += clip_surrogate(ratio, a, cfg.clip);
            // Gradient of min(r A, clip(r) A) wrt logp: zero when the active
            // branch is the clipped one outside the band, else r * A.
            let outside = ratio < 1.0 - cfg.clip || ratio > 1.0 + cfg.clip;
            let clipped_active = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a < ratio * a;
            let coef = if outside && clipped_active {
                0.0
            } else {
                ratio * a
            };
            if coef == 0.0 {
                continue;
            }
            // Descent on the negative surrogate; inv_n for the batch mean.
            let w = -coef * inv_n;
            gaussian_logprob_grads(
                scratch.output(),
                &policy.head.log_std,
                batch.act.row(i),
                &mut d_mean,
                &mut d_ls,
            );
            for j in 0..k {
                upstream[j] = w * d_mean[j];
                grad_ls[j] += w * d_ls[j];
            }
            mlp_backward_scratch(&policy.actor, &mut scratch, &upstream, &mut grads, None);
        }
        let surr = surr_sum * inv_n;
        if !surr.is_finite() {
            return Err(Error::NonFinite {
                what: "actor surrogate",
                location: format!("iteration {iters}"),
                value: surr,
            });
        }
        let kl = kl_sum * inv_n;
        if kl > 1.5 * cfg.target_kl {
            return Ok(ActorUpdate { iters, kl });
        }
        opt.actor.step(&mut policy.actor, &grads)?;
        opt.log_std.step(&mut policy.head.log_std, &grad_ls)?;
        policy.head.clamp();
        iters += 1;
    }

    // All iterations ran; report the KL of the final parameters.
    let mut kl_sum = 0.0;
    for i in 0..n {
        build_input(batch.obs.row(i), batch.z.map(|z| z.row(i)), &mut input);
        mlp_forward_scratch(&policy.actor, &input, &mut scratch);
        let logp = gaussian_logprob(scratch.output(), &policy.head.log_std, batch.act.row(i))?;
        kl_sum += batch.old_logp[i] - logp;
    }
    Ok(ActorUpdate {
        iters,
        kl: kl_sum * inv_n,
    })
}

fn critic_mse(
    policy: &AgentPolicy,
    batch: &CriticBatch,
    scratch: &mut Scratch,
    input: &mut Vec<f64>,
) -> f64 {
    let n = batch.obs.len();
    let mut loss = 0.0;
    for i in 0..n {
        build_input(batch.obs.row(i), batch.z.map(|z| z.row(i)), input);
        mlp_forward_scratch(&policy.critic, input, scratch);
        let e = scratch.output()[0] - batch.returns[i];
        loss += e * e;
    }
    loss / n as f64
}

/// Full-batch MSE regression of the critic onto the returns for exactly
/// `cfg.critic_iters` Adam steps.
pub fn update_critic(
    policy: &mut AgentPolicy,
    opt: &mut PolicyOptim,
    batch: &CriticBatch,
    cfg: &AlgoConfig,
) -> Result<CriticUpdate> {
    let n = batch.obs.len();
    check_batch(
        n,
        "critic batch",
        &[batch.returns.len(), batch.z.map_or(n, |z| z.len())],
    )?;
    if (policy.latent_dim > 0) != batch.z.is_some() {
        return Err(Error::invalid(
            "critic batch",
            "latent rows do not match policy latent_dim",
        ));
    }
    for &r in batch.returns {
        if !r.is_finite() {
            return Err(Error::NonFinite {
                what: "critic return",
                location: "batch".to_string(),
                value: r,
            });
        }
    }

    let inv_n = 1.0 / n as f64;
    let mut scratch = Scratch::for_params(&policy.critic);
    let mut input = Vec::with_capacity(policy.input_dim());
    let loss_before = critic_mse(policy, batch, &mut scratch, &mut input);
    for _ in 0..cfg.critic_iters {
        let mut grads = policy.critic.zeros_like();
        for i in 0..n {
            build_input(batch.obs.row(i), batch.z.map(|z| z.row(i)), &mut input);
            mlp_forward_scratch(&policy.critic, &input, &mut scratch);
            let e = scratch.output()[0] - batch.returns[i];
            let upstream = [2.0 * e * inv_n];
            mlp_backward_scratch(&policy.critic, &mut scratch, &upstream, &mut grads, None);
        }
        opt.critic.step(&mut policy.critic, &grads)?;
    }
    let loss_after = critic_mse(policy, batch, &mut scratch, &mut input);
    Ok(CriticUpdate {
        loss_before,
        loss_after,
    })
}

/// Ascends the mean posterior log-likelihood of the stored style latents for
/// `cfg.disc_iters` Adam steps; returns the post-update mean log-likelihood.
pub fn update_discriminator(
    disc: &mut Discriminator,
    opt: &mut AdamState,
    batch: &DiscBatch,
    cfg: &AlgoConfig,
) -> Result<f64> {
    let n = batch.obs.len();
    check_batch(n, "discriminator batch", &[batch.act.len(), batch.z.len()])?;
    if batch.z.dim != disc.latent_dim {
        return Err(Error::Shape {
            context: "discriminator z",
            expected: disc.latent_dim,
            got: batch.z.dim,
        });
    }

    let k = disc.latent_dim;
    let inv_n = 1.0 / n as f64;
    let mut scratch = Scratch::for_params(&disc.net);
    let mut input = Vec::with_capacity(disc.net.in_dim());
    let mut mean = vec![0.0; k];
    let mut log_std = vec![0.0; k];
    let mut d_mean = vec![0.0; k];
    let mut d_ls = vec![0.0; k];
    let mut upstream = vec![0.0; 2 * k];

    let loglik =
        |disc: &Discriminator, scratch: &mut Scratch, input: &mut Vec<f64>| -> Result<f64> {
            let mut sum = 0.0;
            for i in 0..n {
                build_input(batch.obs.row(i), Some(batch.act.row(i)), input);
                mlp_forward_scratch(&disc.net, input, scratch);
                let out = scratch.output();
                let mean: Vec<f64> = out[..k].to_vec();
                let ls: Vec<f64> = out[k..]
                    .iter()
                    .map(|v| v.clamp(DISC_LOG_STD_MIN, DISC_LOG_STD_MAX))
                    .collect();
                sum += gaussian_logprob(&mean, &ls, batch.z.row(i))?;
            }
            Ok(sum * inv_n)
        };

    for _ in 0..cfg.disc_iters {
        let mut grads = disc.net.zeros_like();
        for i in 0..n {
            build_input(batch.obs.row(i), Some(batch.act.row(i)), &mut input);
            mlp_forward_scratch(&disc.net, &input, &mut scratch);
            {
                let out = scratch.output();
                for j in 0..k {
                    mean[j] = out[j];
                    log_std[j] = out[k + j].clamp(DISC_LOG_STD_MIN, DISC_LOG_STD_MAX);
                }
            }
            gaussian_logprob_grads(&mean, &log_std, batch.z.row(i), &mut d_mean, &mut d_ls);
            for j in 0..k {
                // Descent on negative log-likelihood; clamp saturation zeroes
                // the log-std gradient outside the band.
                upstream[j] = -d_mean[j] * inv_n;
                let raw = scratch.output()[k + j];
                let inside = (DISC_LOG_STD_MIN..=DISC_LOG_STD_MAX).contains(&raw);
                upstream[k + j] = if inside { -d_ls[j] * inv_n } else { 0.0 };
            }
            mlp_backward_scratch(&disc.net, &mut scratch, &upstream, &mut grads, None);
        }
        opt.step(&mut disc.net, &grads)?;
    }
    loglik(disc, &mut scratch, &mut input)
}
