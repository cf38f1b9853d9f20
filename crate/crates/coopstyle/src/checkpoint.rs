//! Line-based text checkpoints. One document carries both policies, the
//! discriminator when present, every Adam accumulator, the adversarial state
//! pool, the master seed and epoch index, so a run can resume exactly.
//! Reals are written with 17 significant digits, which round-trips f64.

use std::fmt::Write as _;
use std::path::Path;

use crate::algo::{AgentPolicy, Discriminator, PolicyOptim};
use crate::nn::{AdamState, AdamVec, GaussianHead, Layer, ParamSet};
use crate::trainer::Variant;
use crate::{Error, Result};

const HEADER: &str = "coopstyle-checkpoint-v1";

/// Full training state at an epoch boundary.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub variant: Variant,
    pub master_seed: u64,
    /// Completed epochs; resuming continues with epoch + 1.
    pub epoch: usize,
    pub caregiver: AgentPolicy,
    pub receiver: AgentPolicy,
    pub disc: Option<Discriminator>,
    pub optim_g: PolicyOptim,
    pub optim_r: PolicyOptim,
    pub optim_d: Option<AdamState>,
    /// Care-receiver observations of the last collected epoch (row-major),
    /// feeding the adversarial sampler after a resume. Empty unless the
    /// variant actually uses adversarial styles.
    pub pool: Vec<f64>,
    pub pool_dim: usize,
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

fn push_params(out: &mut String, params: &ParamSet) {
    let _ = writeln!(out, "params {}", params.layers.len());
    for l in &params.layers {
        let _ = writeln!(out, "layer {} {}", l.out_dim, l.in_dim);
        push_floats(out, &l.w);
        push_floats(out, &l.b);
    }
}

fn push_adam(out: &mut String, adam: &AdamState) {
    let _ = writeln!(out, "adam {} {}", adam.t, fmt_f64(adam.lr));
    push_params(out, &adam.m);
    push_params(out, &adam.v);
}

fn push_adam_vec(out: &mut String, adam: &AdamVec) {
    let _ = writeln!(
        out,
        "adam_vec {} {} {}",
        adam.t,
        fmt_f64(adam.lr),
        adam.m.len()
    );
    push_floats(out, &adam.m);
    push_floats(out, &adam.v);
}

fn check_finite(params: &ParamSet, role: &str) -> Result<()> {
    for l in &params.layers {
        if l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "checkpoint",
                format!("non-finite value in {role}"),
            ));
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        let want_latent = self.variant.latent_dim();
        if self.receiver.latent_dim != want_latent {
            return Err(Error::invalid(
                "checkpoint",
                format!(
                    "variant {} expects receiver latent_dim {want_latent}, found {}",
                    self.variant.name(),
                    self.receiver.latent_dim
                ),
            ));
        }
        if self.caregiver.latent_dim != 0 {
            return Err(Error::invalid(
                "checkpoint",
                "caregiver must be latent-free",
            ));
        }
        if (want_latent > 0) != self.disc.is_some() {
            return Err(Error::invalid(
                "checkpoint",
                "discriminator presence must match variant",
            ));
        }
        if self.disc.is_some() != self.optim_d.is_some() {
            return Err(Error::invalid(
                "checkpoint",
                "discriminator optimizer mismatch",
            ));
        }
        if self.pool_dim > 0 && !self.pool.len().is_multiple_of(self.pool_dim) {
            return Err(Error::invalid("checkpoint", "ragged state pool"));
        }
        for (params, role) in [
            (&self.caregiver.actor, "caregiver_actor"),
            (&self.caregiver.critic, "caregiver_critic"),
            (&self.receiver.actor, "receiver_actor"),
            (&self.receiver.critic, "receiver_critic"),
        ] {
            check_finite(params, role)?;
        }
        if let Some(d) = &self.disc {
            check_finite(&d.net, "discriminator")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "variant {}", self.variant.name());
        let _ = writeln!(out, "master_seed {}", self.master_seed);
        let _ = writeln!(out, "epoch {}", self.epoch);
        let _ = writeln!(
            out,
            "dims obs_g {} obs_r {} action {} latent {}",
            self.caregiver.obs_dim,
            self.receiver.obs_dim,
            self.caregiver.action_dim,
            self.receiver.latent_dim
        );

        for (role, policy, optim) in [
            ("caregiver_actor", &self.caregiver, &self.optim_g),
            ("receiver_actor", &self.receiver, &self.optim_r),
        ] {
            let _ = writeln!(out, "net {role}");
            push_params(&mut out, &policy.actor);
            let _ = writeln!(out, "log_std {}", policy.head.log_std.len());
            push_floats(&mut out, &policy.head.log_std);
            push_adam(&mut out, &optim.actor);
            push_adam_vec(&mut out, &optim.log_std);
        }
        for (role, policy, optim) in [
            ("caregiver_critic", &self.caregiver, &self.optim_g),
            ("receiver_critic", &self.receiver, &self.optim_r),
        ] {
            let _ = writeln!(out, "net {role}");
            push_params(&mut out, &policy.critic);
            push_adam(&mut out, &optim.critic);
        }
        if let (Some(disc), Some(optim)) = (&self.disc, &self.optim_d) {
            let _ = writeln!(out, "net discriminator");
            push_params(&mut out, &disc.net);
            push_adam(&mut out, optim);
        }
        let rows = self.pool.len().checked_div(self.pool_dim).unwrap_or(0);
        let _ = writeln!(out, "pool {rows} {}", self.pool_dim);
        for r in 0..rows {
            push_floats(
                &mut out,
                &self.pool[r * self.pool_dim..(r + 1) * self.pool_dim],
            );
        }
        let _ = writeln!(out, "end");
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_text()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Invalid { what, detail } if what == "checkpoint" => Error::Checkpoint {
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = Parser {
            lines: text.lines(),
            line_no: 0,
        };
        p.expect_line(HEADER)?;
        let variant_name = p.key_line("variant")?;
        let variant = Variant::parse(&variant_name)
            .ok_or_else(|| bad(format!("unknown variant {variant_name}")))?;
        let master_seed: u64 = p
            .key_line("master_seed")?
            .parse()
            .map_err(|_| bad("bad master_seed"))?;
        let epoch: usize = p.key_line("epoch")?.parse().map_err(|_| bad("bad epoch"))?;
        let dims = p.next_line()?;
        let d: Vec<&str> = dims.split_whitespace().collect();
        if d.len() != 9 || d[0] != "dims" {
            return Err(bad("malformed dims line"));
        }
        let obs_g: usize = d[2].parse().map_err(|_| bad("bad obs_g dim"))?;
        let obs_r: usize = d[4].parse().map_err(|_| bad("bad obs_r dim"))?;
        let action: usize = d[6].parse().map_err(|_| bad("bad action dim"))?;
        let latent: usize = d[8].parse().map_err(|_| bad("bad latent dim"))?;

        let mut caregiver_actor = None;
        let mut receiver_actor = None;
        let mut caregiver_critic = None;
        let mut receiver_critic = None;
        let mut disc = None;

        loop {
            let line = p.next_line()?;
            let mut it = line.split_whitespace();
            match it.next() {
                Some("net") => {
                    let role = it
                        .next()
                        .ok_or_else(|| bad("net line missing role"))?
                        .to_string();
                    match role.as_str() {
                        "caregiver_actor" | "receiver_actor" => {
                            let params = p.parse_params()?;
                            let k_line = p.key_line("log_std")?;
                            let k: usize = k_line.parse().map_err(|_| bad("bad log_std len"))?;
                            let log_std = p.parse_floats(k)?;
                            let adam = p.parse_adam(&params)?;
                            let adam_ls = p.parse_adam_vec(k)?;
                            let slot = (params, log_std, adam, adam_ls);
                            if role == "caregiver_actor" {
                                caregiver_actor = Some(slot);
                            } else {
                                receiver_actor = Some(slot);
                            }
                        }
                        "caregiver_critic" | "receiver_critic" => {
                            let params = p.parse_params()?;
                            let adam = p.parse_adam(&params)?;
                            if role == "caregiver_critic" {
                                caregiver_critic = Some((params, adam));
                            } else {
                                receiver_critic = Some((params, adam));
                            }
                        }
                        "discriminator" => {
                            let params = p.parse_params()?;
                            let adam = p.parse_adam(&params)?;
                            disc = Some((params, adam));
                        }
                        other => return Err(bad(format!("unknown net role {other}"))),
                    }
                }
                Some("pool") => {
                    let rows: usize = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("bad pool rows"))?;
                    let dim: usize = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("bad pool dim"))?;
                    let mut pool = Vec::with_capacity(rows * dim);
                    for _ in 0..rows {
                        pool.extend(p.parse_floats(dim)?);
                    }
                    p.expect_line("end")?;

                    let (ca, ls_g, ad_g, adls_g) =
                        caregiver_actor.ok_or_else(|| bad("missing caregiver_actor"))?;
                    let (ra, ls_r, ad_r, adls_r) =
                        receiver_actor.ok_or_else(|| bad("missing receiver_actor"))?;
                    let (cc, adc_g) =
                        caregiver_critic.ok_or_else(|| bad("missing caregiver_critic"))?;
                    let (rc, adc_r) =
                        receiver_critic.ok_or_else(|| bad("missing receiver_critic"))?;

                    let caregiver = AgentPolicy {
                        actor: ca,
                        head: GaussianHead { log_std: ls_g },
                        critic: cc,
                        obs_dim: obs_g,
                        action_dim: action,
                        latent_dim: 0,
                    };
                    let receiver = AgentPolicy {
                        actor: ra,
                        head: GaussianHead { log_std: ls_r },
                        critic: rc,
                        obs_dim: obs_r,
                        action_dim: action,
                        latent_dim: latent,
                    };
                    let (disc, optim_d) = match disc {
                        Some((params, adam)) => (
                            Some(Discriminator {
                                net: params,
                                latent_dim: latent,
                            }),
                            Some(adam),
                        ),
                        None => (None, None),
                    };
                    let ckpt = Checkpoint {
                        variant,
                        master_seed,
                        epoch,
                        caregiver,
                        receiver,
                        disc,
                        optim_g: PolicyOptim {
                            actor: ad_g,
                            log_std: adls_g,
                            critic: adc_g,
                        },
                        optim_r: PolicyOptim {
                            actor: ad_r,
                            log_std: adls_r,
                            critic: adc_r,
                        },
                        optim_d,
                        pool,
                        pool_dim: dim,
                    };
                    ckpt.validate()?;
                    return Ok(ckpt);
                }
                _ => return Err(bad(format!("unexpected line: {line}"))),
            }
        }
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::invalid("checkpoint", detail)
}

struct Parser<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Parser<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| bad(format!("truncated at line {}", self.line_no)))
    }

    fn expect_line(&mut self, want: &str) -> Result<()> {
        let got = self.next_line()?;
        if got != want {
            return Err(bad(format!("expected '{want}', got '{got}'")));
        }
        Ok(())
    }

    fn key_line(&mut self, key: &str) -> Result<String> {
        let line = self.next_line()?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| bad(format!("expected '{key} ...', got '{line}'")))?;
        Ok(rest.to_string())
    }

    fn parse_floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let mut out = Vec::with_capacity(n);
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| bad(format!("bad float '{tok}'")))?;
            out.push(v);
        }
        if out.len() != n {
            return Err(bad(format!("expected {n} floats, got {}", out.len())));
        }
        Ok(out)
    }

    fn parse_params(&mut self) -> Result<ParamSet> {
        let n_layers: usize = self
            .key_line("params")?
            .parse()
            .map_err(|_| bad("bad layer count"))?;
        if n_layers == 0 {
            return Err(bad("empty params"));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let spec = self.key_line("layer")?;
            let mut it = spec.split_whitespace();
            let out_dim: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad layer out_dim"))?;
            let in_dim: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad layer in_dim"))?;
            let w = self.parse_floats(out_dim * in_dim)?;
            let b = self.parse_floats(out_dim)?;
            layers.push(Layer {
                w,
                b,
                in_dim,
                out_dim,
            });
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(bad("layer shapes do not compose"));
            }
        }
        Ok(ParamSet { layers })
    }

    fn parse_adam(&mut self, like: &ParamSet) -> Result<AdamState> {
        let head = self.key_line("adam")?;
        let mut it = head.split_whitespace();
        let t: u64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad adam t"))?;
        let lr: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad adam lr"))?;
        let m = self.parse_params()?;
        let v = self.parse_params()?;
        if !m.same_shape(like) || !v.same_shape(like) {
            return Err(bad("adam moment shapes do not mirror the parameters"));
        }
        let mut adam = AdamState::new(like, lr);
        adam.m = m;
        adam.v = v;
        adam.t = t;
        Ok(adam)
    }

    fn parse_adam_vec(&mut self, k: usize) -> Result<AdamVec> {
        let head = self.key_line("adam_vec")?;
        let mut it = head.split_whitespace();
        let t: u64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad adam_vec t"))?;
        let lr: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad adam_vec lr"))?;
        let len: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad adam_vec len"))?;
        if len != k {
            return Err(bad("adam_vec length mismatch"));
        }
        let m = self.parse_floats(k)?;
        let v = self.parse_floats(k)?;
        let mut adam = AdamVec::new(k, lr);
        adam.m = m;
        adam.v = v;
        adam.t = t;
        Ok(adam)
    }
}
