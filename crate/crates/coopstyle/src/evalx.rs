//! Cross-play evaluation: pair caregivers with care-receivers from other
//! runs, measure the train/test return gap, and test the difference with
//! Welch's unpaired t-test. Evaluation rolls deterministic mean-action
//! episodes; all randomness (initial states, prior style draws) comes from
//! streams derived from the checkpoint identities and the episode index, so
//! a report is a pure function of the checkpoint set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::{self, EnvConfig, OBS_G_DIM, OBS_R_DIM};
use crate::styles::LATENT_DIM;
use crate::{Error, Result};

/// How the care-receiver's style latent is chosen during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZPolicy {
    /// Fresh uniform draw from the prior box each episode.
    Prior,
    /// The same fixed latent for every episode.
    Fixed([f64; 2]),
}

impl ZPolicy {
    /// Accepts "prior" or "fixed:[a,b]".
    pub fn parse(s: &str) -> Result<ZPolicy> {
        if s == "prior" {
            return Ok(ZPolicy::Prior);
        }
        let body = s
            .strip_prefix("fixed:[")
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| {
                Error::invalid(
                    "z policy",
                    format!("expected 'prior' or 'fixed:[a,b]', got '{s}'"),
                )
            })?;
        let parts: Vec<&str> = body.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::invalid(
                "z policy",
                "fixed latent needs exactly two coordinates",
            ));
        }
        let a: f64 = parts[0]
            .parse()
            .map_err(|_| Error::invalid("z policy", format!("bad number '{}'", parts[0])))?;
        let b: f64 = parts[1]
            .parse()
            .map_err(|_| Error::invalid("z policy", format!("bad number '{}'", parts[1])))?;
        if !(-1.0..=1.0).contains(&a) || !(-1.0..=1.0).contains(&b) {
            return Err(Error::invalid("z policy", "fixed latent outside [-1,1]^2"));
        }
        Ok(ZPolicy::Fixed([a, b]))
    }
}

/// Evaluation RNG for one episode of one pairing. The 32-byte seed is the
/// two checkpoint identities (master seed and epoch each), so any distinct
/// pairing gets an independent generator and identical pairings replay
/// exactly.
fn eval_rng(caregiver: &Checkpoint, receiver: &Checkpoint, episode: usize) -> ChaCha20Rng {
    let mut seed = [0u8; 32];
    for (slot, v) in [
        caregiver.master_seed,
        caregiver.epoch as u64,
        receiver.master_seed,
        receiver.epoch as u64,
    ]
    .into_iter()
    .enumerate()
    {
        seed[slot * 8..(slot + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    let mut rng = ChaCha20Rng::from_seed(seed);
    rng.set_stream(episode as u64 + 1);
    rng
}

fn check_dims(caregiver: &Checkpoint, receiver: &Checkpoint) -> Result<()> {
    if caregiver.caregiver.obs_dim != OBS_G_DIM {
        return Err(Error::invalid(
            "eval pair",
            format!(
                "caregiver observes {} dims, environment provides {OBS_G_DIM}",
                caregiver.caregiver.obs_dim
            ),
        ));
    }
    if receiver.receiver.obs_dim != OBS_R_DIM {
        return Err(Error::invalid(
            "eval pair",
            format!(
                "care-receiver observes {} dims, environment provides {OBS_R_DIM}",
                receiver.receiver.obs_dim
            ),
        ));
    }
    if receiver.receiver.latent_dim != 0 && receiver.receiver.latent_dim != LATENT_DIM {
        return Err(Error::invalid(
            "eval pair",
            format!(
                "unsupported latent dimension {}",
                receiver.receiver.latent_dim
            ),
        ));
    }
    Ok(())
}

/// Undiscounted return of `episodes` evaluation episodes for one pairing.
/// Both agents act at their mean; a latent-conditioned care-receiver gets
/// one style per episode according to `z_policy`.
pub fn eval_pair(
    caregiver: &Checkpoint,
    receiver: &Checkpoint,
    env_cfg: &EnvConfig,
    episodes: usize,
    z_policy: ZPolicy,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::invalid("eval pair", "episodes must be positive"));
    }
    check_dims(caregiver, receiver)?;
    let g = &caregiver.caregiver;
    let r = &receiver.receiver;
    let latent = r.latent_dim > 0;

    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut rng = eval_rng(caregiver, receiver, ep);
        let z: Option<[f64; 2]> = if latent {
            match z_policy {
                ZPolicy::Prior => {
                    Some([rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
                }
                ZPolicy::Fixed(z) => Some(z),
            }
        } else {
            None
        };
        let z_slice = z.as_ref().map(|z| &z[..]);

        let (mut state, mut obs_g, mut obs_r) = env::reset(env_cfg, &mut rng);
        let mut total = 0.0;
        for _ in 0..env_cfg.episode_len {
            let a_g = g.action_mean(&obs_g, None)?;
            let a_r = r.action_mean(&obs_r, z_slice)?;
            let out = env::step(env_cfg, &state, [a_g[0], a_g[1]], [a_r[0], a_r[1]])?;
            total += out.reward;
            state = out.state;
            obs_g = out.obs_g;
            obs_r = out.obs_r;
            if out.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Welch's unpaired t-test result. `degenerate` marks samples whose pooled
/// variance vanished; the p-value is then 1 for equal means and 0 otherwise.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    /// Welch-Satterthwaite degrees of freedom (0 when degenerate).
    pub df: f64,
    pub degenerate: bool,
}

fn sample_mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch t-test with unequal variances.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(
            "t-test",
            "each sample needs at least two values",
        ));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("t-test", "samples must be finite"));
    }
    let (ma, va) = sample_mean_var(a);
    let (mb, vb) = sample_mean_var(b);
    let sa = va / a.len() as f64;
    let sb = vb / b.len() as f64;
    let se2 = sa + sb;
    if se2 <= 0.0 {
        // No variance anywhere: the test degenerates to comparing means.
        let equal = ma == mb;
        return Ok(TTest {
            t: if equal {
                0.0
            } else {
                f64::INFINITY.copysign(ma - mb)
            },
            p: if equal { 1.0 } else { 0.0 },
            df: 0.0,
            degenerate: true,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p = student_t_two_sided(t, df);
    Ok(TTest {
        t,
        p,
        df,
        degenerate: false,
    })
}

/// ln Gamma(x) for x > 0 (Lanczos, g = 7, 9 terms; about 1e-13 relative).
fn ln_gamma(x: f64) -> f64 {
    // Coefficients copied digit-for-digit from the published g = 7 table.
    #[allow(clippy::excessive_precision)]
    const C: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection keeps the argument in the well-conditioned range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta I_x(a, b) by modified Lentz continued
/// fraction, with the symmetry flip for fast convergence.
fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - reg_inc_beta(b, a, 1.0 - x);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    let front = ln_front.exp();

    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=200 {
        let m = m as f64;
        // Even step.
        let num = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let num = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (front * h / a).clamp(0.0, 1.0)
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    reg_inc_beta(0.5 * df, 0.5, x)
}

/// Full cross-play report. Raw per-episode returns are kept so every
/// aggregate can be recomputed from the report alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub episodes_per_pair: usize,
    /// Per-seed returns of each caregiver with its co-trained partner.
    pub train_returns: Vec<Vec<f64>>,
    /// `test_returns[i][j]` holds the returns of caregiver seed i paired
    /// with foreign care-receiver seed j.
    pub test_returns: Vec<Vec<Vec<f64>>>,
    pub train_seed_mean: Vec<f64>,
    pub train_seed_std: Vec<f64>,
    /// Mean return of each (caregiver, foreign receiver) cell.
    pub test_matrix: Vec<Vec<f64>>,
    /// Mean and standard deviation across the per-seed train means.
    pub train_mean: f64,
    pub train_std: f64,
    /// Mean and standard deviation across all test cells.
    pub test_mean: f64,
    pub test_std: f64,
    /// train_mean - test_mean: how much pairing with a stranger costs.
    pub gap: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub degenerate_ttest: bool,
}

fn mean_of(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn pop_std(x: &[f64]) -> f64 {
    let m = mean_of(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

impl EvalReport {
    /// Assemble a report from raw returns; all aggregates and the t-test
    /// over (per-seed train means) vs (test cell means) are derived here.
    pub fn from_samples(
        variant: &str,
        train_returns: Vec<Vec<f64>>,
        test_returns: Vec<Vec<Vec<f64>>>,
    ) -> Result<EvalReport> {
        if train_returns.is_empty() || test_returns.is_empty() {
            return Err(Error::Empty {
                what: "evaluation returns",
            });
        }
        let episodes = train_returns[0].len();
        if train_returns.iter().any(|r| r.len() != episodes)
            || test_returns
                .iter()
                .flat_map(|row| row.iter())
                .any(|r| r.len() != episodes)
        {
            return Err(Error::invalid(
                "eval report",
                "episode counts differ across pairings",
            ));
        }
        let train_seed_mean: Vec<f64> = train_returns.iter().map(|r| mean_of(r)).collect();
        let train_seed_std: Vec<f64> = train_returns.iter().map(|r| pop_std(r)).collect();
        let test_matrix: Vec<Vec<f64>> = test_returns
            .iter()
            .map(|row| row.iter().map(|r| mean_of(r)).collect())
            .collect();
        let cells: Vec<f64> = test_matrix.iter().flatten().copied().collect();
        let train_mean = mean_of(&train_seed_mean);
        let train_std = pop_std(&train_seed_mean);
        let test_mean = mean_of(&cells);
        let test_std = pop_std(&cells);
        let tt = welch_ttest(&train_seed_mean, &cells)?;
        Ok(EvalReport {
            variant: variant.to_string(),
            episodes_per_pair: episodes,
            train_returns,
            test_returns,
            train_seed_mean,
            train_seed_std,
            test_matrix,
            train_mean,
            train_std,
            test_mean,
            test_std,
            gap: train_mean - test_mean,
            t_stat: tt.t,
            p_value: tt.p,
            degenerate_ttest: tt.degenerate,
        })
    }

    /// Human-readable summary with the full test matrix.
    pub fn to_table(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "variant: {}", self.variant);
        let _ = writeln!(s, "episodes per pairing: {}", self.episodes_per_pair);
        let _ = writeln!(
            s,
            "train return: {:.3} +/- {:.3}",
            self.train_mean, self.train_std
        );
        let _ = writeln!(
            s,
            "test return:  {:.3} +/- {:.3}",
            self.test_mean, self.test_std
        );
        let _ = writeln!(s, "gap (train - test): {:.3}", self.gap);
        let _ = writeln!(
            s,
            "welch t = {:.4}, two-sided p = {:.4}{}",
            self.t_stat,
            self.p_value,
            if self.degenerate_ttest {
                " (degenerate variance)"
            } else {
                ""
            }
        );
        let _ = writeln!(
            s,
            "test matrix (rows: caregiver seed, cols: foreign care-receiver seed):"
        );
        let _ = write!(s, "{:>10}", "");
        for j in 0..self.test_matrix[0].len() {
            let _ = write!(s, "{:>10}", format!("recv{j}"));
        }
        let _ = writeln!(s);
        for (i, row) in self.test_matrix.iter().enumerate() {
            let _ = write!(s, "{:>10}", format!("care{i}"));
            for v in row {
                let _ = write!(s, "{v:>10.3}");
            }
            let _ = writeln!(s, "   (train {:.3})", self.train_seed_mean[i]);
        }
        s
    }
}

/// Number of runs crossed in an evaluation; the protocol pairs each of the
/// five caregivers with all five foreign care-receivers.
pub const CROSS_SEEDS: usize = 5;

/// Evaluate a variant's five runs against five foreign care-receivers:
/// the train diagonal pairs each caregiver with its co-trained partner,
/// the test matrix crosses every caregiver with every foreign receiver.
pub fn cross_eval(
    variant_ckpts: &[Checkpoint],
    foreign_ckpts: &[Checkpoint],
    env_cfg: &EnvConfig,
    episodes: usize,
) -> Result<EvalReport> {
    if variant_ckpts.len() != CROSS_SEEDS {
        return Err(Error::invalid(
            "cross eval",
            format!(
                "expected {CROSS_SEEDS} variant checkpoints, got {}",
                variant_ckpts.len()
            ),
        ));
    }
    if foreign_ckpts.len() != CROSS_SEEDS {
        return Err(Error::invalid(
            "cross eval",
            format!(
                "expected {CROSS_SEEDS} foreign checkpoints, got {}",
                foreign_ckpts.len()
            ),
        ));
    }
    let variant = variant_ckpts[0].variant;
    if variant_ckpts.iter().any(|c| c.variant != variant) {
        return Err(Error::invalid(
            "cross eval",
            "variant checkpoints disagree on variant",
        ));
    }

    let mut train_returns = Vec::with_capacity(CROSS_SEEDS);
    for ckpt in variant_ckpts {
        train_returns.push(eval_pair(ckpt, ckpt, env_cfg, episodes, ZPolicy::Prior)?);
    }
    let mut test_returns = Vec::with_capacity(CROSS_SEEDS);
    for g in variant_ckpts {
        let mut row = Vec::with_capacity(CROSS_SEEDS);
        for r in foreign_ckpts {
            row.push(eval_pair(g, r, env_cfg, episodes, ZPolicy::Prior)?);
        }
        test_returns.push(row);
    }
    EvalReport::from_samples(variant.name(), train_returns, test_returns)
}
