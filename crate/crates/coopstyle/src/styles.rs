//! Style management for the care-receiver: a uniform prior over the 2-D
//! latent box, adversarial selection of the latent the caregiver currently
//! handles worst (argmin of the latent critic's value averaged over recent
//! states), and the epsilon-greedy mix between the two.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::algo::Rows;
use crate::{Error, Result};

pub const LATENT_DIM: usize = 2;

/// Care-receiver style latent, componentwise in [-1, 1], fixed for a whole
/// episode once sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentStyle {
    pub z: [f64; LATENT_DIM],
}

impl LatentStyle {
    pub fn new(z: [f64; LATENT_DIM]) -> Result<Self> {
        if z.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::invalid(
                "latent style",
                format!("{z:?} outside [-1,1]^2"),
            ));
        }
        Ok(LatentStyle { z })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleSamplerConfig {
    /// Probability of picking the adversarial branch per episode.
    pub epsilon: f64,
    /// Uniform candidates scanned per adversarial pick.
    pub m: usize,
    /// States averaged per candidate value estimate.
    pub n: usize,
}

impl Default for StyleSamplerConfig {
    fn default() -> Self {
        StyleSamplerConfig {
            epsilon: 0.5,
            m: 100,
            n: 256,
        }
    }
}

impl StyleSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid("styles.epsilon", "must lie in [0, 1]"));
        }
        if self.m < 1 {
            return Err(Error::invalid("styles.m", "need at least one candidate"));
        }
        if self.n < 1 {
            return Err(Error::invalid("styles.n", "need at least one state"));
        }
        Ok(())
    }
}

pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> LatentStyle {
    LatentStyle {
        z: [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
    }
}

/// Index and mean value of the candidate minimizing the state-averaged value.
/// The scan uses strict less-than, so ties resolve to the lowest index.
pub fn argmin_candidates<F>(
    value_fn: &mut F,
    states: Rows,
    candidates: &[LatentStyle],
) -> (usize, f64)
where
    F: FnMut(&[f64], &LatentStyle) -> f64,
{
    debug_assert!(!candidates.is_empty() && !states.is_empty());
    let inv_n = 1.0 / states.len() as f64;
    let mut best = (0usize, f64::INFINITY);
    for (idx, cand) in candidates.iter().enumerate() {
        let mut sum = 0.0;
        for i in 0..states.len() {
            sum += value_fn(states.row(i), cand);
        }
        let mean = sum * inv_n;
        if mean < best.1 {
            best = (idx, mean);
        }
    }
    best
}

/// Draws `m` uniform candidates (in order, so tests can replay the list from
/// a cloned RNG), evaluates each against the same states, and returns the
/// minimizer with its mean value.
pub fn sample_adversarial<F, R>(
    value_fn: &mut F,
    states: Rows,
    m: usize,
    rng: &mut R,
) -> Result<(LatentStyle, f64)>
where
    F: FnMut(&[f64], &LatentStyle) -> f64,
    R: Rng + ?Sized,
{
    if states.is_empty() {
        return Err(Error::Empty {
            what: "adversarial state set",
        });
    }
    if m < 1 {
        return Err(Error::invalid("styles.m", "need at least one candidate"));
    }
    let candidates: Vec<LatentStyle> = (0..m).map(|_| sample_uniform(rng)).collect();
    let (idx, value) = argmin_candidates(value_fn, states, &candidates);
    Ok((candidates[idx], value))
}

/// Result of one per-episode style decision.
#[derive(Debug, Clone, Copy)]
pub struct StylePick {
    pub style: LatentStyle,
    pub adversarial: bool,
    /// Mean critic value of the selected style (adversarial branch only).
    pub value: Option<f64>,
}

/// Epsilon-greedy style choice for one episode. Draws the branch variable
/// first, then either runs the adversarial search over `cfg.n` states from
/// the pool (without replacement, or with replacement when the pool is
/// smaller than `cfg.n`) or falls back to the uniform prior. An empty pool
/// always yields the uniform branch.
pub fn sample_style<F, R>(
    cfg: &StyleSamplerConfig,
    value_fn: &mut F,
    pool: Rows,
    rng: &mut R,
) -> Result<StylePick>
where
    F: FnMut(&[f64], &LatentStyle) -> f64,
    R: Rng + ?Sized,
{
    let x: f64 = rng.random();
    if x < cfg.epsilon && !pool.is_empty() {
        let dim = pool.dim;
        let mut subset = Vec::with_capacity(cfg.n * dim);
        if pool.len() >= cfg.n {
            let mut indices: Vec<usize> = (0..pool.len()).collect();
            let (chosen, _) = indices.partial_shuffle(rng, cfg.n);
            for &i in chosen.iter() {
                subset.extend_from_slice(pool.row(i));
            }
        } else {
            for _ in 0..cfg.n {
                let i = rng.random_range(0..pool.len());
                subset.extend_from_slice(pool.row(i));
            }
        }
        let (style, value) = sample_adversarial(value_fn, Rows::new(&subset, dim), cfg.m, rng)?;
        Ok(StylePick {
            style,
            adversarial: true,
            value: Some(value),
        })
    } else {
        Ok(StylePick {
            style: sample_uniform(rng),
            adversarial: false,
            value: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn norm_critic() -> impl FnMut(&[f64], &LatentStyle) -> f64 {
        |_s: &[f64], z: &LatentStyle| z.z[0] * z.z[0] + z.z[1] * z.z[1]
    }

    #[test]
    fn uniform_draws_cover_the_box() {
        let mut r = rng(1);
        let n = 10_000;
        let mut mean = [0.0, 0.0];
        for _ in 0..n {
            let s = sample_uniform(&mut r);
            assert!(s.z.iter().all(|v| (-1.0..=1.0).contains(v)));
            mean[0] += s.z[0];
            mean[1] += s.z[1];
        }
        assert!((mean[0] / n as f64).abs() < 0.05);
        assert!((mean[1] / n as f64).abs() < 0.05);
    }

    #[test]
    fn uniform_is_seed_reproducible() {
        let a: Vec<LatentStyle> = {
            let mut r = rng(9);
            (0..32).map(|_| sample_uniform(&mut r)).collect()
        };
        let b: Vec<LatentStyle> = {
            let mut r = rng(9);
            (0..32).map(|_| sample_uniform(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn latent_style_enforces_box() {
        assert!(LatentStyle::new([0.0, 1.0]).is_ok());
        assert!(LatentStyle::new([1.2, 0.0]).is_err());
        assert!(LatentStyle::new([0.0, -1.0001]).is_err());
    }

    #[test]
    fn adversarial_minimizes_mock_norm_critic() {
        let states = vec![0.0; 5 * 3];
        let rows = Rows::new(&states, 3);
        // Replay the candidate list from a cloned RNG, scan exhaustively.
        let mut r = rng(21);
        let mut replay = r.clone();
        let (picked, value) = sample_adversarial(&mut norm_critic(), rows, 100, &mut r).unwrap();
        let candidates: Vec<LatentStyle> = (0..100).map(|_| sample_uniform(&mut replay)).collect();
        let mut best = &candidates[0];
        for c in &candidates {
            let n2 = c.z[0] * c.z[0] + c.z[1] * c.z[1];
            if n2 < best.z[0] * best.z[0] + best.z[1] * best.z[1] {
                best = c;
            }
        }
        assert_eq!(picked, *best);
        assert!(candidates.contains(&picked));
        assert!((value - (picked.z[0].powi(2) + picked.z[1].powi(2))).abs() < 1e-12);
    }

    #[test]
    fn single_candidate_wins_by_default() {
        let states = vec![0.0; 3];
        let mut r = rng(33);
        let mut replay = r.clone();
        let (picked, _) =
            sample_adversarial(&mut norm_critic(), Rows::new(&states, 3), 1, &mut r).unwrap();
        assert_eq!(picked, sample_uniform(&mut replay));
    }

    #[test]
    fn constant_critic_ties_break_to_first_candidate() {
        let states = vec![0.0; 3];
        let mut r = rng(44);
        let mut replay = r.clone();
        let mut constant = |_s: &[f64], _z: &LatentStyle| 7.25;
        let (picked, value) =
            sample_adversarial(&mut constant, Rows::new(&states, 3), 50, &mut r).unwrap();
        assert_eq!(picked, sample_uniform(&mut replay));
        assert_eq!(value, 7.25);
    }

    #[test]
    fn argmin_beats_every_other_candidate() {
        let mut r = rng(55);
        for _ in 0..50 {
            let states: Vec<f64> = (0..4 * 2).map(|_| r.random_range(-1.0..1.0)).collect();
            let rows = Rows::new(&states, 2);
            let candidates: Vec<LatentStyle> = (0..20).map(|_| sample_uniform(&mut r)).collect();
            // Value couples state and z so the average matters.
            let mut value = |s: &[f64], z: &LatentStyle| s[0] * z.z[0] + (s[1] - z.z[1]).powi(2);
            let (idx, best_val) = argmin_candidates(&mut value, rows, &candidates);
            for (j, c) in candidates.iter().enumerate() {
                let mean: f64 =
                    (0..rows.len()).map(|i| value(rows.row(i), c)).sum::<f64>() / rows.len() as f64;
                assert!(best_val <= mean + 1e-15, "candidate {j} beats argmin {idx}");
            }
        }
    }

    #[test]
    fn empty_state_set_is_an_error() {
        let mut r = rng(66);
        let err =
            sample_adversarial(&mut norm_critic(), Rows::new(&[], 3), 10, &mut r).unwrap_err();
        assert!(matches!(err, Error::Empty { .. }));
    }

    #[test]
    fn epsilon_zero_is_always_uniform() {
        let cfg = StyleSamplerConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        let pool = vec![0.0; 100 * 3];
        let mut r = rng(77);
        for _ in 0..1000 {
            let pick = sample_style(&cfg, &mut norm_critic(), Rows::new(&pool, 3), &mut r).unwrap();
            assert!(!pick.adversarial);
            assert!(pick.value.is_none());
        }
    }

    #[test]
    fn epsilon_one_with_pool_is_always_adversarial() {
        let cfg = StyleSamplerConfig {
            epsilon: 1.0,
            m: 10,
            n: 16,
        };
        let pool = vec![0.25; 64 * 3];
        let mut r = rng(88);
        for _ in 0..200 {
            let pick = sample_style(&cfg, &mut norm_critic(), Rows::new(&pool, 3), &mut r).unwrap();
            assert!(pick.adversarial);
            assert!(pick.value.is_some());
            assert!(pick.style.z.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn empty_pool_never_goes_adversarial() {
        let cfg = StyleSamplerConfig {
            epsilon: 1.0,
            ..Default::default()
        };
        let mut r = rng(99);
        for _ in 0..100 {
            let pick = sample_style(&cfg, &mut norm_critic(), Rows::new(&[], 3), &mut r).unwrap();
            assert!(!pick.adversarial);
        }
    }

    #[test]
    fn small_pool_samples_with_replacement() {
        let cfg = StyleSamplerConfig {
            epsilon: 1.0,
            m: 5,
            n: 64,
        };
        let pool = vec![0.5; 3 * 2];
        let mut r = rng(111);
        let pick = sample_style(&cfg, &mut norm_critic(), Rows::new(&pool, 2), &mut r).unwrap();
        assert!(pick.adversarial);
    }

    #[test]
    fn adversarial_fraction_tracks_epsilon() {
        let cfg = StyleSamplerConfig {
            epsilon: 0.5,
            m: 2,
            n: 4,
        };
        let pool = vec![0.1; 32 * 2];
        let mut r = rng(123);
        let n = 10_000;
        let mut adversarial = 0;
        for _ in 0..n {
            if sample_style(&cfg, &mut norm_critic(), Rows::new(&pool, 2), &mut r)
                .unwrap()
                .adversarial
            {
                adversarial += 1;
            }
        }
        let frac = adversarial as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "fraction {frac}");
    }

    #[test]
    fn sampler_config_validation() {
        StyleSamplerConfig::default().validate().unwrap();
        assert!(StyleSamplerConfig {
            epsilon: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StyleSamplerConfig {
            epsilon: 1.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StyleSamplerConfig {
            m: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StyleSamplerConfig {
            n: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
