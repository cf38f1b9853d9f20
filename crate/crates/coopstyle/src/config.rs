//! Plain-text run configuration: `key = value` lines under `[env]`,
//! `[algo]`, `[styles]` and `[run]` headers. Every key has a default, so an
//! empty document is a valid config; unknown keys and malformed lines are
//! rejected with their line number. `emit` is canonical: parsing its output
//! reproduces the config exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::algo::AlgoConfig;
use crate::env::EnvConfig;
use crate::styles::StyleSamplerConfig;
use crate::trainer::{RunConfig, Variant};
use crate::{Error, Result};

/// Parsed configuration document. The adversarial mixing rate is special:
/// it is pinned by the variant, so the file may omit it (`epsilon_explicit`
/// false) and it is only emitted when it was explicitly written.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub env: EnvConfig,
    pub algo: AlgoConfig,
    pub styles: StyleSamplerConfig,
    pub seed: u64,
    pub epochs: usize,
    pub ckpt_every: usize,
    pub variant: Variant,
    pub epsilon_explicit: bool,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            env: EnvConfig::default(),
            algo: AlgoConfig::default(),
            styles: StyleSamplerConfig::default(),
            seed: 0,
            epochs: 150,
            ckpt_every: 25,
            variant: Variant::PpoLppoAdv,
            epsilon_explicit: false,
        }
    }
}

fn cfg_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        // An unreadable config file is a usage error, not a runtime failure.
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(path, 0, format!("cannot read config: {e}")))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<ConfigFile> {
        let mut cfg = ConfigFile::default();
        let mut section: Option<&str> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| cfg_err(path, line_no, "unterminated section header"))?;
                section = match name {
                    "env" => Some("env"),
                    "algo" => Some("algo"),
                    "styles" => Some("styles"),
                    "run" => Some("run"),
                    other => {
                        return Err(cfg_err(path, line_no, format!("unknown section [{other}]")))
                    }
                };
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                cfg_err(
                    path,
                    line_no,
                    format!("expected 'key = value', got '{line}'"),
                )
            })?;
            let key = key.trim();
            let value = value.trim();
            let section = section.ok_or_else(|| {
                cfg_err(
                    path,
                    line_no,
                    format!("key '{key}' appears before any section header"),
                )
            })?;
            cfg.apply(section, key, value)
                .map_err(|detail| cfg_err(path, line_no, detail))?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("key '{key}': cannot parse '{value}'"))
        }
        match (section, key) {
            ("env", "dt") => self.env.dt = num(key, value)?,
            ("env", "episode_len") => self.env.episode_len = num(key, value)?,
            ("env", "l1") => self.env.l1 = num(key, value)?,
            ("env", "l2") => self.env.l2 = num(key, value)?,
            ("env", "omega_max") => self.env.omega_max = num(key, value)?,
            ("env", "head_nominal_x") => self.env.head_nominal[0] = num(key, value)?,
            ("env", "head_nominal_y") => self.env.head_nominal[1] = num(key, value)?,
            ("env", "mouth_offset_x") => self.env.mouth_offset[0] = num(key, value)?,
            ("env", "mouth_offset_y") => self.env.mouth_offset[1] = num(key, value)?,
            ("env", "x_offset_min") => self.env.x_offset_range[0] = num(key, value)?,
            ("env", "x_offset_max") => self.env.x_offset_range[1] = num(key, value)?,
            ("env", "pitch_min") => self.env.pitch_range[0] = num(key, value)?,
            ("env", "pitch_max") => self.env.pitch_range[1] = num(key, value)?,
            ("env", "x_speed") => self.env.x_speed = num(key, value)?,
            ("env", "pitch_speed") => self.env.pitch_speed = num(key, value)?,
            ("env", "success_radius") => self.env.success_radius = num(key, value)?,
            ("env", "success_bonus") => self.env.success_bonus = num(key, value)?,
            ("env", "action_cost") => self.env.action_cost = num(key, value)?,
            ("algo", "gamma") => self.algo.gamma = num(key, value)?,
            ("algo", "lam") => self.algo.lam = num(key, value)?,
            ("algo", "clip") => self.algo.clip = num(key, value)?,
            ("algo", "target_kl") => self.algo.target_kl = num(key, value)?,
            ("algo", "actor_lr") => self.algo.actor_lr = num(key, value)?,
            ("algo", "critic_lr") => self.algo.critic_lr = num(key, value)?,
            ("algo", "steps_per_epoch") => self.algo.steps_per_epoch = num(key, value)?,
            ("algo", "alpha") => self.algo.alpha = num(key, value)?,
            ("algo", "actor_iters") => self.algo.actor_iters = num(key, value)?,
            ("algo", "critic_iters") => self.algo.critic_iters = num(key, value)?,
            ("algo", "disc_lr") => self.algo.disc_lr = num(key, value)?,
            ("algo", "disc_iters") => self.algo.disc_iters = num(key, value)?,
            ("styles", "epsilon") => {
                self.styles.epsilon = num(key, value)?;
                self.epsilon_explicit = true;
            }
            ("styles", "m") => self.styles.m = num(key, value)?,
            ("styles", "n") => self.styles.n = num(key, value)?,
            ("run", "seed") => self.seed = num(key, value)?,
            ("run", "epochs") => self.epochs = num(key, value)?,
            ("run", "ckpt_every") => self.ckpt_every = num(key, value)?,
            ("run", "variant") => {
                self.variant = Variant::parse(value)
                    .ok_or_else(|| format!("key 'variant': unknown variant '{value}'"))?
            }
            (section, key) => return Err(format!("unknown key '{key}' in section [{section}]")),
        }
        Ok(())
    }

    /// Canonical text form; `parse(emit(c)) == c` holds for any config.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "ckpt_every = {}", self.ckpt_every);
        let _ = writeln!(s, "variant = {}", self.variant.name());
        let _ = writeln!(s);
        let _ = writeln!(s, "[env]");
        let _ = writeln!(s, "dt = {}", self.env.dt);
        let _ = writeln!(s, "episode_len = {}", self.env.episode_len);
        let _ = writeln!(s, "l1 = {}", self.env.l1);
        let _ = writeln!(s, "l2 = {}", self.env.l2);
        let _ = writeln!(s, "omega_max = {}", self.env.omega_max);
        let _ = writeln!(s, "head_nominal_x = {}", self.env.head_nominal[0]);
        let _ = writeln!(s, "head_nominal_y = {}", self.env.head_nominal[1]);
        let _ = writeln!(s, "mouth_offset_x = {}", self.env.mouth_offset[0]);
        let _ = writeln!(s, "mouth_offset_y = {}", self.env.mouth_offset[1]);
        let _ = writeln!(s, "x_offset_min = {}", self.env.x_offset_range[0]);
        let _ = writeln!(s, "x_offset_max = {}", self.env.x_offset_range[1]);
        let _ = writeln!(s, "pitch_min = {}", self.env.pitch_range[0]);
        let _ = writeln!(s, "pitch_max = {}", self.env.pitch_range[1]);
        let _ = writeln!(s, "x_speed = {}", self.env.x_speed);
        let _ = writeln!(s, "pitch_speed = {}", self.env.pitch_speed);
        let _ = writeln!(s, "success_radius = {}", self.env.success_radius);
        let _ = writeln!(s, "success_bonus = {}", self.env.success_bonus);
        let _ = writeln!(s, "action_cost = {}", self.env.action_cost);
        let _ = writeln!(s);
        let _ = writeln!(s, "[algo]");
        let _ = writeln!(s, "gamma = {}", self.algo.gamma);
        let _ = writeln!(s, "lam = {}", self.algo.lam);
        let _ = writeln!(s, "clip = {}", self.algo.clip);
        let _ = writeln!(s, "target_kl = {}", self.algo.target_kl);
        let _ = writeln!(s, "actor_lr = {}", self.algo.actor_lr);
        let _ = writeln!(s, "critic_lr = {}", self.algo.critic_lr);
        let _ = writeln!(s, "steps_per_epoch = {}", self.algo.steps_per_epoch);
        let _ = writeln!(s, "alpha = {}", self.algo.alpha);
        let _ = writeln!(s, "actor_iters = {}", self.algo.actor_iters);
        let _ = writeln!(s, "critic_iters = {}", self.algo.critic_iters);
        let _ = writeln!(s, "disc_lr = {}", self.algo.disc_lr);
        let _ = writeln!(s, "disc_iters = {}", self.algo.disc_iters);
        let _ = writeln!(s);
        let _ = writeln!(s, "[styles]");
        if self.epsilon_explicit {
            let _ = writeln!(s, "epsilon = {}", self.styles.epsilon);
        }
        let _ = writeln!(s, "m = {}", self.styles.m);
        let _ = writeln!(s, "n = {}", self.styles.n);
        s
    }

    /// Resolve into a runnable configuration. The variant owns the
    /// adversarial mixing rate: an explicit epsilon that disagrees with the
    /// variant is a contradiction, an omitted one inherits the variant's
    /// value.
    pub fn to_run_config(&self, out_dir: PathBuf) -> Result<RunConfig> {
        let mut styles = self.styles.clone();
        if self.epsilon_explicit {
            if styles.epsilon != self.variant.epsilon() {
                return Err(Error::invalid(
                    "config",
                    format!(
                        "variant {} fixes epsilon = {}, but the config sets epsilon = {}; drop the epsilon key or change the variant",
                        self.variant.name(),
                        self.variant.epsilon(),
                        styles.epsilon
                    ),
                ));
            }
        } else {
            styles.epsilon = self.variant.epsilon();
        }
        let cfg = RunConfig {
            seed: self.seed,
            epochs: self.epochs,
            ckpt_every: self.ckpt_every,
            variant: self.variant,
            env: self.env.clone(),
            algo: self.algo.clone(),
            styles,
            out_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> PathBuf {
        PathBuf::from("test.cfg")
    }

    #[test]
    fn empty_document_is_the_default_config() {
        let cfg = ConfigFile::parse("", &p()).unwrap();
        assert_eq!(cfg, ConfigFile::default());
    }

    #[test]
    fn defaults_round_trip_exactly() {
        let d = ConfigFile::default();
        let text = d.emit();
        let back = ConfigFile::parse(&text, &p()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn modified_config_round_trips_exactly() {
        let mut c = ConfigFile {
            seed: 42,
            epochs: 7,
            variant: Variant::PpoPpo,
            ..Default::default()
        };
        c.algo.gamma = 0.97;
        c.algo.steps_per_epoch = 600;
        c.env.action_cost = 0.02;
        c.styles.m = 64;
        let back = ConfigFile::parse(&c.emit(), &p()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn explicit_epsilon_round_trips_with_its_flag() {
        let text = "[run]\nvariant = PPO-LPPO-adv\n[styles]\nepsilon = 0.5\n";
        let cfg = ConfigFile::parse(text, &p()).unwrap();
        assert!(cfg.epsilon_explicit);
        let back = ConfigFile::parse(&cfg.emit(), &p()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_names_line_and_key() {
        let text = "[algo]\ngamma = 0.99\nlearning_rate = 0.001\n";
        let err = ConfigFile::parse(text, &p()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("test.cfg:3"), "{msg}");
        assert!(msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn unknown_section_and_orphan_key_are_rejected() {
        assert!(ConfigFile::parse("[training]\n", &p()).is_err());
        let err = ConfigFile::parse("gamma = 0.9\n", &p()).unwrap_err();
        assert!(err.to_string().contains("before any section"));
    }

    #[test]
    fn bad_number_names_the_key() {
        let err = ConfigFile::parse("[algo]\ngamma = fast\n", &p()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gamma") && msg.contains("fast"), "{msg}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# top comment\n\n[run]\n# seed below\nseed = 9\n";
        let cfg = ConfigFile::parse(text, &p()).unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn epsilon_conflict_with_variant_is_rejected() {
        let text = "[run]\nvariant = PPO-PPO\n[styles]\nepsilon = 0.5\n";
        let cfg = ConfigFile::parse(text, &p()).unwrap();
        let err = cfg.to_run_config(PathBuf::from("/tmp/x")).unwrap_err();
        assert!(err.to_string().contains("epsilon"));
        assert_eq!(err.exit_code(), crate::EXIT_CONFIG);
    }

    #[test]
    fn omitted_epsilon_inherits_the_variant() {
        for (variant, want) in [
            (Variant::PpoPpo, 0.0),
            (Variant::PpoLppo, 0.0),
            (Variant::PpoLppoAdv, 0.5),
        ] {
            let cfg = ConfigFile {
                variant,
                epochs: 1,
                ..Default::default()
            };
            let run = cfg.to_run_config(PathBuf::from("/tmp/x")).unwrap();
            assert_eq!(run.styles.epsilon, want, "{}", variant.name());
        }
    }

    #[test]
    fn variant_parses_all_names() {
        for v in Variant::ALL {
            let text = format!("[run]\nvariant = {}\n", v.name());
            assert_eq!(ConfigFile::parse(&text, &p()).unwrap().variant, v);
        }
        assert!(ConfigFile::parse("[run]\nvariant = DDPG\n", &p()).is_err());
    }

    #[test]
    fn table_defaults_are_the_documented_values() {
        let d = ConfigFile::default();
        assert_eq!(d.algo.gamma, 0.99);
        assert_eq!(d.algo.lam, 0.95);
        assert_eq!(d.algo.clip, 0.2);
        assert_eq!(d.algo.target_kl, 0.01);
        assert_eq!(d.algo.actor_lr, 3e-4);
        assert_eq!(d.algo.critic_lr, 1e-3);
        assert_eq!(d.algo.steps_per_epoch, 4000);
        assert_eq!(d.algo.alpha, 0.2);
        assert_eq!(d.styles.m, 100);
        assert_eq!(d.styles.n, 256);
        assert_eq!(d.epochs, 150);
    }
}
