//! Command-line surface. Exit codes: 0 success, 1 runtime failure, 2 for
//! usage, configuration, and input errors. Every command is deterministic
//! given its flags, and no command mutates its input files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::checkpoint::Checkpoint;
use crate::config::ConfigFile;
use crate::env::{self, EnvConfig};
use crate::evalx::{cross_eval, ZPolicy, CROSS_SEEDS};
use crate::plot;
use crate::trainer::{Trainer, Variant};
use crate::{Error, Result, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "coopstyle",
    version,
    about = "Co-optimization toolkit: caregiver arm vs style-conditioned care-receiver on a 2D feeding task"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a caregiver / care-receiver pair and write a run directory
    Train(TrainArgs),
    /// Cross-play evaluation: pair caregivers with foreign care-receivers
    Crosseval(CrossevalArgs),
    /// Render learning curves from one or more metrics files
    Plot(PlotArgs),
    /// Map a care-receiver's behavior across style latents
    StylesProbe(ProbeArgs),
    /// Roll out one deterministic episode and dump a per-step trace
    Rollout(RolloutArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file (key = value under [env]/[algo]/[styles]/[run]); omitted
    /// means built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the training variant (PPO-PPO, PPO-LPPO, PPO-LPPO-adv)
    #[arg(long)]
    variant: Option<String>,
    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the epoch count
    #[arg(long)]
    epochs: Option<usize>,
    /// Run output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CrossevalArgs {
    /// Directory with the variant's 5 checkpoints (either *.txt files or
    /// run subdirectories each holding final.txt)
    #[arg(long = "variant-dir")]
    variant_dir: PathBuf,
    /// Directory with the 5 foreign care-receiver checkpoints (same layout)
    #[arg(long = "foreign-dir")]
    foreign_dir: PathBuf,
    /// Evaluation episodes per pairing
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    /// Output directory for report.json and report.txt
    #[arg(long)]
    out: PathBuf,
    /// Optional config file supplying [env] overrides for evaluation
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Metrics files, one curve per file
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
    /// Output SVG path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    /// Checkpoint with a latent-conditioned care-receiver
    checkpoint: PathBuf,
    /// Grid resolution: k*k latents spanning [-0.9, 0.9]^2, plus the four
    /// corners
    #[arg(long, default_value_t = 3)]
    grid: usize,
    /// Write the table here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RolloutArgs {
    /// Checkpoint providing both policies
    checkpoint: PathBuf,
    /// Seed for the initial state (and the style draw under --z prior)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Style latent: 'prior' or 'fixed:[a,b]'
    #[arg(long, default_value = "prior")]
    z: String,
    /// Per-step trace CSV path; '-' writes the trace to stdout
    #[arg(long = "render-trace")]
    render_trace: PathBuf,
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Crosseval(a) => cmd_crosseval(a),
        Cmd::Plot(a) => cmd_plot(a),
        Cmd::StylesProbe(a) => cmd_styles_probe(a),
        Cmd::Rollout(a) => cmd_rollout(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    if let Some(v) = &a.variant {
        cfg.variant = Variant::parse(v).ok_or_else(|| {
            Error::invalid(
                "variant",
                format!("unknown variant '{v}' (expected PPO-PPO, PPO-LPPO, or PPO-LPPO-adv)"),
            )
        })?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let run_cfg = cfg.to_run_config(a.out.clone())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let echo_path = a.out.join("config.echo");
    std::fs::write(&echo_path, cfg.emit()).map_err(|e| Error::io(&echo_path, e))?;
    let mut trainer = Trainer::new(run_cfg)?;
    trainer.verbose = true;
    trainer.train()
}

/// Checkpoint files of one evaluation set, sorted by name. The directory
/// holds either checkpoint documents directly (*.txt) or run directories
/// each containing final.txt.
fn discover_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut subdirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "txt") {
            files.push(path);
        } else if path.is_dir() {
            subdirs.push(path);
        }
    }
    if files.is_empty() {
        for sub in subdirs {
            let f = sub.join("final.txt");
            if f.is_file() {
                files.push(f);
            }
        }
    }
    files.sort();
    if files.len() != CROSS_SEEDS {
        return Err(Error::invalid(
            "checkpoint directory",
            format!(
                "{} must contain exactly {CROSS_SEEDS} checkpoints, found {}",
                dir.display(),
                files.len()
            ),
        ));
    }
    Ok(files)
}

fn load_set(dir: &Path) -> Result<Vec<Checkpoint>> {
    discover_checkpoints(dir)?
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect()
}

fn cmd_crosseval(a: CrossevalArgs) -> Result<()> {
    let env_cfg = match &a.config {
        Some(path) => ConfigFile::load(path)?.env,
        None => EnvConfig::default(),
    };
    env_cfg.validate()?;
    if a.episodes == 0 {
        return Err(Error::invalid("episodes", "must be positive"));
    }
    let variant_ckpts = load_set(&a.variant_dir)?;
    let foreign_ckpts = load_set(&a.foreign_dir)?;
    let report = cross_eval(&variant_ckpts, &foreign_ckpts, &env_cfg, a.episodes)?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let json_path = a.out.join("report.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::invalid("report serialization", e.to_string()))?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    let table = report.to_table();
    let txt_path = a.out.join("report.txt");
    std::fs::write(&txt_path, &table).map_err(|e| Error::io(&txt_path, e))?;
    print!("{table}");
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    plot::plot_files(&a.metrics, &a.out)
}

/// One probed latent and the head state it steers to.
#[derive(Debug, Clone, Copy)]
pub struct ProbeRow {
    pub z: [f64; 2],
    pub x_offset: f64,
    pub pitch: f64,
}

/// The four extreme styles probed in addition to the grid.
pub const PROBE_CORNERS: [[f64; 2]; 4] = [[0.9, 0.9], [-0.9, 0.9], [0.9, -0.9], [-0.9, -0.9]];

fn probe_episode(ckpt: &Checkpoint, env_cfg: &EnvConfig, z: [f64; 2]) -> Result<ProbeRow> {
    let (mut state, mut obs_g, mut obs_r) = env::reset_deterministic(env_cfg);
    for _ in 0..env_cfg.episode_len {
        let a_g = ckpt.caregiver.action_mean(&obs_g, None)?;
        let a_r = ckpt.receiver.action_mean(&obs_r, Some(&z))?;
        let out = env::step(env_cfg, &state, [a_g[0], a_g[1]], [a_r[0], a_r[1]])?;
        state = out.state;
        obs_g = out.obs_g;
        obs_r = out.obs_r;
        if out.done {
            break;
        }
    }
    Ok(ProbeRow {
        z,
        x_offset: state.head_x_offset,
        pitch: state.pitch,
    })
}

/// Deterministic behavior map: one mean-action episode from the fixed
/// initial state per latent, over a k*k grid spanning [-0.9, 0.9]^2 plus
/// the four corners (grid order row-major, corners last).
pub fn probe_rows(ckpt: &Checkpoint, env_cfg: &EnvConfig, k: usize) -> Result<Vec<ProbeRow>> {
    if ckpt.receiver.latent_dim == 0 {
        return Err(Error::invalid(
            "styles probe",
            "checkpoint's care-receiver is latent-free; nothing to probe",
        ));
    }
    if k == 0 {
        return Err(Error::invalid("styles probe", "grid must be at least 1"));
    }
    let coord = |t: usize| {
        if k == 1 {
            0.0
        } else {
            -0.9 + 1.8 * t as f64 / (k - 1) as f64
        }
    };
    let mut latents = Vec::with_capacity(k * k + PROBE_CORNERS.len());
    for i in 0..k {
        for j in 0..k {
            latents.push([coord(i), coord(j)]);
        }
    }
    latents.extend(PROBE_CORNERS);
    latents
        .iter()
        .map(|&z| probe_episode(ckpt, env_cfg, z))
        .collect()
}

pub fn probe_table(rows: &[ProbeRow]) -> String {
    let mut s = String::from("z1, z2, final_x_offset, final_pitch\n");
    for r in rows {
        s.push_str(&format!(
            "{:.6}, {:.6}, {:.6}, {:.6}\n",
            r.z[0], r.z[1], r.x_offset, r.pitch
        ));
    }
    s
}

fn cmd_styles_probe(a: ProbeArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let rows = probe_rows(&ckpt, &EnvConfig::default(), a.grid)?;
    let table = probe_table(&rows);
    match &a.out {
        Some(path) => std::fs::write(path, table).map_err(|e| Error::io(path, e))?,
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_rollout(a: RolloutArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let z_policy = ZPolicy::parse(&a.z)?;
    let env_cfg = EnvConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let z: Option<[f64; 2]> = if ckpt.receiver.latent_dim > 0 {
        Some(match z_policy {
            ZPolicy::Prior => [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
            ZPolicy::Fixed(z) => z,
        })
    } else {
        None
    };
    let z_slice = z.as_ref().map(|z| &z[..]);

    let (mut state, mut obs_g, mut obs_r) = env::reset(&env_cfg, &mut rng);
    let mut csv = String::from("step, q1, q2, spoon_x, spoon_y, mouth_x, mouth_y, reward\n");
    let mut total = 0.0;
    for _ in 0..env_cfg.episode_len {
        let a_g = ckpt.caregiver.action_mean(&obs_g, None)?;
        let a_r = ckpt.receiver.action_mean(&obs_r, z_slice)?;
        let out = env::step(&env_cfg, &state, [a_g[0], a_g[1]], [a_r[0], a_r[1]])?;
        let spoon = env::spoon_pos(&env_cfg, out.state.q1, out.state.q2);
        let mouth = env::mouth_pos(&env_cfg, &out.state);
        csv.push_str(&format!(
            "{}, {:.6}, {:.6}, {:.6}, {:.6}, {:.6}, {:.6}, {:.6}\n",
            out.state.step,
            out.state.q1,
            out.state.q2,
            spoon[0],
            spoon[1],
            mouth[0],
            mouth[1],
            out.reward
        ));
        total += out.reward;
        state = out.state;
        obs_g = out.obs_g;
        obs_r = out.obs_r;
        if out.done {
            break;
        }
    }
    if a.render_trace == Path::new("-") {
        print!("{csv}");
        eprintln!("return: {total:.6}");
    } else {
        std::fs::write(&a.render_trace, csv).map_err(|e| Error::io(&a.render_trace, e))?;
        println!("return: {total:.6}");
    }
    Ok(())
}
