//! `vlnav` command-line front end.
//!
//! Exit codes: 0 success, 2 bad input or validation failure, 3 runtime or
//! chat-client failure.

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use vlnav::config::PipelineConfig;
use vlnav::orchestrator::Mode;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "vlnav",
    version,
    about = "Language-guided BEV trajectory planning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build occupancy, semantic and value maps for one scene bundle.
    BuildMap {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Run one episode and write its artifacts.
    Plan {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "")]
        instruction: String,
        #[arg(long, default_value = "opennav")]
        mode: Mode,
        /// Explicit goal `x,y`; only valid with `--mode astar_only`, and no
        /// chat client is used.
        #[arg(long, value_parser = parse_point)]
        goal: Option<[f64; 2]>,
        #[command(flatten)]
        client: ClientArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Score predicted trajectories against ground truth.
    Eval {
        /// Trajectory files, paired in order with `--gt`.
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        #[arg(long = "gt", required = true)]
        gts: Vec<PathBuf>,
        /// Scene bundles for collision counting, paired in order.
        #[arg(long = "scene")]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Run every manifest episode in all three modes and compare.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        client: ClientArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Draw a value map with trajectory overlays.
    Render {
        /// Value-map file written by `build-map` or `plan`.
        #[arg(long, conflicts_with = "scene")]
        valuemap: Option<PathBuf>,
        /// Scene bundle; the map is built over all drivable regions.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long = "trajectory")]
        trajectories: Vec<PathBuf>,
        #[arg(long = "coarse")]
        coarse: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
}

#[derive(Args, Clone)]
pub struct ClientArgs {
    /// `scripted` (needs `--transcript`, or per-episode transcripts in a
    /// manifest) or `live`.
    #[arg(long, default_value = "scripted")]
    pub client: ClientKind,
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long, default_value = "https://api.openai.com/v1")]
    pub endpoint: String,
    #[arg(long, default_value = "gpt-4o")]
    pub model: String,
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
    #[arg(long, default_value_t = 120)]
    pub timeout: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ClientKind {
    Scripted,
    Live,
}

/// Config file plus per-flag overrides.
#[derive(Args, Clone, Default)]
pub struct Tuning {
    /// JSON pipeline config; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<f64>,
    #[arg(long)]
    pub corridor_radius: Option<f64>,
    #[arg(long)]
    pub robot_radius: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub success_threshold: Option<f64>,
    #[arg(long)]
    pub collision_radius: Option<f64>,
}

impl Tuning {
    pub fn resolve(&self) -> CliResult<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Input(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Input(format!("bad config {}: {e}", p.display())))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.resolution {
            cfg.map.resolution = v;
        }
        if let Some(v) = self.corridor_radius {
            cfg.map.corridor_radius = v;
        }
        if let Some(v) = self.robot_radius {
            cfg.planner.robot_radius = v;
        }
        if let Some(v) = self.max_retries {
            cfg.orchestrator.max_retries = v;
        }
        if let Some(v) = self.success_threshold {
            cfg.eval.success_threshold = v;
        }
        if let Some(v) = self.collision_radius {
            cfg.eval.collision_radius = v;
        }
        cfg.validate()
            .map_err(|e| CliError::Input(format!("invalid config: {e}")))?;
        Ok(cfg)
    }
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [x, y] => {
            let x: f64 = x.parse().map_err(|e| format!("bad x in {s:?}: {e}"))?;
            let y: f64 = y.parse().map_err(|e| format!("bad y in {s:?}: {e}"))?;
            if x.is_finite() && y.is_finite() {
                Ok([x, y])
            } else {
                Err(format!("goal {s:?} is not finite"))
            }
        }
        _ => Err(format!("expected x,y but got {s:?}")),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::BuildMap { scene, out, tuning } => {
            commands::build_map(&scene, &out, &tuning.resolve()?)
        }
        Command::Plan {
            scene,
            instruction,
            mode,
            goal,
            client,
            out,
            tuning,
        } => commands::plan(
            &scene,
            &instruction,
            mode,
            goal,
            &client,
            &out,
            &tuning.resolve()?,
        ),
        Command::Eval {
            preds,
            gts,
            scenes,
            out,
            tuning,
        } => commands::eval(&preds, &gts, &scenes, &out, &tuning.resolve()?),
        Command::Ablate {
            manifest,
            client,
            out,
            tuning,
        } => commands::ablate(&manifest, &client, &out, &tuning.resolve()?),
        Command::Render {
            valuemap,
            scene,
            trajectories,
            coarse,
            out,
            tuning,
        } => commands::render(
            valuemap.as_deref(),
            scene.as_deref(),
            &trajectories,
            &coarse,
            &out,
            &tuning.resolve()?,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_parsing() {
        assert_eq!(parse_point("3.5, -2").unwrap(), [3.5, -2.0]);
        assert!(parse_point("3.5").is_err());
        assert!(parse_point("1,2,3").is_err());
        assert!(parse_point("nan,1").is_err());
    }

    #[test]
    fn overrides_apply_and_validate() {
        let t = Tuning {
            resolution: Some(0.5),
            max_retries: Some(1),
            ..Tuning::default()
        };
        let cfg = t.resolve().unwrap();
        assert_eq!(cfg.map.resolution, 0.5);
        assert_eq!(cfg.orchestrator.max_retries, 1);
        assert_eq!(cfg.planner, PipelineConfig::default().planner);
        let bad = Tuning {
            resolution: Some(0.0),
            ..Tuning::default()
        };
        assert!(matches!(bad.resolve(), Err(CliError::Input(_))));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
