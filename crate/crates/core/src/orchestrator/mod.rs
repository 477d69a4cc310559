//! The chat-driven planning loop: prompt assembly, tool dispatch, plan
//! interpretation, error feedback and final refinement.

pub mod client;
mod episode;
pub mod plan;
pub mod prompt;

use thiserror::Error;

pub use client::{
    ChatClient, ChatMessage, ClientError, LiveClient, LiveClientConfig, MessageKind, Role,
    ScriptedClient,
};
pub use episode::{
    lint_transcript, plan_to_goal, refine, run_ablation, run_episode, snap_start, write_episode,
    CoarseFile, EpisodeFailure, EpisodeResult, EpisodeStatus, Mode, SceneContext, TrajectoryFile,
    TranscriptSummary, ValueMapFile, CONTINUE_TEXT, NUDGE_TEXT,
};
pub use plan::{
    interpret_plan, parse_reply, validate_plan, CoarsePlan, InterpretError, Reply, Segment,
    TrajectoryPlan,
};
pub use prompt::{assemble_prompt, scene_text, system_text, PromptBundle, SECTION_TITLES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("scene {scene_id} has no annotated image path")]
    MissingAnnotatedImage { scene_id: String },
}
