//! Objectives and the staged trainer.

pub mod objectives;
pub mod optimizer;
pub mod prompts;
pub mod stages;

pub use objectives::{
    copy_loss, example_loss, idiomatic_target_embedding, literal_target_embedding,
    prompt_infill_loss, similarity_loss, total_loss, LossBreakdown, ObjectiveConfig, SimTargets,
};
pub use optimizer::Adam;
pub use prompts::{assign_prompts, build_prompt, PromptKind, PromptMode, TrainingExample};
pub use stages::{
    init_stage_model, train_stage, EpochStats, Stage, TrainConfig, TrainFailure, TrainOutcome,
};
