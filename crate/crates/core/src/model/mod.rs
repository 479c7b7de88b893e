//! The tiny encoder-decoder backbone, generation, and checkpointing.

pub mod checkpoint;
pub mod config;
pub mod generate;
pub mod transformer;

pub use checkpoint::{Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use config::ModelConfig;
pub use generate::{
    generate, generate_from_state, resolve_control, source_ids, AttentionRecord, ControlConfig,
    GenerationOutput, Mode, PreparedExample, WeightSpec,
};
pub use transformer::{CrossOverride, DecodeOut, EncoderState, Model};
