//! Mel decoders and their staged training: a FastSpeech-style decoder
//! with recurrent blocks and pitch/energy predictors, and the SpeakerVC
//! decoder conditioned on an acoustic style encoder plus speaker
//! embedding, with a three-stage schedule whose final stage adds the
//! speaker loss.

pub mod convert;
mod model;
mod prosody;
mod style;
mod train;

pub use convert::{convert, convert_to_mel, VcSystem};
pub use model::{DecoderConfig, DecoderForward, DecoderModel, DecoderVariant, HIDDEN};
pub use prosody::{
    extract_prosody_targets, harmonic_template, prosody_features, ProsodyTargets,
    VOICED_THRESHOLD,
};
pub use style::{StyleEncoder, StyleVector, STYLE_DIM};
pub use train::{prepare_training_set, train_stage, EpochStats, TrainItem, TrainPlan, TrainingSet};
