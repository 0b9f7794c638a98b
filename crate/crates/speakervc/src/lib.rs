//! SpeakerVC: zero-shot voice conversion for voiced and whispered speech
//! at desk scale.
//!
//! The pipeline turns source audio into speaker-stripped soft content
//! units, conditions a recurrent mel decoder on a target speaker's
//! embedding (and, for the SpeakerVC variant, an acoustic style vector),
//! and inverts the predicted mel back to audio. Training supports a
//! final stage that adds a cosine speaker loss computed through a frozen
//! mel adaptor and speaker encoder. A chunked streaming runtime and a
//! verification-style evaluation toolkit (trial protocols, EER, DET,
//! speaker similarity) round out the system.
//!
//! Everything runs on a synthetic multi-speaker corpus with known
//! ground-truth identity, so speaker-similarity claims are testable
//! end to end. See the `examples/` directory for one runnable example
//! per capability, or the `speakervc` binary for the CLI.

pub mod adaptor;
pub mod audio;
pub mod data;
pub mod decoder;
pub mod nn;
pub mod speaker;
pub mod stream;
pub mod units;
pub mod error;
pub mod eval;
pub mod testsig;

pub use audio::{MelConfig, MelSpectrogram, Waveform};
pub use error::{Error, Result};
