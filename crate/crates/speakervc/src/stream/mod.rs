//! Chunk-wise streaming conversion. Each emitted block is recomputed from
//! a bounded window: at most `past_context_s` of history and a fixed
//! analysis lookahead paid out of the `total_delay_s` budget. Because a
//! block's output depends only on absolute sample positions, any chunk
//! partition of the input yields byte-identical output, and blocks whose
//! window reaches back to the signal start match offline conversion
//! exactly.

use std::time::Instant;

use serde::Serialize;

use crate::audio::{invert_mel, MelSpectrogram, Waveform};
use crate::decoder::VcSystem;
use crate::error::{Error, Result};
use crate::speaker::SpeakerEmbedding;

/// Streaming budget. `frontend_share` is the fraction of the delay budget
/// reserved for analysis lookahead (the recurrent decoder itself is
/// causal and consumes none).
#[derive(Debug, Clone, Serialize)]
pub struct StreamConfig {
    pub chunk_s: f64,
    pub total_delay_s: f64,
    pub past_context_s: f64,
    pub frontend_share: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            chunk_s: 0.2,
            total_delay_s: 0.8,
            past_context_s: 2.0,
            frontend_share: 0.5,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self, sample_rate_hz: u32, hop: usize) -> Result<()> {
        if self.chunk_s <= 0.0 || self.total_delay_s <= 0.0 || self.past_context_s < 0.0 {
            return Err(Error::Config("stream times must be positive".into()));
        }
        if self.chunk_s > self.total_delay_s {
            return Err(Error::Config(format!(
                "chunk_s {} must not exceed total_delay_s {}",
                self.chunk_s, self.total_delay_s
            )));
        }
        if !(0.0..=1.0).contains(&self.frontend_share) {
            return Err(Error::Config("frontend_share must be in [0, 1]".into()));
        }
        let sr = sample_rate_hz as f64;
        let chunk = (self.chunk_s * sr).round() as usize;
        let past = (self.past_context_s * sr).round() as usize;
        if chunk == 0 || chunk % hop != 0 {
            return Err(Error::Config(format!(
                "chunk ({chunk} samples) must be a positive multiple of the hop ({hop})"
            )));
        }
        if past % hop != 0 {
            return Err(Error::Config(format!(
                "past context ({past} samples) must be a multiple of the hop ({hop})"
            )));
        }
        Ok(())
    }

    pub fn chunk_samples(&self, sr: u32) -> usize {
        (self.chunk_s * sr as f64).round() as usize
    }

    pub fn delay_samples(&self, sr: u32) -> usize {
        (self.total_delay_s * sr as f64).round() as usize
    }

    pub fn past_samples(&self, sr: u32) -> usize {
        (self.past_context_s * sr as f64).round() as usize
    }
}

/// One accounting entry per pushed chunk.
#[derive(Debug, Clone, Serialize)]
pub struct ChunkLog {
    pub chunk_index: usize,
    pub samples_in: usize,
    pub samples_out: usize,
    pub cumulative_input_samples: usize,
    pub cumulative_compute_s: f64,
}

/// Receptive-field trace of one emitted block.
#[derive(Debug, Clone, Serialize)]
pub struct BlockTrace {
    pub block: usize,
    pub first_frame: usize,
    pub frames: usize,
    pub window_start: usize,
    pub window_end: usize,
}

/// Stateful chunk-wise converter. One per stream; not for concurrent use.
pub struct StreamConverter<'a> {
    sys: &'a VcSystem,
    spk: Option<SpeakerEmbedding>,
    style: Option<crate::decoder::StyleVector>,
    sr: u32,
    hop: usize,
    chunk_samples: usize,
    delay_samples: usize,
    past_samples: usize,
    lookahead: usize,
    buffer: Vec<f32>,
    buffer_start: usize,
    arrived: usize,
    next_block: usize,
    finished: bool,
    chunk_index: usize,
    compute_s: f64,
    accounting: Vec<ChunkLog>,
    traces: Vec<BlockTrace>,
    emitted_mel: Vec<f32>,
    emitted_frames: usize,
}

impl<'a> StreamConverter<'a> {
    /// The reference (enrollment audio) is available before streaming
    /// begins; its embedding and style are computed once.
    pub fn new(sys: &'a VcSystem, cfg: &StreamConfig, reference: &Waveform) -> Result<Self> {
        let mel_cfg = &sys.decoder.cfg.mel;
        let sr = mel_cfg.sample_rate_hz;
        let hop = mel_cfg.hop_length;
        cfg.validate(sr, hop)?;
        // per-frame analysis lookahead: half the STFT window, delta
        // context and the pitch median radius
        let lookahead = mel_cfg.n_fft / 2 + 8 * hop;
        let budget = (cfg.total_delay_s * cfg.frontend_share * sr as f64) as usize;
        if lookahead > budget {
            return Err(Error::Config(format!(
                "frontend lookahead needs {lookahead} samples but the delay share grants {budget}"
            )));
        }
        let (spk, style) = sys.reference_conditioning(reference)?;
        Ok(StreamConverter {
            sys,
            spk,
            style,
            sr,
            hop,
            chunk_samples: cfg.chunk_samples(sr),
            delay_samples: cfg.delay_samples(sr),
            past_samples: cfg.past_samples(sr),
            lookahead,
            buffer: Vec::new(),
            buffer_start: 0,
            arrived: 0,
            next_block: 0,
            finished: false,
            chunk_index: 0,
            compute_s: 0.0,
            accounting: Vec::new(),
            traces: Vec::new(),
            emitted_mel: Vec::new(),
            emitted_frames: 0,
        })
    }

    /// Push the next chunk; `start_sample` must equal the number of
    /// samples already pushed.
    pub fn push_at(&mut self, start_sample: usize, chunk: &Waveform) -> Result<Vec<Waveform>> {
        if self.finished {
            return Err(Error::Stream("stream already finished".into()));
        }
        if chunk.sample_rate_hz() != self.sr {
            return Err(Error::Stream(format!(
                "sample rate changed mid-stream: {} -> {}",
                self.sr,
                chunk.sample_rate_hz()
            )));
        }
        if start_sample != self.arrived {
            return Err(Error::Stream(format!(
                "out-of-order or overlapping chunk: expected start {}, got {start_sample}",
                self.arrived
            )));
        }
        let t0 = Instant::now();
        self.buffer.extend_from_slice(chunk.samples());
        self.arrived += chunk.len();
        let mut out = Vec::new();
        let mut samples_out = 0usize;
        while self.gate_open() {
            let piece = self.emit_block(None)?;
            samples_out += piece.len();
            out.push(piece);
        }
        self.compute_s += t0.elapsed().as_secs_f64();
        self.accounting.push(ChunkLog {
            chunk_index: self.chunk_index,
            samples_in: chunk.len(),
            samples_out,
            cumulative_input_samples: self.arrived,
            cumulative_compute_s: self.compute_s,
        });
        self.chunk_index += 1;
        Ok(out)
    }

    /// Push the next chunk in order.
    pub fn push(&mut self, chunk: &Waveform) -> Result<Vec<Waveform>> {
        self.push_at(self.arrived, chunk)
    }

    /// End of stream: emit everything that remains.
    pub fn finish(&mut self) -> Result<Vec<Waveform>> {
        if self.finished {
            return Err(Error::Stream("stream already finished".into()));
        }
        self.finished = true;
        let t0 = Instant::now();
        let total_frames = self.arrived.div_ceil(self.hop);
        let mut out = Vec::new();
        let mut samples_out = 0usize;
        while self.next_block * self.chunk_samples / self.hop < total_frames {
            let piece = self.emit_block(Some(total_frames))?;
            samples_out += piece.len();
            out.push(piece);
        }
        self.compute_s += t0.elapsed().as_secs_f64();
        self.accounting.push(ChunkLog {
            chunk_index: self.chunk_index,
            samples_in: 0,
            samples_out,
            cumulative_input_samples: self.arrived,
            cumulative_compute_s: self.compute_s,
        });
        Ok(out)
    }

    fn gate_open(&self) -> bool {
        self.arrived >= (self.next_block + 1) * self.chunk_samples + self.delay_samples
    }

    fn emit_block(&mut self, total_frames: Option<usize>) -> Result<Waveform> {
        let frames_per_block = self.chunk_samples / self.hop;
        let f0 = self.next_block * frames_per_block;
        let f1 = match total_frames {
            Some(total) => ((self.next_block + 1) * frames_per_block).min(total),
            None => (self.next_block + 1) * frames_per_block,
        };
        let window_start = (f0 * self.hop).saturating_sub(self.past_samples);
        let window_end = (f1 * self.hop + self.lookahead).min(self.arrived);
        debug_assert!(window_start % self.hop == 0);
        debug_assert!(window_start >= self.buffer_start);

        let lo = window_start - self.buffer_start;
        let hi = window_end - self.buffer_start;
        let window = Waveform::new(self.buffer[lo..hi].to_vec(), self.sr)?;
        let units = self.sys.source_units(&window)?;
        let mel = self
            .sys
            .convert_units(&units, self.spk.as_ref(), self.style.as_ref())?;
        let wstart_frame = window_start / self.hop;
        let take0 = f0 - wstart_frame;
        let take1 = (f1 - wstart_frame).min(mel.n_frames());
        let block_mel = mel.slice_frames(take0, take1);
        self.emitted_mel.extend_from_slice(block_mel.values());
        self.emitted_frames += block_mel.n_frames();
        self.traces.push(BlockTrace {
            block: self.next_block,
            first_frame: f0,
            frames: block_mel.n_frames(),
            window_start,
            window_end,
        });
        let piece = invert_mel(&block_mel, self.sys.gl_iterations.max(1))?;
        self.next_block += 1;

        // drop history the next block can no longer read
        let keep_from = (self.next_block * frames_per_block * self.hop)
            .saturating_sub(self.past_samples);
        if keep_from > self.buffer_start {
            self.buffer.drain(..keep_from - self.buffer_start);
            self.buffer_start = keep_from;
        }
        Ok(piece)
    }

    pub fn accounting(&self) -> &[ChunkLog] {
        &self.accounting
    }

    pub fn traces(&self) -> &[BlockTrace] {
        &self.traces
    }

    /// Concatenated emitted mel frames (pre-inversion), for parity checks.
    pub fn emitted_mel(&self) -> Result<MelSpectrogram> {
        MelSpectrogram::from_values(
            self.emitted_mel.clone(),
            self.emitted_frames,
            self.sys.decoder.cfg.mel.clone(),
        )
    }

    pub fn total_compute_s(&self) -> f64 {
        self.compute_s
    }
}

/// Convert an ordered sequence of chunks; returns the concatenated output
/// with the accounting log and block traces.
pub fn stream_convert(
    sys: &VcSystem,
    chunks: &[Waveform],
    reference: &Waveform,
    cfg: &StreamConfig,
) -> Result<(Waveform, Vec<ChunkLog>, Vec<BlockTrace>)> {
    let mut conv = StreamConverter::new(sys, cfg, reference)?;
    let mut out: Vec<f32> = Vec::new();
    let mut sr = None;
    for chunk in chunks {
        sr.get_or_insert(chunk.sample_rate_hz());
        for piece in conv.push(chunk)? {
            out.extend_from_slice(piece.samples());
        }
    }
    for piece in conv.finish()? {
        out.extend_from_slice(piece.samples());
    }
    let sr = sr.unwrap_or(sys.decoder.cfg.mel.sample_rate_hz);
    Ok((
        Waveform::new(out, sr)?,
        conv.accounting().to_vec(),
        conv.traces().to_vec(),
    ))
}

/// Real-time factor: compute seconds per second of audio.
pub fn measure_rtf(total_audio_s: f64, total_compute_s: f64) -> Result<f64> {
    if total_audio_s <= 0.0 {
        return Err(Error::InvalidArgument(
            "audio duration must be positive".into(),
        ));
    }
    if total_compute_s < 0.0 {
        return Err(Error::InvalidArgument(
            "compute time must not be negative".into(),
        ));
    }
    Ok(total_compute_s / total_audio_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptor::MelAdaptorModel;
    use crate::audio::MelConfig;
    use crate::decoder::{convert_to_mel, DecoderConfig, DecoderModel, DecoderVariant};
    use crate::nn::Mat;
    use crate::speaker::SpeakerEncoderModel;
    use crate::testsig::voiced_vowel;
    use crate::units::{UnitCodebook, UnitProjection};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Randomly initialized system; the streaming contracts are
    /// structural and hold without training.
    fn untrained_system(k: usize) -> VcSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let dim = crate::units::FRONTEND_DIM;
        let centroids = Mat::from_vec(
            k,
            dim,
            (0..k * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let projection = UnitProjection {
            layer: crate::nn::Dense::seeded(k, dim, &mut rng),
        };
        VcSystem {
            codebook: UnitCodebook { centroids },
            projection,
            spk_encoder: SpeakerEncoderModel::seeded(2, 1),
            adaptor: MelAdaptorModel::seeded(MelConfig::decoder(), MelConfig::speaker(), 2),
            decoder: DecoderModel::seeded(DecoderConfig::new(DecoderVariant::FastSpeech, k), 3),
            gl_iterations: 2,
        }
    }

    fn chunks_of(w: &Waveform, size: usize) -> Vec<Waveform> {
        w.samples()
            .chunks(size)
            .map(|c| Waveform::new(c.to_vec(), w.sample_rate_hz()).unwrap())
            .collect()
    }

    #[test]
    fn empty_stream_is_empty() {
        let sys = untrained_system(8);
        let reference = voiced_vowel(220.0, 1.0, 24000, 1);
        let (out, log, traces) =
            stream_convert(&sys, &[], &reference, &StreamConfig::default()).unwrap();
        assert!(out.is_empty());
        assert_eq!(traces.len(), 0);
        assert_eq!(log.len(), 1); // the finish record
    }

    #[test]
    fn first_emission_matches_delay_plus_chunk_exactly() {
        let sys = untrained_system(8);
        let reference = voiced_vowel(220.0, 1.0, 24000, 1);
        let source = voiced_vowel(230.0, 3.0, 24000, 2);
        let cfg = StreamConfig::default();
        let mut conv = StreamConverter::new(&sys, &cfg, &reference).unwrap();
        let mut first_emit_at = None;
        for chunk in chunks_of(&source, cfg.chunk_samples(24000)) {
            let out = conv.push(&chunk).unwrap();
            if !out.is_empty() && first_emit_at.is_none() {
                first_emit_at = Some(conv.accounting().last().unwrap().cumulative_input_samples);
            }
        }
        // 24000 * (0.8 + 0.2) = 24000 input samples
        assert_eq!(first_emit_at, Some(24000));
    }

    #[test]
    fn output_is_invariant_to_chunk_partition() {
        let sys = untrained_system(8);
        let reference = voiced_vowel(220.0, 1.0, 24000, 1);
        let source = voiced_vowel(250.0, 2.7, 24000, 3);
        let cfg = StreamConfig::default();
        let (a, _, _) =
            stream_convert(&sys, &chunks_of(&source, 4800), &reference, &cfg).unwrap();
        let (b, _, _) =
            stream_convert(&sys, &chunks_of(&source, 3120), &reference, &cfg).unwrap();
        let (c, _, _) = stream_convert(&sys, &chunks_of(&source, 777), &reference, &cfg).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert_eq!(a.samples(), c.samples());
    }

    #[test]
    fn output_length_matches_input_within_one_hop() {
        let sys = untrained_system(8);
        let reference = voiced_vowel(220.0, 1.0, 24000, 1);
        let source = voiced_vowel(240.0, 2.33, 24000, 4);
        let cfg = StreamConfig::default();
        let (out, _, traces) =
            stream_convert(&sys, &chunks_of(&source, 4800), &reference, &cfg).unwrap();
        let expected = source.len().div_ceil(240) * 240;
        assert_eq!(out.len(), expected);
        assert!((out.len() as isize - source.len() as isize).unsigned_abs() < 240);
        // monotone emission: traces cover contiguous ascending frames
        let mut next = 0usize;
        for t in &traces {
            assert_eq!(t.first_frame, next);
            next += t.frames;
        }
    }

    #[test]
    fn no_block_reads_past_the_context_window() {
        let sys = untrained_system(8);
        let reference = voiced_vowel(220.0, 1.0, 24000, 1);
        let source = voiced_vowel(260.0, 6.0, 24000, 5);
        let cfg = StreamConfig::default();
        let (_, _, traces) =
            stream_convert(&sys, &chunks_of(&source, 4800), &reference, &cfg).unwrap();
        let past = cfg.past_samples(24000);
        for t in &traces {
            assert!(
                t.first_frame * 240 - t.window_start <= past,
                "block {} reads {} samples of history",
                t.block,
                t.first_frame * 240 - t.window_start
            );
        }
    }

    #[test]
    fn early_frames_match_offline_exactly() {
        let sys = untrained_system(8);
        let reference = voiced_vowel(220.0, 1.0, 24000, 1);
        let source = voiced_vowel(235.0, 5.0, 24000, 6);
        let cfg = StreamConfig::default();
        let (offline_mel, _) = convert_to_mel(&sys, &source, &reference).unwrap();
        let mut conv = StreamConverter::new(&sys, &cfg, &reference).unwrap();
        for chunk in chunks_of(&source, 4800) {
            conv.push(&chunk).unwrap();
        }
        conv.finish().unwrap();
        let streamed = conv.emitted_mel().unwrap();
        // frames whose full receptive field fits the 2 s past window
        let lookahead_frames = 11; // n_fft/2 + 8 hops, in frames, rounded up
        let parity_frames = (cfg.past_samples(24000) / 240) - lookahead_frames;
        for t in 0..parity_frames.min(streamed.n_frames()) {
            for (a, b) in offline_mel.frame(t).iter().zip(streamed.frame(t)) {
                assert!(
                    (a - b).abs() < 1e-4,
                    "frame {t} differs: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn error_paths() {
        let sys = untrained_system(8);
        let reference = voiced_vowel(220.0, 1.0, 24000, 1);
        let cfg = StreamConfig::default();
        let mut conv = StreamConverter::new(&sys, &cfg, &reference).unwrap();
        let chunk = Waveform::silence(4800, 24000);
        conv.push(&chunk).unwrap();
        // out of order
        assert!(conv.push_at(0, &chunk).is_err());
        // sample-rate change
        let bad = Waveform::silence(1600, 16000);
        assert!(conv.push(&bad).is_err());
        // bad configs
        let mut c = StreamConfig::default();
        c.chunk_s = 1.0; // chunk > delay
        assert!(c.validate(24000, 240).is_err());
        let mut c = StreamConfig::default();
        c.chunk_s = 0.2001; // not a hop multiple
        assert!(c.validate(24000, 240).is_err());
    }

    #[test]
    fn rtf_definition() {
        assert_eq!(measure_rtf(10.0, 0.5).unwrap(), 0.05);
        assert_eq!(measure_rtf(10.0, 10.0).unwrap(), 1.0);
        assert!(measure_rtf(0.0, 1.0).is_err());
    }
}
