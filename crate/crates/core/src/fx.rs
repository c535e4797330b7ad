//! Classic effects used for corpus augmentation, plus the post-chain
//! (parametric filter, LFO tremolo, gate envelope) applied to generated audio.
//!
//! Gains given in dB are applied as plain linear factors. Effect renders do
//! not validate against the augmentation ranges so tests can drive them with
//! out-of-range settings (e.g. a wet gain of `-inf` dB); the sampler never
//! produces such values.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::{peak_normalize, AudioBuffer, CANONICAL_RATE};
use crate::dsp::{
    db_to_gain, Biquad, BiquadCoeffs, DelayLine, OnePoleHighpass, OnePoleLowpass,
};
use crate::error::{Error, Result};

/// Parameter ranges of the augmentation table, inclusive.
pub mod ranges {
    pub type Range = (f64, f64);

    pub const CHORUS_LENGTH_MS: Range = (0.0, 200.0);
    pub const CHORUS_VOICES: (u32, u32) = (0, 8);
    pub const CHORUS_WET_DB: Range = (30.0, 42.0);
    pub const CHORUS_DRY_DB: Range = (30.0, 42.0);
    pub const CHORUS_RATE_HZ: Range = (0.0, 16.0);
    pub const CHORUS_PITCH_SHIFT: Range = (0.0, 1.0);

    pub const DISTORTION_GAIN_DB: Range = (10.0, 40.0);
    pub const DISTORTION_HARDNESS: Range = (1.0, 10.0);

    pub const EQ_GAIN_DB: [Range; 3] = [(-5.0, 1.0), (-5.0, 5.0), (-5.0, 5.0)];
    pub const EQ_BANDWIDTH_OCT: Range = (0.1, 4.0);
    pub const EQ_CENTERS_HZ: [f64; 3] = [200.0, 1000.0, 5000.0];

    pub const REVERB_WET_DB: Range = (0.0, 3.0);
    pub const REVERB_DRY_DB: Range = (0.0, 3.0);
    pub const REVERB_ROOM: Range = (30.0, 90.0);
    pub const REVERB_DAMPING: Range = (0.0, 100.0);
    pub const REVERB_LOWPASS_HZ: Range = (0.0, 10_000.0);
    pub const REVERB_HIGHPASS_HZ: Range = (10_000.0, 20_000.0);

    pub const FLANGER_LENGTH_MS: Range = (0.0, 200.0);
    pub const FLANGER_FEEDBACK_DB: Range = (-120.0, 6.0);
    pub const FLANGER_WET_DB: Range = (-30.0, 12.0);
    pub const FLANGER_DRY_DB: Range = (-30.0, 12.0);
    pub const FLANGER_RATE_HZ: Range = (0.0, 100.0);

    pub fn contains(r: Range, v: f64) -> bool {
        v >= r.0 && v <= r.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Chorus,
    Distortion,
    Eq3,
    Reverb,
    Flanger,
}

impl EffectKind {
    pub const ALL: [EffectKind; 5] = [
        EffectKind::Chorus,
        EffectKind::Distortion,
        EffectKind::Eq3,
        EffectKind::Reverb,
        EffectKind::Flanger,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chorus {
    pub length_ms: f64,
    pub voices: u32,
    pub wet_db: f64,
    pub dry_db: f64,
    pub rate_hz: f64,
    /// Per-voice LFO detune depth in semitones.
    pub pitch_shift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    pub gain_db: f64,
    pub hardness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eq3 {
    pub gain_db: [f64; 3],
    pub bandwidth_oct: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reverb {
    pub wet_db: f64,
    pub dry_db: f64,
    pub room: f64,
    pub damping: f64,
    pub lowpass_hz: f64,
    pub highpass_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flanger {
    pub length_ms: f64,
    pub feedback_db: f64,
    pub wet_db: f64,
    pub dry_db: f64,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum EffectParams {
    Chorus(Chorus),
    Distortion(Distortion),
    Eq3(Eq3),
    Reverb(Reverb),
    Flanger(Flanger),
}

impl EffectParams {
    pub fn kind(&self) -> EffectKind {
        match self {
            EffectParams::Chorus(_) => EffectKind::Chorus,
            EffectParams::Distortion(_) => EffectKind::Distortion,
            EffectParams::Eq3(_) => EffectKind::Eq3,
            EffectParams::Reverb(_) => EffectKind::Reverb,
            EffectParams::Flanger(_) => EffectKind::Flanger,
        }
    }

    /// Whether every field lies inside the augmentation table ranges.
    pub fn in_table_ranges(&self) -> bool {
        use ranges::*;
        match self {
            EffectParams::Chorus(p) => {
                contains(CHORUS_LENGTH_MS, p.length_ms)
                    && p.voices >= CHORUS_VOICES.0
                    && p.voices <= CHORUS_VOICES.1
                    && contains(CHORUS_WET_DB, p.wet_db)
                    && contains(CHORUS_DRY_DB, p.dry_db)
                    && contains(CHORUS_RATE_HZ, p.rate_hz)
                    && contains(CHORUS_PITCH_SHIFT, p.pitch_shift)
            }
            EffectParams::Distortion(p) => {
                contains(DISTORTION_GAIN_DB, p.gain_db)
                    && contains(DISTORTION_HARDNESS, p.hardness)
            }
            EffectParams::Eq3(p) => (0..3).all(|i| {
                contains(EQ_GAIN_DB[i], p.gain_db[i]) && contains(EQ_BANDWIDTH_OCT, p.bandwidth_oct[i])
            }),
            EffectParams::Reverb(p) => {
                contains(REVERB_WET_DB, p.wet_db)
                    && contains(REVERB_DRY_DB, p.dry_db)
                    && contains(REVERB_ROOM, p.room)
                    && contains(REVERB_DAMPING, p.damping)
                    && contains(REVERB_LOWPASS_HZ, p.lowpass_hz)
                    && contains(REVERB_HIGHPASS_HZ, p.highpass_hz)
            }
            EffectParams::Flanger(p) => {
                contains(FLANGER_LENGTH_MS, p.length_ms)
                    && contains(FLANGER_FEEDBACK_DB, p.feedback_db)
                    && contains(FLANGER_WET_DB, p.wet_db)
                    && contains(FLANGER_DRY_DB, p.dry_db)
                    && contains(FLANGER_RATE_HZ, p.rate_hz)
            }
        }
    }

    pub fn apply(&self, buf: &AudioBuffer) -> AudioBuffer {
        match self {
            EffectParams::Chorus(p) => apply_chorus(buf, p),
            EffectParams::Distortion(p) => apply_distortion(buf, p),
            EffectParams::Eq3(p) => apply_eq3(buf, p),
            EffectParams::Reverb(p) => apply_reverb(buf, p),
            EffectParams::Flanger(p) => apply_flanger(buf, p),
        }
    }
}

fn ms_to_samples(ms: f64, sr: f64) -> f64 {
    ms.max(0.0) * 1e-3 * sr
}

pub fn apply_chorus(buf: &AudioBuffer, p: &Chorus) -> AudioBuffer {
    let sr = buf.sample_rate as f64;
    let dry = db_to_gain(p.dry_db);
    let wet = db_to_gain(p.wet_db);
    if p.voices == 0 {
        return buf.scaled(dry);
    }
    let length = ms_to_samples(p.length_ms, sr);
    let center = 0.5 * length;
    let depth = 0.5 * length;
    let voices = p.voices as usize;
    let lfos: Vec<(f64, f64)> = (0..voices)
        .map(|i| {
            let spread = if voices == 1 {
                0.0
            } else {
                2.0 * i as f64 / (voices - 1) as f64 - 1.0
            };
            let rate = p.rate_hz * 2f64.powf(p.pitch_shift * spread / 12.0);
            let phase = 2.0 * PI * i as f64 / voices as f64;
            (rate, phase)
        })
        .collect();

    let mut line = DelayLine::new(length.ceil() as usize + 1);
    let mut out = Vec::with_capacity(buf.len());
    for (n, &x) in buf.samples.iter().enumerate() {
        line.write(x);
        let t = n as f64 / sr;
        let mut acc = 0.0;
        for &(rate, phase) in &lfos {
            let d = center + depth * (2.0 * PI * rate * t + phase).sin();
            acc += line.read(d);
        }
        out.push(dry * x + wet * acc);
    }
    AudioBuffer::new(out, buf.sample_rate)
}

/// `tanh(h g x) / tanh(h)`, clipped to [-1, 1] (the ratio overshoots 1 once `|g x| > 1`).
pub fn apply_distortion(buf: &AudioBuffer, p: &Distortion) -> AudioBuffer {
    let g = db_to_gain(p.gain_db);
    let h = p.hardness;
    let norm = h.tanh();
    AudioBuffer::new(
        buf.samples
            .iter()
            .map(|&x| ((h * g * x).tanh() / norm).clamp(-1.0, 1.0))
            .collect(),
        buf.sample_rate,
    )
}

pub fn apply_eq3(buf: &AudioBuffer, p: &Eq3) -> AudioBuffer {
    let sr = buf.sample_rate as f64;
    let mut stages: Vec<Biquad> = (0..3)
        .map(|i| {
            Biquad::new(BiquadCoeffs::peaking_bw(
                sr,
                ranges::EQ_CENTERS_HZ[i],
                p.gain_db[i],
                p.bandwidth_oct[i],
            ))
        })
        .collect();
    let out = buf
        .samples
        .iter()
        .map(|&x| stages.iter_mut().fold(x, |acc, s| s.process(acc)))
        .collect();
    AudioBuffer::new(out, buf.sample_rate)
}

mod freeverb {
    pub const COMB_SIZES: [usize; 8] = [1116, 1188, 1277, 1356, 1422, 1491, 1557, 1617];
    pub const ALLPASS_SIZES: [usize; 4] = [556, 441, 341, 225];
    pub const ALLPASS_FEEDBACK: f64 = 0.5;
    pub const INPUT_GAIN: f64 = 0.015;
    pub const WET_SCALE: f64 = 3.0;
    pub const FEEDBACK_MIN: f64 = 0.70;
    pub const FEEDBACK_MAX: f64 = 0.98;
}

struct Comb {
    buf: Vec<f64>,
    idx: usize,
    feedback: f64,
    damp: f64,
    store: f64,
}

impl Comb {
    fn process(&mut self, x: f64) -> f64 {
        let out = self.buf[self.idx];
        self.store = out * (1.0 - self.damp) + self.store * self.damp;
        self.buf[self.idx] = x + self.store * self.feedback;
        self.idx = (self.idx + 1) % self.buf.len();
        out
    }
}

struct Allpass {
    buf: Vec<f64>,
    idx: usize,
}

impl Allpass {
    fn process(&mut self, x: f64) -> f64 {
        let delayed = self.buf[self.idx];
        self.buf[self.idx] = x + delayed * freeverb::ALLPASS_FEEDBACK;
        self.idx = (self.idx + 1) % self.buf.len();
        delayed - x
    }
}

/// Absolute level below which the reverb tail is cut (-80 dBFS).
const TAIL_FLOOR: f64 = 1e-4;
const TAIL_MAX_SECONDS: f64 = 30.0;
const TAIL_BLOCK: usize = 1024;


/// Comb feedback for a room setting (30..90 maps linearly onto 0.70..0.98).
pub fn reverb_comb_feedback(room: f64) -> f64 {
    let r = ((room - ranges::REVERB_ROOM.0) / (ranges::REVERB_ROOM.1 - ranges::REVERB_ROOM.0))
        .clamp(0.0, 1.0);
    freeverb::FEEDBACK_MIN + r * (freeverb::FEEDBACK_MAX - freeverb::FEEDBACK_MIN)
}

pub fn apply_reverb(buf: &AudioBuffer, p: &Reverb) -> AudioBuffer {
    let sr = buf.sample_rate as f64;
    let scale = sr / 44_100.0;
    let dry = db_to_gain(p.dry_db);
    let wet = db_to_gain(p.wet_db);
    let feedback = reverb_comb_feedback(p.room);
    let damp = (p.damping / 100.0).clamp(0.0, 1.0);
    let mut combs: Vec<Comb> = freeverb::COMB_SIZES
        .iter()
        .map(|&s| Comb {
            buf: vec![0.0; ((s as f64 * scale).round() as usize).max(1)],
            idx: 0,
            feedback,
            damp,
            store: 0.0,
        })
        .collect();
    let mut allpasses: Vec<Allpass> = freeverb::ALLPASS_SIZES
        .iter()
        .map(|&s| Allpass {
            buf: vec![0.0; ((s as f64 * scale).round() as usize).max(1)],
            idx: 0,
        })
        .collect();
    let mut lowpass = OnePoleLowpass::new(sr, p.lowpass_hz);
    let mut highpass = OnePoleHighpass::new(sr, p.highpass_hz);

    let mut tick = |x: f64| -> f64 {
        let input = x * freeverb::INPUT_GAIN;
        let mut acc: f64 = combs.iter_mut().map(|c| c.process(input)).sum();
        for a in allpasses.iter_mut() {
            acc = a.process(acc);
        }
        highpass.process(lowpass.process(acc)) * freeverb::WET_SCALE
    };

    let mut out: Vec<f64> = buf
        .samples
        .iter()
        .map(|&x| dry * x + wet * tick(x))
        .collect();

    if wet != 0.0 {
        // Keep rendering until the output has stayed under the floor for
        // longer than the longest recirculation path, then cut after the
        // last sample above it.
        let quiet_needed = ((freeverb::COMB_SIZES[7] + freeverb::ALLPASS_SIZES.iter().sum::<usize>()) as f64
            * scale) as usize
            + TAIL_BLOCK;
        let max_tail = (TAIL_MAX_SECONDS * sr) as usize;
        let mut tail = Vec::new();
        let mut last_loud = 0;
        let mut quiet = 0;
        while tail.len() < max_tail && quiet < quiet_needed {
            let v = wet * tick(0.0);
            tail.push(v);
            if v.abs() >= TAIL_FLOOR {
                last_loud = tail.len();
                quiet = 0;
            } else {
                quiet += 1;
            }
        }
        out.extend_from_slice(&tail[..last_loud]);
    }
    AudioBuffer::new(out, buf.sample_rate)
}

/// Largest linear feedback the flanger will use.
pub const FLANGER_MAX_FEEDBACK: f64 = 0.99;

pub fn apply_flanger(buf: &AudioBuffer, p: &Flanger) -> AudioBuffer {
    let sr = buf.sample_rate as f64;
    let dry = db_to_gain(p.dry_db);
    let wet = db_to_gain(p.wet_db);
    let fb = db_to_gain(p.feedback_db).min(FLANGER_MAX_FEEDBACK);
    let length = ms_to_samples(p.length_ms, sr);
    let mut line = DelayLine::new(length.ceil() as usize + 2);
    let mut out = Vec::with_capacity(buf.len());
    for (n, &x) in buf.samples.iter().enumerate() {
        let t = n as f64 / sr;
        let sweep = 0.5 * (1.0 + (2.0 * PI * p.rate_hz * t).sin());
        // At least one sample of delay so the feedback loop stays causal.
        let d = (length * sweep).max(1.0);
        let delayed = line.read(d - 1.0);
        line.write(x + fb * delayed);
        out.push(dry * x + wet * delayed);
    }
    AudioBuffer::new(out, buf.sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamFilter {
    pub center_hz: f64,
    pub q: f64,
    pub gain_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lfo {
    pub rate_hz: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub attack_ms: f64,
    pub hold_ms: f64,
    pub release_ms: f64,
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostChainParams {
    pub filter: ParamFilter,
    pub lfo: Lfo,
    pub gate: Gate,
}

impl Default for PostChainParams {
    fn default() -> Self {
        Self {
            filter: ParamFilter {
                center_hz: 1000.0,
                q: 0.707,
                gain_db: 0.0,
            },
            lfo: Lfo {
                rate_hz: 1.0,
                depth: 0.0,
            },
            gate: Gate {
                attack_ms: 5.0,
                hold_ms: 100.0,
                release_ms: 200.0,
                enabled: false,
            },
        }
    }
}

impl PostChainParams {
    pub fn validate(&self) -> Result<()> {
        let f = &self.filter;
        if !(f.q > 0.0) || !f.center_hz.is_finite() || !(f.center_hz > 0.0) || !f.gain_db.is_finite() {
            return Err(Error::param("filter", "q and center_hz must be positive, gain finite"));
        }
        if !(0.0..=1.0).contains(&self.lfo.depth) || !self.lfo.rate_hz.is_finite() || self.lfo.rate_hz < 0.0 {
            return Err(Error::param("lfo", "depth must be in [0, 1] and rate non-negative"));
        }
        let g = &self.gate;
        if !(g.attack_ms >= 0.0 && g.hold_ms >= 0.0 && g.release_ms >= 0.0) {
            return Err(Error::param("gate", "times must be non-negative"));
        }
        Ok(())
    }

    /// Filter, then tremolo, then gate.
    pub fn apply(&self, buf: &AudioBuffer) -> AudioBuffer {
        let y = apply_param_filter(buf, &self.filter);
        let y = apply_lfo_am(&y, &self.lfo);
        apply_gate_env(&y, &self.gate)
    }
}

pub fn apply_param_filter(buf: &AudioBuffer, p: &ParamFilter) -> AudioBuffer {
    if p.gain_db == 0.0 {
        return buf.clone();
    }
    let sr = buf.sample_rate as f64;
    let center = p.center_hz.min(0.49 * sr);
    let mut bq = Biquad::new(BiquadCoeffs::peaking_q(sr, center, p.gain_db, p.q));
    AudioBuffer::new(
        buf.samples.iter().map(|&x| bq.process(x)).collect(),
        buf.sample_rate,
    )
}

/// Gain of the tremolo at time `t` seconds.
pub fn lfo_gain(p: &Lfo, t: f64) -> f64 {
    1.0 - p.depth * 0.5 * (1.0 + (2.0 * PI * p.rate_hz * t).sin())
}

pub fn apply_lfo_am(buf: &AudioBuffer, p: &Lfo) -> AudioBuffer {
    if p.depth == 0.0 {
        return buf.clone();
    }
    let sr = buf.sample_rate as f64;
    AudioBuffer::new(
        buf.samples
            .iter()
            .enumerate()
            .map(|(n, &x)| x * lfo_gain(p, n as f64 / sr))
            .collect(),
        buf.sample_rate,
    )
}

/// Attack/hold/release envelope value at time `t` seconds.
pub fn gate_gain(p: &Gate, t: f64) -> f64 {
    let a = p.attack_ms * 1e-3;
    let h = p.hold_ms * 1e-3;
    let r = p.release_ms * 1e-3;
    if t < a {
        t / a
    } else if t < a + h {
        1.0
    } else if t < a + h + r {
        1.0 - (t - a - h) / r
    } else {
        0.0
    }
}

pub fn apply_gate_env(buf: &AudioBuffer, p: &Gate) -> AudioBuffer {
    if !p.enabled {
        return buf.clone();
    }
    let sr = buf.sample_rate as f64;
    AudioBuffer::new(
        buf.samples
            .iter()
            .enumerate()
            .map(|(n, &x)| x * gate_gain(p, n as f64 / sr))
            .collect(),
        buf.sample_rate,
    )
}

fn draw(rng: &mut ChaCha8Rng, r: ranges::Range) -> f64 {
    rng.random_range(r.0..=r.1)
}

/// Draw every parameter of one effect uniformly over its table range.
pub fn sample_effect_params(rng_seed: u64, kind: EffectKind) -> EffectParams {
    use ranges::*;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    match kind {
        EffectKind::Chorus => EffectParams::Chorus(Chorus {
            length_ms: draw(&mut rng, CHORUS_LENGTH_MS),
            voices: rng.random_range(CHORUS_VOICES.0..=CHORUS_VOICES.1),
            wet_db: draw(&mut rng, CHORUS_WET_DB),
            dry_db: draw(&mut rng, CHORUS_DRY_DB),
            rate_hz: draw(&mut rng, CHORUS_RATE_HZ),
            pitch_shift: draw(&mut rng, CHORUS_PITCH_SHIFT),
        }),
        EffectKind::Distortion => EffectParams::Distortion(Distortion {
            gain_db: draw(&mut rng, DISTORTION_GAIN_DB),
            hardness: draw(&mut rng, DISTORTION_HARDNESS),
        }),
        EffectKind::Eq3 => {
            let gain_db = [
                draw(&mut rng, EQ_GAIN_DB[0]),
                draw(&mut rng, EQ_GAIN_DB[1]),
                draw(&mut rng, EQ_GAIN_DB[2]),
            ];
            let bandwidth_oct = [
                draw(&mut rng, EQ_BANDWIDTH_OCT),
                draw(&mut rng, EQ_BANDWIDTH_OCT),
                draw(&mut rng, EQ_BANDWIDTH_OCT),
            ];
            EffectParams::Eq3(Eq3 {
                gain_db,
                bandwidth_oct,
            })
        }
        EffectKind::Reverb => EffectParams::Reverb(Reverb {
            wet_db: draw(&mut rng, REVERB_WET_DB),
            dry_db: draw(&mut rng, REVERB_DRY_DB),
            room: draw(&mut rng, REVERB_ROOM),
            damping: draw(&mut rng, REVERB_DAMPING),
            lowpass_hz: draw(&mut rng, REVERB_LOWPASS_HZ),
            highpass_hz: draw(&mut rng, REVERB_HIGHPASS_HZ),
        }),
        EffectKind::Flanger => EffectParams::Flanger(Flanger {
            length_ms: draw(&mut rng, FLANGER_LENGTH_MS),
            feedback_db: draw(&mut rng, FLANGER_FEEDBACK_DB),
            wet_db: draw(&mut rng, FLANGER_WET_DB),
            dry_db: draw(&mut rng, FLANGER_DRY_DB),
            rate_hz: draw(&mut rng, FLANGER_RATE_HZ),
        }),
    }
}

/// Provenance of one augmented variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub source_id: String,
    pub segment_index: usize,
    pub effect: EffectParams,
    pub rng_seed: u64,
}

/// A segment to augment, identified by its source.
#[derive(Debug, Clone)]
pub struct SourceSegment {
    pub source_id: String,
    pub segment_index: usize,
    pub audio: AudioBuffer,
}

/// Render one randomized variant per segment, cycling through the five
/// effect kinds. Originals are not modified; callers keep them alongside
/// the returned variants.
pub fn augment_corpus(
    segments: &[SourceSegment],
    seed: u64,
) -> Result<(Vec<AudioBuffer>, Vec<AugmentationRecord>)> {
    if segments.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if let Some(s) = segments.iter().find(|s| s.audio.sample_rate != CANONICAL_RATE) {
        return Err(Error::param(
            "segments",
            format!(
                "segment {} of {} is at {} Hz, expected {CANONICAL_RATE}",
                s.segment_index, s.source_id, s.audio.sample_rate
            ),
        ));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut variants = Vec::with_capacity(segments.len());
    let mut records = Vec::with_capacity(segments.len());
    for (i, seg) in segments.iter().enumerate() {
        let rng_seed = seeds.next_u64();
        let kind = EffectKind::ALL[i % EffectKind::ALL.len()];
        let effect = sample_effect_params(rng_seed, kind);
        variants.push(peak_normalize(&effect.apply(&seg.audio)));
        records.push(AugmentationRecord {
            source_id: seg.source_id.clone(),
            segment_index: seg.segment_index,
            effect,
            rng_seed,
        });
    }
    Ok((variants, records))
}
