//! Audio buffers and the WAV boundary.
//!
//! Everything inside the pipeline is mono `f64` at a single sample rate;
//! stereo material is averaged down on load.

use std::io::{Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavSpec};
use serde::{Deserialize, Serialize};

use crate::dsp::{bessel_i0, sinc};
use crate::error::{Error, Result};

/// Canonical working rate of the whole pipeline.
pub const CANONICAL_RATE: u32 = 44_100;

/// Mono sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(sample_rate > 0);
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.is_finite())
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Zero-pad (or truncate) to exactly `len` samples.
    pub fn with_len(mut self, len: usize) -> Self {
        self.samples.resize(len, 0.0);
        self
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadPolicy {
    ZeroPad,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub segment_seconds: f64,
    pub min_keep_seconds: f64,
    pub pad_policy: PadPolicy,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        Self {
            segment_seconds: 5.0,
            min_keep_seconds: 1.0,
            pad_policy: PadPolicy::ZeroPad,
        }
    }
}

impl SegmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment_seconds > 0.0) {
            return Err(Error::param("segment_seconds", "must be positive"));
        }
        if !(self.min_keep_seconds <= self.segment_seconds) {
            return Err(Error::param(
                "min_keep_seconds",
                "must not exceed segment_seconds",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    #[serde(rename = "16")]
    Pcm16,
    #[serde(rename = "f32")]
    Float32,
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_wav(std::io::BufReader::new(file))
}

/// Decode a WAV stream (file or in-memory payload).
pub fn read_wav<R: Read>(reader: R) -> Result<AudioBuffer> {
    let mut reader = hound::WavReader::new(reader).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels",
            spec.channels
        )));
    }
    if spec.sample_rate == 0 {
        return Err(Error::UnsupportedEncoding("sample rate 0".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!("{fmt:?} {bits}-bit")));
        }
    };
    let channels = spec.channels as usize;
    let samples: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect()
    };
    if samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::UnsupportedEncoding("non-finite samples".into()));
    }
    Ok(AudioBuffer::new(samples, spec.sample_rate))
}

pub fn save_wav(buf: &AudioBuffer, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_wav(buf, std::io::BufWriter::new(file), depth)
}

/// Encode a buffer as a WAV byte stream.
pub fn write_wav<W: Write + Seek>(buf: &AudioBuffer, writer: W, depth: BitDepth) -> Result<()> {
    if !buf.is_finite() {
        return Err(Error::param("samples", "non-finite sample"));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: match depth {
            BitDepth::Pcm16 => 16,
            BitDepth::Float32 => 32,
        },
        sample_format: match depth {
            BitDepth::Pcm16 => SampleFormat::Int,
            BitDepth::Float32 => SampleFormat::Float,
        },
    };
    let mut w = hound::WavWriter::new(writer, spec).map_err(wav_err)?;
    for &s in &buf.samples {
        match depth {
            BitDepth::Pcm16 => {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                w.write_sample(q).map_err(wav_err)?;
            }
            BitDepth::Float32 => w.write_sample(s as f32).map_err(wav_err)?,
        }
    }
    w.finalize().map_err(wav_err)
}

pub fn wav_bytes(buf: &AudioBuffer, depth: BitDepth) -> Result<Vec<u8>> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    write_wav(buf, &mut cursor, depth)?;
    Ok(cursor.into_inner())
}

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Wav(io.to_string()),
        hound::Error::Unsupported => Error::UnsupportedEncoding("unsupported wav layout".into()),
        other => Error::Wav(other.to_string()),
    }
}

/// Half-width of the interpolation kernel in input samples (64 taps total).
const RESAMPLE_HALF_TAPS: usize = 32;
const RESAMPLE_KAISER_BETA: f64 = 9.0;
/// Largest reduced output factor for which per-phase kernels are tabulated.
const MAX_TABLE_PHASES: u64 = 4096;

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::param("target_rate", "must be positive"));
    }
    if buf.sample_rate == target_rate {
        return Ok(buf.clone());
    }
    let src = buf.sample_rate as u64;
    let dst = target_rate as u64;
    let out_len = ((buf.len() as u128 * dst as u128 + src as u128 / 2) / src as u128) as usize;

    // Lowpass at the lower of the two Nyquist limits, a little inside it when decimating.
    let cutoff = if dst < src {
        0.97 * dst as f64 / src as f64
    } else {
        1.0
    };
    let half_width = (RESAMPLE_HALF_TAPS as f64 / cutoff).ceil() as i64;
    let kernel = |d: f64| -> f64 {
        let r = d / half_width as f64;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let w = bessel_i0(RESAMPLE_KAISER_BETA * (1.0 - r * r).sqrt()) / bessel_i0(RESAMPLE_KAISER_BETA);
        cutoff * sinc(cutoff * d) * w
    };

    let g = gcd(src, dst);
    let (up, down) = (dst / g, src / g);
    let x = &buf.samples;
    let n_in = x.len() as i64;
    let taps = 2 * half_width as usize + 1;

    // Output n sits at input position n * down / up; its phase is (n * down) mod up.
    let table: Option<Vec<Vec<f64>>> = (up <= MAX_TABLE_PHASES).then(|| {
        (0..up)
            .map(|phase| {
                let frac = phase as f64 / up as f64;
                (0..taps)
                    .map(|j| {
                        let k = j as i64 - half_width;
                        kernel(frac - k as f64)
                    })
                    .collect()
            })
            .collect()
    });

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let num = n * down;
        let base = (num / up) as i64;
        let phase = num % up;
        let mut acc = 0.0;
        match &table {
            Some(t) => {
                let row = &t[phase as usize];
                for (j, &h) in row.iter().enumerate() {
                    let idx = base + j as i64 - half_width;
                    if idx >= 0 && idx < n_in {
                        acc += x[idx as usize] * h;
                    }
                }
            }
            None => {
                let frac = phase as f64 / up as f64;
                for j in 0..taps {
                    let k = j as i64 - half_width;
                    let idx = base + k;
                    if idx >= 0 && idx < n_in {
                        acc += x[idx as usize] * kernel(frac - k as f64);
                    }
                }
            }
        }
        out.push(acc);
    }
    Ok(AudioBuffer::new(out, target_rate))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Split into consecutive non-overlapping windows.
pub fn segment(buf: &AudioBuffer, spec: &SegmentSpec) -> Result<Vec<AudioBuffer>> {
    spec.validate()?;
    if buf.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let sr = buf.sample_rate as f64;
    let seg_len = (spec.segment_seconds * sr).round().max(1.0) as usize;
    let min_keep = (spec.min_keep_seconds * sr).round() as usize;
    let mut out: Vec<AudioBuffer> = buf
        .samples
        .chunks_exact(seg_len)
        .map(|c| AudioBuffer::new(c.to_vec(), buf.sample_rate))
        .collect();
    let rem = buf.len() % seg_len;
    if rem > 0 && rem >= min_keep && spec.pad_policy == PadPolicy::ZeroPad {
        let tail = buf.samples[buf.len() - rem..].to_vec();
        out.push(AudioBuffer::new(tail, buf.sample_rate).with_len(seg_len));
    }
    Ok(out)
}

/// Scale so the largest magnitude is exactly 1.0; silence is returned unchanged.
pub fn peak_normalize(buf: &AudioBuffer) -> AudioBuffer {
    let peak = buf.peak();
    if peak == 0.0 {
        return buf.clone();
    }
    let mut out = AudioBuffer::new(
        buf.samples.iter().map(|s| s / peak).collect(),
        buf.sample_rate,
    );
    // Division can land one ulp off 1.0 at the peak; pin it.
    for s in out.samples.iter_mut() {
        if s.abs() > 1.0 {
            *s = s.signum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn write_raw_i16(path: &Path, channels: u16, data: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: 44100,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &d in data {
            w.write_sample(d).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_zeros_and_scaling() {
        let dir = tmp();
        let p = dir.path().join("z.wav");
        write_raw_i16(&p, 1, &[0; 100]);
        let b = load_wav(&p).unwrap();
        assert!(b.samples.iter().all(|&s| s == 0.0));

        write_raw_i16(&p, 1, &[16384; 4]);
        let b = load_wav(&p).unwrap();
        assert_eq!(b.samples, vec![0.5; 4]);
    }

    #[test]
    fn stereo_downmix_averages() {
        let dir = tmp();
        let p = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 48000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0.2f32).unwrap();
            w.write_sample(0.6f32).unwrap();
        }
        w.finalize().unwrap();
        let b = load_wav(&p).unwrap();
        assert_eq!(b.sample_rate, 48000);
        for s in b.samples {
            assert!((s - 0.4).abs() < 1e-7);
        }
    }

    #[test]
    fn load_errors() {
        let dir = tmp();
        assert!(matches!(
            load_wav(dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
        let p = dir.path().join("empty.wav");
        write_raw_i16(&p, 1, &[]);
        assert!(matches!(load_wav(&p), Err(Error::EmptyAudio)));

        let p = dir.path().join("pcm24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 44100,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p), Err(Error::UnsupportedEncoding(_))));

        let p = dir.path().join("garbage.wav");
        std::fs::write(&p, b"not a wav file at all").unwrap();
        assert!(load_wav(&p).is_err());
    }

    #[test]
    fn save_round_trips() {
        let dir = tmp();
        let p = dir.path().join("r.wav");
        let zeros = AudioBuffer::zeros(64, 44100);
        save_wav(&zeros, &p, BitDepth::Pcm16).unwrap();
        assert_eq!(load_wav(&p).unwrap(), zeros);

        let half = AudioBuffer::new(vec![0.5; 64], 44100);
        save_wav(&half, &p, BitDepth::Float32).unwrap();
        assert_eq!(load_wav(&p).unwrap(), half);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = AudioBuffer::new((0..4096).map(|_| rng.random_range(-1.0..=1.0)).collect(), 44100);
        save_wav(&noise, &p, BitDepth::Pcm16).unwrap();
        let back = load_wav(&p).unwrap();
        for (a, b) in noise.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 2f64.powi(-15));
        }
    }

    #[test]
    fn save_rejects_unwritable_path() {
        let b = AudioBuffer::zeros(4, 44100);
        let err = save_wav(&b, "/nonexistent-dir/for/sure/x.wav", BitDepth::Pcm16);
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    #[test]
    fn resample_identity_and_silence() {
        let b = AudioBuffer::new(vec![0.1, -0.3, 0.2], 44100);
        assert_eq!(resample(&b, 44100).unwrap(), b);
        let s = AudioBuffer::zeros(1000, 48000);
        let r = resample(&s, 44100).unwrap();
        assert_eq!(r.sample_rate, 44100);
        assert_eq!(r.len(), 919);
        assert!(r.samples.iter().all(|&v| v == 0.0));
        assert!(resample(&b, 0).is_err());
    }

    #[test]
    fn resample_sine_matches_analytic() {
        let f = 1000.0;
        let n = 22050;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 22050.0).sin())
            .collect();
        let r = resample(&AudioBuffer::new(x, 22050), 44100).unwrap();
        assert_eq!(r.len(), 44100);
        let edge = 200;
        let mut worst = 0.0f64;
        for i in edge..r.len() - edge {
            let want = (2.0 * std::f64::consts::PI * f * i as f64 / 44100.0).sin();
            worst = worst.max((r.samples[i] - want).abs());
        }
        assert!(worst < 1e-3, "worst error {worst}");
    }

    #[test]
    fn resample_downsample_keeps_duration() {
        let x: Vec<f64> = (0..48000)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 48000.0).sin())
            .collect();
        let r = resample(&AudioBuffer::new(x, 48000), 44100).unwrap();
        assert!((r.duration_s() - 1.0).abs() <= 1.0 / 44100.0);
        let mut worst = 0.0f64;
        for i in 300..r.len() - 300 {
            let want = (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 44100.0).sin();
            worst = worst.max((r.samples[i] - want).abs());
        }
        assert!(worst < 1e-3, "worst error {worst}");
    }

    #[test]
    fn resample_untabulated_ratio() {
        // 44100 -> 44101 reduces to 44101/44100 phases, beyond the table limit.
        let x: Vec<f64> = (0..2000)
            .map(|i| (2.0 * std::f64::consts::PI * 500.0 * i as f64 / 44100.0).sin())
            .collect();
        let r = resample(&AudioBuffer::new(x, 44100), 44101).unwrap();
        for i in 200..r.len() - 200 {
            let want = (2.0 * std::f64::consts::PI * 500.0 * i as f64 / 44101.0).sin();
            assert!((r.samples[i] - want).abs() < 1e-3);
        }
    }

    #[test]
    fn segment_examples() {
        let sr = 44100;
        let b = AudioBuffer::new(vec![0.25; 12 * sr as usize], sr);
        let segs = segment(&b, &SegmentSpec::default()).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.len() == 5 * sr as usize));
        // 10..12 s: two seconds of audio followed by three of padding
        let last = &segs[2];
        assert!(last.samples[..2 * sr as usize].iter().all(|&v| v == 0.25));
        assert!(last.samples[2 * sr as usize..].iter().all(|&v| v == 0.0));

        let exact = AudioBuffer::new((0..5 * sr as usize).map(|i| i as f64).collect(), sr);
        let segs = segment(&exact, &SegmentSpec::default()).unwrap();
        assert_eq!(segs, vec![exact.clone()]);

        let b = AudioBuffer::new(vec![0.1; (5.5 * sr as f64) as usize], sr);
        let spec = SegmentSpec {
            pad_policy: PadPolicy::Drop,
            ..Default::default()
        };
        assert_eq!(segment(&b, &spec).unwrap().len(), 1);
        // zero_pad also drops tails below min_keep
        assert_eq!(segment(&b, &SegmentSpec::default()).unwrap().len(), 1);

        assert!(segment(&AudioBuffer::zeros(0, sr), &SegmentSpec::default()).is_err());
        let bad = SegmentSpec {
            segment_seconds: 1.0,
            min_keep_seconds: 2.0,
            pad_policy: PadPolicy::Drop,
        };
        assert!(segment(&b, &bad).is_err());
    }

    #[test]
    fn peak_normalize_examples() {
        let z = AudioBuffer::zeros(5, 44100);
        assert_eq!(peak_normalize(&z), z);
        let c = AudioBuffer::new(vec![0.25; 5], 44100);
        assert_eq!(peak_normalize(&c).samples, vec![1.0; 5]);
        let v = AudioBuffer::new(vec![-0.5, 0.1], 44100);
        assert_eq!(peak_normalize(&v).samples, vec![-1.0, 0.2]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn buffer() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-1.0f64..1.0, 1..400)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn wav_round_trip_within_quantization(x in buffer()) {
                let b = AudioBuffer::new(x, 44100);
                let bytes16 = wav_bytes(&b, BitDepth::Pcm16).unwrap();
                let back = read_wav(std::io::Cursor::new(bytes16)).unwrap();
                for (a, c) in b.samples.iter().zip(&back.samples) {
                    prop_assert!((a - c).abs() <= 2f64.powi(-15));
                }
                let bytesf = wav_bytes(&b, BitDepth::Float32).unwrap();
                let back = read_wav(std::io::Cursor::new(bytesf)).unwrap();
                for (a, c) in b.samples.iter().zip(&back.samples) {
                    prop_assert_eq!(*a as f32 as f64, *c);
                }
            }

            #[test]
            fn resample_is_linear(x in buffer(), a in -4.0f64..4.0) {
                let b = AudioBuffer::new(x, 22050);
                let lhs = resample(&b.scaled(a), 44100).unwrap();
                let rhs = resample(&b, 44100).unwrap().scaled(a);
                let scale = rhs.peak().max(1e-300);
                for (p, q) in lhs.samples.iter().zip(&rhs.samples) {
                    prop_assert!((p - q).abs() <= 1e-9 * scale);
                }
            }

            #[test]
            fn segments_reassemble_prefix(x in prop::collection::vec(-1.0f64..1.0, 1..3000), seg in 10usize..500) {
                let b = AudioBuffer::new(x, 1000);
                let spec = SegmentSpec { segment_seconds: seg as f64 / 1000.0, min_keep_seconds: 0.0, pad_policy: PadPolicy::ZeroPad };
                let segs = segment(&b, &spec).unwrap();
                let joined: Vec<f64> = segs.iter().flat_map(|s| s.samples.iter().copied()).collect();
                prop_assert_eq!(&joined[..b.len()], &b.samples[..]);
                prop_assert!(joined[b.len()..].iter().all(|&v| v == 0.0));
            }

            #[test]
            fn normalize_is_idempotent(x in buffer()) {
                let b = AudioBuffer::new(x, 44100);
                prop_assume!(b.peak() > 0.0);
                let once = peak_normalize(&b);
                prop_assert_eq!(once.peak(), 1.0);
                prop_assert_eq!(peak_normalize(&once), once);
            }
        }
    }
}
