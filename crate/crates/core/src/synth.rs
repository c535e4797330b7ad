//! Procedural two-material corpus used for smoke tests and the desk-scale
//! experiment: struck "metal" (inharmonic damped partials) and rustling
//! "cloth" (band-passed noise bursts). Both sit on a faint noise floor, as
//! real recordings do.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio_io::{peak_normalize, AudioBuffer, CANONICAL_RATE};
use crate::dsp::{Biquad, BiquadCoeffs};

pub const METAL: &str = "metal";
pub const CLOTH: &str = "cloth";
pub const NOISE_FLOOR: f64 = 1e-3;
const PEAK: f64 = 0.9;
// Ratios of a struck free bar's first modes.
const PARTIALS: [f64; 4] = [1.0, 2.756, 5.404, 8.933];

pub fn metal_clip(len: usize, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = CANONICAL_RATE as f64;
    let f0 = rng.random_range(300.0..1500.0);
    let decay = rng.random_range(4.0..14.0);
    let onset = rng.random_range(0..len / 10);
    let modes: Vec<(f64, f64, f64, f64)> = PARTIALS
        .iter()
        .enumerate()
        .filter(|(_, r)| f0 * **r < 0.45 * sr)
        .map(|(i, r)| {
            let amp = rng.random_range(0.3..1.0) / (1.0 + i as f64);
            (f0 * r, amp, decay * (1.0 + 0.7 * i as f64), rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let samples = (0..len)
        .map(|n| {
            let floor = NOISE_FLOOR * rng.random_range(-1.0..1.0);
            if n < onset {
                return floor;
            }
            let t = (n - onset) as f64 / sr;
            let tone: f64 = modes
                .iter()
                .map(|&(f, a, d, ph)| a * (-d * t).exp() * (2.0 * PI * f * t + ph).sin())
                .sum();
            tone + floor
        })
        .collect();
    scale_to_peak(AudioBuffer::new(samples, CANONICAL_RATE))
}

pub fn cloth_clip(len: usize, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = CANONICAL_RATE as f64;
    let center = rng.random_range(1500.0..6000.0);
    let q = rng.random_range(0.5..1.5);
    let mut filt = Biquad::new(BiquadCoeffs::bandpass_q(sr, center, q));
    let bursts: Vec<(f64, f64, f64)> = (0..rng.random_range(2..6))
        .map(|_| {
            (
                rng.random_range(0.0..0.8),
                rng.random_range(0.05..0.25),
                rng.random_range(0.4..1.0),
            )
        })
        .collect();
    let samples = (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let env: f64 = bursts
                .iter()
                .map(|&(start, width, amp)| {
                    let u = (t - start) / width;
                    if (0.0..1.0).contains(&u) {
                        amp * (PI * u).sin()
                    } else {
                        0.0
                    }
                })
                .sum();
            let noise = filt.process(rng.random_range(-1.0..1.0));
            env * noise + NOISE_FLOOR * rng.random_range(-1.0..1.0)
        })
        .collect();
    scale_to_peak(AudioBuffer::new(samples, CANONICAL_RATE))
}

fn scale_to_peak(buf: AudioBuffer) -> AudioBuffer {
    peak_normalize(&buf).scaled(PEAK)
}

/// `n` clips alternating metal and cloth, each `seconds` long.
pub fn two_material_corpus(n: usize, seconds: f64, seed: u64) -> Vec<(&'static str, AudioBuffer)> {
    let len = (seconds * CANONICAL_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let s: u64 = rng.random();
            if i % 2 == 0 {
                (METAL, metal_clip(len, s))
            } else {
                (CLOTH, cloth_clip(len, s))
            }
        })
        .collect()
}

/// Uniform white noise clip at the given peak.
pub fn white_noise(len: usize, peak: f64, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer::new((0..len).map(|_| peak * rng.random_range(-1.0..1.0)).collect(), CANONICAL_RATE)
}
