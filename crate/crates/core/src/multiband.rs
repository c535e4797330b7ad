//! Pseudo-QMF cosine-modulated filter bank.
//!
//! A Kaiser-windowed lowpass prototype is modulated into `B` analysis and
//! synthesis filters. Analysis filters each band and decimates by `B`;
//! synthesis interpolates, filters and sums. The round trip reproduces the
//! input delayed by `L - 1` samples, where `L` is the prototype length.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::audio_io::AudioBuffer;
use crate::dsp::{kaiser_beta, kaiser_window};
use crate::error::{Error, Result};

pub const DEFAULT_BANDS: usize = 16;
pub const DEFAULT_ATTENUATION_DB: f64 = 100.0;
pub const TAPS_PER_BAND: usize = 32;

/// `bands` × `len` matrix of subband signals, stored band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandFrame {
    pub bands: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl SubbandFrame {
    pub fn zeros(bands: usize, len: usize) -> Self {
        Self {
            bands,
            len,
            data: vec![0.0; bands * len],
        }
    }

    pub fn band(&self, k: usize) -> &[f64] {
        &self.data[k * self.len..(k + 1) * self.len]
    }

    pub fn band_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.len..(k + 1) * self.len]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqmfBank {
    pub bands: usize,
    pub attenuation_db: f64,
    /// Prototype cutoff as a fraction of Nyquist.
    pub cutoff: f64,
    pub prototype: Vec<f64>,
    #[serde(skip)]
    analysis: Vec<Vec<f64>>,
    #[serde(skip)]
    synthesis: Vec<Vec<f64>>,
}

fn design_cache() -> &'static Mutex<HashMap<(usize, u64), Arc<PqmfBank>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Arc<PqmfBank>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn prototype(bands: usize, len: usize, beta: f64, cutoff: f64) -> Vec<f64> {
    let w = kaiser_window(len, beta);
    let center = (len - 1) as f64 / 2.0;
    let wc = PI * cutoff;
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let m = n as f64 - center;
            let ideal = if m.abs() < 1e-12 {
                wc / PI
            } else {
                (wc * m).sin() / (PI * m)
            };
            w[n] * ideal / bands as f64
        })
        .collect();
    // exact linear phase
    for n in 0..len / 2 {
        h[len - 1 - n] = h[n];
    }
    h
}

impl PqmfBank {
    /// Build the bank for a given prototype (filters are derived, not stored).
    pub fn from_prototype(bands: usize, attenuation_db: f64, cutoff: f64, prototype: Vec<f64>) -> Result<Self> {
        if bands < 2 || !bands.is_power_of_two() {
            return Err(Error::param("bands", format!("{bands} is not a power of two >= 2")));
        }
        if prototype.len() % bands != 0 {
            return Err(Error::param("prototype", "length must be divisible by the band count"));
        }
        let len = prototype.len();
        let center = (len - 1) as f64 / 2.0;
        let scale = 2.0 * (bands as f64).powf(1.5);
        let modulate = |sign: f64| -> Vec<Vec<f64>> {
            (0..bands)
                .map(|k| {
                    let phase = if k % 2 == 0 { PI / 4.0 } else { -PI / 4.0 };
                    (0..len)
                        .map(|n| {
                            let arg = (2 * k + 1) as f64 * PI / (2.0 * bands as f64) * (n as f64 - center);
                            scale * prototype[n] * (arg + sign * phase).cos()
                        })
                        .collect()
                })
                .collect()
        };
        let analysis = modulate(1.0);
        let synthesis = modulate(-1.0);
        Ok(Self {
            bands,
            attenuation_db,
            cutoff,
            prototype,
            analysis,
            synthesis,
        })
    }

    fn with_cutoff(bands: usize, attenuation_db: f64, cutoff: f64) -> Self {
        let len = TAPS_PER_BAND * bands;
        let proto = prototype(bands, len, kaiser_beta(attenuation_db), cutoff);
        Self::from_prototype(bands, attenuation_db, cutoff, proto).expect("validated band count")
    }

    pub fn taps(&self) -> usize {
        self.prototype.len()
    }

    /// Round-trip delay in samples.
    pub fn delay(&self) -> usize {
        self.prototype.len() - 1
    }

    pub fn analysis_filter(&self, k: usize) -> &[f64] {
        &self.analysis[k]
    }

    /// Split a waveform into `bands` decimated subband signals. The input is
    /// zero-padded up to a multiple of the band count.
    pub fn analyze(&self, buf: &AudioBuffer) -> SubbandFrame {
        self.analyze_samples(&buf.samples)
    }

    pub fn analyze_samples(&self, x: &[f64]) -> SubbandFrame {
        let b = self.bands;
        let t_sub = x.len().div_ceil(b);
        let taps = self.taps();
        let mut out = SubbandFrame::zeros(b, t_sub);
        let mut window = vec![0.0; taps];
        for m in 0..t_sub {
            // window[n] = x[mB - n]
            let base = (m * b) as isize;
            for (n, w) in window.iter_mut().enumerate() {
                let idx = base - n as isize;
                *w = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { 0.0 };
            }
            for k in 0..b {
                let h = &self.analysis[k];
                let acc: f64 = h.iter().zip(&window).map(|(a, c)| a * c).sum();
                out.data[k * t_sub + m] = acc;
            }
        }
        out
    }

    pub fn synthesize(&self, sub: &SubbandFrame, sample_rate: u32) -> Result<AudioBuffer> {
        Ok(AudioBuffer::new(self.synthesize_samples(sub)?, sample_rate))
    }

    /// Interpolate, filter and sum; output length is `bands * len`.
    pub fn synthesize_samples(&self, sub: &SubbandFrame) -> Result<Vec<f64>> {
        if sub.bands != self.bands {
            return Err(Error::DimensionMismatch {
                context: "pqmf synthesis rows",
                expected: self.bands,
                actual: sub.bands,
            });
        }
        let b = self.bands;
        let n = sub.len * b;
        let mut y = vec![0.0; n];
        for k in 0..b {
            let g = &self.synthesis[k];
            for (m, &s) in sub.band(k).iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                let start = m * b;
                let end = (start + g.len()).min(n);
                for (yo, gi) in y[start..end].iter_mut().zip(g) {
                    *yo += s * gi;
                }
            }
        }
        Ok(y)
    }

    /// Adjoint of [`synthesize_samples`]: maps a waveform gradient back onto
    /// the subband signals.
    pub fn synthesize_adjoint(&self, dy: &[f64], sub_len: usize) -> SubbandFrame {
        let b = self.bands;
        let n = dy.len();
        let mut out = SubbandFrame::zeros(b, sub_len);
        for k in 0..b {
            let g = &self.synthesis[k];
            for m in 0..sub_len {
                let start = m * b;
                if start >= n {
                    break;
                }
                let end = (start + g.len()).min(n);
                let acc: f64 = dy[start..end].iter().zip(g).map(|(a, c)| a * c).sum();
                out.data[k * sub_len + m] = acc;
            }
        }
        out
    }

    /// Squared reconstruction error of unit impulses at every polyphase offset.
    fn impulse_error(&self) -> f64 {
        let b = self.bands;
        let taps = self.taps();
        let n = (3 * taps).next_multiple_of(b);
        let d = self.delay();
        let offset = taps;
        let mut err = 0.0;
        for p in 0..b {
            let mut x = vec![0.0; n];
            x[offset + p] = 1.0;
            let sub = self.analyze_samples(&x);
            let y = self.synthesize_samples(&sub).expect("own band count");
            for (t, &v) in y.iter().enumerate() {
                let want = if t == offset + p + d { 1.0 } else { 0.0 };
                err += (v - want) * (v - want);
            }
        }
        err / b as f64
    }
}

// Rebuild the derived filters after deserializing.
impl PqmfBank {
    pub fn rehydrate(self) -> Result<Self> {
        Self::from_prototype(self.bands, self.attenuation_db, self.cutoff, self.prototype)
    }
}

/// Design a bank, choosing the prototype cutoff by golden-section search on
/// the round-trip impulse error. Designs are cached per (bands, attenuation).
pub fn design_prototype(bands: usize, attenuation_db: f64) -> Result<PqmfBank> {
    if bands < 2 || !bands.is_power_of_two() {
        return Err(Error::param("bands", format!("{bands} is not a power of two >= 2")));
    }
    if !(attenuation_db > 0.0) {
        return Err(Error::param("attenuation_db", "must be positive"));
    }
    let key = (bands, attenuation_db.to_bits());
    if let Some(bank) = design_cache().lock().unwrap().get(&key) {
        return Ok((**bank).clone());
    }

    let nominal = 0.5 / bands as f64;
    let objective = |c: f64| PqmfBank::with_cutoff(bands, attenuation_db, c).impulse_error();
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.6 * nominal, 1.4 * nominal);
    let mut c1 = hi - inv_phi * (hi - lo);
    let mut c2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (objective(c1), objective(c2));
    while hi - lo > 1e-9 * nominal {
        if f1 < f2 {
            hi = c2;
            c2 = c1;
            f2 = f1;
            c1 = hi - inv_phi * (hi - lo);
            f1 = objective(c1);
        } else {
            lo = c1;
            c1 = c2;
            f1 = f2;
            c2 = lo + inv_phi * (hi - lo);
            f2 = objective(c2);
        }
    }
    let bank = PqmfBank::with_cutoff(bands, attenuation_db, 0.5 * (lo + hi));
    design_cache()
        .lock()
        .unwrap()
        .insert(key, Arc::new(bank.clone()));
    Ok(bank)
}

/// Delay-compensated reconstruction SNR in dB of `y` against `x`.
pub fn round_trip_snr_db(x: &[f64], y: &[f64], delay: usize) -> f64 {
    let n = x.len().min(y.len().saturating_sub(delay));
    let mut sig = 0.0;
    let mut err = 0.0;
    for t in 0..n {
        let e = y[t + delay] - x[t];
        sig += x[t] * x[t];
        err += e * e;
    }
    10.0 * (sig / err.max(1e-300)).log10()
}
