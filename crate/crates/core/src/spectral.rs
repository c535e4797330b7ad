//! STFT, mel filterbanks, the multiscale spectral distance used as the
//! reconstruction loss, and the mel-spectrogram MSE used for evaluation.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioBuffer;
use crate::dsp::hann_window;
use crate::error::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub fft_sizes: Vec<usize>,
    pub mel_bands: usize,
    pub embed_mel_bands: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            fft_sizes: vec![2048, 1024, 512, 256, 128],
            mel_bands: 128,
            embed_mel_bands: 64,
            fmin: 0.0,
            fmax: 22050.0,
            log_floor: LOG_FLOOR,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_sizes.is_empty() || self.fft_sizes.iter().any(|n| !n.is_power_of_two() || *n < 4) {
            return Err(Error::param("fft_sizes", "must be non-empty powers of two >= 4"));
        }
        Ok(())
    }
}

/// Real matrix stored frame-major (`frames` × `bins`).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, f: usize) -> &[f64] {
        &self.data[f * self.bins..(f + 1) * self.bins]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// One-sided complex STFT, frame-major.
#[derive(Debug, Clone)]
pub struct ComplexSpec {
    pub frames: usize,
    pub bins: usize,
    pub signal_len: usize,
    pub data: Vec<Complex<f64>>,
}

impl ComplexSpec {
    pub fn magnitude(&self) -> Spectrogram {
        Spectrogram {
            frames: self.frames,
            bins: self.bins,
            data: self.data.iter().map(|c| c.norm()).collect(),
        }
    }

    pub fn power(&self) -> Spectrogram {
        Spectrogram {
            frames: self.frames,
            bins: self.bins,
            data: self.data.iter().map(|c| c.norm_sqr()).collect(),
        }
    }

    /// Chain a gradient w.r.t. magnitudes onto the complex coefficients.
    pub fn magnitude_grad(&self, dmag: &[f64]) -> Vec<Complex<f64>> {
        self.data
            .iter()
            .zip(dmag)
            .map(|(c, &g)| {
                let m = c.norm();
                if m > 0.0 {
                    c * (g / m)
                } else {
                    Complex::new(0.0, 0.0)
                }
            })
            .collect()
    }
}

/// Mirror an index into `0..n` the way reflect padding does.
fn reflect(mut j: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    j = j.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Hann-windowed, centered (reflect-padded) short-time Fourier transform.
#[derive(Clone)]
pub struct Stft {
    pub fft_size: usize,
    pub hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("fft_size", &self.fft_size)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    pub fn new(fft_size: usize, hop: usize) -> Result<Self> {
        if !fft_size.is_power_of_two() || fft_size < 4 {
            return Err(Error::param("fft_size", format!("{fft_size} is not a power of two >= 4")));
        }
        if hop == 0 || hop > fft_size {
            return Err(Error::param("hop", "must be in 1..=fft_size"));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            fft_size,
            hop,
            window: hann_window(fft_size),
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        })
    }

    /// Quarter-window hop, the convention of the multiscale loss.
    pub fn quarter_hop(fft_size: usize) -> Result<Self> {
        Self::new(fft_size, fft_size / 4)
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frame_count(&self, n: usize) -> usize {
        1 + n / self.hop
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Padded-signal sample feeding position `i` of frame `f`.
    fn source_index(&self, f: usize, i: usize, n: usize) -> usize {
        let pad = (self.fft_size / 2) as isize;
        reflect((f * self.hop + i) as isize - pad, n)
    }

    pub fn forward(&self, x: &[f64]) -> ComplexSpec {
        let n = x.len();
        let frames = if n == 0 { 0 } else { self.frame_count(n) };
        let bins = self.bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        for f in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(x[self.source_index(f, i, n)] * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            data.extend_from_slice(&buf[..bins]);
        }
        ComplexSpec {
            frames,
            bins,
            signal_len: n,
            data,
        }
    }

    /// Adjoint of [`forward`] with respect to the real input: `grad` holds
    /// dL/dRe + i dL/dIm per one-sided coefficient.
    pub fn backward(&self, signal_len: usize, grad: &[Complex<f64>]) -> Vec<f64> {
        let bins = self.bins();
        let frames = grad.len() / bins;
        let mut dx = vec![0.0; signal_len];
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        for f in 0..frames {
            buf[..bins].copy_from_slice(&grad[f * bins..(f + 1) * bins]);
            buf[bins..].iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            self.inverse.process(&mut buf);
            for (i, c) in buf.iter().enumerate() {
                dx[self.source_index(f, i, signal_len)] += self.window[i] * c.re;
            }
        }
        dx
    }

    pub fn magnitude(&self, x: &[f64]) -> Spectrogram {
        self.forward(x).magnitude()
    }
}

pub fn stft_magnitude(buf: &AudioBuffer, fft_size: usize, hop: usize) -> Result<Spectrogram> {
    Ok(Stft::new(fft_size, hop)?.magnitude(&buf.samples))
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `bands` × `bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelMatrix {
    pub bands: usize,
    pub bins: usize,
    pub weights: Vec<f64>,
    pub centers_hz: Vec<f64>,
}

impl MelMatrix {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    /// Project every frame of a power (or magnitude) spectrogram.
    pub fn apply(&self, spec: &Spectrogram) -> Spectrogram {
        assert_eq!(spec.bins, self.bins, "mel matrix / spectrogram bin mismatch");
        let mut data = Vec::with_capacity(spec.frames * self.bands);
        for f in 0..spec.frames {
            let frame = spec.frame(f);
            for m in 0..self.bands {
                data.push(self.row(m).iter().zip(frame).map(|(w, p)| w * p).sum());
            }
        }
        Spectrogram {
            frames: spec.frames,
            bins: self.bands,
            data,
        }
    }
}

pub fn mel_matrix(bands: usize, fft_size: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Result<MelMatrix> {
    let bins = fft_size / 2 + 1;
    if bands == 0 || bands > bins {
        return Err(Error::param("mel_bands", format!("{bands} bands for {bins} bins")));
    }
    if !(fmax > fmin) || fmin < 0.0 {
        return Err(Error::param("fmax", "frequency range must be increasing and non-negative"));
    }
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz = sample_rate / fft_size as f64;
    let mut weights = vec![0.0; bands * bins];
    for m in 0..bands {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let v = if f <= lo || f >= hi {
                0.0
            } else if f <= c {
                (f - lo) / (c - lo)
            } else {
                (hi - f) / (hi - c)
            };
            *w = v.max(0.0);
        }
        // Narrow low filters can fall between bin centers; keep them alive on the nearest bin.
        if row.iter().all(|&w| w == 0.0) {
            let k = ((c / bin_hz).round() as usize).min(bins - 1);
            row[k] = 1.0;
        }
    }
    Ok(MelMatrix {
        bands,
        bins,
        weights,
        centers_hz: edges[1..=bands].to_vec(),
    })
}

/// Precomputed transforms for the multiscale distance.
#[derive(Debug, Clone)]
pub struct MultiScale {
    pub stfts: Vec<Stft>,
}

/// Target-side magnitudes, computed once per training example.
#[derive(Debug, Clone)]
pub struct SpectralTarget {
    pub mags: Vec<Spectrogram>,
}

impl MultiScale {
    pub fn new(cfg: &SpectralConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            stfts: cfg
                .fft_sizes
                .iter()
                .map(|&n| Stft::quarter_hop(n))
                .collect::<Result<_>>()?,
        })
    }

    pub fn target(&self, x: &[f64]) -> SpectralTarget {
        SpectralTarget {
            mags: self.stfts.iter().map(|s| s.magnitude(x)).collect(),
        }
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let (x, y) = equalize(x, y);
        let t = self.target(&x);
        self.stfts
            .iter()
            .zip(&t.mags)
            .map(|(s, a)| scale_distance(a, &s.magnitude(&y)))
            .sum()
    }

    /// Distance to a fixed target and its gradient with respect to `y`.
    pub fn distance_with_grad(&self, target: &SpectralTarget, y: &[f64]) -> (f64, Vec<f64>) {
        let mut total = 0.0;
        let mut grad = vec![0.0; y.len()];
        for (stft, a) in self.stfts.iter().zip(&target.mags) {
            let spec = stft.forward(y);
            let b = spec.magnitude();
            let (d, dmag) = scale_distance_grad(a, &b);
            total += d;
            let g = stft.backward(y.len(), &spec.magnitude_grad(&dmag));
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        (total, grad)
    }
}

fn equalize(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len().max(y.len());
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.resize(n, 0.0);
    b.resize(n, 0.0);
    (a, b)
}

/// Spectral convergence (normalized by the RMS of both norms, so the term
/// is symmetric) plus mean absolute log-magnitude difference.
pub fn scale_distance(a: &Spectrogram, b: &Spectrogram) -> f64 {
    let na = a.frobenius_sq();
    let nb = b.frobenius_sq();
    let diff: f64 = a.data.iter().zip(&b.data).map(|(p, q)| (p - q) * (p - q)).sum();
    let q = ((na + nb) / 2.0).sqrt();
    let conv = if q > 0.0 { diff.sqrt() / q } else { 0.0 };
    let m = a.data.len().max(1) as f64;
    let log_l1: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, r)| ((p + LOG_FLOOR).ln() - (r + LOG_FLOOR).ln()).abs())
        .sum::<f64>()
        / m;
    conv + log_l1
}

fn scale_distance_grad(a: &Spectrogram, b: &Spectrogram) -> (f64, Vec<f64>) {
    let na = a.frobenius_sq();
    let nb = b.frobenius_sq();
    let diff: f64 = a.data.iter().zip(&b.data).map(|(p, q)| (p - q) * (p - q)).sum();
    let d = diff.sqrt();
    let q = ((na + nb) / 2.0).sqrt();
    let m = a.data.len().max(1) as f64;
    let mut grad = vec![0.0; b.data.len()];
    let mut log_l1 = 0.0;
    for (i, (&p, &r)) in a.data.iter().zip(&b.data).enumerate() {
        let delta = (p + LOG_FLOOR).ln() - (r + LOG_FLOOR).ln();
        log_l1 += delta.abs();
        // d|ln a - ln b| / db
        let s = if delta > 0.0 {
            -1.0
        } else if delta < 0.0 {
            1.0
        } else {
            0.0
        };
        grad[i] = s / ((r + LOG_FLOOR) * m);
        if q > 0.0 {
            if d > 0.0 {
                grad[i] += (r - p) / (d * q);
            }
            grad[i] -= d * r / (2.0 * q * q * q);
        }
    }
    let conv = if q > 0.0 { d / q } else { 0.0 };
    (conv + log_l1 / m, grad)
}

/// Multiscale magnitude distance; phase does not enter. Shorter input is
/// zero-padded; two silent inputs are at distance 0.
pub fn multiscale_spectral_distance(x: &AudioBuffer, y: &AudioBuffer) -> Result<f64> {
    let ms = MultiScale::new(&SpectralConfig::default())?;
    Ok(ms.distance(&x.samples, &y.samples))
}

pub const MEL_MSE_FFT: usize = 2048;
pub const MEL_MSE_HOP: usize = 512;
pub const MEL_MSE_BANDS: usize = 128;

/// dB mel spectrogram (10 log10 of mel power plus the floor).
pub fn mel_db(x: &[f64], sample_rate: u32, fft: usize, hop: usize, bands: usize) -> Result<Spectrogram> {
    let stft = Stft::new(fft, hop)?;
    let mel = mel_matrix(bands, fft, sample_rate as f64, 0.0, sample_rate as f64 / 2.0)?;
    let mut m = mel.apply(&stft.forward(x).power());
    m.data.iter_mut().for_each(|v| *v = 10.0 * (*v + LOG_FLOOR).log10());
    Ok(m)
}

/// Mean squared error between dB mel spectrograms (128 bands, fft 2048, hop 512), in dB².
pub fn mel_mse(x: &AudioBuffer, y: &AudioBuffer) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "mel_mse lengths",
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let a = mel_db(&x.samples, x.sample_rate, MEL_MSE_FFT, MEL_MSE_HOP, MEL_MSE_BANDS)?;
    let b = mel_db(&y.samples, y.sample_rate, MEL_MSE_FFT, MEL_MSE_HOP, MEL_MSE_BANDS)?;
    let n = a.data.len() as f64;
    Ok(a.data.iter().zip(&b.data).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// O(N^2) DFT magnitudes with the same framing, independent of rustfft.
    fn naive_stft_mag(x: &[f64], fft: usize, hop: usize) -> Spectrogram {
        let n = x.len();
        let pad = fft / 2;
        let padded: Vec<f64> = (0..n + 2 * pad)
            .map(|i| {
                let j = i as isize - pad as isize;
                let j = if j < 0 { -j } else { j };
                let j = if j >= n as isize { 2 * (n as isize - 1) - j } else { j };
                x[j as usize]
            })
            .collect();
        let w: Vec<f64> = (0..fft).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / fft as f64).cos()).collect();
        let frames = 1 + n / hop;
        let bins = fft / 2 + 1;
        let mut data = Vec::new();
        for f in 0..frames {
            for k in 0..bins {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..fft {
                    let v = padded[f * hop + i] * w[i];
                    let ang = -2.0 * PI * (k * i) as f64 / fft as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                data.push((re * re + im * im).sqrt());
            }
        }
        Spectrogram { frames, bins, data }
    }

    fn naive_msd(x: &[f64], y: &[f64]) -> f64 {
        SpectralConfig::default()
            .fft_sizes
            .iter()
            .map(|&n| {
                let a = naive_stft_mag(x, n, n / 4);
                let b = naive_stft_mag(y, n, n / 4);
                let na: f64 = a.data.iter().map(|v| v * v).sum();
                let nb: f64 = b.data.iter().map(|v| v * v).sum();
                let d: f64 = a.data.iter().zip(&b.data).map(|(p, q)| (p - q).powi(2)).sum();
                let l: f64 = a.data.iter().zip(&b.data).map(|(p, q)| ((p + 1e-7).ln() - (q + 1e-7).ln()).abs()).sum();
                d.sqrt() / ((na + nb) / 2.0).sqrt() + l / a.data.len() as f64
            })
            .sum()
    }

    #[test]
    fn silence_has_zero_magnitude() {
        let s = AudioBuffer::zeros(1000, 44100);
        let m = stft_magnitude(&s, 256, 64).unwrap();
        assert_eq!(m.frames, 1 + 1000 / 64);
        assert!(m.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_centered_sine_dominates() {
        let fft = 512;
        let k = 20;
        let x: Vec<f64> = (0..8192).map(|i| (2.0 * PI * k as f64 * i as f64 / fft as f64).sin()).collect();
        let m = Stft::new(fft, 128).unwrap().magnitude(&x);
        for f in 8..m.frames - 8 {
            let row = m.frame(f);
            let peak = row.iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            assert_eq!(peak.0, k);
            // Hann leaks into k +- 1 at half amplitude; bins beyond are empty
            assert!(row[k] / row[k + 2].max(1e-300) > 100.0);
            assert!(row[k] / row[k - 2].max(1e-300) > 100.0);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let x = noise(3000, 1);
        let stft = Stft::new(256, 64).unwrap();
        let spec = stft.forward(&x);
        let n = 256;
        let mut lhs = 0.0;
        for f in 0..spec.frames {
            for k in 0..spec.bins {
                let wgt = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                lhs += wgt * spec.data[f * spec.bins + k].norm_sqr() / n as f64;
            }
        }
        let mut rhs = 0.0;
        for f in 0..spec.frames {
            for i in 0..n {
                let v = x[stft.source_index(f, i, x.len())] * stft.window()[i];
                rhs += v * v;
            }
        }
        assert!(((lhs - rhs) / rhs).abs() < 1e-6);
    }

    #[test]
    fn stft_matches_naive_dft() {
        let x = noise(700, 2);
        let fast = Stft::new(128, 32).unwrap().magnitude(&x);
        let slow = naive_stft_mag(&x, 128, 32);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn short_signals_reflect_safely() {
        let m = Stft::new(2048, 512).unwrap().magnitude(&[0.5, -0.25, 0.1]);
        assert_eq!(m.frames, 1);
        assert!(m.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mel_matrix_shape() {
        let m = mel_matrix(128, 2048, 44100.0, 0.0, 22050.0).unwrap();
        for b in 0..m.bands {
            let row = m.row(b);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().sum::<f64>() > 0.0);
            let nz: Vec<usize> = row.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(i, _)| i).collect();
            assert_eq!(nz.len(), nz.last().unwrap() - nz[0] + 1, "row {b} not contiguous");
        }
        assert!(m.centers_hz.windows(2).all(|w| w[1] > w[0]));
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.1);
        assert!(mel_matrix(2000, 2048, 44100.0, 0.0, 22050.0).is_err());
    }

    #[test]
    fn msd_identity_polarity_and_silence() {
        let x = AudioBuffer::new(noise(4096, 3), 44100);
        assert_eq!(multiscale_spectral_distance(&x, &x).unwrap(), 0.0);
        let neg = x.scaled(-1.0);
        assert_eq!(multiscale_spectral_distance(&x, &neg).unwrap(), 0.0);
        let s = AudioBuffer::zeros(4096, 44100);
        assert_eq!(multiscale_spectral_distance(&s, &s).unwrap(), 0.0);
        assert!(multiscale_spectral_distance(&x, &s).unwrap() > 0.0);
    }

    #[test]
    fn msd_matches_naive_dft() {
        let x = noise(3000, 4);
        let y = noise(3000, 5);
        let fast = multiscale_spectral_distance(&AudioBuffer::new(x.clone(), 44100), &AudioBuffer::new(y.clone(), 44100)).unwrap();
        let slow = naive_msd(&x, &y);
        assert!(((fast - slow) / slow).abs() < 1e-6, "{fast} vs {slow}");
    }

    #[test]
    fn msd_is_symmetric_and_pads_shorter() {
        let x = AudioBuffer::new(noise(2000, 6), 44100);
        let y = AudioBuffer::new(noise(1500, 7), 44100);
        let a = multiscale_spectral_distance(&x, &y).unwrap();
        let b = multiscale_spectral_distance(&y, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn msd_depends_only_on_magnitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mk = |rng: &mut ChaCha8Rng| Spectrogram {
            frames: 3,
            bins: 5,
            data: (0..15).map(|_| rng.random_range(0.0..2.0)).collect(),
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        assert_eq!(scale_distance(&a, &a), 0.0);
        assert_eq!(scale_distance(&a, &b), scale_distance(&b, &a));
        assert!(scale_distance(&a, &b) > 0.0);
    }

    #[test]
    fn msd_gradient_matches_finite_difference() {
        let ms = MultiScale::new(&SpectralConfig {
            fft_sizes: vec![64, 16],
            ..Default::default()
        })
        .unwrap();
        let x = noise(200, 9);
        let y = noise(200, 10);
        let t = ms.target(&x);
        let (_, g) = ms.distance_with_grad(&t, &y);
        let h = 1e-6;
        for i in [0, 7, 50, 123, 199] {
            let mut yp = y.clone();
            yp[i] += h;
            let mut ym = y.clone();
            ym[i] -= h;
            let fd = (ms.distance_with_grad(&t, &yp).0 - ms.distance_with_grad(&t, &ym).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "i={i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn mel_mse_identity_and_level_offset() {
        let x = AudioBuffer::new(noise(44100, 11), 44100);
        assert_eq!(mel_mse(&x, &x).unwrap(), 0.0);
        let half = x.scaled(0.5);
        let v = mel_mse(&x, &half).unwrap();
        let want = (10.0 * 4f64.log10()).powi(2);
        assert!((v - want).abs() < 0.01, "{v} vs {want}");
        assert!(mel_mse(&x, &AudioBuffer::zeros(10, 44100)).is_err());
    }
}
