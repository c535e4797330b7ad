//! Fréchet distance between Gaussian fits of log-mel frames ("mel-FAD"),
//! regeneration scoring and per-material distance matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioBuffer;
use crate::error::{Error, Result};
use crate::nn::Real;
use crate::spectral::{mel_db, mel_mse, multiscale_spectral_distance};
use crate::vae::Vae;

pub const VISQOL_NOTE: &str = "not computed: external model required";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub mel_bands: usize,
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            mel_bands: 64,
            fft_size: 1024,
            hop: 512,
        }
    }
}

/// One dB log-mel vector per STFT frame.
pub fn embed_frames(buf: &AudioBuffer, cfg: &EmbeddingConfig) -> Result<Vec<Vec<f64>>> {
    let m = mel_db(&buf.samples, buf.sample_rate, cfg.fft_size, cfg.hop, cfg.mel_bands)?;
    Ok((0..m.frames).map(|f| m.frame(f).to_vec()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `dim × dim` unbiased covariance.
    pub cov: Vec<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Two-pass mean and unbiased covariance.
    pub fn from_frames(frames: &[Vec<f64>]) -> Result<Self> {
        let n = frames.len();
        let dim = frames.first().map_or(0, Vec::len);
        if dim == 0 || frames.iter().any(|f| f.len() != dim) {
            return Err(Error::Format("embedding frames must share a positive dimension".into()));
        }
        if n < 2 {
            return Err(Error::TooShort(format!("{n} frames, need at least 2")));
        }
        let mut mean = vec![0.0; dim];
        for f in frames {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; dim * dim];
        let mut centered = vec![0.0; dim];
        for f in frames {
            for (c, (v, m)) in centered.iter_mut().zip(f.iter().zip(&mean)) {
                *c = v - m;
            }
            for i in 0..dim {
                let ci = centered[i];
                for j in i..dim {
                    cov[i * dim + j] += ci * centered[j];
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[i * dim + j] / (n - 1) as f64;
                cov[i * dim + j] = v;
                cov[j * dim + i] = v;
            }
        }
        Ok(Self { mean, cov, count: n })
    }

    /// Pooled statistics of two disjoint sample sets.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context: "merged stats",
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let dim = self.dim();
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let mean = self.mean.iter().zip(&delta).map(|(a, d)| a + d * nb / n).collect();
        let mut cov = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let m2 = self.cov[i * dim + j] * (na - 1.0)
                    + other.cov[i * dim + j] * (nb - 1.0)
                    + delta[i] * delta[j] * na * nb / n;
                cov[i * dim + j] = m2 / (n - 1.0);
            }
        }
        Ok(Self {
            mean,
            cov,
            count: self.count + other.count,
        })
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.cov).all(|v| v.is_finite())
    }
}

/// Pool log-mel frames of all clips; needs more frames than dimensions.
pub fn fit_stats(clips: &[AudioBuffer], cfg: &EmbeddingConfig) -> Result<GaussianStats> {
    let mut frames = Vec::new();
    for c in clips {
        frames.extend(embed_frames(c, cfg)?);
    }
    if frames.len() < cfg.mel_bands + 1 {
        return Err(Error::TooShort(format!(
            "{} embedding frames, need at least {}",
            frames.len(),
            cfg.mel_bands + 1
        )));
    }
    GaussianStats::from_frames(&frames)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// ‖μa − μb‖² + Tr Σa + Tr Σb − 2 Tr (√Σa Σb √Σa)^{1/2}, clamped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "frechet dimension",
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::param("stats", "non-finite statistics"));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = a.matrix();
    let sb = b.matrix();
    let root_a = psd_sqrt(&sa);
    let inner = &root_a * &sb * &root_a;
    let sym = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(sym).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok((mean_term + sa.trace() + sb.trace() - 2.0 * cross).max(0.0))
}

pub fn fad(a: &[AudioBuffer], b: &[AudioBuffer], cfg: &EmbeddingConfig) -> Result<f64> {
    frechet_distance(&fit_stats(a, cfg)?, &fit_stats(b, cfg)?)
}

/// Something that maps a clip to its reconstruction of the same length.
pub trait Regenerate {
    fn regenerate(&self, x: &AudioBuffer) -> Result<AudioBuffer>;
}

impl<T: Real> Regenerate for Vae<T> {
    fn regenerate(&self, x: &AudioBuffer) -> Result<AudioBuffer> {
        Vae::regenerate(self, x)
    }
}

/// Returns its input; the reference point for the metrics.
pub struct Identity;

impl Regenerate for Identity {
    fn regenerate(&self, x: &AudioBuffer) -> Result<AudioBuffer> {
        Ok(x.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub id: String,
    pub mel_mse: f64,
    pub spectral_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Histogram { edges: vec![], counts: vec![] };
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenReport {
    pub clips: Vec<ClipScore>,
    pub mel_mse: Aggregate,
    pub spectral_distance: Aggregate,
    pub fad: f64,
    pub mel_mse_histogram: Histogram,
    pub visqol: String,
}

pub fn evaluate_regeneration<R: Regenerate>(
    model: &R,
    test: &[(String, AudioBuffer)],
    cfg: &EmbeddingConfig,
) -> Result<(RegenReport, Vec<AudioBuffer>)> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut clips = Vec::with_capacity(test.len());
    let mut regens = Vec::with_capacity(test.len());
    for (id, x) in test {
        let y = model.regenerate(x)?;
        clips.push(ClipScore {
            id: id.clone(),
            mel_mse: mel_mse(x, &y)?,
            spectral_distance: multiscale_spectral_distance(x, &y)?,
        });
        regens.push(y);
    }
    let originals: Vec<AudioBuffer> = test.iter().map(|(_, x)| x.clone()).collect();
    let fad = frechet_distance(&fit_stats(&originals, cfg)?, &fit_stats(&regens, cfg)?)?;
    let mse: Vec<f64> = clips.iter().map(|c| c.mel_mse).collect();
    let spec: Vec<f64> = clips.iter().map(|c| c.spectral_distance).collect();
    Ok((
        RegenReport {
            mel_mse: Aggregate::of(&mse),
            spectral_distance: Aggregate::of(&spec),
            fad,
            mel_mse_histogram: histogram(&mse, 10),
            visqol: VISQOL_NOTE.to_string(),
            clips,
        },
        regens,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Row-major `rows × cols`.
    pub values: Vec<f64>,
}

impl FadMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols.len() + j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(",{}\n", self.cols.join(","));
        for (i, r) in self.rows.iter().enumerate() {
            let cells: Vec<String> = (0..self.cols.len()).map(|j| self.get(i, j).to_string()).collect();
            out.push_str(&format!("{r},{}\n", cells.join(",")));
        }
        out
    }
}

pub type Group = (String, Vec<AudioBuffer>);

/// FAD between every row group and every column group; with `cols = None`
/// the matrix is square over `rows`.
pub fn material_fad_matrix(rows: &[Group], cols: Option<&[Group]>, cfg: &EmbeddingConfig) -> Result<FadMatrix> {
    let cols = cols.unwrap_or(rows);
    if rows.len() + cols.len() < 3 || rows.is_empty() || cols.is_empty() {
        return Err(Error::param("groups", "need at least two groups"));
    }
    let fit = |groups: &[Group]| -> Result<Vec<GaussianStats>> {
        groups
            .iter()
            .map(|(label, clips)| {
                fit_stats(clips, cfg).map_err(|e| match e {
                    Error::TooShort(m) => Error::TooShort(format!("group {label}: {m}")),
                    other => other,
                })
            })
            .collect()
    };
    let rs = fit(rows)?;
    let cs = fit(cols)?;
    let mut values = Vec::with_capacity(rs.len() * cs.len());
    for a in &rs {
        for b in &cs {
            values.push(frechet_distance(a, b)?);
        }
    }
    Ok(FadMatrix {
        rows: rows.iter().map(|g| g.0.clone()).collect(),
        cols: cols.iter().map(|g| g.0.clone()).collect(),
        values,
    })
}
