//! Latent post-processing: KL-based pruning of uninformative dimensions, a
//! PCA control space over posterior means, control/latent mapping, latent
//! mixing and 2-D embeddings for inspection.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioBuffer;
use crate::error::{Error, Result};
use crate::nn::Real;
use crate::vae::{kl_divergence, LatentTrajectory, Posterior, Vae};

pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.01;
pub const DEFAULT_FIDELITY: f64 = 0.95;

/// Frame-weighted running mean of per-dimension KL.
#[derive(Debug, Clone, Default)]
pub struct KlAccumulator {
    sums: Vec<f64>,
    frames: usize,
}

impl KlAccumulator {
    pub fn add(&mut self, post: &Posterior) {
        if self.sums.is_empty() {
            self.sums = vec![0.0; post.dim];
        }
        let kl = kl_divergence(post);
        for (s, v) in self.sums.iter_mut().zip(&kl.per_dim) {
            *s += v * post.frames as f64;
        }
        self.frames += post.frames;
    }

    pub fn finish(&self) -> Result<Vec<f64>> {
        if self.frames == 0 {
            return Err(Error::Empty("corpus for KL profile"));
        }
        Ok(self.sums.iter().map(|s| s / self.frames as f64).collect())
    }
}

pub fn compute_kl_profile<T: Real>(model: &Vae<T>, corpus: &[AudioBuffer]) -> Result<Vec<f64>> {
    let mut acc = KlAccumulator::default();
    for clip in corpus {
        acc.add(&model.encode_audio(clip)?);
    }
    acc.finish()
}

/// Indices whose profile exceeds `tau`, ascending.
pub fn prune_dims(profile: &[f64], tau: f64) -> Result<Vec<usize>> {
    if !(tau >= 0.0) {
        return Err(Error::param("tau", "must be non-negative"));
    }
    let kept: Vec<usize> = (0..profile.len()).filter(|&i| profile[i] > tau).collect();
    if kept.is_empty() {
        return Err(Error::NoInformation);
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows.
    pub basis: Vec<Vec<f64>>,
    /// Fraction of total variance per kept component.
    pub explained_variance: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|row| row.iter().zip(x).zip(&self.mean).map(|((b, v), m)| b * (v - m)).sum())
            .collect()
    }

    pub fn back_project(&self, c: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (row, &ci) in self.basis.iter().zip(c) {
            for (o, b) in out.iter_mut().zip(row) {
                *o += ci * b;
            }
        }
        out
    }
}

/// Principal components of `rows` (samples × dims) keeping the smallest
/// count whose cumulative explained variance reaches `fidelity`. With
/// `components = Some(k)` exactly `k` are kept instead.
pub fn fit_pca(rows: &[Vec<f64>], fidelity: f64, components: Option<usize>) -> Result<Pca> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::param("samples", "PCA needs at least two samples"));
    }
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Format("PCA rows must share a positive dimension".into()));
    }
    if !(fidelity > 0.0 && fidelity <= 1.0) {
        return Err(Error::param("fidelity", "must lie in (0, 1]"));
    }
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for r in rows {
        for i in 0..dim {
            let di = r[i] - mean[i];
            for j in i..dim {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = lambdas.iter().sum();
    let k = match components {
        Some(k) => k.clamp(1, dim),
        None if total <= 0.0 => 1,
        None => {
            let mut cum = 0.0;
            let mut k = dim;
            for (i, l) in lambdas.iter().enumerate() {
                cum += l;
                // relative slack absorbs round-off in the cumulative sum
                if cum >= fidelity * total * (1.0 - 1e-12) {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };
    let basis: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let explained_variance = lambdas[..k]
        .iter()
        .map(|l| if total > 0.0 { l / total } else { 1.0 / k as f64 })
        .collect();
    Ok(Pca {
        mean,
        basis,
        explained_variance,
        eigenvalues: lambdas[..k].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPost {
    pub latent_dim: usize,
    pub kept_dims: Vec<usize>,
    pub kl_profile: Vec<f64>,
    pub pca_mean: Vec<f64>,
    pub pca_basis: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub fidelity_target: f64,
    pub prune_threshold: f64,
    /// Per-coordinate `[min, max]` over the fitting set.
    pub control_ranges: Vec<[f64; 2]>,
}

impl LatentPost {
    /// Fit from posteriors of a training corpus.
    pub fn fit(posteriors: &[Posterior], tau: f64, fidelity: f64) -> Result<Self> {
        let mut acc = KlAccumulator::default();
        posteriors.iter().for_each(|p| acc.add(p));
        let profile = acc.finish()?;
        let kept = prune_dims(&profile, tau)?;
        let kept_ref = &kept;
        let rows: Vec<Vec<f64>> = posteriors
            .iter()
            .flat_map(|p| (0..p.frames).map(move |t| kept_ref.iter().map(|&d| p.mu[t * p.dim + d]).collect()))
            .collect();
        let pca = fit_pca(&rows, fidelity, None)?;
        let k = pca.basis.len();
        let mut ranges = vec![[f64::INFINITY, f64::NEG_INFINITY]; k];
        for r in &rows {
            for (rg, c) in ranges.iter_mut().zip(pca.project(r)) {
                rg[0] = rg[0].min(c);
                rg[1] = rg[1].max(c);
            }
        }
        Ok(Self {
            latent_dim: profile.len(),
            kept_dims: kept,
            kl_profile: profile,
            pca_mean: pca.mean,
            pca_basis: pca.basis,
            explained_variance: pca.explained_variance,
            fidelity_target: fidelity,
            prune_threshold: tau,
            control_ranges: ranges,
        })
    }

    pub fn fit_model<T: Real>(model: &Vae<T>, corpus: &[AudioBuffer], tau: f64, fidelity: f64) -> Result<Self> {
        let posts = corpus.iter().map(|c| model.encode_audio(c)).collect::<Result<Vec<_>>>()?;
        Self::fit(&posts, tau, fidelity)
    }

    pub fn k(&self) -> usize {
        self.pca_basis.len()
    }

    pub fn cumulative_explained(&self) -> f64 {
        self.explained_variance.iter().sum()
    }

    fn pca(&self) -> Pca {
        Pca {
            mean: self.pca_mean.clone(),
            basis: self.pca_basis.clone(),
            explained_variance: self.explained_variance.clone(),
            eigenvalues: Vec::new(),
        }
    }

    pub fn control_to_latent(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.k() {
            return Err(Error::DimensionMismatch {
                context: "control vector",
                expected: self.k(),
                actual: c.len(),
            });
        }
        let kept = self.pca().back_project(c);
        let mut z = vec![0.0; self.latent_dim];
        for (&d, v) in self.kept_dims.iter().zip(kept) {
            z[d] = v;
        }
        Ok(z)
    }

    pub fn latent_to_control(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                context: "latent vector",
                expected: self.latent_dim,
                actual: z.len(),
            });
        }
        let kept: Vec<f64> = self.kept_dims.iter().map(|&d| z[d]).collect();
        Ok(self.pca().project(&kept))
    }

    pub fn controls_to_trajectory(&self, controls: &[Vec<f64>], frame_rate: f64) -> Result<LatentTrajectory> {
        let rows = controls.iter().map(|c| self.control_to_latent(c)).collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(Error::Empty("control frames"));
        }
        LatentTrajectory::from_rows(&rows, frame_rate)
    }

    pub fn trajectory_to_controls(&self, z: &LatentTrajectory) -> Result<Vec<Vec<f64>>> {
        (0..z.frames).map(|t| self.latent_to_control(z.row(t))).collect()
    }

    /// Largest deviation of the basis Gram matrix from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.k();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let g: f64 = self.pca_basis[i].iter().zip(&self.pca_basis[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - want).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "weights")]
pub enum MixMode {
    Sum,
    Weighted(Vec<f64>),
}

/// Elementwise sum (or weighted sum) of trajectories, truncated to the
/// shortest.
pub fn mix_latents(zs: &[LatentTrajectory], mode: &MixMode) -> Result<LatentTrajectory> {
    let first = zs.first().ok_or(Error::Empty("latent list"))?;
    let dim = first.dim;
    if let Some(z) = zs.iter().find(|z| z.dim != dim) {
        return Err(Error::DimensionMismatch {
            context: "mixed latent dimension",
            expected: dim,
            actual: z.dim,
        });
    }
    let weights = match mode {
        MixMode::Sum => vec![1.0; zs.len()],
        MixMode::Weighted(w) => {
            if w.len() != zs.len() {
                return Err(Error::DimensionMismatch {
                    context: "mix weights",
                    expected: zs.len(),
                    actual: w.len(),
                });
            }
            w.clone()
        }
    };
    let frames = zs.iter().map(|z| z.frames).min().unwrap_or(0);
    let mut out = LatentTrajectory::zeros(frames, dim, first.frame_rate);
    for (z, w) in zs.iter().zip(&weights) {
        for (o, v) in out.values.iter_mut().zip(&z.values[..frames * dim]) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMethod {
    Pca2,
    Tsne { perplexity: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub coords: Vec<[f64; 2]>,
    /// `(iteration, KL(P‖Q))` samples; empty for PCA.
    pub objective: Vec<(usize, f64)>,
}

pub fn embed_2d(points: &[Vec<f64>], method: &EmbedMethod) -> Result<Embedding> {
    let n = points.len();
    if n < 4 {
        return Err(Error::param("points", "need at least four points"));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Format("embedding points must share a positive dimension".into()));
    }
    if points.iter().all(|p| p == &points[0]) {
        log::warn!("all {n} points identical; returning a zero embedding");
        return Ok(Embedding {
            coords: vec![[0.0; 2]; n],
            objective: Vec::new(),
        });
    }
    match method {
        EmbedMethod::Pca2 => {
            let pca = fit_pca(points, 1.0, Some(2.min(dim)))?;
            let coords = points
                .iter()
                .map(|p| {
                    let c = pca.project(p);
                    [c[0], c.get(1).copied().unwrap_or(0.0)]
                })
                .collect();
            Ok(Embedding {
                coords,
                objective: Vec::new(),
            })
        }
        EmbedMethod::Tsne { perplexity, seed } => {
            if !(*perplexity > 0.0 && *perplexity < n as f64 / 3.0) {
                return Err(Error::param("perplexity", format!("must lie in (0, {}) for {n} points", n as f64 / 3.0)));
            }
            Ok(crate::tsne::tsne(points, &crate::tsne::TsneConfig::new(*perplexity, *seed)))
        }
    }
}

/// Mean silhouette coefficient of labelled 2-D points.
pub fn silhouette(coords: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = coords.len();
    let groups = labels.iter().copied().max().map_or(0, |m| m + 1);
    if n < 2 || groups < 2 {
        return 0.0;
    }
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; groups];
        let mut counts = vec![0usize; groups];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += dist(&coords[i], &coords[j]);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..groups)
            .filter(|&g| g != own && counts[g] > 0)
            .map(|g| sums[g] / counts[g] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 && b.is_finite() {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Delimited export: `id,x,y,label` per line with a header.
pub fn embedding_csv(ids: &[String], emb: &Embedding, labels: &[String]) -> String {
    let mut out = String::from("id,x,y,label\n");
    for ((id, c), l) in ids.iter().zip(&emb.coords).zip(labels) {
        out.push_str(&format!("{id},{},{},{l}\n", c[0], c[1]));
    }
    out
}
