//! Multiband variational autoencoder. The encoder maps PQMF subbands to a
//! diagonal Gaussian per latent frame, the decoder maps latent frames back to
//! subbands. Training losses are measured on the resynthesized waveform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio_io::{AudioBuffer, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::multiband::{design_prototype, PqmfBank, SubbandFrame};
use crate::nn::{Conv1d, Grads, Op, ParamStore, Real, Sequential, Signal, Tape};
use crate::spectral::{MultiScale, SpectralConfig, SpectralTarget};

pub const KERNEL: usize = 9;
pub const STRIDE: usize = 4;
pub const BLOCKS: usize = 4;
/// Subband samples per latent frame.
pub const TOTAL_STRIDE: usize = 256;
pub const LOG_VAR_MIN: f64 = -30.0;
pub const LOG_VAR_MAX: f64 = 20.0;
// Largest f32 below 1; decoded samples are kept strictly inside (-1, 1).
const OPEN_BOUND: f64 = 1.0 - f32::EPSILON as f64 / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Tiny,
    Full,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Profile::Tiny),
            "full" => Ok(Profile::Full),
            other => Err(Error::param("profile", format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub bands: usize,
    pub channels: [usize; BLOCKS],
    pub sample_rate: u32,
    pub attenuation_db: f64,
}

impl ModelConfig {
    pub fn tiny() -> Self {
        Self {
            latent_dim: 16,
            bands: 8,
            channels: [16, 32, 64, 128],
            sample_rate: CANONICAL_RATE,
            attenuation_db: crate::multiband::DEFAULT_ATTENUATION_DB,
        }
    }

    pub fn full() -> Self {
        Self {
            latent_dim: 128,
            bands: crate::multiband::DEFAULT_BANDS,
            channels: [32, 64, 128, 256],
            sample_rate: CANONICAL_RATE,
            attenuation_db: crate::multiband::DEFAULT_ATTENUATION_DB,
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Tiny => Self::tiny(),
            Profile::Full => Self::full(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::param("latent_dim", "must be positive"));
        }
        if self.bands < 2 {
            return Err(Error::param("bands", "need at least two bands"));
        }
        if self.channels.contains(&0) {
            return Err(Error::param("channels", "widths must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::param("sample_rate", "must be positive"));
        }
        Ok(())
    }

    /// Waveform samples per latent frame.
    pub fn hop(&self) -> usize {
        self.bands * TOTAL_STRIDE
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop() as f64
    }
}

/// Diagonal Gaussian per latent frame, row-major `frames × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub frames: usize,
    pub dim: usize,
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl Posterior {
    pub fn new(frames: usize, dim: usize, mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mu.len() != frames * dim || log_var.len() != frames * dim {
            return Err(Error::DimensionMismatch {
                context: "posterior size",
                expected: frames * dim,
                actual: mu.len().max(log_var.len()),
            });
        }
        Ok(Self { frames, dim, mu, log_var })
    }

    pub fn mean(&self, frame_rate: f64) -> LatentTrajectory {
        LatentTrajectory {
            frames: self.frames,
            dim: self.dim,
            values: self.mu.clone(),
            frame_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub frame_rate: f64,
}

impl LatentTrajectory {
    pub fn zeros(frames: usize, dim: usize, frame_rate: f64) -> Self {
        Self {
            frames,
            dim,
            values: vec![0.0; frames * dim],
            frame_rate,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], frame_rate: f64) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Format("latent rows differ in length".into()));
        }
        Ok(Self {
            frames: rows.len(),
            dim,
            values: rows.concat(),
            frame_rate,
        })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.frames).map(|t| self.row(t).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Standard normal draws in frame-major order.
pub fn gaussian_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// z = μ + exp(log_var / 2) ⊙ ε. No clamping happens here: the encoder
/// already bounds its log-variances.
pub fn reparameterize(post: &Posterior, noise_seed: u64, frame_rate: f64) -> LatentTrajectory {
    let eps = gaussian_noise(post.mu.len(), noise_seed);
    let values = post
        .mu
        .iter()
        .zip(&post.log_var)
        .zip(&eps)
        .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
        .collect();
    LatentTrajectory {
        frames: post.frames,
        dim: post.dim,
        values,
        frame_rate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlTerms {
    pub total: f64,
    pub per_dim: Vec<f64>,
}

/// KL to the standard normal prior: per element 0.5(μ² + σ² − ln σ² − 1),
/// averaged over frames.
pub fn kl_divergence(post: &Posterior) -> KlTerms {
    let mut per_dim = vec![0.0; post.dim];
    if post.frames == 0 {
        return KlTerms { total: 0.0, per_dim };
    }
    for t in 0..post.frames {
        for (d, acc) in per_dim.iter_mut().enumerate() {
            let i = t * post.dim + d;
            *acc += kl_element(post.mu[i], post.log_var[i]);
        }
    }
    let n = post.frames as f64;
    per_dim.iter_mut().for_each(|v| *v /= n);
    KlTerms {
        total: per_dim.iter().sum(),
        per_dim,
    }
}

#[inline]
fn kl_element(mu: f64, lv: f64) -> f64 {
    // exp_m1 keeps σ² − 1 − ln σ² accurate near the prior.
    0.5 * (mu * mu + (lv.exp_m1() - lv))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub spectral: f64,
    pub kl: f64,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct Vae<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub bank: PqmfBank,
    encoder: Sequential,
    decoder: Sequential,
    encoder_tensors: usize,
    spectral: MultiScale,
}

impl<T: Real> Vae<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let bank = design_prototype(config.bands, config.attenuation_db)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let c = config.channels;
        let d = config.latent_dim;
        let pad = KERNEL / 2;

        let mut enc = Vec::new();
        let mut prev = config.bands;
        for (i, &ch) in c.iter().enumerate() {
            let conv = Conv1d::init(&mut params, &mut rng, &format!("encoder.block{i}"), prev, ch, KERNEL, STRIDE, pad, 1.0);
            enc.push(Op::Conv(conv));
            enc.push(Op::LeakyRelu);
            prev = ch;
        }
        let head = Conv1d::init(&mut params, &mut rng, "encoder.head", prev, 2 * d, 3, 1, 1, 1.0);
        enc.push(Op::Conv(head));
        let encoder_tensors = params.tensors.len();

        let mut dec = Vec::new();
        let first = Conv1d::init(&mut params, &mut rng, "decoder.input", d, c[BLOCKS - 1], 3, 1, 1, 1.0);
        dec.push(Op::Conv(first));
        dec.push(Op::LeakyRelu);
        let mut prev = c[BLOCKS - 1];
        for i in 0..BLOCKS {
            let out = if i + 1 < BLOCKS { c[BLOCKS - 2 - i] } else { c[0] };
            dec.push(Op::Upsample(STRIDE));
            let conv = Conv1d::init(&mut params, &mut rng, &format!("decoder.block{i}"), prev, out, KERNEL, 1, pad, 1.0);
            dec.push(Op::Conv(conv));
            dec.push(Op::LeakyRelu);
            prev = out;
        }
        let last = Conv1d::init(&mut params, &mut rng, "decoder.output", prev, config.bands, KERNEL, 1, pad, 1.0);
        dec.push(Op::Conv(last));
        dec.push(Op::Tanh);

        Ok(Self {
            config,
            params,
            bank,
            encoder: Sequential { ops: enc },
            decoder: Sequential { ops: dec },
            encoder_tensors,
            spectral: MultiScale::new(&SpectralConfig::default())?,
        })
    }

    /// Same architecture with parameters converted to another scalar type.
    pub fn cast<U: Real>(&self) -> Vae<U> {
        Vae {
            config: self.config.clone(),
            params: self.params.cast(),
            bank: self.bank.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            encoder_tensors: self.encoder_tensors,
            spectral: self.spectral.clone(),
        }
    }

    pub fn is_encoder_tensor(&self, idx: usize) -> bool {
        idx < self.encoder_tensors
    }

    pub fn encoder_tensor_count(&self) -> usize {
        self.encoder_tensors
    }

    pub fn frame_rate(&self) -> f64 {
        self.config.frame_rate()
    }

    /// Replace parameters, checking names and shapes against the architecture.
    pub fn load_params(&mut self, params: ParamStore<T>) -> Result<()> {
        if params.tensors.len() != self.params.tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                self.params.tensors.len(),
                params.tensors.len()
            )));
        }
        for (a, b) in self.params.tensors.iter().zip(&params.tensors) {
            if a.name != b.name || a.shape != b.shape || b.data.len() != a.data.len() {
                return Err(Error::Format(format!("tensor {} does not match architecture", b.name)));
            }
        }
        if !params.all_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        self.params = params;
        Ok(())
    }

    fn subband_signal(&self, sub: &SubbandFrame) -> Result<Signal<T>> {
        if sub.bands != self.config.bands {
            return Err(Error::DimensionMismatch {
                context: "encoder bands",
                expected: self.config.bands,
                actual: sub.bands,
            });
        }
        if sub.len < TOTAL_STRIDE {
            return Err(Error::TooShort(format!(
                "{} subband samples, need at least {TOTAL_STRIDE}",
                sub.len
            )));
        }
        // Pad up to a whole number of latent frames.
        let len = sub.len.next_multiple_of(TOTAL_STRIDE);
        let inv = 1.0 / self.subband_gain();
        let mut s = Signal::zeros(sub.bands, len);
        for k in 0..sub.bands {
            for (o, &v) in s.row_mut(k).iter_mut().zip(sub.band(k)) {
                *o = T::lit(v * inv);
            }
        }
        Ok(s)
    }

    fn posterior_from(&self, out: &Signal<T>) -> Posterior {
        let d = self.config.latent_dim;
        let frames = out.len;
        let mut mu = vec![0.0; frames * d];
        let mut lv = vec![0.0; frames * d];
        for j in 0..d {
            for t in 0..frames {
                mu[t * d + j] = out.row(j)[t].f64();
                lv[t * d + j] = out.row(d + j)[t].f64().clamp(LOG_VAR_MIN, LOG_VAR_MAX);
            }
        }
        Posterior { frames, dim: d, mu, log_var: lv }
    }

    pub fn encode(&self, sub: &SubbandFrame) -> Result<Posterior> {
        let x = self.subband_signal(sub)?;
        Ok(self.posterior_from(&self.encoder.infer(&self.params, x)))
    }

    pub fn encode_audio(&self, buf: &AudioBuffer) -> Result<Posterior> {
        self.check_rate(buf)?;
        self.encode(&self.bank.analyze(buf))
    }

    fn check_rate(&self, buf: &AudioBuffer) -> Result<()> {
        if buf.sample_rate != self.config.sample_rate {
            return Err(Error::param(
                "sample_rate",
                format!("model expects {} Hz, got {}", self.config.sample_rate, buf.sample_rate),
            ));
        }
        Ok(())
    }

    fn latent_signal(&self, z: &LatentTrajectory) -> Result<Signal<T>> {
        if z.dim != self.config.latent_dim {
            return Err(Error::DimensionMismatch {
                context: "latent dimension",
                expected: self.config.latent_dim,
                actual: z.dim,
            });
        }
        if z.frames == 0 {
            return Err(Error::Empty("latent trajectory"));
        }
        let mut s = Signal::zeros(z.dim, z.frames);
        for t in 0..z.frames {
            for (d, &v) in z.row(t).iter().enumerate() {
                s.row_mut(d)[t] = T::lit(v);
            }
        }
        Ok(s)
    }

    fn to_subbands(out: &Signal<T>) -> SubbandFrame {
        SubbandFrame {
            bands: out.channels,
            len: out.len,
            data: out.data.iter().map(|v| v.f64().clamp(-OPEN_BOUND, OPEN_BOUND)).collect(),
        }
    }

    /// The bank conserves energy, so its subbands run up to sqrt(B) times the
    /// waveform amplitude. The network sees and produces subbands divided by
    /// this factor, which keeps full-scale audio inside the tanh range.
    pub fn subband_gain(&self) -> f64 {
        (self.config.bands as f64).sqrt()
    }

    /// Waveform from decoder-scale subbands.
    pub fn synthesize(&self, normalized: &SubbandFrame) -> Result<Vec<f64>> {
        let g = self.subband_gain();
        let scaled = SubbandFrame {
            data: normalized.data.iter().map(|v| v * g).collect(),
            ..normalized.clone()
        };
        self.bank.synthesize_samples(&scaled)
    }

    /// Adjoint of [`Vae::synthesize`].
    pub fn synthesize_adjoint(&self, dy: &[f64], sub_len: usize) -> SubbandFrame {
        let g = self.subband_gain();
        let mut d = self.bank.synthesize_adjoint(dy, sub_len);
        d.data.iter_mut().for_each(|v| *v *= g);
        d
    }

    /// Decoder output in the network's subband scale (see [`Vae::subband_gain`]),
    /// strictly inside (-1, 1).
    pub fn decode(&self, z: &LatentTrajectory) -> Result<SubbandFrame> {
        let s = self.latent_signal(z)?;
        Ok(Self::to_subbands(&self.decoder.infer(&self.params, s)))
    }

    pub fn decode_audio(&self, z: &LatentTrajectory) -> Result<AudioBuffer> {
        let sub = self.decode(z)?;
        Ok(AudioBuffer::new(self.synthesize(&sub)?, self.config.sample_rate))
    }

    /// Encode with the posterior mean, decode, and trim to the input length
    /// after removing the filter-bank delay.
    pub fn regenerate(&self, buf: &AudioBuffer) -> Result<AudioBuffer> {
        let post = self.encode_audio(buf)?;
        let y = self.decode_audio(&post.mean(self.frame_rate()))?;
        Ok(align_output(&y, self.bank.delay(), buf.len()))
    }

    pub fn stage1_loss(&self, x: &SubbandFrame, beta: f64, seed: u64) -> Result<LossComponents> {
        let mut scratch = self.params.zeros_like();
        self.stage1_eval(x, None, beta, seed, &mut scratch, false)
    }

    /// Loss and accumulated (unscaled) gradients of the stage-1 objective.
    pub fn stage1_gradients(
        &self,
        x: &SubbandFrame,
        target: Option<&SpectralTarget>,
        beta: f64,
        seed: u64,
        grads: &mut Grads<T>,
    ) -> Result<LossComponents> {
        self.stage1_eval(x, target, beta, seed, grads, true)
    }

    /// Multiscale target of the resynthesized input.
    pub fn spectral_target(&self, x: &SubbandFrame) -> Result<SpectralTarget> {
        let padded = pad_subbands(x, x.len.next_multiple_of(TOTAL_STRIDE));
        Ok(self.spectral.target(&self.bank.synthesize_samples(&padded)?))
    }

    fn stage1_eval(
        &self,
        x: &SubbandFrame,
        target: Option<&SpectralTarget>,
        beta: f64,
        seed: u64,
        grads: &mut Grads<T>,
        backward: bool,
    ) -> Result<LossComponents> {
        if !(beta >= 0.0) {
            return Err(Error::param("beta", "must be non-negative"));
        }
        let input = self.subband_signal(x)?;
        let owned;
        let target = match target {
            Some(t) => t,
            None => {
                owned = self.spectral_target(x)?;
                &owned
            }
        };
        let d = self.config.latent_dim;
        let enc_tape = self.encoder.forward(&self.params, input);
        let head = enc_tape.output();
        let frames = head.len;
        let eps = gaussian_noise(frames * d, seed);

        // z in [dim][frames] layout, matching the decoder input.
        let mut z = Signal::<T>::zeros(d, frames);
        let mut kl = 0.0;
        for j in 0..d {
            for t in 0..frames {
                let mu = head.row(j)[t].f64();
                let lv = head.row(d + j)[t].f64().clamp(LOG_VAR_MIN, LOG_VAR_MAX);
                kl += kl_element(mu, lv);
                z.row_mut(j)[t] = T::lit(mu + (lv / 2.0).exp() * eps[t * d + j]);
            }
        }
        kl /= frames as f64;

        let dec_tape = self.decoder.forward(&self.params, z);
        let recon = Self::to_subbands(dec_tape.output());
        let y = self.synthesize(&recon)?;
        let (spec, dy) = self.spectral.distance_with_grad(target, &y);
        let total = spec + beta * kl;
        if !total.is_finite() {
            return Err(Error::Divergence {
                step: 0,
                detail: format!("non-finite loss (spectral {spec}, kl {kl})"),
            });
        }
        let comps = LossComponents { total, spectral: spec, kl, beta };
        if !backward {
            return Ok(comps);
        }

        let dsub = self.synthesize_adjoint(&dy, recon.len);
        let dout = Signal::from_vec(dsub.bands, dsub.len, dsub.data.iter().map(|&v| T::lit(v)).collect());
        let dz = self
            .decoder
            .backward(&self.params, &dec_tape, dout, grads, true)
            .expect("input gradient requested");
        let dhead = self.head_gradient(head, &dz, &eps, beta);
        self.encoder.backward(&self.params, &enc_tape, dhead, grads, false);
        Ok(comps)
    }

    fn head_gradient(&self, head: &Signal<T>, dz: &Signal<T>, eps: &[f64], beta: f64) -> Signal<T> {
        let d = self.config.latent_dim;
        let frames = head.len;
        let inv_t = 1.0 / frames as f64;
        let mut g = Signal::zeros(2 * d, frames);
        for j in 0..d {
            for t in 0..frames {
                let mu = head.row(j)[t].f64();
                let raw = head.row(d + j)[t].f64();
                let lv = raw.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
                let gz = dz.row(j)[t].f64();
                let sigma = (lv / 2.0).exp();
                g.row_mut(j)[t] = T::lit(gz + beta * mu * inv_t);
                let inside = (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw);
                let glv = if inside {
                    gz * eps[t * d + j] * 0.5 * sigma + beta * 0.5 * lv.exp_m1() * inv_t
                } else {
                    0.0
                };
                g.row_mut(d + j)[t] = T::lit(glv);
            }
        }
        g
    }

    pub(crate) fn decoder_forward(&self, z: &LatentTrajectory) -> Result<Tape<T>> {
        Ok(self.decoder.forward(&self.params, self.latent_signal(z)?))
    }

    /// Back-propagate a subband-output gradient into decoder parameters.
    pub(crate) fn decoder_backward(&self, tape: &Tape<T>, dout: &SubbandFrame, grads: &mut Grads<T>) {
        let g = Signal::from_vec(dout.bands, dout.len, dout.data.iter().map(|&v| T::lit(v)).collect());
        self.decoder.backward(&self.params, tape, g, grads, false);
    }

    pub(crate) fn tape_subbands(tape: &Tape<T>) -> SubbandFrame {
        Self::to_subbands(tape.output())
    }

    pub(crate) fn spectral(&self) -> &MultiScale {
        &self.spectral
    }
}

pub(crate) fn pad_subbands(x: &SubbandFrame, len: usize) -> SubbandFrame {
    if x.len == len {
        return x.clone();
    }
    let mut out = SubbandFrame::zeros(x.bands, len);
    for k in 0..x.bands {
        let n = x.len.min(len);
        out.band_mut(k)[..n].copy_from_slice(&x.band(k)[..n]);
    }
    out
}

/// Drop `delay` leading samples and fit to `len`.
pub fn align_output(y: &AudioBuffer, delay: usize, len: usize) -> AudioBuffer {
    let mut s: Vec<f64> = y.samples.iter().skip(delay).copied().collect();
    s.resize(len, 0.0);
    AudioBuffer::new(s, y.sample_rate)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Compare reverse-mode gradients of the stage-1 loss against central
/// differences on `count` randomly chosen scalar parameters.
pub fn gradient_check(
    model: &Vae<f64>,
    x: &SubbandFrame,
    beta: f64,
    noise_seed: u64,
    count: usize,
    pick_seed: u64,
    step: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<GradCheckReport> {
    let mut grads = model.params.zeros_like();
    let target = model.spectral_target(x)?;
    model.stage1_gradients(x, Some(&target), beta, noise_seed, &mut grads)?;
    let total = model.params.count();
    let mut rng = ChaCha8Rng::seed_from_u64(pick_seed);
    let mut probe = model.clone();
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let mut flat = rng.random_range(0..total);
        let mut t = 0;
        while flat >= probe.params.tensors[t].data.len() {
            flat -= probe.params.tensors[t].data.len();
            t += 1;
        }
        let orig = probe.params.tensors[t].data[flat];
        probe.params.tensors[t].data[flat] = orig + step;
        let lp = probe.stage1_eval_target(x, &target, beta, noise_seed)?;
        probe.params.tensors[t].data[flat] = orig - step;
        let lm = probe.stage1_eval_target(x, &target, beta, noise_seed)?;
        probe.params.tensors[t].data[flat] = orig;
        let numeric = (lp - lm) / (2.0 * step);
        let analytic = grads.tensors[t][flat];
        let diff = (numeric - analytic).abs();
        let scale = numeric.abs().max(analytic.abs());
        let rel_error = if scale > 0.0 { diff / scale } else { 0.0 };
        entries.push(GradCheckEntry {
            tensor: probe.params.tensors[t].name.clone(),
            index: flat,
            analytic,
            numeric,
            rel_error,
            passed: rel_error <= rel_tol || diff <= abs_tol,
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    let passed = entries.iter().all(|e| e.passed);
    Ok(GradCheckReport { entries, max_rel_error, passed })
}

impl Vae<f64> {
    fn stage1_eval_target(&self, x: &SubbandFrame, target: &SpectralTarget, beta: f64, seed: u64) -> Result<f64> {
        let mut scratch = self.params.zeros_like();
        Ok(self.stage1_eval(x, Some(target), beta, seed, &mut scratch, false)?.total)
    }
}
