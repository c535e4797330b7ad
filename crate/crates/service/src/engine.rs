//! Frame-by-frame synthesis for one streaming session.
//!
//! Each latent frame is rendered by decoding a short window of recent
//! latent frames (plus one repeated look-ahead frame) and keeping the
//! newest hop, so the output carries the decoder's context without
//! re-rendering the whole session. Control changes land on the next latent
//! frame and are crossfaded over that frame.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use foley_core::audio_io::AudioBuffer;
use foley_core::fx::{apply_param_filter, gate_gain, lfo_gain, PostChainParams};
use foley_core::vae::LatentTrajectory;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};
use crate::limiter::Limiter;
use crate::model::{LoadedModel, LIMITER_RELEASE_MS, STREAM_FRAME_SAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationMode {
    LatentDirect,
    File,
    LiveInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Latent frames of left context decoded with each new frame.
    pub context_frames: usize,
    /// Excitation audio queued beyond this many hops is dropped, oldest first.
    pub max_input_frames: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            context_frames: 6,
            max_input_frames: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineStats {
    pub frames_emitted: u64,
    pub latent_frames: u64,
    pub input_samples_dropped: u64,
}

pub struct StreamEngine {
    model: Arc<LoadedModel>,
    cfg: EngineConfig,
    controls: Vec<f64>,
    enabled: Vec<bool>,
    postchain: Option<PostChainParams>,
    mode: ExcitationMode,
    history: VecDeque<Vec<f64>>,
    input: VecDeque<f64>,
    input_window: Vec<f64>,
    encoded: Option<Vec<f64>>,
    fade_pending: bool,
    out: VecDeque<f32>,
    limiter: Limiter,
    samples_rendered: u64,
    gate_origin: u64,
    stats: EngineStats,
}

impl StreamEngine {
    pub fn new(model: Arc<LoadedModel>, cfg: EngineConfig) -> ServiceResult<Self> {
        if cfg.context_frames == 0 || cfg.max_input_frames == 0 {
            return Err(ServiceError::bad_request("context_frames and max_input_frames must be positive"));
        }
        if model.model.bank.delay() > model.hop() {
            return Err(ServiceError::bad_request("filter-bank delay exceeds one latent hop"));
        }
        let k = model.k();
        let z0 = model.controls_to_latent(&vec![0.0; k], None)?;
        let sr = model.sample_rate();
        Ok(Self {
            controls: vec![0.0; k],
            enabled: vec![true; k],
            postchain: None,
            mode: ExcitationMode::LatentDirect,
            history: std::iter::repeat_n(z0, cfg.context_frames).collect(),
            input: VecDeque::new(),
            input_window: Vec::new(),
            encoded: None,
            fade_pending: false,
            out: VecDeque::new(),
            limiter: Limiter::new(sr, LIMITER_RELEASE_MS),
            samples_rendered: 0,
            gate_origin: 0,
            stats: EngineStats::default(),
            model,
            cfg,
        })
    }

    pub fn model(&self) -> &Arc<LoadedModel> {
        &self.model
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn enabled(&self) -> &[bool] {
        &self.enabled
    }

    pub fn mode(&self) -> ExcitationMode {
        self.mode
    }

    pub fn postchain(&self) -> Option<&PostChainParams> {
        self.postchain.as_ref()
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    /// Index of the next binary frame `next_frame` will return.
    pub fn next_frame_index(&self) -> u64 {
        self.stats.frames_emitted
    }

    /// Returns the stored (clamped) value.
    pub fn set_control(&mut self, index: usize, value: f64) -> ServiceResult<f64> {
        let v = self.model.clamp_control(index, value)?;
        if v != self.controls[index] {
            self.controls[index] = v;
            self.fade_pending = true;
        }
        Ok(v)
    }

    pub fn set_controls(&mut self, values: &[f64]) -> ServiceResult<()> {
        let mut c = values.to_vec();
        self.model.clamp_controls(&mut c)?;
        if c != self.controls {
            self.controls = c;
            self.fade_pending = true;
        }
        Ok(())
    }

    pub fn set_enabled(&mut self, index: usize, on: bool) -> ServiceResult<()> {
        let k = self.controls.len();
        let slot = self.enabled.get_mut(index).ok_or_else(|| {
            ServiceError::new(crate::error::ErrorCode::DimensionMismatch, format!("control index {index} >= k = {k}"))
        })?;
        if *slot != on {
            *slot = on;
            self.fade_pending = true;
        }
        Ok(())
    }

    /// `None` bypasses the chain. A new chain restarts the gate envelope.
    pub fn set_postchain(&mut self, p: Option<PostChainParams>) -> ServiceResult<()> {
        if let Some(p) = &p {
            p.validate()?;
        }
        self.postchain = p;
        self.gate_origin = self.samples_rendered;
        Ok(())
    }

    pub fn set_mode(&mut self, mode: ExcitationMode) {
        if mode != self.mode {
            self.mode = mode;
            self.input.clear();
            self.input_window.clear();
            self.encoded = None;
            self.fade_pending = true;
        }
    }

    /// Queue excitation audio at the model rate. The queue is bounded; the
    /// oldest samples go first when the client outpaces playback.
    pub fn push_audio(&mut self, samples: &[f32]) -> ServiceResult<()> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(ServiceError::new(
                crate::error::ErrorCode::MalformedAudio,
                "audio chunk contains non-finite samples",
            ));
        }
        self.input.extend(samples.iter().map(|&v| v as f64));
        let cap = self.cfg.max_input_frames * self.model.hop();
        let excess = self.input.len().saturating_sub(cap);
        if excess > 0 {
            self.input.drain(..excess);
            self.stats.input_samples_dropped += excess as u64;
        }
        Ok(())
    }

    fn encode_next_input(&mut self) -> ServiceResult<()> {
        let hop = self.model.hop();
        if self.input.len() < hop {
            return Ok(());
        }
        self.input_window.extend(self.input.drain(..hop));
        let keep = self.cfg.context_frames * hop;
        if self.input_window.len() > keep {
            self.input_window.drain(..self.input_window.len() - keep);
        }
        let buf = AudioBuffer::new(self.input_window.clone(), self.model.sample_rate());
        let post = self.model.model.encode_audio(&buf)?;
        let t = post.frames - 1;
        self.encoded = Some(post.mu[t * post.dim..(t + 1) * post.dim].to_vec());
        Ok(())
    }

    fn target_latent(&mut self) -> ServiceResult<Vec<f64>> {
        if self.mode == ExcitationMode::LatentDirect {
            return self.model.controls_to_latent(&self.controls, Some(&self.enabled));
        }
        self.encode_next_input()?;
        let latent = &self.model.latent;
        let z_enc = match &self.encoded {
            Some(z) => z.clone(),
            None => latent.control_to_latent(&vec![0.0; self.controls.len()])?,
        };
        // Enabled controls replace the encoded coordinates; the residual
        // outside the control space is kept.
        let c_enc = latent.latent_to_control(&z_enc)?;
        let mut c = c_enc.clone();
        for ((ci, &v), &on) in c.iter_mut().zip(&self.controls).zip(&self.enabled) {
            if on {
                *ci = v;
            }
        }
        let a = latent.control_to_latent(&c)?;
        let b = latent.control_to_latent(&c_enc)?;
        Ok(z_enc.iter().zip(a.iter().zip(&b)).map(|(z, (a, b))| z + a - b).collect())
    }

    fn render_window(&self, newest: &[f64]) -> ServiceResult<Vec<f64>> {
        let hop = self.model.hop();
        let mut rows: Vec<Vec<f64>> = self.history.iter().skip(1).cloned().collect();
        rows.push(newest.to_vec());
        rows.push(newest.to_vec());
        let w = rows.len() - 1;
        let z = LatentTrajectory::from_rows(&rows, self.model.frame_rate())?;
        let mut y = self.model.model.decode_audio(&z)?;
        let start = (w - 1) * hop + self.model.model.bank.delay();
        y.samples.truncate(start + hop);
        if let Some(p) = &self.postchain {
            y = apply_param_filter(&y, &p.filter);
        }
        Ok(y.samples[start..].to_vec())
    }

    fn render_latent_frame(&mut self) -> ServiceResult<()> {
        let z = self.target_latent()?;
        let prev = self.history.back().cloned().expect("history is never empty");
        let mut y = self.render_window(&z)?;
        if self.fade_pending && z != prev {
            let old = self.render_window(&prev)?;
            let n = y.len() as f64;
            for (i, (v, o)) in y.iter_mut().zip(old).enumerate() {
                let r = (i as f64 + 1.0) / n;
                *v = (1.0 - r) * o + r * *v;
            }
        }
        self.fade_pending = false;
        self.history.pop_front();
        self.history.push_back(z);

        let sr = self.model.sample_rate() as f64;
        for (i, v) in y.iter_mut().enumerate() {
            let n = self.samples_rendered + i as u64;
            if let Some(p) = &self.postchain {
                *v *= lfo_gain(&p.lfo, n as f64 / sr);
                if p.gate.enabled {
                    *v *= gate_gain(&p.gate, (n - self.gate_origin) as f64 / sr);
                }
            }
            *v = self.limiter.process(*v);
        }
        self.samples_rendered += y.len() as u64;
        self.stats.latent_frames += 1;
        self.out.extend(y.iter().map(|&v| v as f32));
        Ok(())
    }

    /// Next fixed-size output frame.
    pub fn next_frame(&mut self) -> ServiceResult<Vec<f32>> {
        while self.out.len() < STREAM_FRAME_SAMPLES {
            self.render_latent_frame()?;
        }
        self.stats.frames_emitted += 1;
        Ok(self.out.drain(..STREAM_FRAME_SAMPLES).collect())
    }
}

/// Render time over audio time for `frames` stream frames.
pub fn measure_realtime_factor(model: Arc<LoadedModel>, cfg: EngineConfig, frames: usize) -> ServiceResult<f64> {
    let sr = model.sample_rate() as f64;
    let mut e = StreamEngine::new(model, cfg)?;
    e.next_frame()?;
    let t = Instant::now();
    for i in 0..frames {
        if i % 2 == 1 {
            let v = if i % 4 == 1 { 1.0 } else { -1.0 };
            e.set_control(0, v)?;
        }
        e.next_frame()?;
    }
    Ok(t.elapsed().as_secs_f64() / (frames * STREAM_FRAME_SAMPLES) as f64 * sr)
}

/// Log-magnitude distance between two equal-length frames, Hann-windowed.
pub fn frame_distance(a: &[f32], b: &[f32]) -> f64 {
    use rustfft::{num_complex::Complex, FftPlanner};
    let n = a.len().min(b.len());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let spec = |x: &[f32]| {
        let mut buf: Vec<Complex<f64>> = x[..n]
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
                Complex::new(v as f64 * w, 0.0)
            })
            .collect();
        fft.process(&mut buf);
        buf[..n / 2 + 1].iter().map(|c| (c.norm() + 1e-7).ln()).collect::<Vec<_>>()
    };
    let (sa, sb) = (spec(a), spec(b));
    sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / sa.len() as f64
}
