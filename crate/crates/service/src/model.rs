//! A checkpoint prepared for serving: offline encode/decode with the
//! request and response schemas shared by HTTP and the CLI.

use foley_core::audio_io::{resample, AudioBuffer};
use foley_core::checkpoint::ModelBundle;
use foley_core::fx::PostChainParams;
use foley_core::latent::LatentPost;
use foley_core::vae::{align_output, LatentTrajectory, ModelConfig, Vae};
use serde::{Deserialize, Serialize};

use crate::error::{ErrorCode, ServiceError, ServiceResult};
use crate::limiter::Limiter;

pub const SCHEMA_VERSION: u32 = 1;
/// Controls are clamped to their fitted range widened by this factor
/// around its center.
pub const CONTROL_RANGE_SCALE: f64 = 1.5;
pub const DEFAULT_MAX_DURATION_S: f64 = 30.0;
pub const STREAM_FRAME_SAMPLES: usize = 2048;
pub const LIMITER_RELEASE_MS: f64 = 50.0;

#[derive(Clone)]
pub struct LoadedModel {
    pub id: String,
    pub model: Vae<f32>,
    pub latent: LatentPost,
    /// Measured stream render time over audio duration, if benchmarked.
    pub realtime_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    pub k: usize,
    pub latent_dim: usize,
    pub frame_rate_hz: f64,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub v: u32,
    pub id: String,
    pub k: usize,
    pub latent_dim: usize,
    pub kept_dims: Vec<usize>,
    pub control_ranges: Vec<[f64; 2]>,
    pub clamp_ranges: Vec<[f64; 2]>,
    pub explained_variance: Vec<f64>,
    pub frame_rate_hz: f64,
    pub hop_samples: usize,
    pub sample_rate: u32,
    pub stream_frame_samples: usize,
    pub config: ModelConfig,
    pub realtime_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub v: u32,
    pub frames: usize,
    pub latent_dim: usize,
    pub frame_rate_hz: f64,
    pub input_samples: usize,
    /// Posterior mean, one row per latent frame.
    pub latent: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

/// Exactly one of `controls`, `trajectory` or `latent` must be given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeRequest {
    #[serde(default)]
    pub v: Option<u32>,
    /// Constant control vector, tiled over the duration.
    #[serde(default)]
    pub controls: Option<Vec<f64>>,
    /// Control vector per latent frame.
    #[serde(default)]
    pub trajectory: Option<Vec<Vec<f64>>>,
    /// Raw latent rows, bypassing the control space.
    #[serde(default)]
    pub latent: Option<Vec<Vec<f64>>>,
    /// Disabled controls decode at the origin (the latent mean).
    #[serde(default)]
    pub enabled: Option<Vec<bool>>,
    #[serde(default)]
    pub duration_s: Option<f64>,
    /// Absent means the post-chain is bypassed.
    #[serde(default)]
    pub postchain: Option<PostChainParams>,
}

impl LoadedModel {
    pub fn new(id: impl Into<String>, bundle: ModelBundle) -> ServiceResult<Self> {
        let id = id.into();
        let latent = bundle.latent.ok_or_else(|| {
            ServiceError::bad_request(format!("checkpoint {id} has no latent block; run `latent fit` first"))
        })?;
        if latent.latent_dim != bundle.model.config.latent_dim {
            return Err(ServiceError::new(
                ErrorCode::DimensionMismatch,
                "latent block does not match the model's latent dimension",
            ));
        }
        Ok(Self {
            id,
            model: bundle.model,
            latent,
            realtime_factor: None,
        })
    }

    pub fn k(&self) -> usize {
        self.latent.k()
    }

    pub fn hop(&self) -> usize {
        self.model.config.hop()
    }

    pub fn sample_rate(&self) -> u32 {
        self.model.config.sample_rate
    }

    pub fn frame_rate(&self) -> f64 {
        self.model.frame_rate()
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            id: self.id.clone(),
            k: self.k(),
            latent_dim: self.model.config.latent_dim,
            frame_rate_hz: self.frame_rate(),
            sample_rate: self.sample_rate(),
        }
    }

    pub fn clamp_ranges(&self) -> Vec<[f64; 2]> {
        self.latent
            .control_ranges
            .iter()
            .map(|&[lo, hi]| {
                let c = 0.5 * (lo + hi);
                let h = 0.5 * (hi - lo) * CONTROL_RANGE_SCALE;
                [c - h, c + h]
            })
            .collect()
    }

    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            v: SCHEMA_VERSION,
            id: self.id.clone(),
            k: self.k(),
            latent_dim: self.model.config.latent_dim,
            kept_dims: self.latent.kept_dims.clone(),
            control_ranges: self.latent.control_ranges.clone(),
            clamp_ranges: self.clamp_ranges(),
            explained_variance: self.latent.explained_variance.clone(),
            frame_rate_hz: self.frame_rate(),
            hop_samples: self.hop(),
            sample_rate: self.sample_rate(),
            stream_frame_samples: STREAM_FRAME_SAMPLES,
            config: self.model.config.clone(),
            realtime_factor: self.realtime_factor,
        }
    }

    /// Clamp a full control vector in place; non-finite values are rejected.
    pub fn clamp_controls(&self, c: &mut [f64]) -> ServiceResult<()> {
        self.check_controls(c.len())?;
        for (v, [lo, hi]) in c.iter_mut().zip(self.clamp_ranges()) {
            if !v.is_finite() {
                return Err(ServiceError::bad_request("control values must be finite"));
            }
            *v = v.clamp(lo, hi);
        }
        Ok(())
    }

    pub fn clamp_control(&self, index: usize, value: f64) -> ServiceResult<f64> {
        let [lo, hi] = *self
            .clamp_ranges()
            .get(index)
            .ok_or_else(|| ServiceError::new(ErrorCode::DimensionMismatch, format!("control index {index} >= k = {}", self.k())))?;
        if !value.is_finite() {
            return Err(ServiceError::bad_request("control values must be finite"));
        }
        Ok(value.clamp(lo, hi))
    }

    fn check_controls(&self, len: usize) -> ServiceResult<()> {
        if len != self.k() {
            return Err(ServiceError::new(
                ErrorCode::DimensionMismatch,
                format!("expected {} controls, got {len}", self.k()),
            ));
        }
        Ok(())
    }

    /// Latent vector for a control vector, disabled entries at the origin.
    pub fn controls_to_latent(&self, controls: &[f64], enabled: Option<&[bool]>) -> ServiceResult<Vec<f64>> {
        let mut c = controls.to_vec();
        self.clamp_controls(&mut c)?;
        if let Some(mask) = enabled {
            self.check_controls(mask.len())?;
            for (v, &on) in c.iter_mut().zip(mask) {
                if !on {
                    *v = 0.0;
                }
            }
        }
        Ok(self.latent.control_to_latent(&c)?)
    }

    /// Bring a payload to the model rate and at least one latent hop.
    pub fn prepare_input(&self, buf: &AudioBuffer) -> ServiceResult<AudioBuffer> {
        if buf.is_empty() {
            return Err(ServiceError::new(ErrorCode::MalformedAudio, "audio payload is empty"));
        }
        if !buf.is_finite() {
            return Err(ServiceError::new(ErrorCode::MalformedAudio, "audio contains non-finite samples"));
        }
        let mut x = if buf.sample_rate == self.sample_rate() {
            buf.clone()
        } else {
            resample(buf, self.sample_rate())?
        };
        if x.len() < self.hop() {
            x = x.with_len(self.hop());
        }
        Ok(x)
    }

    pub fn encode(&self, buf: &AudioBuffer) -> ServiceResult<EncodeResponse> {
        let x = self.prepare_input(buf)?;
        let z = self.model.encode_audio(&x)?.mean(self.frame_rate());
        let latent = z.rows();
        let controls = self.latent.trajectory_to_controls(&z)?;
        Ok(EncodeResponse {
            v: SCHEMA_VERSION,
            frames: z.frames,
            latent_dim: z.dim,
            frame_rate_hz: self.frame_rate(),
            input_samples: x.len(),
            latent,
            controls,
        })
    }

    /// Latent trajectory for a decode request and the output sample count.
    pub fn request_trajectory(&self, req: &DecodeRequest, max_duration_s: f64) -> ServiceResult<(LatentTrajectory, usize)> {
        if let Some(v) = req.v {
            if v != SCHEMA_VERSION {
                return Err(ServiceError::new(
                    ErrorCode::UnsupportedVersion,
                    format!("schema version {v} is not supported (expected {SCHEMA_VERSION})"),
                ));
            }
        }
        let given = [req.controls.is_some(), req.trajectory.is_some(), req.latent.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(ServiceError::bad_request("give exactly one of controls, trajectory or latent"));
        }
        let hop = self.hop();
        let fr = self.frame_rate();
        let enabled = req.enabled.as_deref();
        let mut rows: Vec<Vec<f64>> = if let Some(c) = &req.controls {
            vec![self.controls_to_latent(c, enabled)?]
        } else if let Some(t) = &req.trajectory {
            t.iter().map(|c| self.controls_to_latent(c, enabled)).collect::<ServiceResult<_>>()?
        } else {
            let rows = req.latent.clone().unwrap_or_default();
            let d = self.model.config.latent_dim;
            if let Some(r) = rows.iter().find(|r| r.len() != d) {
                return Err(ServiceError::new(
                    ErrorCode::DimensionMismatch,
                    format!("latent rows must have {d} values, got {}", r.len()),
                ));
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(ServiceError::bad_request("latent values must be finite"));
            }
            rows
        };
        if rows.is_empty() {
            return Err(ServiceError::bad_request("trajectory is empty"));
        }
        let duration = match req.duration_s {
            Some(d) => d,
            None if req.controls.is_some() => 1.0,
            None => rows.len() as f64 / fr,
        };
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(ServiceError::bad_request("duration_s must be positive"));
        }
        if duration > max_duration_s {
            return Err(ServiceError::new(
                ErrorCode::DurationExceeded,
                format!("duration {duration} s exceeds the limit of {max_duration_s} s"),
            ));
        }
        let samples = (duration * self.sample_rate() as f64).round().max(1.0) as usize;
        // Constant controls also cover the filter-bank delay so the tail is not
        // silent; explicit trajectories are honored frame for frame.
        let needed = if req.controls.is_some() {
            frames_for(&self.model, samples)
        } else {
            samples.div_ceil(hop)
        };
        let last = rows.last().cloned().expect("non-empty");
        while rows.len() < needed {
            rows.push(last.clone());
        }
        Ok((LatentTrajectory::from_rows(&rows, fr)?, samples))
    }

    pub fn render(&self, req: &DecodeRequest, max_duration_s: f64) -> ServiceResult<AudioBuffer> {
        let (z, samples) = self.request_trajectory(req, max_duration_s)?;
        render_trajectory(&self.model, &z, samples, req.postchain.as_ref())
    }
}

/// Frames needed to cover `samples` of output including the bank delay.
pub fn frames_for(model: &Vae<f32>, samples: usize) -> usize {
    (samples + model.bank.delay()).div_ceil(model.config.hop())
}

/// Decode, remove the bank delay, trim to `samples`, run the optional
/// post-chain and the limiter.
pub fn render_trajectory(
    model: &Vae<f32>,
    z: &LatentTrajectory,
    samples: usize,
    postchain: Option<&PostChainParams>,
) -> ServiceResult<AudioBuffer> {
    if let Some(p) = postchain {
        p.validate()?;
    }
    let y = model.decode_audio(z)?;
    let mut y = align_output(&y, model.bank.delay(), samples);
    if let Some(p) = postchain {
        y = p.apply(&y);
    }
    Limiter::new(model.config.sample_rate, LIMITER_RELEASE_MS).process_in_place(&mut y.samples);
    Ok(y)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use foley_core::vae::{ModelConfig, Posterior};

    pub(crate) fn test_model() -> LoadedModel {
        let model: Vae<f32> = Vae::new(ModelConfig::tiny(), 9).unwrap();
        let clips: Vec<AudioBuffer> = (0..4)
            .map(|s| foley_core::synth::white_noise(4096, 0.2 + 0.1 * s as f64, s))
            .collect();
        let posts: Vec<Posterior> = clips.iter().map(|c| model.encode_audio(c).unwrap()).collect();
        let latent = LatentPost::fit(&posts, 0.0, 0.95).unwrap();
        let mut b = ModelBundle::new(model);
        b.latent = Some(latent);
        LoadedModel::new("test", b).unwrap()
    }

    #[test]
    fn clamp_ranges_widen_by_half() {
        let m = test_model();
        for ([lo, hi], [a, b]) in m.latent.control_ranges.iter().zip(m.clamp_ranges()) {
            assert!(((b - a) - 1.5 * (hi - lo)).abs() < 1e-12);
            assert!(((a + b) - (lo + hi)).abs() < 1e-12);
        }
        let big = vec![1e9; m.k()];
        let mut c = big.clone();
        m.clamp_controls(&mut c).unwrap();
        assert!(c.iter().zip(m.clamp_ranges()).all(|(v, r)| *v == r[1]));
    }

    #[test]
    fn one_second_decode_length() {
        let m = test_model();
        let req = DecodeRequest {
            controls: Some(vec![0.0; m.k()]),
            duration_s: Some(1.0),
            ..Default::default()
        };
        let y = m.render(&req, 30.0).unwrap();
        assert_eq!(y.len(), 44100);
        assert!(y.samples.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn request_validation() {
        let m = test_model();
        let k = m.k();
        let bad = |req: DecodeRequest| m.render(&req, 30.0).unwrap_err().code;
        assert_eq!(bad(DecodeRequest::default()), ErrorCode::BadRequest);
        assert_eq!(
            bad(DecodeRequest {
                controls: Some(vec![0.0; k + 1]),
                ..Default::default()
            }),
            ErrorCode::DimensionMismatch
        );
        assert_eq!(
            bad(DecodeRequest {
                controls: Some(vec![0.0; k]),
                duration_s: Some(31.0),
                ..Default::default()
            }),
            ErrorCode::DurationExceeded
        );
        assert_eq!(
            bad(DecodeRequest {
                v: Some(2),
                controls: Some(vec![0.0; k]),
                ..Default::default()
            }),
            ErrorCode::UnsupportedVersion
        );
    }

    #[test]
    fn disabled_controls_decode_at_origin() {
        let m = test_model();
        let k = m.k();
        let c = vec![0.7; k];
        let off = m.controls_to_latent(&c, Some(&vec![false; k])).unwrap();
        assert_eq!(off, m.latent.control_to_latent(&vec![0.0; k]).unwrap());
    }

    #[test]
    fn encode_frame_count_follows_hop() {
        let m = test_model();
        for len in [1usize, 2048, 2049, 44100] {
            let r = m.encode(&AudioBuffer::zeros(len, 44100)).unwrap();
            assert_eq!(r.frames, len.max(2048).div_ceil(2048), "len {len}");
            assert_eq!(r.controls.len(), r.frames);
            assert!(r.controls.iter().all(|c| c.len() == m.k()));
        }
        let r = m.encode(&AudioBuffer::zeros(22050, 22050)).unwrap();
        assert_eq!(r.input_samples, 44100);
        assert!(m.encode(&AudioBuffer::zeros(0, 44100)).is_err());
    }
}
