//! Two-stage training. Stage 1 fits encoder and decoder on the spectral
//! reconstruction loss plus a warmed-up KL term; stage 2 freezes the encoder
//! and refines the decoder against a spectrogram critic.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioBuffer;
use crate::discriminator::{hinge_step, Discriminator};
use crate::error::{Error, Result};
use crate::multiband::SubbandFrame;
use crate::nn::{Adam, Grads, ParamStore};
use crate::vae::{pad_subbands, reparameterize, Vae, TOTAL_STRIDE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps_stage1: usize,
    pub steps_stage2: usize,
    pub learning_rate: f64,
    pub disc_learning_rate: f64,
    pub beta_max: f64,
    /// Fraction of stage-1 steps over which β ramps linearly from 0.
    pub warmup_fraction: f64,
    pub seed: u64,
    pub validation_every: usize,
    /// Training crop length in latent frames.
    pub crop_frames: usize,
    pub validation_fraction: f64,
    /// Upper bound on validation clips evaluated per check.
    pub max_validation_clips: usize,
    pub adversarial_weight: f64,
    pub spectral_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            steps_stage1: 2000,
            steps_stage2: 200,
            learning_rate: 1e-4,
            disc_learning_rate: 1e-4,
            beta_max: 0.1,
            warmup_fraction: 0.1,
            seed: 0,
            validation_every: 50,
            crop_frames: 4,
            validation_fraction: 0.1,
            max_validation_clips: 32,
            adversarial_weight: 1.0,
            spectral_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be positive"));
        }
        if self.crop_frames == 0 {
            return Err(Error::param("crop_frames", "must be positive"));
        }
        if self.validation_every == 0 {
            return Err(Error::param("validation_every", "must be positive"));
        }
        if !(self.beta_max >= 0.0 && self.beta_max.is_finite()) {
            return Err(Error::param("beta_max", "must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0) || !(self.disc_learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::param("warmup_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::param("validation_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// KL weight used for the update at 0-based `step`.
    pub fn beta_at(&self, step: usize) -> f64 {
        let warm = self.warmup_fraction * self.steps_stage1 as f64;
        if warm <= 0.0 {
            return self.beta_max;
        }
        self.beta_max * (step as f64 / warm).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_spectral: f64,
    pub loss_kl: f64,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_spectral: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub best_step: usize,
    pub best_val: f64,
    pub train_clips: usize,
    pub val_clips: usize,
    pub elapsed_s: f64,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }

    pub fn validation(&self) -> Vec<(usize, f64)> {
        self.records.iter().filter_map(|r| r.val_spectral.map(|v| (r.step, v))).collect()
    }
}

/// Deterministic train/validation partition of `n` clips. A single clip is
/// used for both.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    if n < 2 {
        return ((0..n).collect(), (0..n).collect());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7a11));
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn analyze_corpus(model: &Vae<f32>, corpus: &[AudioBuffer]) -> Result<Vec<SubbandFrame>> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    corpus
        .iter()
        .map(|c| {
            if c.sample_rate != model.config.sample_rate {
                return Err(Error::param("sample_rate", format!("corpus clip at {} Hz", c.sample_rate)));
            }
            if c.is_empty() {
                return Err(Error::EmptyAudio);
            }
            Ok(model.bank.analyze(c))
        })
        .collect()
}

fn crop(sub: &SubbandFrame, len: usize, rng: &mut ChaCha8Rng) -> SubbandFrame {
    if sub.len <= len {
        return pad_subbands(sub, len);
    }
    let start = rng.random_range(0..=sub.len - len);
    let mut out = SubbandFrame::zeros(sub.bands, len);
    for k in 0..sub.bands {
        out.band_mut(k).copy_from_slice(&sub.band(k)[start..start + len]);
    }
    out
}

fn divergence(step: usize, e: Error) -> Error {
    match e {
        Error::Divergence { detail, .. } => Error::Divergence { step, detail },
        other => other,
    }
}

fn ensure_finite(step: usize, params: &ParamStore<f32>) -> Result<()> {
    if params.all_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            detail: "update produced non-finite parameters".into(),
        })
    }
}

/// Mean spectral distance between each clip and its posterior-mean
/// reconstruction, both passed through the filter bank.
pub fn validation_distance(model: &Vae<f32>, subs: &[&SubbandFrame]) -> Result<f64> {
    let mut acc = 0.0;
    for sub in subs {
        let post = model.encode(sub)?;
        let recon = model.decode(&post.mean(model.frame_rate()))?;
        let x = model.bank.synthesize_samples(&pad_subbands(sub, recon.len))?;
        let y = model.synthesize(&recon)?;
        acc += model.spectral().distance(&x, &y);
    }
    Ok(acc / subs.len().max(1) as f64)
}

pub fn train_stage1(model: &mut Vae<f32>, corpus: &[AudioBuffer], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let started = Instant::now();
    let subs = analyze_corpus(model, corpus)?;
    let (train, val) = validation_split(subs.len(), cfg.validation_fraction, cfg.seed);
    let val_subs: Vec<&SubbandFrame> = val.iter().take(cfg.max_validation_clips).map(|&i| &subs[i]).collect();
    let crop_len = cfg.crop_frames * TOTAL_STRIDE;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(&model.params, cfg.learning_rate);
    let mut records = Vec::with_capacity(cfg.steps_stage1);
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;

    for step in 0..cfg.steps_stage1 {
        let beta = cfg.beta_at(step);
        let mut grads = model.params.zeros_like();
        let (mut tot, mut spec, mut kl) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.batch_size {
            let clip = train[rng.random_range(0..train.len())];
            let x = crop(&subs[clip], crop_len, &mut rng);
            let noise_seed = rng.next_u64();
            let target = model.spectral_target(&x)?;
            let c = model
                .stage1_gradients(&x, Some(&target), beta, noise_seed, &mut grads)
                .map_err(|e| divergence(step + 1, e))?;
            tot += c.total;
            spec += c.spectral;
            kl += c.kl;
        }
        let inv = 1.0 / cfg.batch_size as f64;
        grads.scale(inv as f32);
        check_grads(step + 1, &grads)?;
        let backup = model.params.clone();
        opt.step(&mut model.params, &grads, |_| true);
        if let Err(e) = ensure_finite(step + 1, &model.params) {
            model.params = backup;
            return Err(e);
        }

        let done = step + 1;
        let val_spectral = if done <= 10 || done % cfg.validation_every == 0 || done == cfg.steps_stage1 {
            let v = validation_distance(model, &val_subs)?;
            if best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((done, v, model.params.clone()));
            }
            Some(v)
        } else {
            None
        };
        records.push(TrainRecord {
            step: done,
            loss_total: tot * inv,
            loss_spectral: spec * inv,
            loss_kl: kl * inv,
            beta,
            val_spectral,
        });
        log::debug!("stage1 step {done} loss {:.4} val {val_spectral:?}", tot * inv);
    }

    let (best_step, best_val) = match best {
        Some((s, v, p)) => {
            model.params = p;
            (s, v)
        }
        None => (0, f64::NAN),
    };
    Ok(TrainLog {
        records,
        best_step,
        best_val,
        train_clips: train.len(),
        val_clips: val_subs.len(),
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

fn check_grads(step: usize, grads: &Grads<f32>) -> Result<()> {
    if grads.all_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            detail: "non-finite gradient".into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Record {
    pub step: usize,
    pub disc_loss: f64,
    pub gen_adversarial: f64,
    pub gen_spectral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Log {
    pub records: Vec<Stage2Record>,
    pub elapsed_s: f64,
}

/// Adversarial refinement: the critic is trained with the hinge loss, the
/// decoder with −D(fake) plus the spectral anchor. Encoder tensors are never
/// written.
pub fn train_stage2(
    model: &mut Vae<f32>,
    disc: &mut Discriminator,
    corpus: &[AudioBuffer],
    cfg: &TrainConfig,
) -> Result<Stage2Log> {
    cfg.validate()?;
    let started = Instant::now();
    let subs = analyze_corpus(model, corpus)?;
    let crop_len = cfg.crop_frames * TOTAL_STRIDE;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x57a6e2);
    let mut opt_g = Adam::new(&model.params, cfg.learning_rate);
    let mut opt_d = Adam::new(&disc.params, cfg.disc_learning_rate);
    let mut records = Vec::with_capacity(cfg.steps_stage2);
    let inv = 1.0 / cfg.batch_size as f64;

    for step in 0..cfg.steps_stage2 {
        let done = step + 1;
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let x = crop(&subs[rng.random_range(0..subs.len())], crop_len, &mut rng);
            let post = model.encode(&x)?;
            let z = reparameterize(&post, rng.next_u64(), model.frame_rate());
            let tape = model.decoder_forward(&z)?;
            let fake_sub = Vae::tape_subbands(&tape);
            let fake = model.synthesize(&fake_sub)?;
            let real = model.bank.synthesize_samples(&x)?;
            batch.push((real, fake, tape, fake_sub.len));
        }

        let mut dg = disc.params.zeros_like();
        let mut d_loss = 0.0;
        for (real, fake, _, _) in &batch {
            d_loss += hinge_step(disc, real, fake, &mut dg);
        }
        dg.scale(inv as f32);
        check_grads(done, &dg)?;
        let backup = disc.params.clone();
        opt_d.step(&mut disc.params, &dg, |_| true);
        if let Err(e) = ensure_finite(done, &disc.params) {
            disc.params = backup;
            return Err(e);
        }

        let mut gg = model.params.zeros_like();
        let (mut adv, mut spec) = (0.0, 0.0);
        for (real, fake, tape, sub_len) in &batch {
            let dt = disc.forward(fake);
            adv -= dt.logit;
            let mut dy = disc
                .backward(&dt, -cfg.adversarial_weight, &mut disc.params.zeros_like(), true)
                .expect("input gradient requested");
            let target = model.spectral().target(real);
            let (s, ds) = model.spectral().distance_with_grad(&target, fake);
            spec += s;
            for (a, b) in dy.iter_mut().zip(ds) {
                *a += cfg.spectral_weight * b;
            }
            if !(s.is_finite() && dt.logit.is_finite()) {
                return Err(Error::Divergence {
                    step: done,
                    detail: "non-finite generator loss".into(),
                });
            }
            let dsub = model.synthesize_adjoint(&dy, *sub_len);
            model.decoder_backward(tape, &dsub, &mut gg);
        }
        gg.scale(inv as f32);
        check_grads(done, &gg)?;
        let backup = model.params.clone();
        let enc = model.encoder_tensor_count();
        opt_g.step(&mut model.params, &gg, |i| i >= enc);
        if let Err(e) = ensure_finite(done, &model.params) {
            model.params = backup;
            return Err(e);
        }
        records.push(Stage2Record {
            step: done,
            disc_loss: d_loss * inv,
            gen_adversarial: adv * inv,
            gen_spectral: spec * inv,
        });
    }
    Ok(Stage2Log {
        records,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

/// Train only the critic on fixed real and fake waveforms; returns the
/// per-step hinge loss.
pub fn train_discriminator(
    disc: &mut Discriminator,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    steps: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if real.is_empty() || fake.is_empty() || batch == 0 {
        return Err(Error::Empty("discriminator data"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(&disc.params, lr);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut g = disc.params.zeros_like();
        let mut l = 0.0;
        for _ in 0..batch {
            let r = &real[rng.random_range(0..real.len())];
            let f = &fake[rng.random_range(0..fake.len())];
            l += hinge_step(disc, r, f, &mut g);
        }
        g.scale(1.0 / batch as f32);
        check_grads(step + 1, &g)?;
        opt.step(&mut disc.params, &g, |_| true);
        losses.push(l / batch as f64);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discriminator::DiscriminatorConfig;
    use crate::vae::ModelConfig;

    fn tone(freq: f64, len: usize, amp: f64) -> AudioBuffer {
        AudioBuffer::new(
            (0..len).map(|n| amp * (2.0 * std::f64::consts::PI * freq * n as f64 / 44100.0).sin()).collect(),
            44100,
        )
    }

    fn quick_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 1,
            steps_stage1: steps,
            steps_stage2: 2,
            crop_frames: 1,
            validation_every: 5,
            learning_rate: 1e-3,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn beta_warmup_schedule() {
        let cfg = TrainConfig {
            steps_stage1: 1000,
            beta_max: 0.1,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.beta_at(0), 0.0);
        assert!((cfg.beta_at(50) - 0.05).abs() < 1e-15);
        assert_eq!(cfg.beta_at(100), 0.1);
        assert_eq!(cfg.beta_at(999), 0.1);
    }

    #[test]
    fn validation_split_is_disjoint_and_deterministic() {
        let (t, v) = validation_split(50, 0.1, 3);
        assert_eq!(v.len(), 5);
        assert_eq!(t.len(), 45);
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(validation_split(50, 0.1, 3), (t, v));
        assert_eq!(validation_split(1, 0.1, 3), (vec![0], vec![0]));
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { beta_max: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn stage1_is_deterministic_and_logs() {
        let corpus = vec![tone(440.0, 4096, 0.5), tone(1000.0, 4096, 0.3)];
        let run = || {
            let mut m: Vae<f32> = Vae::new(ModelConfig::tiny(), 1).unwrap();
            let log = train_stage1(&mut m, &corpus, &quick_cfg(12)).unwrap();
            (m.params, log.records)
        };
        let (pa, la) = run();
        let (pb, lb) = run();
        assert_eq!(la, lb);
        assert!(pa.tensors.iter().zip(&pb.tensors).all(|(a, b)| a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())));
        assert_eq!(la.len(), 12);
        assert!(la.iter().take(10).all(|r| r.val_spectral.is_some()));
        assert_eq!(la[0].beta, 0.0);
        let line = serde_json::to_string(&la[0]).unwrap();
        for key in ["step", "loss_total", "loss_spectral", "loss_kl", "beta", "val_spectral"] {
            assert!(line.contains(key), "{line}");
        }
    }

    #[test]
    fn stage1_overfits_single_clip() {
        // Broadband material: tonal clips sit on the log-magnitude floor
        // between partials and descend far more slowly.
        let corpus = vec![crate::synth::white_noise(4096, 0.3, 11)];
        let mut m: Vae<f32> = Vae::new(ModelConfig::tiny(), 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 3e-4,
            ..quick_cfg(500)
        };
        let log = train_stage1(&mut m, &corpus, &cfg).unwrap();
        let first: f64 = log.records[..10].iter().map(|r| r.loss_total).sum::<f64>() / 10.0;
        let last: f64 = log.records[490..].iter().map(|r| r.loss_total).sum::<f64>() / 10.0;
        assert!(last <= 0.5 * first, "first {first} last {last}");
    }

    #[test]
    fn divergence_aborts_with_finite_parameters() {
        let corpus = vec![tone(440.0, 4096, 0.5)];
        let mut m: Vae<f32> = Vae::new(ModelConfig::tiny(), 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e39,
            ..quick_cfg(5)
        };
        let err = train_stage1(&mut m, &corpus, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
        assert!(m.params.all_finite());
    }

    #[test]
    fn stage2_freezes_encoder() {
        let corpus = vec![tone(440.0, 4096, 0.5), tone(880.0, 4096, 0.5)];
        let mut m: Vae<f32> = Vae::new(ModelConfig::tiny(), 3).unwrap();
        let before = m.params.clone();
        let mut d = Discriminator::new(DiscriminatorConfig::default(), 4).unwrap();
        let cfg = TrainConfig {
            steps_stage2: 0,
            ..quick_cfg(1)
        };
        train_stage2(&mut m, &mut d, &corpus, &cfg).unwrap();
        assert_eq!(m.params, before);

        let cfg = TrainConfig {
            steps_stage2: 3,
            ..quick_cfg(1)
        };
        let log = train_stage2(&mut m, &mut d, &corpus, &cfg).unwrap();
        assert_eq!(log.records.len(), 3);
        let enc = m.encoder_tensor_count();
        for (i, (a, b)) in m.params.tensors.iter().zip(&before.tensors).enumerate() {
            let same = a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits());
            if i < enc {
                assert!(same, "encoder tensor {} changed", a.name);
            }
        }
        assert!(m.params.tensors[enc..].iter().zip(&before.tensors[enc..]).any(|(a, b)| a != b));
    }
}
